use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use sha2::{Digest, Sha256};

use super::{CountryMeta, Panel, PanelError, Series, Taxonomy, Variable};

/// Country code used for rows of global variables.
pub const GLOBAL_CODE: &str = "GLOBAL";

/// Reads a long-format `date,country,variable,value` CSV.
///
/// Global variables may be written once under [`GLOBAL_CODE`] or replicated
/// per country, in which case every copy must agree.
pub fn load_panel(path: &Path, taxonomy: &Taxonomy) -> Result<Panel, PanelError> {
    let file = File::open(path).map_err(|e| PanelError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    read_panel(file, taxonomy)
}

pub fn read_panel<R: Read>(reader: R, taxonomy: &Taxonomy) -> Result<Panel, PanelError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| PanelError::BadRow {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let expected = ["date", "country", "variable", "value"];
    if headers.len() != 4 || headers.iter().zip(expected).any(|(h, e)| !h.eq_ignore_ascii_case(e)) {
        return Err(PanelError::BadRow {
            line: 1,
            message: format!("header must be date,country,variable,value (got {headers:?})"),
        });
    }

    let mut offenders = Vec::new();
    let mut seen: HashMap<(NaiveDate, String, Variable), u64> = HashMap::new();
    let mut local: BTreeMap<(String, Variable), Vec<(NaiveDate, f64)>> = BTreeMap::new();
    let mut global: BTreeMap<Variable, BTreeMap<NaiveDate, f64>> = BTreeMap::new();

    for rec in rdr.records() {
        let rec = rec.map_err(|e| PanelError::BadRow {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| rec.get(i).unwrap_or("");
        let date: NaiveDate = field(0).parse().map_err(|e| PanelError::BadRow {
            line,
            message: format!("bad date '{}': {e}", field(0)),
        })?;
        let country = field(1).to_string();
        let var = match field(2).parse::<Variable>() {
            Ok(v) => v,
            Err(_) => {
                offenders.push((line, format!("variable {}", field(2))));
                continue;
            }
        };
        let value: f64 = field(3).parse().map_err(|_| PanelError::BadRow {
            line,
            message: format!("bad value '{}'", field(3)),
        })?;
        if !value.is_finite() {
            return Err(PanelError::BadRow {
                line,
                message: format!("non-finite value '{}'", field(3)),
            });
        }
        let is_global_row = country == GLOBAL_CODE;
        if !is_global_row && taxonomy.region(&country).is_none() {
            offenders.push((line, format!("country {country}")));
            continue;
        }
        if is_global_row && !var.is_global() {
            return Err(PanelError::BadRow {
                line,
                message: format!("{var} is not a global variable"),
            });
        }
        if seen.insert((date, country.clone(), var), line).is_some() {
            return Err(PanelError::Duplicate {
                line,
                date,
                country,
                variable: var,
            });
        }
        if var.is_global() {
            let slot = global.entry(var).or_default();
            match slot.get(&date) {
                Some(prev) if *prev != value => {
                    return Err(PanelError::InconsistentGlobal {
                        line,
                        date,
                        variable: var,
                    })
                }
                _ => {
                    slot.insert(date, value);
                }
            }
        } else {
            local.entry((country, var)).or_default().push((date, value));
        }
    }
    if !offenders.is_empty() {
        return Err(PanelError::UnknownCodes(offenders));
    }

    let mut countries: Vec<CountryMeta> = local
        .keys()
        .map(|(c, _)| c.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .map(|code| CountryMeta {
            region: taxonomy.region(&code).expect("validated above"),
            code,
        })
        .collect();
    countries.sort_by(|a, b| a.code.cmp(&b.code));
    let local = local
        .into_iter()
        .map(|(k, pairs)| Series::from_pairs(pairs).map(|s| (k, s)))
        .collect::<Result<BTreeMap<_, _>, _>>()?;
    let global = global
        .into_iter()
        .map(|(v, m)| Series::from_pairs(m.into_iter().collect()).map(|s| (v, s)))
        .collect::<Result<BTreeMap<_, _>, _>>()?;
    Panel::new(countries, local, global)
}

/// Writes the panel in the same long format; global series once under [`GLOBAL_CODE`].
pub fn save_panel(panel: &Panel, path: &Path) -> Result<(), PanelError> {
    let file = File::create(path).map_err(|e| PanelError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    write_panel(panel, file)
}

pub fn write_panel<W: Write>(panel: &Panel, writer: W) -> Result<(), PanelError> {
    let io_err = |e: csv::Error| PanelError::Io {
        path: "<panel writer>".into(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "country", "variable", "value"])
        .map_err(io_err)?;
    for (var, s) in panel.global_iter() {
        for (d, v) in s.iter() {
            w.write_record([
                d.to_string(),
                GLOBAL_CODE.to_string(),
                var.to_string(),
                format_value(v),
            ])
            .map_err(io_err)?;
        }
    }
    for (code, var, s) in panel.local_series() {
        for (d, v) in s.iter() {
            w.write_record([d.to_string(), code.to_string(), var.to_string(), format_value(v)])
                .map_err(io_err)?;
        }
    }
    w.flush().map_err(|e| PanelError::Io {
        path: "<panel writer>".into(),
        message: e.to_string(),
    })?;
    Ok(())
}

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn format_value(v: f64) -> String {
    format!("{v}")
}

/// SHA-256 of the canonical CSV serialization.
pub fn panel_fingerprint(panel: &Panel) -> String {
    let mut buf = Vec::new();
    write_panel(panel, &mut buf).expect("in-memory write");
    hex::encode(Sha256::digest(&buf))
}
