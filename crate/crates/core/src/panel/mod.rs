//! Unbalanced daily country panel: storage, validation, IO and preprocessing.

mod io;
mod preprocess;
mod series;
mod taxonomy;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ErrorKind;

pub use io::{load_panel, panel_fingerprint, read_panel, save_panel, write_panel, GLOBAL_CODE};
pub use preprocess::{preprocess, PreprocessReport};
pub use series::{
    coverage, interpolate_short_gaps, moving_average, standardize, Series, Standardization,
};
pub use taxonomy::{CountryMeta, Region, Taxonomy};

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    BadRow { line: u64, message: String },
    #[error("unknown codes: {}", format_offenders(.0))]
    UnknownCodes(Vec<(u64, String)>),
    #[error("line {line}: duplicate observation ({date}, {country}, {variable})")]
    Duplicate {
        line: u64,
        date: NaiveDate,
        country: String,
        variable: Variable,
    },
    #[error("line {line}: global {variable} on {date} differs across countries")]
    InconsistentGlobal {
        line: u64,
        date: NaiveDate,
        variable: Variable,
    },
    #[error("country {0} has no CDS series")]
    MissingCds(String),
    #[error("duplicate country code {0}")]
    DuplicateCountry(String),
    #[error("degenerate series (sd = {sd:e})")]
    Degenerate { sd: f64 },
    #[error("series too short: need {needed} observations, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("{0}")]
    Invalid(String),
}

fn format_offenders(v: &[(u64, String)]) -> String {
    v.iter()
        .map(|(l, c)| format!("line {l}: {c}"))
        .collect::<Vec<_>>()
        .join("; ")
}

impl PanelError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            PanelError::Io { .. } => ErrorKind::Io,
            _ => ErrorKind::Validation,
        }
    }
}

/// Panel variables. `FED` and `VIX` are global; the rest are per country.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[allow(clippy::upper_case_acronyms)]
pub enum Variable {
    CDS,
    FED,
    VIX,
    GPR,
    EPU,
    TPU,
    ECO,
    INT,
    POL,
}

impl Variable {
    pub const ALL: [Variable; 9] = [
        Variable::CDS,
        Variable::FED,
        Variable::VIX,
        Variable::GPR,
        Variable::EPU,
        Variable::TPU,
        Variable::ECO,
        Variable::INT,
        Variable::POL,
    ];
    pub const MARKETS: [Variable; 2] = [Variable::FED, Variable::VIX];
    pub const NEWS: [Variable; 6] = [
        Variable::GPR,
        Variable::EPU,
        Variable::TPU,
        Variable::ECO,
        Variable::INT,
        Variable::POL,
    ];

    pub fn is_global(self) -> bool {
        matches!(self, Variable::FED | Variable::VIX)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variable::CDS => "CDS",
            Variable::FED => "FED",
            Variable::VIX => "VIX",
            Variable::GPR => "GPR",
            Variable::EPU => "EPU",
            Variable::TPU => "TPU",
            Variable::ECO => "ECO",
            Variable::INT => "INT",
            Variable::POL => "POL",
        }
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variable {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variable::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown variable '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scope", rename_all = "snake_case")]
pub enum StandardizationScope {
    FullSample,
    TrainOnly { cutoff: NaiveDate },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessPolicy {
    pub ma_window: u32,
    pub standardize: bool,
    pub scope: StandardizationScope,
}

impl Default for PreprocessPolicy {
    fn default() -> Self {
        PreprocessPolicy {
            ma_window: 28,
            standardize: true,
            scope: StandardizationScope::FullSample,
        }
    }
}

impl PreprocessPolicy {
    pub fn validate(&self) -> Result<(), PanelError> {
        if self.ma_window < 1 {
            return Err(PanelError::Invalid("ma_window must be >= 1".into()));
        }
        Ok(())
    }
}

/// Series re-indexed on a contiguous day grid for O(1) lookups.
#[derive(Debug, Clone)]
struct Dense {
    start: i32,
    values: Vec<f64>,
}

impl Dense {
    fn from_series(s: &Series) -> Option<Dense> {
        let first = s.first_date()?.num_days_from_ce();
        let last = s.last_date()?.num_days_from_ce();
        let mut values = vec![f64::NAN; (last - first + 1) as usize];
        for (d, v) in s.iter() {
            values[(d.num_days_from_ce() - first) as usize] = v;
        }
        Some(Dense {
            start: first,
            values,
        })
    }

    fn get(&self, day: i32) -> Option<f64> {
        let off = day - self.start;
        if off < 0 {
            return None;
        }
        self.values
            .get(off as usize)
            .copied()
            .filter(|v| !v.is_nan())
    }
}

/// Immutable unbalanced panel.
///
/// Countries are kept sorted by code. Global variables are stored once and
/// resolved for every country on lookup.
#[derive(Debug, Clone)]
pub struct Panel {
    countries: Vec<CountryMeta>,
    local: BTreeMap<(String, Variable), Series>,
    global: BTreeMap<Variable, Series>,
    dense_local: Vec<Option<Dense>>,
    dense_global: Vec<Option<Dense>>,
}

impl Panel {
    /// Validates and indexes a panel.
    ///
    /// Every country needs a CDS series; `local` may not contain global
    /// variables and `global` may only contain them.
    pub fn new(
        mut countries: Vec<CountryMeta>,
        local: BTreeMap<(String, Variable), Series>,
        global: BTreeMap<Variable, Series>,
    ) -> Result<Panel, PanelError> {
        countries.sort_by(|a, b| a.code.cmp(&b.code));
        if let Some(w) = countries.windows(2).find(|w| w[0].code == w[1].code) {
            return Err(PanelError::DuplicateCountry(w[0].code.clone()));
        }
        for c in &countries {
            if !local.contains_key(&(c.code.clone(), Variable::CDS)) {
                return Err(PanelError::MissingCds(c.code.clone()));
            }
        }
        for (code, var) in local.keys() {
            if var.is_global() {
                return Err(PanelError::Invalid(format!(
                    "{var} is global but stored for {code}"
                )));
            }
            if countries.binary_search_by(|c| c.code.as_str().cmp(code)).is_err() {
                return Err(PanelError::Invalid(format!(
                    "series for unregistered country {code}"
                )));
            }
        }
        if let Some(v) = global.keys().find(|v| !v.is_global()) {
            return Err(PanelError::Invalid(format!("{v} is not a global variable")));
        }
        let mut dense_local = vec![None; countries.len() * Variable::ALL.len()];
        for ((code, var), s) in &local {
            let ci = countries
                .binary_search_by(|c| c.code.as_str().cmp(code))
                .unwrap_or_else(|_| unreachable!());
            dense_local[ci * Variable::ALL.len() + var.index()] = Dense::from_series(s);
        }
        let mut dense_global = vec![None; Variable::ALL.len()];
        for (var, s) in &global {
            dense_global[var.index()] = Dense::from_series(s);
        }
        Ok(Panel {
            countries,
            local,
            global,
            dense_local,
            dense_global,
        })
    }

    pub fn countries(&self) -> &[CountryMeta] {
        &self.countries
    }

    pub fn country_index(&self, code: &str) -> Option<usize> {
        self.countries
            .binary_search_by(|c| c.code.as_str().cmp(code))
            .ok()
    }

    pub fn region_of(&self, code: &str) -> Option<Region> {
        self.country_index(code).map(|i| self.countries[i].region)
    }

    /// Series for `(country, variable)`; global variables resolve to the
    /// shared series for any registered country.
    pub fn series(&self, code: &str, var: Variable) -> Option<&Series> {
        if var.is_global() {
            self.country_index(code)?;
            self.global.get(&var)
        } else {
            self.local.get(&(code.to_string(), var))
        }
    }

    pub fn global_series(&self, var: Variable) -> Option<&Series> {
        self.global.get(&var)
    }

    pub fn local_series(&self) -> impl Iterator<Item = (&str, Variable, &Series)> {
        self.local.iter().map(|((c, v), s)| (c.as_str(), *v, s))
    }

    pub fn global_iter(&self) -> impl Iterator<Item = (Variable, &Series)> {
        self.global.iter().map(|(v, s)| (*v, s))
    }

    /// Value of `var` for the country at `country_idx` on `date`.
    pub fn value(&self, country_idx: usize, var: Variable, date: NaiveDate) -> Option<f64> {
        let day = date.num_days_from_ce();
        let dense = if var.is_global() {
            self.dense_global[var.index()].as_ref()
        } else {
            self.dense_local
                .get(country_idx * Variable::ALL.len() + var.index())?
                .as_ref()
        };
        dense?.get(day)
    }

    /// Number of (country, variable) series, counting global series once per country.
    pub fn n_series(&self) -> usize {
        self.countries
            .iter()
            .map(|c| {
                Variable::ALL
                    .iter()
                    .filter(|v| self.series(&c.code, **v).is_some())
                    .count()
            })
            .sum()
    }

    /// Number of stored observations (global series counted once).
    pub fn n_observations(&self) -> usize {
        self.local.values().map(Series::len).sum::<usize>()
            + self.global.values().map(Series::len).sum::<usize>()
    }

    pub fn span(&self) -> Option<(NaiveDate, NaiveDate)> {
        let all = self.local.values().chain(self.global.values());
        let lo = all.clone().filter_map(Series::first_date).min()?;
        let hi = all.filter_map(Series::last_date).max()?;
        Some((lo, hi))
    }

    /// Rebuilds the panel with every series passed through `f`.
    /// Series for which `f` returns `None` are dropped; countries that lose
    /// their CDS series are dropped with them.
    pub fn map_series<F>(&self, mut f: F) -> Result<Panel, PanelError>
    where
        F: FnMut(Option<&str>, Variable, &Series) -> Option<Series>,
    {
        let mut local = BTreeMap::new();
        for ((c, v), s) in &self.local {
            if let Some(out) = f(Some(c), *v, s) {
                if !out.is_empty() {
                    local.insert((c.clone(), *v), out);
                }
            }
        }
        let mut global = BTreeMap::new();
        for (v, s) in &self.global {
            if let Some(out) = f(None, *v, s) {
                if !out.is_empty() {
                    global.insert(*v, out);
                }
            }
        }
        let countries: Vec<CountryMeta> = self
            .countries
            .iter()
            .filter(|c| local.contains_key(&(c.code.clone(), Variable::CDS)))
            .cloned()
            .collect();
        local.retain(|(c, _), _| countries.iter().any(|m| &m.code == c));
        Panel::new(countries, local, global)
    }

    /// Keeps only the listed countries.
    pub fn subset(&self, codes: &[&str]) -> Result<Panel, PanelError> {
        let countries: Vec<CountryMeta> = self
            .countries
            .iter()
            .filter(|c| codes.contains(&c.code.as_str()))
            .cloned()
            .collect();
        let local = self
            .local
            .iter()
            .filter(|((c, _), _)| codes.contains(&c.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Panel::new(countries, local, self.global.clone())
    }
}
