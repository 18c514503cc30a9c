//! MAE/RMSE accounting and the news increment.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{ForecastLedger, ForecastRecord, HarnessError};
use crate::models::{Family, InfoSet};
use crate::panel::Region;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    /// All country-day errors pooled.
    Pooled,
    /// One cell per country.
    Country,
    /// Unweighted mean of member-country metrics.
    Region,
    /// Unweighted mean of country metrics.
    Global,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::Pooled, Level::Country, Level::Region, Level::Global];

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Pooled => "pooled",
            Level::Country => "country",
            Level::Region => "region",
            Level::Global => "global",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    pub family: Family,
    pub infoset: InfoSet,
    pub level: Level,
    /// Country code, region name or `all`.
    pub group: String,
    pub n: usize,
    pub mae: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub cells: Vec<MetricCell>,
}

impl MetricsTable {
    pub fn get(&self, family: Family, infoset: InfoSet, level: Level, group: &str) -> Option<&MetricCell> {
        self.cells
            .iter()
            .find(|c| c.family == family && c.infoset == infoset && c.level == level && c.group == group)
    }

    pub fn for_infoset(&self, infoset: InfoSet) -> MetricsTable {
        MetricsTable { cells: self.cells.iter().filter(|c| c.infoset == infoset).cloned().collect() }
    }
}

fn mae_rmse(errs: impl Iterator<Item = f64>) -> (usize, f64, f64) {
    let (mut n, mut sa, mut ss) = (0usize, 0.0, 0.0);
    for e in errs {
        n += 1;
        sa += e.abs();
        ss += e * e;
    }
    (n, sa / n as f64, (ss / n as f64).sqrt())
}

fn by_country<'a>(recs: &[&'a ForecastRecord]) -> BTreeMap<&'a str, (Region, Vec<f64>)> {
    let mut m: BTreeMap<&str, (Region, Vec<f64>)> = BTreeMap::new();
    for r in recs {
        m.entry(r.country.as_str()).or_insert((r.region, Vec::new())).1.push(r.err);
    }
    m
}

fn averaged(cells: &[(usize, f64, f64)]) -> (usize, f64, f64) {
    let k = cells.len() as f64;
    (
        cells.iter().map(|c| c.0).sum(),
        cells.iter().map(|c| c.1).sum::<f64>() / k,
        cells.iter().map(|c| c.2).sum::<f64>() / k,
    )
}

/// Metrics of every `(family, infoset)` cell at `level`.
pub fn score(ledger: &ForecastLedger, level: Level) -> Result<MetricsTable, HarnessError> {
    if ledger.records.is_empty() {
        return Err(HarnessError::Ledger("cannot score an empty ledger".into()));
    }
    let mut groups: BTreeMap<(Family, InfoSet), Vec<&ForecastRecord>> = BTreeMap::new();
    for r in &ledger.records {
        groups.entry((r.family, r.infoset)).or_default().push(r);
    }
    let mut cells = Vec::new();
    for ((family, infoset), recs) in groups {
        let mut push = |group: String, (n, mae, rmse): (usize, f64, f64)| {
            cells.push(MetricCell { family, infoset, level, group, n, mae, rmse });
        };
        match level {
            Level::Pooled => push("all".into(), mae_rmse(recs.iter().map(|r| r.err))),
            Level::Country => {
                for (code, (_, errs)) in by_country(&recs) {
                    push(code.to_string(), mae_rmse(errs.into_iter()));
                }
            }
            Level::Region => {
                let mut per: BTreeMap<Region, Vec<(usize, f64, f64)>> = BTreeMap::new();
                for (_, (region, errs)) in by_country(&recs) {
                    per.entry(region).or_default().push(mae_rmse(errs.into_iter()));
                }
                for (region, cs) in per {
                    push(region.as_str().into(), averaged(&cs));
                }
            }
            Level::Global => {
                let cs: Vec<_> = by_country(&recs).into_values().map(|(_, e)| mae_rmse(e.into_iter())).collect();
                push("all".into(), averaged(&cs));
            }
        }
    }
    Ok(MetricsTable { cells })
}

/// All four levels in one table.
pub fn score_all(ledger: &ForecastLedger) -> Result<MetricsTable, HarnessError> {
    let mut cells = Vec::new();
    for level in Level::ALL {
        cells.extend(score(ledger, level)?.cells);
    }
    Ok(MetricsTable { cells })
}

/// Markets-only versus Markets+News change for one `(family, level, group)`.
///
/// `d_* = markets - news`, so positive values mean news helped;
/// `pct_* = 100 d / markets`, `None` when the markets metric is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementCell {
    pub family: Family,
    pub level: Level,
    pub group: String,
    pub mae_markets: f64,
    pub mae_news: f64,
    pub rmse_markets: f64,
    pub rmse_news: f64,
    pub d_mae: f64,
    pub d_rmse: f64,
    pub pct_mae: Option<f64>,
    pub pct_rmse: Option<f64>,
}

fn pct(d: f64, base: f64) -> Option<f64> {
    (base != 0.0).then(|| 100.0 * d / base)
}

/// Pairs cells of `markets` and `news` by family, level and group.
pub fn news_increment(markets: &MetricsTable, news: &MetricsTable) -> Result<Vec<IncrementCell>, HarnessError> {
    let key = |c: &MetricCell| (c.family, c.level, c.group.clone());
    let a: BTreeMap<_, &MetricCell> = markets.cells.iter().map(|c| (key(c), c)).collect();
    let b: BTreeMap<_, &MetricCell> = news.cells.iter().map(|c| (key(c), c)).collect();
    if let Some(k) = a.keys().find(|k| !b.contains_key(*k)).or_else(|| b.keys().find(|k| !a.contains_key(*k))) {
        return Err(HarnessError::Mismatch(format!("{} {} {} present in only one table", k.0, k.1.as_str(), k.2)));
    }
    Ok(a
        .into_iter()
        .map(|(k, m)| {
            let n = b[&k];
            let (d_mae, d_rmse) = (m.mae - n.mae, m.rmse - n.rmse);
            IncrementCell {
                family: k.0,
                level: k.1,
                group: k.2,
                mae_markets: m.mae,
                mae_news: n.mae,
                rmse_markets: m.rmse,
                rmse_news: n.rmse,
                d_mae,
                d_rmse,
                pct_mae: pct(d_mae, m.mae),
                pct_rmse: pct(d_rmse, m.rmse),
            }
        })
        .collect())
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

/// Long CSV `family,infoset,level,group,n,mae,rmse`.
pub fn write_metrics_csv<W: Write>(t: &MetricsTable, w: W) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(w);
    let e = |e: csv::Error| HarnessError::Ledger(e.to_string());
    out.write_record(["family", "infoset", "level", "group", "n", "mae", "rmse"]).map_err(e)?;
    for c in &t.cells {
        out.write_record([
            c.family.to_string(),
            c.infoset.to_string(),
            c.level.as_str().to_string(),
            c.group.clone(),
            c.n.to_string(),
            num(c.mae),
            num(c.rmse),
        ])
        .map_err(e)?;
    }
    out.flush().map_err(|x| HarnessError::Ledger(x.to_string()))
}

/// Table-1 layout `family,level,group,metric,benchmark,news,diff,pct_var,undefined`.
///
/// `benchmark` is Markets-only and `news` is Markets+News. `diff` and
/// `pct_var` are reported as `news - benchmark` (negative = improvement),
/// the sign convention of the published table; [`IncrementCell`] carries the
/// opposite sign.
pub fn write_increment_csv<W: Write>(cells: &[IncrementCell], w: W) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(w);
    let e = |e: csv::Error| HarnessError::Ledger(e.to_string());
    out.write_record(["family", "level", "group", "metric", "benchmark", "news", "diff", "pct_var", "undefined"]).map_err(e)?;
    for c in cells {
        for (metric, m, n, d, p) in [
            ("MAE", c.mae_markets, c.mae_news, c.d_mae, c.pct_mae),
            ("RMSE", c.rmse_markets, c.rmse_news, c.d_rmse, c.pct_rmse),
        ] {
            out.write_record([
                c.family.to_string(),
                c.level.as_str().to_string(),
                c.group.clone(),
                metric.to_string(),
                num(m),
                num(n),
                num(-d),
                p.map(|p| num(-p)).unwrap_or_else(|| "NA".into()),
                p.is_none().to_string(),
            ])
            .map_err(e)?;
        }
    }
    out.flush().map_err(|x| HarnessError::Ledger(x.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn rec(country: &str, region: Region, infoset: InfoSet, err: f64) -> ForecastRecord {
        let d = NaiveDate::from_ymd_opt(2021, 2, 1).unwrap();
        ForecastRecord { country: country.into(), region, origin: d, family: Family::Lasso, infoset, yhat: 0.0, y: err, err, fit_origin: d }
    }

    fn ledger(recs: Vec<ForecastRecord>) -> ForecastLedger {
        ForecastLedger { buffer: 28, records: recs, ..Default::default() }
    }

    #[test]
    fn pooled_arithmetic() {
        let l = ledger([1.0, -1.0, 2.0, -2.0].iter().map(|e| rec("DE", Region::AdvancedEconomies, InfoSet::MarketsOnly, *e)).collect());
        let t = score(&l, Level::Pooled).unwrap();
        assert_eq!(t.cells[0].mae, 1.5);
        assert!((t.cells[0].rmse - 2.5f64.sqrt()).abs() < 1e-15);
        let z = ledger(vec![rec("DE", Region::AdvancedEconomies, InfoSet::MarketsOnly, 0.0); 3]);
        let t = score(&z, Level::Pooled).unwrap();
        assert_eq!((t.cells[0].mae, t.cells[0].rmse), (0.0, 0.0));
    }

    #[test]
    fn unbalanced_pooled_differs_from_country_average() {
        // DE: three errors of 1; BR: one error of 3
        let mut recs = vec![rec("DE", Region::AdvancedEconomies, InfoSet::MarketsOnly, 1.0); 3];
        recs.push(rec("BR", Region::EMLatam, InfoSet::MarketsOnly, -3.0));
        let l = ledger(recs);
        let pooled = score(&l, Level::Pooled).unwrap().cells[0].clone();
        let global = score(&l, Level::Global).unwrap().cells[0].clone();
        assert_eq!(pooled.mae, 6.0 / 4.0);
        assert_eq!(pooled.rmse, (12.0f64 / 4.0).sqrt());
        assert_eq!(global.mae, 2.0);
        assert_eq!(global.rmse, 2.0);
        let regions = score(&l, Level::Region).unwrap();
        assert_eq!(regions.cells.len(), 2);
        for c in score_all(&l).unwrap().cells {
            assert!(c.rmse >= c.mae);
        }
    }

    #[test]
    fn removing_a_family_leaves_other_cells_identical() {
        let mut recs: Vec<ForecastRecord> = (0..5).map(|i| rec("DE", Region::AdvancedEconomies, InfoSet::MarketsOnly, i as f64 * 0.3)).collect();
        let mut other = recs.clone();
        other.iter_mut().for_each(|r| {
            r.family = Family::Ridge;
            r.err += 1.0;
        });
        recs.extend(other);
        let both = score_all(&ledger(recs.clone())).unwrap();
        let only = score_all(&ledger(recs.into_iter().filter(|r| r.family == Family::Lasso).collect())).unwrap();
        for c in &only.cells {
            assert_eq!(Some(c), both.get(c.family, c.infoset, c.level, &c.group));
        }
    }

    fn cell(family: Family, infoset: InfoSet, mae: f64, rmse: f64) -> MetricCell {
        MetricCell { family, infoset, level: Level::Pooled, group: "all".into(), n: 1, mae, rmse }
    }

    #[test]
    fn extremely_randomized_trees_increment() {
        let m = MetricsTable { cells: vec![cell(Family::ExtraTrees, InfoSet::MarketsOnly, 0.74, 1.0)] };
        let n = MetricsTable { cells: vec![cell(Family::ExtraTrees, InfoSet::MarketsPlusNews, 0.60, 1.0)] };
        let inc = news_increment(&m, &n).unwrap();
        assert!((inc[0].pct_mae.unwrap() - 19.0).abs() < 0.1);
        assert!(inc[0].d_mae > 0.0);
        assert_eq!(inc[0].d_rmse, 0.0);
    }

    #[test]
    fn zero_benchmark_flags_undefined_and_mismatch_errors() {
        let m = MetricsTable { cells: vec![cell(Family::Lasso, InfoSet::MarketsOnly, 0.0, 0.0)] };
        let n = MetricsTable { cells: vec![cell(Family::Lasso, InfoSet::MarketsPlusNews, 0.0, 0.0)] };
        let inc = news_increment(&m, &n).unwrap();
        assert_eq!(inc[0].pct_mae, None);
        let mut buf = Vec::new();
        write_increment_csv(&inc, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains("NA,true"));
        let other = MetricsTable { cells: vec![cell(Family::Ridge, InfoSet::MarketsPlusNews, 1.0, 1.0)] };
        assert!(matches!(news_increment(&m, &other), Err(HarnessError::Mismatch(_))));
    }
}
