//! Pseudo-real-time backtests, expanding-window tuning and accuracy accounting.
//!
//! Every row pairs features observed on date `s` with the CDS value on
//! `s + 1`. A model used at forecast origin `t` only ever sees rows whose
//! target date is at most `t - buffer`, so no value dated inside the buffer
//! (or later) is read while training. All panel reads go through
//! [`PanelSource`], which lets tests log every access.

pub mod metrics;
pub mod tune;

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::sync::Mutex;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ErrorKind;
use crate::models::{self, DesignMatrix, Family, Fingerprint, FittedModel, InfoSet, ModelError, ModelSpec};
use crate::panel::{CountryMeta, Panel, Taxonomy, Variable};
use crate::par;

pub use metrics::{news_increment, score, score_all, write_increment_csv, write_metrics_csv, IncrementCell, Level, MetricCell, MetricsTable};
pub use tune::{tune, validation_dates, ParamRange, SearchSpace, Trial, TuneResult};

pub const DEFAULT_BUFFER: u32 = 28;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("leakage: model used at {origin} was trained on data up to {max_date} (buffer {buffer} days)")]
    Leakage { origin: NaiveDate, max_date: NaiveDate, buffer: u32 },
    #[error("tables do not line up: {0}")]
    Mismatch(String),
    #[error("no candidate produced a valid score for {0}")]
    NoValidCandidate(String),
    #[error("ledger: {0}")]
    Ledger(String),
}

impl HarnessError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            HarnessError::Model(e) => e.kind(),
            HarnessError::Leakage { .. } => ErrorKind::Numerical,
            _ => ErrorKind::Validation,
        }
    }
}

/// Why a panel value is being read, and for which forecast origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Purpose {
    Train,
    Predict,
    Score,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Access {
    pub purpose: Purpose,
    pub origin: NaiveDate,
}

/// Read-only view of panel values used by the harness.
pub trait PanelSource: Sync {
    fn countries(&self) -> &[CountryMeta];
    fn span(&self) -> Option<(NaiveDate, NaiveDate)>;
    fn value(&self, access: Access, country: usize, var: Variable, date: NaiveDate) -> Option<f64>;
}

impl PanelSource for Panel {
    fn countries(&self) -> &[CountryMeta] {
        Panel::countries(self)
    }

    fn span(&self) -> Option<(NaiveDate, NaiveDate)> {
        Panel::span(self)
    }

    fn value(&self, _: Access, country: usize, var: Variable, date: NaiveDate) -> Option<f64> {
        Panel::value(self, country, var, date)
    }
}

/// Per-origin summary of the dates read for one purpose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessSummary {
    pub count: usize,
    pub min_date: NaiveDate,
    pub max_date: NaiveDate,
}

/// Wraps a source and records every read.
pub struct InstrumentedSource<'a, S: PanelSource> {
    inner: &'a S,
    log: Mutex<BTreeMap<(Purpose, NaiveDate), AccessSummary>>,
}

impl<'a, S: PanelSource> InstrumentedSource<'a, S> {
    pub fn new(inner: &'a S) -> Self {
        InstrumentedSource { inner, log: Mutex::new(BTreeMap::new()) }
    }

    /// `(purpose, origin) -> summary` of all reads so far.
    pub fn log(&self) -> BTreeMap<(Purpose, NaiveDate), AccessSummary> {
        self.log.lock().expect("access log poisoned").clone()
    }

    /// Training reads dated inside `(origin - buffer, origin]` or later.
    pub fn training_violations(&self, buffer: u32) -> Vec<(NaiveDate, AccessSummary)> {
        self.log()
            .into_iter()
            .filter(|((p, origin), s)| *p == Purpose::Train && s.max_date > *origin - Days::new(buffer as u64))
            .map(|((_, o), s)| (o, s))
            .collect()
    }
}

impl<S: PanelSource> PanelSource for InstrumentedSource<'_, S> {
    fn countries(&self) -> &[CountryMeta] {
        self.inner.countries()
    }

    fn span(&self) -> Option<(NaiveDate, NaiveDate)> {
        self.inner.span()
    }

    fn value(&self, access: Access, country: usize, var: Variable, date: NaiveDate) -> Option<f64> {
        {
            let mut log = self.log.lock().expect("access log poisoned");
            let e = log
                .entry((access.purpose, access.origin))
                .or_insert(AccessSummary { count: 0, min_date: date, max_date: date });
            e.count += 1;
            e.min_date = e.min_date.min(date);
            e.max_date = e.max_date.max(date);
        }
        self.inner.value(access, country, var, date)
    }
}

fn feature_names(infoset: InfoSet) -> Vec<String> {
    infoset.variables().iter().map(|v| v.as_str().to_string()).collect()
}

fn features_at(src: &dyn PanelSource, access: Access, c: usize, vars: &[Variable], date: NaiveDate) -> Option<Vec<f64>> {
    vars.iter().map(|v| src.value(access, c, *v, date)).collect()
}

/// Training rows for a model used at `origin`: every complete
/// `(features at s, CDS at s+1)` pair with `s + 1 <= origin - buffer`.
pub fn training_design(src: &dyn PanelSource, infoset: InfoSet, origin: NaiveDate, buffer: u32) -> DesignMatrix {
    let mut d = DesignMatrix::empty(feature_names(infoset), src.countries().to_vec());
    let Some((start, _)) = src.span() else { return d };
    let cutoff = origin - Days::new(buffer as u64);
    let vars = infoset.variables();
    let access = Access { purpose: Purpose::Train, origin };
    let mut s = start;
    while s < cutoff {
        let t = s + Days::new(1);
        for c in 0..src.countries().len() {
            let Some(y) = src.value(access, c, Variable::CDS, t) else { continue };
            if let Some(x) = features_at(src, access, c, &vars, s) {
                d.push(c, s, t, &x, y).expect("design row matches schema");
            }
        }
        s = t;
    }
    d
}

/// Prediction rows at `origin`: features dated `origin`, target on the next day.
/// Countries without a complete feature vector or target are skipped.
pub fn forecast_design(src: &dyn PanelSource, infoset: InfoSet, origin: NaiveDate) -> DesignMatrix {
    let mut d = DesignMatrix::empty(feature_names(infoset), src.countries().to_vec());
    let vars = infoset.variables();
    let t = origin + Days::new(1);
    for c in 0..src.countries().len() {
        let Some(x) = features_at(src, Access { purpose: Purpose::Predict, origin }, c, &vars, origin) else { continue };
        let Some(y) = src.value(Access { purpose: Purpose::Score, origin }, c, Variable::CDS, t) else { continue };
        d.push(c, origin, t, &x, y).expect("design row matches schema");
    }
    d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestPlan {
    pub first_origin: NaiveDate,
    pub last_origin: NaiveDate,
    pub refit_every: u32,
    pub buffer: u32,
    pub infosets: Vec<InfoSet>,
    /// Smoothing window of the inputs, used only for the buffer sanity check.
    pub ma_window: u32,
}

impl BacktestPlan {
    pub fn new(first_origin: NaiveDate, last_origin: NaiveDate) -> Self {
        BacktestPlan {
            first_origin,
            last_origin,
            refit_every: 7,
            buffer: DEFAULT_BUFFER,
            infosets: InfoSet::ALL.to_vec(),
            ma_window: 28,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.last_origin < self.first_origin {
            return Err(HarnessError::Plan(format!("last origin {} precedes first origin {}", self.last_origin, self.first_origin)));
        }
        if self.refit_every == 0 {
            return Err(HarnessError::Plan("refit_every must be >= 1".into()));
        }
        if self.infosets.is_empty() {
            return Err(HarnessError::Plan("no information sets".into()));
        }
        if self.buffer + 1 < self.ma_window {
            log::warn!(
                "buffer of {} days is shorter than the {}-day smoothing window; smoothed features may overlap the test period",
                self.buffer,
                self.ma_window
            );
        }
        Ok(())
    }

    /// Every forecast origin, daily.
    pub fn origins(&self) -> Vec<NaiveDate> {
        self.first_origin.iter_days().take_while(|d| *d <= self.last_origin).collect()
    }

    /// Origins at which models are re-estimated.
    pub fn refit_origins(&self) -> Vec<NaiveDate> {
        self.origins().into_iter().step_by(self.refit_every as usize).collect()
    }
}

/// One out-of-sample forecast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub country: String,
    pub region: crate::panel::Region,
    pub origin: NaiveDate,
    pub family: Family,
    pub infoset: InfoSet,
    pub yhat: f64,
    pub y: f64,
    pub err: f64,
    /// Origin of the refit that produced the forecasting model.
    pub fit_origin: NaiveDate,
}

/// Training fingerprint of one refit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub family: Family,
    pub infoset: InfoSet,
    pub fit_origin: NaiveDate,
    pub fingerprint: Fingerprint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedOrigin {
    pub origin: NaiveDate,
    pub infoset: InfoSet,
    pub family: Option<Family>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ForecastLedger {
    pub buffer: u32,
    pub records: Vec<ForecastRecord>,
    pub fits: Vec<FitRecord>,
    pub skipped: Vec<SkippedOrigin>,
}

fn check_fit(fp: &Fingerprint, origin: NaiveDate, buffer: u32) -> Result<(), HarnessError> {
    let limit = origin - Days::new(buffer as u64);
    for d in [fp.max_feature_date, fp.max_target_date].into_iter().flatten() {
        if d > limit {
            return Err(HarnessError::Leakage { origin, max_date: d, buffer });
        }
    }
    Ok(())
}

impl ForecastLedger {
    /// Sorts records by family, information set, country and origin.
    pub fn sort(&mut self) {
        self.records.sort_by(|a, b| {
            (a.family, a.infoset, &a.country, a.origin).cmp(&(b.family, b.infoset, &b.country, b.origin))
        });
        self.fits.sort_by(|a, b| (a.family, a.infoset, a.fit_origin).cmp(&(b.family, b.infoset, b.fit_origin)));
        self.skipped.sort_by(|a, b| (a.infoset, a.origin, a.family).cmp(&(b.infoset, b.origin, b.family)));
    }

    /// Checks that every record was produced by a recorded fit whose
    /// training data ends at least `buffer` days before the record's origin.
    /// Records without a matching fit fail as well.
    pub fn certify(&self) -> Result<(), HarnessError> {
        let fits: BTreeMap<(Family, InfoSet, NaiveDate), &Fingerprint> =
            self.fits.iter().map(|f| ((f.family, f.infoset, f.fit_origin), &f.fingerprint)).collect();
        for r in &self.records {
            let fp = fits.get(&(r.family, r.infoset, r.fit_origin)).ok_or_else(|| {
                HarnessError::Ledger(format!("no fit recorded for {} {} at {}", r.family, r.infoset, r.fit_origin))
            })?;
            if r.fit_origin > r.origin {
                return Err(HarnessError::Ledger(format!("record at {} uses a model fitted at {}", r.origin, r.fit_origin)));
            }
            check_fit(fp, r.origin, self.buffer)?;
        }
        Ok(())
    }

    /// Records for one `(family, infoset)` cell.
    pub fn cell(&self, family: Family, infoset: InfoSet) -> impl Iterator<Item = &ForecastRecord> {
        self.records.iter().filter(move |r| r.family == family && r.infoset == infoset)
    }

    /// CSV `country,origin,family,infoset,yhat,y,err`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), HarnessError> {
        let mut out = csv::Writer::from_writer(w);
        let e = |e: csv::Error| HarnessError::Ledger(e.to_string());
        out.write_record(["country", "origin", "family", "infoset", "yhat", "y", "err"]).map_err(e)?;
        for r in &self.records {
            out.write_record([
                r.country.clone(),
                r.origin.to_string(),
                r.family.to_string(),
                r.infoset.to_string(),
                format!("{:?}", r.yhat),
                format!("{:?}", r.y),
                format!("{:?}", r.err),
            ])
            .map_err(e)?;
        }
        out.flush().map_err(|x| HarnessError::Ledger(x.to_string()))
    }

    /// Reads records written by [`ForecastLedger::write_csv`]; regions come
    /// from `taxonomy`. Fits are not part of the CSV.
    pub fn read_csv<R: Read>(r: R, taxonomy: &Taxonomy, buffer: u32) -> Result<Self, HarnessError> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut records = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| HarnessError::Ledger(format!("line {line}: {e}")))?;
            let field = |k: usize| row.get(k).ok_or_else(|| HarnessError::Ledger(format!("line {line}: missing column {k}")));
            let num = |k: usize| -> Result<f64, HarnessError> {
                field(k)?.parse().map_err(|e| HarnessError::Ledger(format!("line {line}: {e}")))
            };
            let country = field(0)?.to_string();
            let region = taxonomy
                .region(&country)
                .ok_or_else(|| HarnessError::Ledger(format!("line {line}: unknown country {country}")))?;
            let origin: NaiveDate = field(1)?.parse().map_err(|e| HarnessError::Ledger(format!("line {line}: {e}")))?;
            records.push(ForecastRecord {
                country,
                region,
                origin,
                family: field(2)?.parse()?,
                infoset: field(3)?.parse()?,
                yhat: num(4)?,
                y: num(5)?,
                err: num(6)?,
                fit_origin: origin,
            });
        }
        Ok(ForecastLedger { buffer, records, fits: Vec::new(), skipped: Vec::new() })
    }
}

/// Output of one refit block: the fit fingerprints, forecasts and skips.
type BlockResult = Result<(Vec<FitRecord>, Vec<ForecastRecord>, Vec<SkippedOrigin>), HarnessError>;

/// Runs the recursive horse race for every spec under every plan infoset.
///
/// Each spec's own `infoset` is ignored: the plan's information sets are
/// applied to every spec. Refit blocks run in parallel; the ledger is
/// canonically sorted afterwards, so its content does not depend on
/// scheduling.
pub fn run_backtest(src: &dyn PanelSource, specs: &[ModelSpec], plan: &BacktestPlan) -> Result<ForecastLedger, HarnessError> {
    plan.validate()?;
    if specs.is_empty() {
        return Err(HarnessError::Plan("no model specs".into()));
    }
    for s in specs {
        s.validate()?;
    }
    let refits = plan.refit_origins();
    let tasks: Vec<(InfoSet, usize)> = plan.infosets.iter().flat_map(|&i| (0..refits.len()).map(move |k| (i, k))).collect();
    let blocks = par::map(&tasks, |&(infoset, k)| -> BlockResult {
        let fit_origin = refits[k];
        let block_end = refits.get(k + 1).map(|d| *d - Days::new(1)).unwrap_or(plan.last_origin);
        let train = training_design(src, infoset, fit_origin, plan.buffer);
        let mut fits = Vec::new();
        let mut records = Vec::new();
        let mut skipped = Vec::new();
        if train.is_empty() {
            log::warn!("skipping refit at {fit_origin} ({infoset}): no eligible training rows");
            skipped.push(SkippedOrigin { origin: fit_origin, infoset, family: None, reason: "no eligible training rows".into() });
            return Ok((fits, records, skipped));
        }
        let forecasts: Vec<DesignMatrix> =
            fit_origin.iter_days().take_while(|d| *d <= block_end).map(|t| forecast_design(src, infoset, t)).collect();
        for base in specs {
            let spec = ModelSpec { infoset, ..base.clone() };
            let model = match models::fit(&spec, &train) {
                Ok(m) => m,
                Err(e @ (ModelError::RankDeficient { .. } | ModelError::NotConverged { .. } | ModelError::EmptyDesign)) => {
                    log::warn!("skipping {} {infoset} refit at {fit_origin}: {e}", spec.family);
                    skipped.push(SkippedOrigin { origin: fit_origin, infoset, family: Some(spec.family), reason: e.to_string() });
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            check_fit(&model.fingerprint, fit_origin, plan.buffer)?;
            records.extend(forecast_block(&model, &forecasts, fit_origin)?);
            fits.push(FitRecord { family: spec.family, infoset, fit_origin, fingerprint: model.fingerprint.clone() });
        }
        Ok((fits, records, skipped))
    });
    let mut ledger = ForecastLedger { buffer: plan.buffer, ..Default::default() };
    for b in blocks {
        let (f, r, s) = b?;
        ledger.fits.extend(f);
        ledger.records.extend(r);
        ledger.skipped.extend(s);
    }
    ledger.sort();
    ledger.certify()?;
    Ok(ledger)
}

fn forecast_block(model: &FittedModel, days: &[DesignMatrix], fit_origin: NaiveDate) -> Result<Vec<ForecastRecord>, HarnessError> {
    let mut out = Vec::new();
    for d in days {
        if d.is_empty() {
            continue;
        }
        let yhat = models::predict(model, d)?;
        for (i, yh) in yhat.into_iter().enumerate() {
            let c = &d.countries[d.country[i]];
            out.push(ForecastRecord {
                country: c.code.clone(),
                region: c.region,
                origin: d.dates[i],
                family: model.family(),
                infoset: model.spec.infoset,
                yhat: yh,
                y: d.y[i],
                err: d.y[i] - yh,
                fit_origin,
            });
        }
    }
    Ok(out)
}
