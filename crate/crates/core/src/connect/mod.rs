//! Rolling connectedness of attribution series: adaptive windows, VAR with
//! AIC lag choice, generalized FEVD spillovers and Spearman network density.

use std::io::Write;

use chrono::{Days, NaiveDate};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::AttributionCube;
use crate::error::ErrorKind;
use crate::panel::{coverage, interpolate_short_gaps, Series};
use crate::par;
use crate::stats::{mean, sample_sd, sample_variance, spearman};

pub const DEFAULT_HORIZON: usize = 10;
pub const DEFAULT_TAU: f64 = 0.4;
pub const MAX_LAGS: usize = 4;
const RIDGE_SCALE: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum ConnectError {
    #[error("invalid window plan: {0}")]
    Plan(String),
    #[error("need T > k*p_max + 1 = {needed} observations, have {t}")]
    ShortSample { t: usize, needed: usize },
    #[error("singular {0}")]
    Singular(&'static str),
    #[error("non-finite moving-average coefficients at horizon {0}")]
    NonFinite(usize),
    #[error("{0}")]
    Invalid(String),
}

impl ConnectError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            ConnectError::Plan(_) | ConnectError::Invalid(_) => ErrorKind::Validation,
            _ => ErrorKind::Numerical,
        }
    }
}

/// Weekly window centers and the adaptive-width rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub first_center: NaiveDate,
    pub last_center: NaiveDate,
    pub step_days: u32,
    pub probe_half_width: u32,
    pub coverage_threshold: f64,
    pub h_min: u32,
    pub h_max: u32,
    /// Lag order used in the window-length rule `T = 6 k p`.
    pub rule_lags: usize,
    pub n_max: usize,
    pub max_gap: u32,
    pub sd_floor: f64,
}

impl WindowPlan {
    pub fn weekly(first_center: NaiveDate, last_center: NaiveDate) -> Self {
        WindowPlan {
            first_center,
            last_center,
            step_days: 7,
            probe_half_width: 180,
            coverage_threshold: 0.7,
            h_min: 60,
            h_max: 180,
            rule_lags: 3,
            n_max: 10,
            max_gap: 7,
            sd_floor: 1e-10,
        }
    }

    pub fn validate(&self) -> Result<(), ConnectError> {
        let bad = |m: &str| Err(ConnectError::Plan(m.to_string()));
        if self.last_center < self.first_center {
            return bad("last center precedes first center");
        }
        if self.step_days == 0 || self.probe_half_width == 0 {
            return bad("step and probe width must be positive");
        }
        if !(self.coverage_threshold > 0.0 && self.coverage_threshold <= 1.0) {
            return bad("coverage threshold must lie in (0, 1]");
        }
        if self.h_min == 0 || self.h_min > self.h_max {
            return bad("half-width bounds must satisfy 0 < h_min <= h_max");
        }
        if self.n_max < 2 || self.rule_lags == 0 {
            return bad("n_max must be >= 2 and rule_lags >= 1");
        }
        Ok(())
    }

    pub fn centers(&self) -> Vec<NaiveDate> {
        self.first_center
            .iter_days()
            .step_by(self.step_days as usize)
            .take_while(|d| *d <= self.last_center)
            .collect()
    }

    /// Half-width for an effective dimension: `T = 6 k p`, `h = T / 2`, clipped.
    pub fn half_width(&self, k_eff: usize) -> u32 {
        let t = 6 * k_eff * self.rule_lags;
        ((t / 2) as u32).clamp(self.h_min, self.h_max)
    }
}

/// Why a window produced no spillover value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    TooFewCountries,
    ShortSample,
    Singular,
    NonFinite,
}

impl SkipReason {
    pub fn as_str(self) -> &'static str {
        match self {
            SkipReason::TooFewCountries => "too_few_countries",
            SkipReason::ShortSample => "short_sample",
            SkipReason::Singular => "singular",
            SkipReason::NonFinite => "non_finite",
        }
    }

    fn of(e: &ConnectError) -> SkipReason {
        match e {
            ConnectError::ShortSample { .. } => SkipReason::ShortSample,
            ConnectError::NonFinite(_) => SkipReason::NonFinite,
            _ => SkipReason::Singular,
        }
    }
}

/// A cleaned, standardized `k x T` block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub center: NaiveDate,
    pub k_eff: usize,
    pub h: u32,
    pub countries: Vec<String>,
    pub dates: Vec<NaiveDate>,
    /// `data[i][t]` for country `i`.
    pub data: Vec<Vec<f64>>,
}

/// Builds the window block, or the reason it is skipped together with
/// `(k_eff, h)`.
///
/// The block keeps the dates observed (after interpolation) in every
/// retained series, so the VAR sees a balanced sample.
pub fn build_window(
    series: &[(String, Series)],
    center: NaiveDate,
    plan: &WindowPlan,
) -> Result<Window, (SkipReason, usize, u32)> {
    let k_eff = series
        .iter()
        .filter(|(_, s)| coverage(s, center, plan.probe_half_width) >= plan.coverage_threshold)
        .count();
    let h = plan.half_width(k_eff);
    let (lo, hi) = (center - Days::new(h as u64), center + Days::new(h as u64));
    // (code, cleaned series, coverage, variance)
    let mut kept: Vec<(&str, Series, f64, f64)> = series
        .iter()
        .filter_map(|(code, s)| {
            let filled = interpolate_short_gaps(&s.restrict(lo, hi), plan.max_gap);
            let cov = coverage(&filled, center, h);
            if cov < plan.coverage_threshold || filled.len() < 2 {
                return None;
            }
            let sd = sample_sd(filled.values());
            (sd >= plan.sd_floor).then(|| (code.as_str(), filled.clone(), cov, sample_variance(filled.values())))
        })
        .collect();
    kept.sort_by(|a, b| b.2.total_cmp(&a.2).then(b.3.total_cmp(&a.3)).then(a.0.cmp(b.0)));
    kept.truncate(plan.n_max);
    if kept.len() < 2 {
        return Err((SkipReason::TooFewCountries, k_eff, h));
    }
    kept.sort_by(|a, b| a.0.cmp(b.0));
    let dates: Vec<NaiveDate> = kept[0].1.dates().iter().copied().filter(|d| kept[1..].iter().all(|k| k.1.get(*d).is_some())).collect();
    let mut countries = Vec::new();
    let mut data = Vec::new();
    for (code, s, _, _) in &kept {
        let raw: Vec<f64> = dates.iter().map(|d| s.get(*d).expect("common date")).collect();
        if raw.len() < 2 {
            continue;
        }
        let (m, sd) = (mean(&raw), sample_sd(&raw));
        if !(sd >= plan.sd_floor) {
            continue;
        }
        countries.push(code.to_string());
        data.push(raw.iter().map(|v| (v - m) / sd).collect());
    }
    if data.len() < 2 {
        return Err((SkipReason::TooFewCountries, k_eff, h));
    }
    Ok(Window { center, k_eff, h, countries, dates, data })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarModel {
    pub k: usize,
    pub p: usize,
    pub t_eff: usize,
    pub intercept: Vec<f64>,
    /// `a[l][i][j]`: lag `l + 1` effect of variable `j` on variable `i`.
    pub a: Vec<Vec<Vec<f64>>>,
    /// Standard errors matching `a`.
    pub a_se: Vec<Vec<Vec<f64>>>,
    /// Residual covariance (divided by `t_eff`).
    pub sigma: Vec<Vec<f64>>,
    pub lambda_ridge: f64,
    /// `sigma + lambda_ridge * I`.
    pub sigma_ridged: Vec<Vec<f64>>,
    /// AIC for `p = 1..=p_max`.
    pub aic: Vec<f64>,
    /// Companion matrix has an eigenvalue of modulus >= 1.
    pub explosive: bool,
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

struct LsFit {
    coef: DMatrix<f64>,
    xtx_inv: DMatrix<f64>,
    sigma: DMatrix<f64>,
}

/// Least squares of `y_t` on `[1, y_{t-1}, ..., y_{t-p}]` over `t = p_max..T`.
fn ls_var(data: &[Vec<f64>], p: usize, p_max: usize) -> Result<LsFit, ConnectError> {
    let k = data.len();
    let t_total = data[0].len();
    let n = t_total - p_max;
    let cols = 1 + k * p;
    let x = DMatrix::from_fn(n, cols, |r, c| {
        if c == 0 {
            1.0
        } else {
            let lag = (c - 1) / k + 1;
            let var = (c - 1) % k;
            data[var][p_max + r - lag]
        }
    });
    let y = DMatrix::from_fn(n, k, |r, c| data[c][p_max + r]);
    let xtx = x.transpose() * &x;
    let chol = xtx.clone().cholesky().ok_or(ConnectError::Singular("regressor cross-product"))?;
    let xtx_inv = chol.inverse();
    if !xtx_inv.iter().all(|v| v.is_finite()) {
        return Err(ConnectError::Singular("regressor cross-product"));
    }
    let coef = &xtx_inv * (x.transpose() * &y);
    let resid = &y - &x * &coef;
    let sigma = resid.transpose() * &resid / n as f64;
    Ok(LsFit { coef, xtx_inv, sigma })
}

fn companion_explosive(a: &[DMatrix<f64>]) -> bool {
    let k = a[0].nrows();
    let p = a.len();
    let mut c = DMatrix::zeros(k * p, k * p);
    for (l, al) in a.iter().enumerate() {
        c.view_mut((0, l * k), (k, k)).copy_from(al);
    }
    for i in k..k * p {
        c[(i, i - k)] = 1.0;
    }
    c.complex_eigenvalues().iter().any(|z| z.norm() >= 1.0)
}

/// Least-squares VAR with the lag order minimising AIC over `1..=p_max`,
/// all orders estimated on the same sample. Ties go to the smaller order.
pub fn fit_var(data: &[Vec<f64>], p_max: usize) -> Result<VarModel, ConnectError> {
    let k = data.len();
    if k == 0 || p_max == 0 {
        return Err(ConnectError::Invalid("empty block or zero lag bound".into()));
    }
    let t = data[0].len();
    if data.iter().any(|r| r.len() != t) {
        return Err(ConnectError::Invalid("ragged block".into()));
    }
    let needed = k * p_max + 1;
    if t <= needed + p_max {
        return Err(ConnectError::ShortSample { t, needed: needed + p_max + 1 });
    }
    let t_eff = t - p_max;
    let mut aic = Vec::with_capacity(p_max);
    let mut best: Option<(usize, f64, LsFit)> = None;
    for p in 1..=p_max {
        let f = ls_var(data, p, p_max)?;
        let det = f.sigma.determinant();
        if !(det > 0.0) || !det.is_finite() {
            return Err(ConnectError::Singular("residual covariance"));
        }
        let v = det.ln() + 2.0 * (k * k * p + k) as f64 / t_eff as f64;
        aic.push(v);
        if best.as_ref().is_none_or(|(_, b, _)| v < *b) {
            best = Some((p, v, f));
        }
    }
    let (p, _, f) = best.expect("at least one lag order");
    let blocks: Vec<DMatrix<f64>> = (0..p).map(|l| f.coef.rows(1 + l * k, k).transpose()).collect();
    let a_se = (0..p)
        .map(|l| {
            (0..k)
                .map(|i| (0..k).map(|j| (f.sigma[(i, i)] * f.xtx_inv[(1 + l * k + j, 1 + l * k + j)]).sqrt()).collect())
                .collect()
        })
        .collect();
    let lambda_ridge = RIDGE_SCALE * f.sigma.trace() / k as f64;
    let ridged = &f.sigma + DMatrix::identity(k, k) * lambda_ridge;
    Ok(VarModel {
        k,
        p,
        t_eff,
        intercept: (0..k).map(|i| f.coef[(0, i)]).collect(),
        a: blocks.iter().map(to_rows).collect(),
        a_se,
        sigma: to_rows(&f.sigma),
        lambda_ridge,
        sigma_ridged: to_rows(&ridged),
        aic,
        explosive: companion_explosive(&blocks),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShockScaling {
    /// `theta_ij ~ sum (Psi Sigma)_ij^2`, as published.
    #[default]
    Published,
    /// Additionally divides by `sigma_jj` (Pesaran-Shin).
    PesaranShin,
}

/// Row-normalized generalized FEVD over horizons `0..h`, with `sigma` used as given.
pub fn gfevd(a: &[Vec<Vec<f64>>], sigma: &[Vec<f64>], h: usize, scaling: ShockScaling) -> Result<Vec<Vec<f64>>, ConnectError> {
    let k = sigma.len();
    if k == 0 || h == 0 {
        return Err(ConnectError::Invalid("empty system or zero horizon".into()));
    }
    let s = DMatrix::from_fn(k, k, |i, j| sigma[i][j]);
    let blocks: Vec<DMatrix<f64>> = a.iter().map(|b| DMatrix::from_fn(k, k, |i, j| b[i][j])).collect();
    let mut psi: Vec<DMatrix<f64>> = Vec::with_capacity(h);
    let mut num = DMatrix::<f64>::zeros(k, k);
    let mut den = DVector::<f64>::zeros(k);
    for l in 0..h {
        let cur = if l == 0 {
            DMatrix::identity(k, k)
        } else {
            let mut m = DMatrix::zeros(k, k);
            for (j, aj) in blocks.iter().enumerate().take(l) {
                m += aj * &psi[l - j - 1];
            }
            m
        };
        if !cur.iter().all(|v| v.is_finite()) {
            return Err(ConnectError::NonFinite(l));
        }
        let ps = &cur * &s;
        num += ps.map(|v| v * v);
        let pspt = &ps * cur.transpose();
        den += pspt.diagonal();
        psi.push(cur);
    }
    let mut theta = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..k {
            let mut v = num[(i, j)] / den[i];
            if scaling == ShockScaling::PesaranShin {
                v /= s[(j, j)];
            }
            theta[i][j] = v;
        }
        let row: f64 = theta[i].iter().sum();
        if !(row > 0.0) || !row.is_finite() {
            return Err(ConnectError::NonFinite(h));
        }
        theta[i].iter_mut().for_each(|v| *v /= row);
    }
    Ok(theta)
}

/// Total spillover index `100 * sum_{i != j} theta_ij / k`.
pub fn dy_index(theta: &[Vec<f64>]) -> f64 {
    let k = theta.len();
    let off: f64 = (0..k).flat_map(|i| (0..k).filter(move |j| *j != i).map(move |j| (i, j))).map(|(i, j)| theta[i][j]).sum();
    100.0 * off / k as f64
}

/// Thresholded mean absolute correlation over the `k(k-1)/2` pairs.
pub fn density_from_correlations(rhos: &[f64], tau: f64) -> f64 {
    if rhos.is_empty() {
        return 0.0;
    }
    100.0 * rhos.iter().map(|r| r.abs()).filter(|r| *r >= tau).fold(0.0, |a, r| a + r) / rhos.len() as f64
}

/// Pairwise Spearman correlations `i < j` of the rows of `block`.
pub fn spearman_pairs(block: &[Vec<f64>]) -> Vec<f64> {
    let k = block.len();
    let mut out = Vec::with_capacity(k * k.saturating_sub(1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            out.push(spearman(&block[i], &block[j]));
        }
    }
    out
}

pub fn density(block: &[Vec<f64>], tau: f64) -> Result<f64, ConnectError> {
    if block.len() < 2 {
        return Err(ConnectError::Invalid("density needs at least two series".into()));
    }
    let rhos = spearman_pairs(block);
    if rhos.iter().any(|r| !r.is_finite()) {
        return Err(ConnectError::Invalid("constant series in density block".into()));
    }
    Ok(density_from_correlations(&rhos, tau))
}

/// One `(feature, center)` outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpilloverRow {
    pub feature: String,
    pub center: NaiveDate,
    pub k_eff: usize,
    pub h: u32,
    pub p: Option<usize>,
    pub horizon: usize,
    pub s_dy: Option<f64>,
    pub density: Option<f64>,
    pub countries: Vec<String>,
    pub skip_reason: Option<SkipReason>,
    pub explosive: bool,
    pub theta: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectConfig {
    pub horizon: usize,
    pub tau: f64,
    pub p_max: usize,
    pub scaling: ShockScaling,
}

impl Default for ConnectConfig {
    fn default() -> Self {
        ConnectConfig { horizon: DEFAULT_HORIZON, tau: DEFAULT_TAU, p_max: MAX_LAGS, scaling: ShockScaling::Published }
    }
}

/// The full chain for one window.
pub fn window_spillover(feature: &str, series: &[(String, Series)], center: NaiveDate, plan: &WindowPlan, cfg: &ConnectConfig) -> SpilloverRow {
    let mut row = SpilloverRow {
        feature: feature.to_string(),
        center,
        k_eff: 0,
        h: 0,
        p: None,
        horizon: cfg.horizon,
        s_dy: None,
        density: None,
        countries: Vec::new(),
        skip_reason: None,
        explosive: false,
        theta: None,
    };
    let w = match build_window(series, center, plan) {
        Ok(w) => w,
        Err((reason, k_eff, h)) => {
            row.k_eff = k_eff;
            row.h = h;
            row.skip_reason = Some(reason);
            return row;
        }
    };
    row.k_eff = w.k_eff;
    row.h = w.h;
    row.countries = w.countries.clone();
    row.density = density(&w.data, cfg.tau).ok();
    let res = fit_var(&w.data, cfg.p_max).and_then(|m| {
        let theta = gfevd(&m.a, &m.sigma_ridged, cfg.horizon, cfg.scaling)?;
        Ok((m, theta))
    });
    match res {
        Ok((m, theta)) => {
            if m.explosive {
                log::warn!("{feature} window at {center}: explosive VAR, using truncated MA sums");
            }
            row.p = Some(m.p);
            row.explosive = m.explosive;
            row.s_dy = Some(dy_index(&theta));
            row.theta = Some(theta);
        }
        Err(e) => row.skip_reason = Some(SkipReason::of(&e)),
    }
    row
}

/// Per-country series of `phi` for `feature`, sorted by country code.
pub fn cube_series(cube: &AttributionCube, feature: &str) -> Result<Vec<(String, Series)>, crate::attribution::AttributionError> {
    let j = cube.feature_index(feature)?;
    let mut per: std::collections::BTreeMap<&str, Vec<(NaiveDate, f64)>> = std::collections::BTreeMap::new();
    for i in 0..cube.n_rows() {
        per.entry(cube.countries[cube.country[i]].code.as_str()).or_default().push((cube.dates[i], cube.phi_row(i)[j]));
    }
    per.into_iter()
        .map(|(c, pairs)| {
            Series::from_pairs(pairs)
                .map(|s| (c.to_string(), s))
                .map_err(|e| crate::attribution::AttributionError::Invalid(e.to_string()))
        })
        .collect()
}

/// Every `(feature, center)` window, computed in parallel and returned in
/// `(feature order, center)` order.
pub fn rolling_connectedness(
    features: &[(String, Vec<(String, Series)>)],
    plan: &WindowPlan,
    cfg: &ConnectConfig,
) -> Result<Vec<SpilloverRow>, ConnectError> {
    plan.validate()?;
    if cfg.horizon == 0 || cfg.p_max == 0 || !(0.0..=1.0).contains(&cfg.tau) {
        return Err(ConnectError::Plan("horizon and p_max must be positive, tau in [0, 1]".into()));
    }
    let centers = plan.centers();
    let tasks: Vec<(usize, NaiveDate)> = (0..features.len()).flat_map(|f| centers.iter().map(move |c| (f, *c))).collect();
    Ok(par::map(&tasks, |&(f, c)| window_spillover(&features[f].0, &features[f].1, c, plan, cfg)))
}

/// CSV `feature,center,k_eff,h,p,H,S_dy,density,countries,skip_reason`.
pub fn write_spillover_csv<W: Write>(rows: &[SpilloverRow], w: W) -> Result<(), ConnectError> {
    let e = |e: csv::Error| ConnectError::Invalid(format!("write failed: {e}"));
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["feature", "center", "k_eff", "h", "p", "H", "S_dy", "density", "countries", "skip_reason"]).map_err(e)?;
    let opt = |v: Option<f64>| v.map(|v| format!("{v:?}")).unwrap_or_default();
    for r in rows {
        out.write_record([
            r.feature.clone(),
            r.center.to_string(),
            r.k_eff.to_string(),
            r.h.to_string(),
            r.p.map(|p| p.to_string()).unwrap_or_default(),
            r.horizon.to_string(),
            opt(r.s_dy),
            opt(r.density),
            r.countries.join(";"),
            r.skip_reason.map(|s| s.as_str().to_string()).unwrap_or_default(),
        ])
        .map_err(e)?;
    }
    out.flush().map_err(|x| ConnectError::Invalid(x.to_string()))
}

/// Square CSV of one window's normalized decomposition.
pub fn write_theta_csv<W: Write>(row: &SpilloverRow, w: W) -> Result<(), ConnectError> {
    let theta = row.theta.as_ref().ok_or_else(|| ConnectError::Invalid("window has no decomposition".into()))?;
    let e = |e: csv::Error| ConnectError::Invalid(format!("write failed: {e}"));
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec![String::new()];
    header.extend(row.countries.iter().cloned());
    out.write_record(&header).map_err(e)?;
    for (c, r) in row.countries.iter().zip(theta) {
        let mut rec = vec![c.clone()];
        rec.extend(r.iter().map(|v| format!("{v:?}")));
        out.write_record(&rec).map_err(e)?;
    }
    out.flush().map_err(|x| ConnectError::Invalid(x.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::brute_gfevd;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn d(i: i64) -> NaiveDate {
        NaiveDate::from_ymd_opt(2021, 1, 1).unwrap() + chrono::Duration::days(i)
    }

    fn simulate(a: &[Vec<Vec<f64>>], t: usize, seed: u64) -> Vec<Vec<f64>> {
        let k = a[0].len();
        let p = a.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let burn = 100;
        let mut y = vec![vec![0.0; t + burn]; k];
        for s in p..t + burn {
            for i in 0..k {
                let mut v: f64 = StandardNormal.sample(&mut rng);
                for (l, al) in a.iter().enumerate() {
                    for j in 0..k {
                        v += al[i][j] * y[j][s - l - 1];
                    }
                }
                y[i][s] = v;
            }
        }
        y.into_iter().map(|r| r[burn..].to_vec()).collect()
    }

    #[test]
    fn rule_of_thumb_half_width() {
        let plan = WindowPlan::weekly(d(0), d(100));
        assert_eq!(plan.half_width(10), 90);
        assert_eq!(plan.half_width(40), 180);
        assert_eq!(plan.half_width(2), 60);
        assert_eq!(plan.centers().len(), 15);
    }

    #[test]
    fn identity_and_uniform_indices() {
        let theta = gfevd(&[vec![vec![0.0; 3]; 3]], &[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]], 10, ShockScaling::Published).unwrap();
        assert_eq!(dy_index(&theta), 0.0);
        for k in 2..6 {
            let u = vec![vec![1.0 / k as f64; k]; k];
            assert!((dy_index(&u) - 100.0 * (k - 1) as f64 / k as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn bivariate_example_matches_oracle() {
        let a = vec![vec![vec![0.5, 0.3], vec![0.0, 0.5]]];
        let s = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let got = gfevd(&a, &s, 10, ShockScaling::Published).unwrap();
        let want = brute_gfevd(&a, &s, 10).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((got[i][j] - want[i][j]).abs() < 1e-10);
            }
            assert!((got[i].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(got[0][1] > 0.0 && got[1][0] == 0.0);
    }

    #[test]
    fn pesaran_shin_scaling_matches_published_when_unit_variances() {
        let a = vec![vec![vec![0.2, 0.1], vec![0.3, 0.1]]];
        let s = vec![vec![1.0, 0.4], vec![0.4, 1.0]];
        assert_eq!(gfevd(&a, &s, 8, ShockScaling::Published).unwrap(), gfevd(&a, &s, 8, ShockScaling::PesaranShin).unwrap());
        let s2 = vec![vec![2.0, 0.4], vec![0.4, 1.0]];
        assert_ne!(gfevd(&a, &s2, 8, ShockScaling::Published).unwrap(), gfevd(&a, &s2, 8, ShockScaling::PesaranShin).unwrap());
    }

    #[test]
    fn var1_recovery() {
        let a = vec![vec![vec![0.6, 0.2], vec![-0.3, 0.5]]];
        let y = simulate(&a, 500, 3);
        let m = fit_var(&y, 1).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((m.a[0][i][j] - a[0][i][j]).abs() < 0.05, "{i}{j}: {}", m.a[0][i][j]);
            }
        }
        assert!(!m.explosive);
    }

    #[test]
    fn white_noise_prefers_one_lag_and_small_coefficients() {
        let zero = vec![vec![vec![0.0; 2]; 2]];
        let mut p1 = 0;
        let mut within = 0;
        let mut total = 0;
        for seed in 0..40 {
            let m = fit_var(&simulate(&zero, 300, seed), 4).unwrap();
            p1 += (m.p == 1) as usize;
            for l in 0..m.p {
                for i in 0..2 {
                    for j in 0..2 {
                        total += 1;
                        within += (m.a[l][i][j].abs() < 3.0 * m.a_se[l][i][j]) as usize;
                    }
                }
            }
        }
        assert!(p1 >= 34, "p = 1 chosen {p1}/40 times");
        assert!(within as f64 >= 0.95 * total as f64);
    }

    #[test]
    fn ridge_formula() {
        let y = simulate(&[vec![vec![0.0; 2]; 2]], 200, 1);
        let m = fit_var(&y, 2).unwrap();
        let tr = m.sigma[0][0] + m.sigma[1][1];
        assert!((m.lambda_ridge - 1e-8 * tr / 2.0).abs() < 1e-22);
        assert_eq!(m.sigma_ridged[0][1], m.sigma[0][1]);
        // trace 2, k 2 gives exactly 1e-8
        assert_eq!(RIDGE_SCALE * 2.0 / 2.0, 1e-8);
    }

    #[test]
    fn short_sample_is_rejected() {
        let y = vec![vec![0.0; 10], vec![1.0; 10]];
        assert!(matches!(fit_var(&y, 4), Err(ConnectError::ShortSample { .. })));
    }

    #[test]
    fn random_stable_vars_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let k = rng.random_range(2..=4);
            let p = rng.random_range(1..=2);
            let a: Vec<Vec<Vec<f64>>> = (0..p).map(|_| (0..k).map(|_| (0..k).map(|_| rng.random_range(-0.3..0.3) / k as f64).collect()).collect()).collect();
            let l: Vec<Vec<f64>> = (0..k).map(|_| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let s: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| (0..k).map(|q| l[i][q] * l[j][q]).sum::<f64>() + if i == j { 0.1 } else { 0.0 }).collect()).collect();
            let got = gfevd(&a, &s, 10, ShockScaling::Published).unwrap();
            let want = brute_gfevd(&a, &s, 10).unwrap();
            for i in 0..k {
                for j in 0..k {
                    assert!((got[i][j] - want[i][j]).abs() < 1e-10);
                    assert!(got[i][j] >= 0.0);
                }
                assert!((got[i].iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn density_examples() {
        assert!((density_from_correlations(&[0.5, 0.3, 0.9], 0.4) - 100.0 * 1.4 / 3.0).abs() < 1e-12);
        let base: Vec<f64> = (0..50).map(|i| (i as f64 * 0.7).sin() + i as f64 * 0.01).collect();
        let block = vec![base.clone(), base.iter().map(|v| v.exp()).collect(), base.iter().map(|v| 3.0 * v - 1.0).collect()];
        assert!((density(&block, 0.4).unwrap() - 100.0).abs() < 1e-12);
    }

    #[test]
    fn independent_noise_has_low_density() {
        let mut low = 0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let block: Vec<Vec<f64>> = (0..10).map(|_| (0..360).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
            low += (density(&block, 0.4).unwrap() < 5.0) as usize;
        }
        assert!(low >= 95);
    }

    fn gappy(code: &str, seed: u64, n: i64, drop_every: i64) -> (String, Series) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = (0..n).filter(|i| drop_every == 0 || i % drop_every != 3).map(|i| (d(i), rng.random_range(-1.0..1.0) + (i as f64 / 20.0).sin())).collect();
        (code.to_string(), Series::from_pairs(pairs).unwrap())
    }

    #[test]
    fn window_cleaning_and_selection() {
        let plan = WindowPlan::weekly(d(200), d(200));
        let mut series = vec![gappy("AA", 1, 400, 0), gappy("BB", 2, 400, 5), gappy("CC", 3, 400, 0)];
        // sparse series: every other day observed over only the first part
        series.push(("DD".into(), Series::from_pairs((0..150).step_by(2).map(|i| (d(i), i as f64)).collect()).unwrap()));
        // constant series gets dropped
        series.push(("EE".into(), Series::from_pairs((0..400).map(|i| (d(i), 1.0)).collect()).unwrap()));
        let w = build_window(&series, d(200), &plan).unwrap();
        assert_eq!(w.k_eff, 4);
        assert_eq!(w.h, 60);
        assert_eq!(w.countries, vec!["AA", "BB", "CC"]);
        assert_eq!(w.dates.len(), 2 * 60 + 1);
        for r in &w.data {
            assert!(mean(r).abs() < 1e-12);
            assert!((sample_sd(r) - 1.0).abs() < 1e-12);
        }
        let one = vec![gappy("AA", 1, 400, 0)];
        assert_eq!(build_window(&one, d(200), &plan).unwrap_err().0, SkipReason::TooFewCountries);
    }

    #[test]
    fn top_n_selection_breaks_ties_by_code() {
        let plan = WindowPlan { n_max: 2, ..WindowPlan::weekly(d(200), d(200)) };
        let s = gappy("ZZ", 1, 400, 0);
        let series = vec![("CC".to_string(), s.1.clone()), ("AA".to_string(), s.1.clone()), ("BB".to_string(), s.1.map_values(|v| 2.0 * v))];
        let w = build_window(&series, d(200), &plan).unwrap();
        // BB has the largest variance, then AA beats CC on code
        assert_eq!(w.countries, vec!["AA", "BB"]);
    }

    #[test]
    fn scale_invariance_and_determinism() {
        let a = vec![vec![vec![0.4, 0.2, 0.0], vec![0.1, 0.3, 0.2], vec![0.0, 0.2, 0.4]]];
        let y = simulate(&a, 400, 8);
        let mk = |scale: f64| -> Vec<(String, Series)> {
            ["AA", "BB", "CC"]
                .iter()
                .enumerate()
                .map(|(i, c)| (c.to_string(), Series::new((0..400).map(d).collect(), y[i].iter().map(|v| v * if i == 1 { scale } else { 1.0 }).collect()).unwrap()))
                .collect()
        };
        let plan = WindowPlan::weekly(d(150), d(250));
        let cfg = ConnectConfig::default();
        let a1 = rolling_connectedness(&[("x".into(), mk(1.0))], &plan, &cfg).unwrap();
        let a2 = rolling_connectedness(&[("x".into(), mk(7.5))], &plan, &cfg).unwrap();
        let a3 = rolling_connectedness(&[("x".into(), mk(1.0))], &plan, &cfg).unwrap();
        assert_eq!(a1, a3);
        for (r1, r2) in a1.iter().zip(&a2) {
            assert!((r1.s_dy.unwrap() - r2.s_dy.unwrap()).abs() < 1e-8);
            assert!((r1.density.unwrap() - r2.density.unwrap()).abs() < 1e-12);
            assert!(r1.s_dy.unwrap() >= 0.0 && r1.s_dy.unwrap() <= 100.0);
        }
        let mut buf = Vec::new();
        write_spillover_csv(&a1, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("feature,center,k_eff,h,p,H,S_dy,density,countries,skip_reason\nx,2021-05-31,3,60,"));
    }
}
