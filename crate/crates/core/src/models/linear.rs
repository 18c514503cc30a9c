//! Fixed-effects linear estimators: OLS, lasso, ridge and elastic net.
//!
//! Country intercepts are never penalized, so every estimator works on
//! within-country demeaned data and recovers the intercepts afterwards as
//! `alpha_i = mean(y_i) - theta' mean(x_i)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::design::{demean_within, DesignMatrix};
use super::ModelError;

/// Maximum absolute coefficient change at which coordinate descent stops.
pub const CD_TOLERANCE: f64 = 1e-8;
/// Sweep budget for coordinate descent.
pub const CD_MAX_SWEEPS: usize = 10_000;

/// Common-slope model with per-country intercepts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    /// Indexed like the training design's country table; `None` for
    /// countries without training rows.
    pub intercepts: Vec<Option<f64>>,
    pub slopes: Vec<f64>,
    /// Coordinate-descent sweeps (0 for closed-form fits).
    pub sweeps: usize,
}

impl LinearModel {
    pub fn predict_row(&self, country: usize, x: &[f64]) -> Result<f64, ModelError> {
        let a = self
            .intercepts
            .get(country)
            .copied()
            .flatten()
            .ok_or(ModelError::UnknownCountry(country))?;
        Ok(a + self.slopes.iter().zip(x).map(|(t, v)| t * v).sum::<f64>())
    }

    fn from_within(
        slopes: Vec<f64>,
        x_means: &[Vec<f64>],
        y_means: &[f64],
        counts: &[usize],
        sweeps: usize,
    ) -> Self {
        let intercepts = (0..counts.len())
            .map(|c| {
                (counts[c] > 0).then(|| {
                    y_means[c]
                        - slopes
                            .iter()
                            .zip(&x_means[c])
                            .map(|(t, m)| t * m)
                            .sum::<f64>()
                })
            })
            .collect();
        LinearModel {
            intercepts,
            slopes,
            sweeps,
        }
    }
}

/// Pooled OLS with country fixed effects (within estimator).
pub fn fit_ols_fe(d: &DesignMatrix) -> Result<LinearModel, ModelError> {
    d.check_targets()?;
    let m = d.n_features();
    let n = d.n_rows();
    let w = demean_within(&d.x, m, &d.y, &d.country, d.countries.len());
    let collinear = collinear_columns(&w.x, n, m);
    if !collinear.is_empty() {
        return Err(ModelError::RankDeficient {
            columns: collinear
                .into_iter()
                .map(|j| d.feature_names[j].clone())
                .collect(),
        });
    }
    let theta = if m == 0 {
        Vec::new()
    } else {
        least_squares(&w.x, n, m, &w.y)?
    };
    Ok(LinearModel::from_within(
        theta,
        &w.x_means,
        &w.y_means,
        &w.counts,
        0,
    ))
}

pub fn fit_lasso(d: &DesignMatrix, lambda: f64) -> Result<LinearModel, ModelError> {
    fit_penalized(d, lambda, 0.0)
}

pub fn fit_ridge(d: &DesignMatrix, lambda: f64) -> Result<LinearModel, ModelError> {
    fit_penalized(d, 0.0, lambda)
}

/// Elastic net with penalty `lambda * (rho * |theta|_1 + (1 - rho) * |theta|_2^2)`
/// on the residual sum of squares.
pub fn fit_elastic_net(d: &DesignMatrix, lambda: f64, rho: f64) -> Result<LinearModel, ModelError> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(ModelError::Hyperparams(format!("rho = {rho} outside [0, 1]")));
    }
    fit_penalized(d, lambda * rho, lambda * (1.0 - rho))
}

/// Minimizes `|y - a_i - X theta|^2 + l1 |theta|_1 + l2 |theta|_2^2`.
pub fn fit_penalized(d: &DesignMatrix, l1: f64, l2: f64) -> Result<LinearModel, ModelError> {
    if !(l1 >= 0.0 && l2 >= 0.0) {
        return Err(ModelError::Hyperparams(format!(
            "penalties must be non-negative (l1 = {l1}, l2 = {l2})"
        )));
    }
    d.check_targets()?;
    let m = d.n_features();
    let n = d.n_rows();
    let w = demean_within(&d.x, m, &d.y, &d.country, d.countries.len());
    let cols: Vec<Vec<f64>> = (0..m)
        .map(|j| (0..n).map(|i| w.x[i * m + j]).collect())
        .collect();
    let (theta, sweeps) = coordinate_descent(&cols, &w.y, l1, l2)?;
    Ok(LinearModel::from_within(
        theta,
        &w.x_means,
        &w.y_means,
        &w.counts,
        sweeps,
    ))
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

fn objective(cols: &[Vec<f64>], y: &[f64], theta: &[f64], l1: f64, l2: f64) -> f64 {
    let r = residuals(cols, y, theta);
    r.iter().map(|v| v * v).sum::<f64>()
        + l1 * theta.iter().map(|t| t.abs()).sum::<f64>()
        + l2 * theta.iter().map(|t| t * t).sum::<f64>()
}

fn residuals(cols: &[Vec<f64>], y: &[f64], theta: &[f64]) -> Vec<f64> {
    let mut r = y.to_vec();
    for (c, t) in cols.iter().zip(theta) {
        if *t != 0.0 {
            for (ri, xi) in r.iter_mut().zip(c) {
                *ri -= t * xi;
            }
        }
    }
    r
}

/// Cyclic coordinate descent followed by an exact re-solve on the active set.
///
/// Returns the coefficients and the number of sweeps used.
pub(crate) fn coordinate_descent(
    cols: &[Vec<f64>],
    y: &[f64],
    l1: f64,
    l2: f64,
) -> Result<(Vec<f64>, usize), ModelError> {
    let m = cols.len();
    let sq: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum()).collect();
    let mut theta = vec![0.0; m];
    let mut r = y.to_vec();
    let mut sweeps = 0;
    let mut last_change = f64::INFINITY;
    while sweeps < CD_MAX_SWEEPS {
        sweeps += 1;
        let mut max_change: f64 = 0.0;
        for j in 0..m {
            let denom = sq[j] + l2;
            let old = theta[j];
            let c: f64 = cols[j].iter().zip(&r).map(|(x, ri)| x * ri).sum::<f64>() + sq[j] * old;
            let new = if denom > 0.0 {
                soft_threshold(c, l1 / 2.0) / denom
            } else {
                0.0
            };
            if new != old {
                let delta = new - old;
                for (ri, xi) in r.iter_mut().zip(&cols[j]) {
                    *ri -= delta * xi;
                }
                theta[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        last_change = max_change;
        if max_change < CD_TOLERANCE {
            break;
        }
    }
    if last_change >= CD_TOLERANCE {
        return Err(ModelError::NotConverged {
            iterations: sweeps,
            gap: last_change,
            last: theta,
        });
    }
    if let Some(polished) = polish_active_set(cols, y, &theta, l1, l2) {
        if objective(cols, y, &polished, l1, l2) <= objective(cols, y, &theta, l1, l2) {
            theta = polished;
        }
    }
    Ok((theta, sweeps))
}

/// Solves the stationarity system on the current active set with signs held
/// fixed. Accepted only if the signs and the inactive KKT bounds still hold.
fn polish_active_set(
    cols: &[Vec<f64>],
    y: &[f64],
    theta: &[f64],
    l1: f64,
    l2: f64,
) -> Option<Vec<f64>> {
    let active: Vec<usize> = (0..theta.len()).filter(|&j| theta[j] != 0.0).collect();
    if active.is_empty() {
        return None;
    }
    let k = active.len();
    let mut g = DMatrix::<f64>::zeros(k, k);
    let mut b = DVector::<f64>::zeros(k);
    for (a, &ja) in active.iter().enumerate() {
        for (c, &jc) in active.iter().enumerate().skip(a) {
            let v: f64 = cols[ja].iter().zip(&cols[jc]).map(|(p, q)| p * q).sum();
            g[(a, c)] = v;
            g[(c, a)] = v;
        }
        g[(a, a)] += l2;
        b[a] = cols[ja].iter().zip(y).map(|(p, q)| p * q).sum::<f64>()
            - 0.5 * l1 * theta[ja].signum();
    }
    let sol = g.cholesky()?.solve(&b);
    let mut out = vec![0.0; theta.len()];
    for (a, &j) in active.iter().enumerate() {
        if sol[a] == 0.0 || sol[a].signum() != theta[j].signum() {
            return None;
        }
        out[j] = sol[a];
    }
    let r = residuals(cols, y, &out);
    for j in 0..theta.len() {
        if out[j] == 0.0 {
            let grad = 2.0 * cols[j].iter().zip(&r).map(|(p, q)| p * q).sum::<f64>();
            if grad.abs() > l1 * (1.0 + 1e-9) + 1e-12 {
                return None;
            }
        }
    }
    Some(out)
}

/// Column indices that are (numerically) linear combinations of earlier ones.
pub(crate) fn collinear_columns(x: &[f64], n: usize, m: usize) -> Vec<usize> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut bad = Vec::new();
    for j in 0..m {
        let mut v: Vec<f64> = (0..n).map(|i| x[i * m + j]).collect();
        let norm0 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm0 == 0.0 {
            bad.push(j);
            continue;
        }
        for _ in 0..2 {
            for q in &basis {
                let p: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                for (a, b) in v.iter_mut().zip(q) {
                    *a -= p * b;
                }
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm <= 1e-10 * norm0 {
            bad.push(j);
        } else {
            basis.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    bad
}

/// Least squares via Householder QR.
pub(crate) fn least_squares(x: &[f64], n: usize, m: usize, y: &[f64]) -> Result<Vec<f64>, ModelError> {
    let a = DMatrix::from_row_slice(n, m, x);
    let qr = a.qr();
    let qty = qr.q().transpose() * DVector::from_column_slice(y);
    let r = qr.r();
    let sol = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| ModelError::RankDeficient { columns: vec![] })?;
    Ok(sol.iter().copied().collect())
}
