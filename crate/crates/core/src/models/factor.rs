//! Principal-component regression and factor-augmented ridge.
//!
//! Components are extracted from the centered regressors augmented with a
//! one-hot country block, so the fixed effects live inside the rotation and
//! the downstream regression only needs a common intercept. With `K` equal to
//! the rank the fit reproduces the fixed-effects OLS fit.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::design::DesignMatrix;
use super::ModelError;

/// Relative eigenvalue floor below which a direction counts as null.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    /// Column means of `[x, dummies]` on the training rows.
    pub center: Vec<f64>,
    /// `K` loading vectors of length `M + C`.
    pub loadings: Vec<Vec<f64>>,
    /// Multiplier applied to each score (1 for PCR, inverse score sd for FAR).
    pub scale: Vec<f64>,
    pub intercept: f64,
    pub coef: Vec<f64>,
    /// Countries seen in training.
    pub present: Vec<bool>,
}

impl FactorModel {
    fn scores_of(&self, country: usize, x: &[f64]) -> Vec<f64> {
        let m = x.len();
        self.loadings
            .iter()
            .zip(&self.scale)
            .map(|(v, s)| {
                let mut acc = 0.0;
                for j in 0..m {
                    acc += v[j] * (x[j] - self.center[j]);
                }
                for c in 0..self.present.len() {
                    let z = if c == country { 1.0 } else { 0.0 };
                    acc += v[m + c] * (z - self.center[m + c]);
                }
                acc * s
            })
            .collect()
    }

    pub fn predict_row(&self, country: usize, x: &[f64]) -> Result<f64, ModelError> {
        if !self.present.get(country).copied().unwrap_or(false) {
            return Err(ModelError::UnknownCountry(country));
        }
        let s = self.scores_of(country, x);
        Ok(self.intercept + s.iter().zip(&self.coef).map(|(a, b)| a * b).sum::<f64>())
    }
}

struct Pca {
    center: Vec<f64>,
    /// Eigenpairs sorted by decreasing eigenvalue, truncated at the rank.
    values: Vec<f64>,
    vectors: Vec<Vec<f64>>,
    z: Vec<f64>,
    p: usize,
}

fn pca(d: &DesignMatrix) -> Pca {
    let (_, mut z) = d.with_dummies();
    let n = d.n_rows();
    let p = d.n_features() + d.countries.len();
    let mut center = vec![0.0; p];
    for i in 0..n {
        for j in 0..p {
            center[j] += z[i * p + j];
        }
    }
    for c in &mut center {
        *c /= n as f64;
    }
    for i in 0..n {
        for j in 0..p {
            z[i * p + j] -= center[j];
        }
    }
    let mut cov = DMatrix::<f64>::zeros(p, p);
    for i in 0..n {
        let r = &z[i * p..(i + 1) * p];
        for a in 0..p {
            if r[a] == 0.0 {
                continue;
            }
            for b in a..p {
                cov[(a, b)] += r[a] * r[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            cov[(a, b)] = cov[(b, a)];
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = order.first().map(|&i| eig.eigenvalues[i]).unwrap_or(0.0).max(0.0);
    let mut values = Vec::new();
    let mut vectors = Vec::new();
    for i in order {
        let ev = eig.eigenvalues[i];
        if top <= 0.0 || ev <= RANK_TOL * top {
            break;
        }
        let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        // sign convention: largest-magnitude entry positive
        let big = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
            .map(|(j, _)| j)
            .unwrap_or(0);
        if v[big] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        values.push(ev);
        vectors.push(v);
    }
    Pca {
        center,
        values,
        vectors,
        z,
        p,
    }
}

/// Rank of the centered `[x, dummies]` matrix.
pub fn design_rank(d: &DesignMatrix) -> usize {
    pca(d).values.len()
}

/// `min(k, rank)`, logging when the request is clipped.
pub fn clip_components(d: &DesignMatrix, k: usize) -> usize {
    let rank = design_rank(d);
    if k > rank {
        log::warn!("requested {k} components, design rank is {rank}; using {rank}");
        rank
    } else {
        k
    }
}

fn fit_on_scores(d: &DesignMatrix, k: usize, lambda: f64, whiten: bool) -> Result<FactorModel, ModelError> {
    d.check_targets()?;
    if k == 0 {
        return Err(ModelError::Hyperparams("number of components must be at least 1".into()));
    }
    let pc = pca(d);
    if k > pc.values.len() {
        return Err(ModelError::KExceedsRank { k, rank: pc.values.len() });
    }
    let n = d.n_rows();
    let p = pc.p;
    let scale: Vec<f64> = pc.values[..k]
        .iter()
        .map(|ev| if whiten { 1.0 / (ev / (n as f64 - 1.0).max(1.0)).sqrt() } else { 1.0 })
        .collect();
    let mut s = DMatrix::<f64>::zeros(n, k);
    for i in 0..n {
        let r = &pc.z[i * p..(i + 1) * p];
        for c in 0..k {
            s[(i, c)] = r.iter().zip(&pc.vectors[c]).map(|(a, b)| a * b).sum::<f64>() * scale[c];
        }
    }
    let ybar = crate::stats::mean(&d.y);
    let yc = DVector::from_iterator(n, d.y.iter().map(|v| v - ybar));
    let mut g = s.transpose() * &s;
    for c in 0..k {
        g[(c, c)] += lambda;
    }
    let coef = g
        .cholesky()
        .ok_or(ModelError::KExceedsRank { k, rank: pc.values.len() })?
        .solve(&(s.transpose() * yc));
    let mut present = vec![false; d.countries.len()];
    for &c in &d.country {
        present[c] = true;
    }
    Ok(FactorModel {
        center: pc.center,
        loadings: pc.vectors[..k].to_vec(),
        scale,
        intercept: ybar,
        coef: coef.iter().copied().collect(),
        present,
    })
}

/// Least squares on the top-`k` principal-component scores.
pub fn fit_pcr(d: &DesignMatrix, k: usize) -> Result<FactorModel, ModelError> {
    fit_on_scores(d, k, 0.0, false)
}

/// Ridge on `n_factors` unit-variance (whitened) component scores.
pub fn fit_factor_ridge(d: &DesignMatrix, n_factors: usize, lambda: f64) -> Result<FactorModel, ModelError> {
    if !(lambda >= 0.0) {
        return Err(ModelError::Hyperparams(format!("lambda = {lambda} is negative")));
    }
    fit_on_scores(d, n_factors, lambda, true)
}
