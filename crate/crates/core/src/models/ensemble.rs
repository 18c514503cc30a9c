//! Tree ensembles: bagging, random forests, extra trees and gradient boosting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::design::DesignMatrix;
use super::tree::{grow, Presorted, Tree, TreeParams};
use super::ModelError;
use crate::par;

/// Per-member seed derived from the ensemble seed and the member index.
pub fn member_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer over a golden-ratio stride
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// How each member sees the training rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RowSampling {
    All,
    /// `n` draws with replacement; multiplicities become row weights.
    Bootstrap,
    /// `ceil(fraction * n)` rows without replacement.
    Subsample(f64),
}

pub(crate) fn row_weights(n: usize, sampling: RowSampling, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match sampling {
        RowSampling::All => vec![1.0; n],
        RowSampling::Bootstrap => {
            let mut w = vec![0.0; n];
            for _ in 0..n {
                w[rng.random_range(0..n)] += 1.0;
            }
            w
        }
        RowSampling::Subsample(frac) => {
            let k = ((frac * n as f64).ceil() as usize).clamp(1, n);
            if k == n {
                return vec![1.0; n];
            }
            let mut w = vec![0.0; n];
            for i in rand::seq::index::sample(rng, n, k) {
                w[i] = 1.0;
            }
            w
        }
    }
}

/// Averaging ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
}

impl Forest {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_row(x)).sum::<f64>() / self.trees.len() as f64
    }
}

/// Forest on a raw row-major matrix (features already include the country column).
pub fn fit_forest_matrix(
    x: &[f64],
    m: usize,
    y: &[f64],
    n_trees: usize,
    params: &TreeParams,
    sampling: RowSampling,
    seed: u64,
) -> Result<Forest, ModelError> {
    if n_trees == 0 {
        return Err(ModelError::Hyperparams("forest needs at least one tree".into()));
    }
    if y.is_empty() {
        return Err(ModelError::EmptyDesign);
    }
    let data = Presorted::new(x, m);
    let trees = par::map_range(n_trees, |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(member_seed(seed, b as u64));
        let w = row_weights(y.len(), sampling, &mut rng);
        grow(&data, y, &w, params, &mut rng)
    });
    Ok(Forest { trees })
}

/// Bagging (`feature_fraction = 1`), random forest or extra trees, by parameters.
pub fn fit_forest(
    d: &DesignMatrix,
    n_trees: usize,
    params: &TreeParams,
    sampling: RowSampling,
    seed: u64,
) -> Result<Forest, ModelError> {
    d.check_targets()?;
    let (names, x) = d.with_country_column();
    fit_forest_matrix(&x, names.len(), &d.y, n_trees, params, sampling, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub n_trees: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub subsample: f64,
    pub feature_fraction: f64,
    pub min_child_weight: usize,
}

/// `F(x) = base + learning_rate * sum_b tree_b(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boosted {
    pub base: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
}

impl Boosted {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.base + self.learning_rate * self.trees.iter().map(|t| t.predict_row(x)).sum::<f64>()
    }

    /// Training MSE after each stage (index 0 is the constant start).
    pub fn staged_mse(&self, x: &[f64], m: usize, y: &[f64]) -> Vec<f64> {
        let mut f = vec![self.base; y.len()];
        let mse = |f: &[f64]| f.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64;
        let mut out = vec![mse(&f)];
        for t in &self.trees {
            for (i, fi) in f.iter_mut().enumerate() {
                *fi += self.learning_rate * t.predict_row(&x[i * m..(i + 1) * m]);
            }
            out.push(mse(&f));
        }
        out
    }
}

pub fn fit_boosting_matrix(x: &[f64], m: usize, y: &[f64], p: &BoostParams, seed: u64) -> Result<Boosted, ModelError> {
    if y.is_empty() {
        return Err(ModelError::EmptyDesign);
    }
    if !(p.learning_rate >= 0.0) || !(p.subsample > 0.0 && p.subsample <= 1.0) {
        return Err(ModelError::Hyperparams(format!(
            "learning_rate {} / subsample {} out of range",
            p.learning_rate, p.subsample
        )));
    }
    let n = y.len();
    let data = Presorted::new(x, m);
    let base = crate::stats::mean(y);
    let tp = TreeParams {
        max_depth: p.max_depth,
        min_samples_split: 2,
        min_samples_leaf: p.min_child_weight.max(1),
        feature_fraction: p.feature_fraction,
        random_thresholds: false,
    };
    let mut f = vec![base; n];
    let mut trees = Vec::with_capacity(p.n_trees);
    let mut resid = vec![0.0; n];
    for b in 0..p.n_trees {
        let mut rng = ChaCha8Rng::seed_from_u64(member_seed(seed, b as u64));
        let w = row_weights(n, RowSampling::Subsample(p.subsample), &mut rng);
        for i in 0..n {
            resid[i] = y[i] - f[i];
        }
        let t = grow(&data, &resid, &w, &tp, &mut rng);
        let step = par::map_range(n, |i| t.predict_row(&x[i * m..(i + 1) * m]));
        for (fi, s) in f.iter_mut().zip(step) {
            *fi += p.learning_rate * s;
        }
        trees.push(t);
    }
    Ok(Boosted {
        base,
        learning_rate: p.learning_rate,
        trees,
    })
}

pub fn fit_gradient_boosting(d: &DesignMatrix, p: &BoostParams, seed: u64) -> Result<Boosted, ModelError> {
    d.check_targets()?;
    let (names, x) = d.with_country_column();
    fit_boosting_matrix(&x, names.len(), &d.y, p, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::tree::fit_tree;

    fn data(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = (0..n)
            .map(|i| x[i * 3] * x[i * 3 + 1] + (x[i * 3 + 2] > 0.2) as u8 as f64 + 0.1 * rng.random_range(-1.0..1.0))
            .collect();
        (x, y)
    }

    #[test]
    fn single_unsampled_member_equals_fit_tree() {
        let (x, y) = data(1, 80);
        let p = TreeParams { max_depth: 6, ..Default::default() };
        let f = fit_forest_matrix(&x, 3, &y, 1, &p, RowSampling::All, 5).unwrap();
        let t = fit_tree(&x, 3, &y, &p, 0);
        assert_eq!(f.trees[0], t);
    }

    #[test]
    fn forest_is_mean_of_members_and_order_free() {
        let (x, y) = data(2, 100);
        let p = TreeParams { max_depth: 4, feature_fraction: 0.34, ..Default::default() };
        let mut f = fit_forest_matrix(&x, 3, &y, 7, &p, RowSampling::Bootstrap, 9).unwrap();
        let row = &x[0..3];
        let mean = f.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / 7.0;
        assert!((f.predict_row(row) - mean).abs() < 1e-12);
        let before = f.predict_row(row);
        f.trees.reverse();
        assert!((f.predict_row(row) - before).abs() < 1e-12);
        for t in &f.trees {
            t.check().unwrap();
        }
    }

    #[test]
    fn member_seeds_are_distinct() {
        let s: std::collections::BTreeSet<u64> = (0..1000).map(|i| member_seed(7, i)).collect();
        assert_eq!(s.len(), 1000);
    }

    #[test]
    fn zero_learning_rate_predicts_training_mean() {
        let (x, y) = data(3, 60);
        let p = BoostParams { n_trees: 5, learning_rate: 0.0, max_depth: 3, subsample: 0.8, feature_fraction: 1.0, min_child_weight: 1 };
        let b = fit_boosting_matrix(&x, 3, &y, &p, 1).unwrap();
        let mean = crate::stats::mean(&y);
        for i in 0..60 {
            assert_eq!(b.predict_row(&x[i * 3..i * 3 + 3]), mean);
        }
    }

    #[test]
    fn one_full_stage_interpolates_noiseless_data() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| (v * 0.7).sin()).collect();
        let p = BoostParams { n_trees: 1, learning_rate: 1.0, max_depth: usize::MAX, subsample: 1.0, feature_fraction: 1.0, min_child_weight: 1 };
        let b = fit_boosting_matrix(&x, 1, &y, &p, 0).unwrap();
        for i in 0..20 {
            assert!((b.predict_row(&x[i..i + 1]) - y[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn full_sample_training_loss_non_increasing() {
        let (x, y) = data(4, 120);
        let p = BoostParams { n_trees: 40, learning_rate: 0.3, max_depth: 3, subsample: 1.0, feature_fraction: 1.0, min_child_weight: 2 };
        let b = fit_boosting_matrix(&x, 3, &y, &p, 0).unwrap();
        let mse = b.staged_mse(&x, 3, &y);
        for w in mse.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        assert!(mse[40] < 0.5 * mse[0]);
    }
}
