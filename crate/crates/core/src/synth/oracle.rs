//! Exhaustive reference implementations used only for verification.

use thiserror::Error;

use crate::models::Tree;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("brute-force enumeration refuses {0} features (limit 12)")]
    TooManyFeatures(usize),
    #[error("brute-force GFEVD limited to k <= 4 and H <= 20 (got k = {k}, H = {h})")]
    TooLarge { k: usize, h: usize },
    #[error("dimension mismatch: {0}")]
    Shape(String),
}

const MAX_FEATURES: usize = 12;

/// Expected tree output when only the features in `known` are fixed to `x`,
/// averaging over unknown splits by training cover.
fn conditional_expectation(tree: &Tree, node: usize, x: &[f64], known: &[bool]) -> f64 {
    let n = &tree.nodes[node];
    if n.is_leaf() {
        return n.value;
    }
    if known[n.feature] {
        let next = if x[n.feature] <= n.threshold { n.left } else { n.right };
        return conditional_expectation(tree, next, x, known);
    }
    let l = &tree.nodes[n.left];
    let r = &tree.nodes[n.right];
    (l.cover * conditional_expectation(tree, n.left, x, known)
        + r.cover * conditional_expectation(tree, n.right, x, known))
        / n.cover
}

fn factorials(m: usize) -> Vec<f64> {
    let mut f = vec![1.0; m + 1];
    for i in 1..=m {
        f[i] = f[i - 1] * i as f64;
    }
    f
}

fn subset_values(tree: &Tree, x: &[f64]) -> Result<(usize, Vec<f64>), OracleError> {
    let m = tree.n_features;
    if m > MAX_FEATURES {
        return Err(OracleError::TooManyFeatures(m));
    }
    if x.len() != m {
        return Err(OracleError::Shape(format!("x has {} entries, tree has {m} features", x.len())));
    }
    let values = (0..1usize << m)
        .map(|mask| {
            let known: Vec<bool> = (0..m).map(|j| mask >> j & 1 == 1).collect();
            conditional_expectation(tree, 0, x, &known)
        })
        .collect();
    Ok((m, values))
}

/// `(phi_0, phi)` by enumerating all `2^M` coalitions.
pub fn brute_shapley(tree: &Tree, x: &[f64]) -> Result<(f64, Vec<f64>), OracleError> {
    let (m, v) = subset_values(tree, x)?;
    let fact = factorials(m);
    let mut phi = vec![0.0; m];
    for (j, p) in phi.iter_mut().enumerate() {
        for mask in 0..1usize << m {
            if mask >> j & 1 == 1 {
                continue;
            }
            let s = mask.count_ones() as usize;
            let w = fact[s] * fact[m - s - 1] / fact[m];
            *p += w * (v[mask | 1 << j] - v[mask]);
        }
    }
    Ok((v[0], phi))
}

/// Pairwise Shapley interaction values; off-diagonal entries carry half of
/// the joint effect each, the diagonal holds the remaining main effect.
pub fn brute_shap_interactions(tree: &Tree, x: &[f64]) -> Result<Vec<Vec<f64>>, OracleError> {
    let (m, v) = subset_values(tree, x)?;
    let (_, phi) = brute_shapley(tree, x)?;
    let fact = factorials(m);
    let mut out = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let mut acc = 0.0;
            for mask in 0..1usize << m {
                if mask >> i & 1 == 1 || mask >> j & 1 == 1 {
                    continue;
                }
                let s = mask.count_ones() as usize;
                let w = fact[s] * fact[m - s - 2] / (2.0 * fact[m - 1]);
                acc += w * (v[mask | 1 << i | 1 << j] - v[mask | 1 << i] - v[mask | 1 << j] + v[mask]);
            }
            out[i][j] = acc;
        }
    }
    for i in 0..m {
        let off: f64 = (0..m).filter(|&j| j != i).map(|j| out[i][j]).sum();
        out[i][i] = phi[i] - off;
    }
    Ok(out)
}

/// Row-normalized generalized FEVD by explicit moving-average accumulation.
///
/// `a[l]` is the lag-`l+1` coefficient block, `sigma` the innovation
/// covariance used as given.
pub fn brute_gfevd(a: &[Vec<Vec<f64>>], sigma: &[Vec<f64>], h: usize) -> Result<Vec<Vec<f64>>, OracleError> {
    let k = sigma.len();
    if k == 0 || k > 4 || h == 0 || h > 20 {
        return Err(OracleError::TooLarge { k, h });
    }
    if a.iter().any(|blk| blk.len() != k || blk.iter().any(|r| r.len() != k)) || sigma.iter().any(|r| r.len() != k) {
        return Err(OracleError::Shape("coefficient blocks and covariance must be k x k".into()));
    }
    // psi[l] for l = 0..h-1
    let mut psi: Vec<Vec<Vec<f64>>> = Vec::with_capacity(h);
    for l in 0..h {
        let mut cur = vec![vec![0.0; k]; k];
        if l == 0 {
            for (i, row) in cur.iter_mut().enumerate() {
                row[i] = 1.0;
            }
        } else {
            for (lag, blk) in a.iter().enumerate() {
                if lag + 1 > l {
                    break;
                }
                let prev = &psi[l - lag - 1];
                for i in 0..k {
                    for j in 0..k {
                        let mut s = 0.0;
                        for q in 0..k {
                            s += blk[i][q] * prev[q][j];
                        }
                        cur[i][j] += s;
                    }
                }
            }
        }
        psi.push(cur);
    }
    let mut theta = vec![vec![0.0; k]; k];
    for i in 0..k {
        let mut denom = 0.0;
        for p in &psi {
            // (Psi Sigma)[i][*]
            let mut ps = vec![0.0; k];
            for j in 0..k {
                for q in 0..k {
                    ps[j] += p[i][q] * sigma[q][j];
                }
            }
            for j in 0..k {
                theta[i][j] += ps[j] * ps[j];
            }
            for j in 0..k {
                denom += ps[j] * p[i][j];
            }
        }
        for j in 0..k {
            theta[i][j] /= denom;
        }
        let row: f64 = theta[i].iter().sum();
        for j in 0..k {
            theta[i][j] /= row;
        }
    }
    Ok(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Node;

    fn stump() -> Tree {
        Tree {
            n_features: 3,
            nodes: vec![
                Node { feature: 1, threshold: 0.5, left: 1, right: 2, value: 0.0, cover: 10.0 },
                Node { feature: 0, threshold: 0.0, left: 0, right: 0, value: 2.0, cover: 4.0 },
                Node { feature: 0, threshold: 0.0, left: 0, right: 0, value: 7.0, cover: 6.0 },
            ],
        }
    }

    #[test]
    fn stump_closed_form() {
        let (phi0, phi) = brute_shapley(&stump(), &[0.0, 0.0, 0.0]).unwrap();
        assert!((phi0 - 5.0).abs() < 1e-12);
        assert!((phi[1] + 3.0).abs() < 1e-12);
        assert_eq!(phi[0], 0.0);
        assert_eq!(phi[2], 0.0);
    }

    #[test]
    fn single_leaf_gives_zero_attribution() {
        let t = Tree { n_features: 2, nodes: vec![Node { feature: 0, threshold: 0.0, left: 0, right: 0, value: 3.0, cover: 5.0 }] };
        let (phi0, phi) = brute_shapley(&t, &[1.0, 2.0]).unwrap();
        assert_eq!(phi0, 3.0);
        assert_eq!(phi, vec![0.0, 0.0]);
    }

    /// Second enumeration order: average marginal contributions over all
    /// feature permutations.
    fn permutation_shapley(t: &Tree, x: &[f64]) -> Vec<f64> {
        fn perms(m: usize) -> Vec<Vec<usize>> {
            if m == 0 {
                return vec![vec![]];
            }
            let mut out = Vec::new();
            for p in perms(m - 1) {
                for pos in 0..=p.len() {
                    let mut q = p.clone();
                    q.insert(pos, m - 1);
                    out.push(q);
                }
            }
            out
        }
        let m = t.n_features;
        let all = perms(m);
        let mut phi = vec![0.0; m];
        for p in &all {
            let mut known = vec![false; m];
            let mut prev = conditional_expectation(t, 0, x, &known);
            for &j in p {
                known[j] = true;
                let cur = conditional_expectation(t, 0, x, &known);
                phi[j] += cur - prev;
                prev = cur;
            }
        }
        phi.iter().map(|v| v / all.len() as f64).collect()
    }

    #[test]
    fn subset_and_permutation_enumerations_agree_on_random_depth3_trees() {
        use crate::models::tree::{fit_tree, TreeParams};
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let m = 5;
            let x: Vec<f64> = (0..200 * m).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..200).map(|i| x[i * m] * x[i * m + 1] + x[i * m + 2]).collect();
            let t = fit_tree(&x, m, &y, &TreeParams { max_depth: 3, ..Default::default() }, 0);
            let q = &x[0..m];
            let (_, a) = brute_shapley(&t, q).unwrap();
            let b = permutation_shapley(&t, q);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn refuses_wide_trees() {
        let t = Tree { n_features: 13, nodes: vec![Node { feature: 0, threshold: 0.0, left: 0, right: 0, value: 1.0, cover: 1.0 }] };
        assert_eq!(brute_shapley(&t, &[0.0; 13]).unwrap_err(), OracleError::TooManyFeatures(13));
    }

    #[test]
    fn interactions_complete() {
        let t = stump();
        let x = [1.0, 1.0, 0.0];
        let (_, phi) = brute_shapley(&t, &x).unwrap();
        let phi2 = brute_shap_interactions(&t, &x).unwrap();
        for j in 0..3 {
            let s: f64 = (0..3).map(|i| phi2[i][j]).sum();
            assert!((s - phi[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn gfevd_zero_dynamics_is_identity() {
        let a = vec![vec![vec![0.0; 3]; 3]];
        let s = vec![vec![1.0, 0.0, 0.0], vec![0.0, 2.0, 0.0], vec![0.0, 0.0, 0.5]];
        let t = brute_gfevd(&a, &s, 10).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((t[i][j] - if i == j { 1.0 } else { 0.0 }).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gfevd_permutation_consistent() {
        let a = vec![vec![vec![0.4, 0.1, 0.0], vec![0.2, 0.3, 0.1], vec![0.0, 0.2, 0.5]]];
        let s = vec![vec![1.0, 0.3, 0.1], vec![0.3, 1.5, 0.2], vec![0.1, 0.2, 0.8]];
        let perm = [2usize, 0, 1];
        let pa = vec![(0..3).map(|i| (0..3).map(|j| a[0][perm[i]][perm[j]]).collect()).collect()];
        let ps: Vec<Vec<f64>> = (0..3).map(|i| (0..3).map(|j| s[perm[i]][perm[j]]).collect()).collect();
        let t = brute_gfevd(&a, &s, 10).unwrap();
        let tp = brute_gfevd(&pa, &ps, 10).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((tp[i][j] - t[perm[i]][perm[j]]).abs() < 1e-12);
            }
            assert!((t[i].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
