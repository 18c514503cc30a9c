//! Path-dependent TreeSHAP (polynomial-time exact Shapley values for trees)
//! and its conditioned variant for pairwise interaction values.

use crate::models::Tree;

#[derive(Debug, Clone, Copy, Default)]
struct PathElem {
    feature: isize,
    zero: f64,
    one: f64,
    weight: f64,
}

/// `recip[k] = 1 / k`; keeps divisions off the loop-carried chains below.
fn reciprocals(n: usize) -> Vec<f64> {
    (0..=n).map(|k| if k == 0 { 0.0 } else { 1.0 / k as f64 }).collect()
}

fn extend(path: &mut [PathElem], depth: usize, zero: f64, one: f64, feature: isize, recip: &[f64]) {
    path[depth] = PathElem {
        feature,
        zero,
        one,
        weight: if depth == 0 { 1.0 } else { 0.0 },
    };
    let inv_d1 = recip[depth + 1];
    for i in (0..depth).rev() {
        path[i + 1].weight += one * path[i].weight * (i + 1) as f64 * inv_d1;
        path[i].weight = zero * path[i].weight * (depth - i) as f64 * inv_d1;
    }
}

fn unwind(path: &mut [PathElem], depth: usize, index: usize, recip: &[f64]) {
    let one = path[index].one;
    let zero = path[index].zero;
    let d1 = (depth + 1) as f64;
    let inv_d1 = recip[depth + 1];
    let mut next = path[depth].weight;
    if one != 0.0 {
        let a = d1 / one;
        for i in (0..depth).rev() {
            let tmp = path[i].weight;
            path[i].weight = next * a * recip[i + 1];
            next = tmp - path[i].weight * zero * (depth - i) as f64 * inv_d1;
        }
    } else {
        let a = d1 / zero;
        for i in (0..depth).rev() {
            path[i].weight *= a * recip[depth - i];
        }
    }
    for i in index..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero = path[i + 1].zero;
        path[i].one = path[i + 1].one;
    }
}

fn unwound_sum(path: &[PathElem], depth: usize, index: usize, recip: &[f64]) -> f64 {
    let one = path[index].one;
    let zero = path[index].zero;
    let d1 = (depth + 1) as f64;
    let inv_d1 = recip[depth + 1];
    let mut next = path[depth].weight;
    let mut total = 0.0;
    if one != 0.0 {
        let a = d1 / one;
        let b = zero * inv_d1;
        for i in (0..depth).rev() {
            let tmp = next * a * recip[i + 1];
            total += tmp;
            next = path[i].weight - tmp * b * (depth - i) as f64;
        }
    } else if zero != 0.0 {
        let a = d1 / zero;
        for i in (0..depth).rev() {
            total += path[i].weight * a * recip[depth - i];
        }
    }
    total
}

/// Condition for the interaction variant: feature forced "on" or "off".
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Condition {
    None,
    On(usize),
    Off(usize),
}

/// Path storage reusable across trees no deeper than `depth`.
pub(crate) struct Scratch {
    depth: usize,
    buf: Vec<PathElem>,
    recip: Vec<f64>,
}

impl Scratch {
    pub(crate) fn new(depth: usize) -> Self {
        let d = depth + 2;
        Scratch {
            depth,
            buf: vec![PathElem::default(); (d + 1) * (d + 2) / 2 + d + 2],
            recip: reciprocals(d + 2),
        }
    }
}

struct Ctx<'a> {
    tree: &'a Tree,
    x: &'a [f64],
    phi: &'a mut [f64],
    cond: Condition,
    buf: &'a mut [PathElem],
    recip: &'a [f64],
}

impl Ctx<'_> {
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        &mut self,
        node: usize,
        depth: usize,
        parent_off: usize,
        zero: f64,
        one: f64,
        parent_feature: isize,
        cond_fraction: f64,
    ) {
        if cond_fraction == 0.0 {
            return;
        }
        let off = parent_off + depth + 1;
        let mut depth = depth;
        // copy the parent path into this level's slot
        self.buf.copy_within(parent_off..parent_off + depth + 1, off);
        let cond_feature = match self.cond {
            Condition::None => None,
            Condition::On(f) | Condition::Off(f) => Some(f as isize),
        };
        // the conditioned feature is never a player on the path
        if cond_feature != Some(parent_feature) {
            extend(&mut self.buf[off..], depth, zero, one, parent_feature, self.recip);
        }
        let n = &self.tree.nodes[node];
        if n.is_leaf() {
            let path = &self.buf[off..];
            for i in 1..=depth {
                let w = unwound_sum(path, depth, i, self.recip);
                let el = path[i];
                self.phi[el.feature as usize] += w * (el.one - el.zero) * n.value * cond_fraction;
            }
            return;
        }
        let (hot, cold) = if self.x[n.feature] <= n.threshold { (n.left, n.right) } else { (n.right, n.left) };
        let hot_zero = self.tree.nodes[hot].cover / n.cover;
        let cold_zero = self.tree.nodes[cold].cover / n.cover;
        let (mut in_zero, mut in_one) = (1.0, 1.0);
        let split = n.feature as isize;
        let path = &mut self.buf[off..];
        if let Some(k) = (1..=depth).find(|&k| path[k].feature == split) {
            in_zero = path[k].zero;
            in_one = path[k].one;
            unwind(path, depth, k, self.recip);
            depth -= 1;
        }
        let (mut hot_cf, mut cold_cf) = (cond_fraction, cond_fraction);
        let mut child_depth = depth + 1;
        match self.cond {
            Condition::On(f) if f == n.feature => {
                cold_cf = 0.0;
                child_depth -= 1;
            }
            Condition::Off(f) if f == n.feature => {
                hot_cf *= hot_zero;
                cold_cf *= cold_zero;
                child_depth -= 1;
            }
            _ => {}
        }
        self.recurse(hot, child_depth, off, hot_zero * in_zero, in_one, split, hot_cf);
        self.recurse(cold, child_depth, off, cold_zero * in_zero, 0.0, split, cold_cf);
    }
}

/// Cover-weighted mean output of the tree.
pub fn expected_value(tree: &Tree) -> f64 {
    fn go(t: &Tree, i: usize) -> f64 {
        let n = &t.nodes[i];
        if n.is_leaf() {
            n.value
        } else {
            (t.nodes[n.left].cover * go(t, n.left) + t.nodes[n.right].cover * go(t, n.right)) / n.cover
        }
    }
    go(tree, 0)
}

/// Adds the tree's Shapley values for `x` into `phi`.
pub(crate) fn tree_shap_into(tree: &Tree, x: &[f64], phi: &mut [f64], cond: Condition) {
    let mut scratch = Scratch::new(tree.depth());
    tree_shap_with(tree, x, phi, cond, &mut scratch);
}

/// As [`tree_shap_into`] with caller-owned storage; `scratch` must have been
/// built for at least the depth of `tree`.
pub(crate) fn tree_shap_with(tree: &Tree, x: &[f64], phi: &mut [f64], cond: Condition, scratch: &mut Scratch) {
    debug_assert!(scratch.depth >= tree.depth());
    let mut ctx = Ctx { tree, x, phi, cond, buf: &mut scratch.buf, recip: &scratch.recip };
    // the root call has an empty parent path; its dummy element (feature -1)
    // sits at index 0 of every path and never receives attribution
    ctx.recurse(0, 0, 0, 1.0, 1.0, -1, 1.0);
}

/// Shapley values of one tree at `x` (length = number of features).
pub fn tree_shap(tree: &Tree, x: &[f64]) -> Vec<f64> {
    let mut phi = vec![0.0; tree.n_features];
    tree_shap_into(tree, x, &mut phi, Condition::None);
    phi
}

/// Pairwise interaction matrix of one tree at `x`, row-major `M x M`.
pub fn tree_interactions(tree: &Tree, x: &[f64]) -> Vec<f64> {
    let m = tree.n_features;
    let mut out = vec![0.0; m * m];
    tree_interactions_into(tree, x, &mut out, 1.0);
    out
}

/// Adds `scale` times the tree's (symmetrized) interaction matrix into `out`.
pub(crate) fn tree_interactions_into(tree: &Tree, x: &[f64], out: &mut [f64], scale: f64) {
    let m = tree.n_features;
    let phi = tree_shap(tree, x);
    let used = tree.used_features();
    let mut raw = vec![0.0; m * m];
    for i in 0..m {
        if !used[i] {
            continue;
        }
        let mut on = vec![0.0; m];
        let mut off = vec![0.0; m];
        tree_shap_into(tree, x, &mut on, Condition::On(i));
        tree_shap_into(tree, x, &mut off, Condition::Off(i));
        for j in 0..m {
            if j != i {
                raw[i * m + j] = (on[j] - off[j]) / 2.0;
            }
        }
    }
    for i in 0..m {
        let mut off_sum = 0.0;
        for j in 0..m {
            if i != j {
                let v = 0.5 * (raw[i * m + j] + raw[j * m + i]);
                out[i * m + j] += scale * v;
                off_sum += v;
            }
        }
        out[i * m + i] += scale * (phi[i] - off_sum);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::tree::{fit_tree, TreeParams};
    use crate::models::Node;
    use crate::synth::{brute_shap_interactions, brute_shapley};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_leaf() {
        let t = Tree { n_features: 2, nodes: vec![Node { feature: 0, threshold: 0.0, left: 0, right: 0, value: 4.0, cover: 3.0 }] };
        assert_eq!(expected_value(&t), 4.0);
        assert_eq!(tree_shap(&t, &[1.0, 1.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn stump_attributes_everything_to_split_feature() {
        let t = Tree {
            n_features: 3,
            nodes: vec![
                Node { feature: 2, threshold: 0.0, left: 1, right: 2, value: 0.0, cover: 4.0 },
                Node { feature: 0, threshold: 0.0, left: 0, right: 0, value: -1.0, cover: 1.0 },
                Node { feature: 0, threshold: 0.0, left: 0, right: 0, value: 3.0, cover: 3.0 },
            ],
        };
        let phi = tree_shap(&t, &[5.0, 5.0, -1.0]);
        let base = expected_value(&t);
        assert_eq!(base, 2.0);
        assert!((phi[2] - (-1.0 - base)).abs() < 1e-15);
        assert_eq!(phi[0], 0.0);
        assert_eq!(phi[1], 0.0);
    }

    #[test]
    fn matches_brute_force_on_random_trees() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..30 {
            let m = rng.random_range(2..9);
            let n = 150;
            let x: Vec<f64> = (0..n * m).map(|_| rng.random_range(0..6) as f64).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p = TreeParams { max_depth: rng.random_range(1..8), feature_fraction: 0.7, ..Default::default() };
            let t = fit_tree(&x, m, &y, &p, trial);
            for r in 0..5 {
                let q = &x[r * m..(r + 1) * m];
                let (b0, bphi) = brute_shapley(&t, q).unwrap();
                let phi = tree_shap(&t, q);
                assert!((expected_value(&t) - b0).abs() < 1e-12);
                for (a, b) in phi.iter().zip(&bphi) {
                    assert!((a - b).abs() < 1e-10, "trial {trial}: {a} vs {b}");
                }
                let got = tree_interactions(&t, q);
                let want = brute_shap_interactions(&t, q).unwrap();
                for i in 0..m {
                    for j in 0..m {
                        assert!((got[i * m + j] - want[i][j]).abs() < 1e-10, "interaction {i},{j}");
                    }
                }
            }
        }
    }
}
