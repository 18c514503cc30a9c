//! Weighted CART regression trees with greedy variance-reduction splits.
//!
//! Rows are presorted once per feature ([`Presorted`]); every node owns the
//! same contiguous segment in each per-feature order, and a split stably
//! partitions all of them. Row weights carry bootstrap multiplicities, so
//! node cover is the weighted row count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A node is a leaf when `left == 0` (the root is never anyone's child).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub feature: usize,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
    pub value: f64,
    pub cover: f64,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.left == 0
    }

    fn leaf(value: f64, cover: f64) -> Self {
        Node {
            feature: 0,
            threshold: 0.0,
            left: 0,
            right: 0,
            value,
            cover,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub n_features: usize,
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Rows go left when `x[feature] <= threshold`.
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.nodes[self.leaf_of(x)].value
    }

    pub fn leaf_of(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            let n = &self.nodes[i];
            if n.is_leaf() {
                return i;
            }
            i = if x[n.feature] <= n.threshold { n.left } else { n.right };
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            let n = &t.nodes[i];
            if n.is_leaf() {
                0
            } else {
                1 + go(t, n.left).max(go(t, n.right))
            }
        }
        go(self, 0)
    }

    /// Features used by at least one split.
    pub fn used_features(&self) -> Vec<bool> {
        let mut used = vec![false; self.n_features];
        for n in &self.nodes {
            if !n.is_leaf() {
                used[n.feature] = true;
            }
        }
        used
    }

    /// Structural checks: children in range, positive covers that add up.
    pub fn check(&self) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("tree has no nodes".into());
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if !(n.cover > 0.0) {
                return Err(format!("node {i} has cover {}", n.cover));
            }
            if n.is_leaf() {
                continue;
            }
            if n.left >= self.nodes.len() || n.right >= self.nodes.len() || n.left <= i || n.right <= i {
                return Err(format!("node {i} has invalid children"));
            }
            if n.feature >= self.n_features {
                return Err(format!("node {i} splits on unknown feature {}", n.feature));
            }
            let sum = self.nodes[n.left].cover + self.nodes[n.right].cover;
            if (sum - n.cover).abs() > 1e-9 * n.cover.max(1.0) {
                return Err(format!("node {i}: cover {} != {sum}", n.cover));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    /// Fraction of features drawn (without replacement) at every node.
    pub feature_fraction: f64,
    /// Extra-trees mode: one uniform threshold per candidate feature.
    pub random_thresholds: bool,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: usize::MAX,
            min_samples_split: 2,
            min_samples_leaf: 1,
            feature_fraction: 1.0,
            random_thresholds: false,
        }
    }
}

impl TreeParams {
    pub fn features_per_node(&self, m: usize) -> usize {
        ((self.feature_fraction * m as f64).ceil() as usize).clamp(1, m.max(1))
    }
}

/// Row-major feature matrix with one ascending row order per feature.
pub struct Presorted<'a> {
    pub x: &'a [f64],
    pub n: usize,
    pub m: usize,
    order: Vec<Vec<u32>>,
}

impl<'a> Presorted<'a> {
    pub fn new(x: &'a [f64], m: usize) -> Self {
        let n = if m == 0 { 0 } else { x.len() / m };
        let order = (0..m)
            .map(|f| {
                let mut o: Vec<u32> = (0..n as u32).collect();
                o.sort_by(|&a, &b| {
                    x[a as usize * m + f]
                        .total_cmp(&x[b as usize * m + f])
                        .then(a.cmp(&b))
                });
                o
            })
            .collect();
        Presorted { x, n, m, order }
    }

    #[inline]
    fn at(&self, row: u32, f: usize) -> f64 {
        self.x[row as usize * self.m + f]
    }
}

struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Grows one tree on rows with positive weight.
pub fn grow(data: &Presorted, y: &[f64], w: &[f64], params: &TreeParams, rng: &mut ChaCha8Rng) -> Tree {
    let m = data.m;
    let mut order: Vec<Vec<u32>> = data
        .order
        .iter()
        .map(|o| o.iter().copied().filter(|&r| w[r as usize] > 0.0).collect())
        .collect();
    let total = order.first().map_or(0, |o| o.len());
    let mut nodes = Vec::new();
    if m == 0 || total == 0 {
        let (sw, sy) = (0..y.len()).fold((0.0, 0.0), |(a, b), i| (a + w[i], b + w[i] * y[i]));
        let value = if sw > 0.0 { sy / sw } else { 0.0 };
        return Tree {
            n_features: m,
            nodes: vec![Node::leaf(value, sw.max(f64::MIN_POSITIVE))],
        };
    }
    let k = params.features_per_node(m);
    let mut goes_left = vec![false; data.n];
    let mut buf: Vec<u32> = Vec::with_capacity(total);
    let min_leaf = params.min_samples_leaf as f64;
    let min_split = params.min_samples_split as f64;

    nodes.push(Node::leaf(0.0, 0.0));
    let mut stack = vec![(0usize, 0usize, total, 0usize)];
    while let Some((id, lo, hi, depth)) = stack.pop() {
        let seg = &order[0][lo..hi];
        let (mut sw, mut sy) = (0.0, 0.0);
        let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
        for &r in seg {
            let r = r as usize;
            sw += w[r];
            sy += w[r] * y[r];
            ymin = ymin.min(y[r]);
            ymax = ymax.max(y[r]);
        }
        nodes[id] = Node::leaf(sy / sw, sw);
        if depth >= params.max_depth || sw < min_split || sw < 2.0 * min_leaf || ymin == ymax {
            continue;
        }
        let mut feats: Vec<usize> = if k >= m {
            (0..m).collect()
        } else {
            rand::seq::index::sample(rng, m, k).into_vec()
        };
        feats.sort_unstable();
        let parent = sy * sy / sw;
        let mut best: Option<Best> = None;
        for &f in &feats {
            let o = &order[f][lo..hi];
            let consider = |gain: f64, threshold: f64, best: &mut Option<Best>| {
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    *best = Some(Best { gain, feature: f, threshold });
                }
            };
            if params.random_thresholds {
                let lo_v = data.at(o[0], f);
                let hi_v = data.at(o[o.len() - 1], f);
                if !(lo_v < hi_v) {
                    continue;
                }
                let t = rng.random_range(lo_v..hi_v);
                let (mut wl, mut sl) = (0.0, 0.0);
                for &r in o {
                    if data.at(r, f) > t {
                        break;
                    }
                    wl += w[r as usize];
                    sl += w[r as usize] * y[r as usize];
                }
                let wr = sw - wl;
                if wl >= min_leaf && wr >= min_leaf && wl > 0.0 && wr > 0.0 {
                    let sr = sy - sl;
                    consider(sl * sl / wl + sr * sr / wr - parent, t, &mut best);
                }
            } else {
                let (mut wl, mut sl) = (0.0, 0.0);
                for p in 0..o.len() - 1 {
                    let r = o[p] as usize;
                    wl += w[r];
                    sl += w[r] * y[r];
                    let a = data.at(o[p], f);
                    let b = data.at(o[p + 1], f);
                    if a < b {
                        let wr = sw - wl;
                        if wl >= min_leaf && wr >= min_leaf {
                            let sr = sy - sl;
                            let mut t = a + (b - a) * 0.5;
                            if t >= b {
                                t = a;
                            }
                            consider(sl * sl / wl + sr * sr / wr - parent, t, &mut best);
                        }
                    }
                }
            }
        }
        let Some(best) = best else { continue };

        let mut n_left = 0;
        for &r in &order[0][lo..hi] {
            let l = data.at(r, best.feature) <= best.threshold;
            goes_left[r as usize] = l;
            n_left += l as usize;
        }
        for o in order.iter_mut() {
            let seg = &mut o[lo..hi];
            buf.clear();
            let mut j = 0;
            for i in 0..seg.len() {
                let r = seg[i];
                if goes_left[r as usize] {
                    seg[j] = r;
                    j += 1;
                } else {
                    buf.push(r);
                }
            }
            seg[j..].copy_from_slice(&buf);
        }
        let left = nodes.len();
        nodes.push(Node::leaf(0.0, 0.0));
        nodes.push(Node::leaf(0.0, 0.0));
        let node = &mut nodes[id];
        node.feature = best.feature;
        node.threshold = best.threshold;
        node.left = left;
        node.right = left + 1;
        stack.push((left + 1, lo + n_left, hi, depth + 1));
        stack.push((left, lo, lo + n_left, depth + 1));
    }
    Tree { n_features: m, nodes }
}

/// Single tree on all rows with unit weights.
pub fn fit_tree(x: &[f64], m: usize, y: &[f64], params: &TreeParams, seed: u64) -> Tree {
    let data = Presorted::new(x, m);
    let w = vec![1.0; data.n];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    grow(&data, y, &w, params, &mut rng)
}
