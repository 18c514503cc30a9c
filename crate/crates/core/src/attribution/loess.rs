//! Locally weighted linear smoothing with bisquare robustness passes.

use super::AttributionError;
use crate::stats::median;

fn tricube(u: f64) -> f64 {
    if u >= 1.0 {
        0.0
    } else {
        let t = 1.0 - u * u * u;
        t * t * t
    }
}

fn bisquare(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        let t = 1.0 - u * u;
        t * t
    }
}

/// Local fit at `x0` using the `q` nearest points, scaled by `robust`.
fn local_fit(xs: &[f64], ys: &[f64], robust: &[f64], q: usize, x0: f64) -> f64 {
    let dist: Vec<f64> = xs.iter().map(|x| (x - x0).abs()).collect();
    let mut scratch = dist.clone();
    let (_, kth, _) = scratch.select_nth_unstable_by(q - 1, |a, b| a.total_cmp(b));
    let h = *kth;
    let w: Vec<f64> = if h > 0.0 {
        dist.iter().zip(robust).map(|(d, r)| tricube(d / h) * r).collect()
    } else {
        dist.iter().zip(robust).map(|(d, r)| if *d == 0.0 { *r } else { 0.0 }).collect()
    };
    let sw: f64 = w.iter().sum();
    if !(sw > 0.0) {
        // every neighbour was down-weighted to zero; use the plain neighbourhood mean
        let near: Vec<f64> = (0..xs.len()).filter(|&i| dist[i] <= h).map(|i| ys[i]).collect();
        return near.iter().sum::<f64>() / near.len() as f64;
    }
    let mx = w.iter().zip(xs).map(|(w, x)| w * x).sum::<f64>() / sw;
    let my = w.iter().zip(ys).map(|(w, y)| w * y).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for i in 0..xs.len() {
        let dx = xs[i] - mx;
        sxx += w[i] * dx * dx;
        sxy += w[i] * dx * (ys[i] - my);
    }
    let scale = w.iter().zip(xs).map(|(w, x)| w * x * x).sum::<f64>() / sw;
    if sxx / sw <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return my;
    }
    my + sxy / sxx * (x0 - mx)
}

/// Evaluates the smoother on `grid`.
///
/// `frac` is the share of points in each neighbourhood; each robustness
/// iteration refits with bisquare weights on residuals scaled by six median
/// absolute residuals.
pub fn loess(xs: &[f64], ys: &[f64], grid: &[f64], frac: f64, robust_iters: usize) -> Result<Vec<f64>, AttributionError> {
    let n = xs.len();
    if n != ys.len() {
        return Err(AttributionError::Invalid(format!("{} x values but {} y values", n, ys.len())));
    }
    if n < 5 {
        return Err(AttributionError::Invalid(format!("LOESS needs at least 5 points, got {n}")));
    }
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(AttributionError::Invalid(format!("LOESS fraction {frac} outside (0, 1]")));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(AttributionError::Invalid("LOESS input contains non-finite values".into()));
    }
    let q = ((frac * n as f64).ceil() as usize).clamp(2, n);
    let mut robust = vec![1.0; n];
    for _ in 0..robust_iters {
        let resid: Vec<f64> = (0..n).map(|i| ys[i] - local_fit(xs, ys, &robust, q, xs[i])).collect();
        let s = median(&resid.iter().map(|r| r.abs()).collect::<Vec<_>>());
        if !(s > 0.0) {
            break;
        }
        robust = resid.iter().map(|r| bisquare(r / (6.0 * s))).collect();
    }
    Ok(grid.iter().map(|&g| local_fit(xs, ys, &robust, q, g)).collect())
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn reproduces_lines() {
        let xs: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin() * 5.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.5 - 0.25 * x).collect();
        let grid = linspace(-4.0, 4.0, 17);
        let fit = loess(&xs, &ys, &grid, 0.4, 1).unwrap();
        for (g, f) in grid.iter().zip(&fit) {
            assert!((f - (1.5 - 0.25 * g)).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_input_gives_constant_curve() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let fit = loess(&xs, &[3.0; 20], &linspace(0.0, 19.0, 7), 0.4, 1).unwrap();
        assert!(fit.iter().all(|f| (f - 3.0).abs() < 1e-12));
    }

    #[test]
    fn tied_neighbourhood_falls_back_to_mean() {
        let xs = [1.0, 1.0, 1.0, 1.0, 9.0, 10.0, 11.0, 12.0];
        let ys = [1.0, 2.0, 3.0, 6.0, 0.0, 0.0, 0.0, 0.0];
        let fit = loess(&xs, &ys, &[1.0], 0.5, 0).unwrap();
        assert!((fit[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn order_invariant() {
        let xs: Vec<f64> = (0..50).map(|i| ((i * 37) % 50) as f64 / 7.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.sin() + 0.1 * (x * 13.0).cos()).collect();
        let grid = linspace(0.5, 6.5, 11);
        let a = loess(&xs, &ys, &grid, 0.4, 1).unwrap();
        let mut idx: Vec<usize> = (0..50).collect();
        idx.reverse();
        idx.swap(3, 17);
        let xs2: Vec<f64> = idx.iter().map(|&i| xs[i]).collect();
        let ys2: Vec<f64> = idx.iter().map(|&i| ys[i]).collect();
        let b = loess(&xs2, &ys2, &grid, 0.4, 1).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(loess(&[1.0; 4], &[1.0; 4], &[1.0], 0.4, 1).is_err());
        assert!(loess(&[1.0; 6], &[1.0; 6], &[1.0], 0.0, 1).is_err());
        assert!(loess(&[1.0; 6], &[1.0; 5], &[1.0], 0.4, 1).is_err());
    }

    /// Oracle: full sort for the neighbourhood radius, explicit bisquare
    /// weights, and a weighted least-squares solve by normal equations.
    fn oracle(xs: &[f64], ys: &[f64], grid: &[f64], frac: f64) -> Vec<f64> {
        let n = xs.len();
        let q = (frac * n as f64).ceil() as usize;
        let fit_at = |x0: f64, rw: &[f64]| {
            let mut d: Vec<f64> = xs.iter().map(|x| (x - x0).abs()).collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let h = d[q - 1];
            let w: Vec<f64> = (0..n)
                .map(|i| {
                    let u = (xs[i] - x0).abs() / h;
                    if u < 1.0 { (1.0 - u.powi(3)).powi(3) * rw[i] } else { 0.0 }
                })
                .collect();
            let a = DMatrix::from_fn(n, 2, |i, j| w[i].sqrt() * if j == 0 { 1.0 } else { xs[i] });
            let b = DVector::from_fn(n, |i, _| w[i].sqrt() * ys[i]);
            let beta = (a.transpose() * &a).try_inverse().unwrap() * a.transpose() * b;
            beta[0] + beta[1] * x0
        };
        let ones = vec![1.0; n];
        let resid: Vec<f64> = (0..n).map(|i| ys[i] - fit_at(xs[i], &ones)).collect();
        let mut abs: Vec<f64> = resid.iter().map(|r| r.abs()).collect();
        abs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let s = if n % 2 == 1 { abs[n / 2] } else { 0.5 * (abs[n / 2 - 1] + abs[n / 2]) };
        let rw: Vec<f64> = resid
            .iter()
            .map(|r| {
                let u = r / (6.0 * s);
                if u.abs() < 1.0 { (1.0 - u * u).powi(2) } else { 0.0 }
            })
            .collect();
        grid.iter().map(|&g| fit_at(g, &rw)).collect()
    }

    #[test]
    fn noisy_sine_matches_weighted_least_squares_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..6.0)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.sin() + rng.random_range(-0.3..0.3)).collect();
        let grid = linspace(0.5, 5.5, 10);
        let got = loess(&xs, &ys, &grid, 0.4, 1).unwrap();
        let want = oracle(&xs, &ys, &grid, 0.4);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }
}
