//! L1-penalized quantile regression with country fixed effects.
//!
//! The pinball loss is Huberized at width [`SMOOTHING`] and minimized by
//! majorize-minimize: each step replaces `|r|` and `|theta_j|` by tangent
//! quadratics and solves a weighted ridge system. The country intercepts are
//! eliminated through a Schur complement so a step costs `O(n m^2)`. A final
//! vertex snap re-solves the active residual/coefficient constraints exactly.

use nalgebra::{DMatrix, DVector};

use super::design::DesignMatrix;
use super::linear::LinearModel;
use super::ModelError;

/// Huber width applied to both the pinball kinks and the L1 penalty.
pub const SMOOTHING: f64 = 1e-6;
/// Convergence: objective improvement over this many iterations...
pub const WINDOW: usize = 50;
/// ...must fall below this (relative to the objective).
pub const TOLERANCE: f64 = 1e-9;
pub const MAX_ITERATIONS: usize = 5_000;

/// Check function `rho_tau(u) = u (tau - 1{u < 0})`.
pub fn pinball(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

/// `sum rho_tau(residual) + lambda |theta|_1`.
pub fn objective(d: &DesignMatrix, model: &LinearModel, tau: f64, lambda: f64) -> f64 {
    let loss: f64 = (0..d.n_rows())
        .map(|i| {
            let f = model.predict_row(d.country[i], d.row(i)).unwrap_or(f64::NAN);
            pinball(d.y[i] - f, tau)
        })
        .sum();
    loss + lambda * model.slopes.iter().map(|t| t.abs()).sum::<f64>()
}

fn huber_abs(v: f64) -> f64 {
    let a = v.abs();
    if a <= SMOOTHING {
        v * v / (2.0 * SMOOTHING) + SMOOTHING / 2.0
    } else {
        a
    }
}

struct Problem<'a> {
    d: &'a DesignMatrix,
    tau: f64,
    lambda: f64,
    m: usize,
    k: usize,
}

impl Problem<'_> {
    fn residuals(&self, theta: &[f64], alpha: &[f64]) -> Vec<f64> {
        (0..self.d.n_rows())
            .map(|i| {
                let x = self.d.row(i);
                self.d.y[i] - alpha[self.d.country[i]] - x.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    fn smoothed(&self, theta: &[f64], r: &[f64]) -> f64 {
        let s = 2.0 * self.tau - 1.0;
        r.iter().map(|&v| 0.5 * (huber_abs(v) + s * v)).sum::<f64>()
            + self.lambda * theta.iter().map(|&t| huber_abs(t)).sum::<f64>()
    }

    fn exact(&self, theta: &[f64], r: &[f64]) -> f64 {
        r.iter().map(|&v| pinball(v, self.tau)).sum::<f64>()
            + self.lambda * theta.iter().map(|t| t.abs()).sum::<f64>()
    }

    /// Solves `(Z'WZ + Lambda) beta = Z'Wy + (tau - 1/2) Z'1` with Z = [X, D].
    fn weighted_step(&self, w: &[f64], pen: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        let (m, k, d) = (self.m, self.k, self.d);
        let shift = self.tau - 0.5;
        let mut s = vec![0.0; k];
        let mut v = vec![0.0; k];
        let mut bx = vec![vec![0.0; m]; k];
        let mut a = DMatrix::<f64>::zeros(m, m);
        let mut u = DVector::<f64>::zeros(m);
        for i in 0..d.n_rows() {
            let c = d.country[i];
            let x = d.row(i);
            let wi = w[i];
            s[c] += wi;
            v[c] += wi * d.y[i] + shift;
            for p in 0..m {
                let wx = wi * x[p];
                bx[c][p] += wx;
                u[p] += wx * d.y[i] + shift * x[p];
                for q in p..m {
                    a[(p, q)] += wx * x[q];
                }
            }
        }
        for c in 0..k {
            if s[c] <= 0.0 {
                continue;
            }
            for p in 0..m {
                u[p] -= bx[c][p] * v[c] / s[c];
                for q in p..m {
                    a[(p, q)] -= bx[c][p] * bx[c][q] / s[c];
                }
            }
        }
        for p in 0..m {
            a[(p, p)] += pen[p];
            for q in 0..p {
                a[(p, q)] = a[(q, p)];
            }
        }
        let theta: Vec<f64> = if m == 0 {
            Vec::new()
        } else {
            a.lu().solve(&u)?.iter().copied().collect()
        };
        let alpha = (0..k)
            .map(|c| {
                if s[c] > 0.0 {
                    (v[c] - bx[c].iter().zip(&theta).map(|(b, t)| b * t).sum::<f64>()) / s[c]
                } else {
                    0.0
                }
            })
            .collect();
        Some((theta, alpha))
    }

    /// Re-solves the `m + k_present` tightest constraints exactly. Returns the
    /// vertex when it does not increase the exact objective.
    fn snap(&self, theta: &[f64], alpha: &[f64], present: &[usize], tol: f64) -> Option<(Vec<f64>, Vec<f64>)> {
        let (m, d) = (self.m, self.d);
        let kp = present.len();
        let p = m + kp;
        let r = self.residuals(theta, alpha);
        let zero_theta: Vec<usize> = (0..m).filter(|&j| theta[j].abs() <= tol).collect();
        let need = p.checked_sub(zero_theta.len())?;
        let mut order: Vec<usize> = (0..d.n_rows()).collect();
        order.sort_by(|&a, &b| r[a].abs().total_cmp(&r[b].abs()).then(a.cmp(&b)));
        let rows = &order[..need.min(order.len())];
        if rows.len() < need || rows.iter().any(|&i| r[i].abs() > tol * (1.0 + d.y[i].abs())) {
            return None;
        }
        let col_of = |c: usize| present.iter().position(|&q| q == c).map(|q| m + q);
        let mut a = DMatrix::<f64>::zeros(p, p);
        let mut b = DVector::<f64>::zeros(p);
        for (e, &i) in rows.iter().enumerate() {
            for (j, xv) in d.row(i).iter().enumerate() {
                a[(e, j)] = *xv;
            }
            a[(e, col_of(d.country[i])?)] = 1.0;
            b[e] = d.y[i];
        }
        for (e, &j) in zero_theta.iter().enumerate() {
            a[(need + e, j)] = 1.0;
        }
        let sol = a.lu().solve(&b)?;
        let th: Vec<f64> = sol.iter().take(m).copied().collect();
        let mut al = alpha.to_vec();
        for (q, &c) in present.iter().enumerate() {
            al[c] = sol[m + q];
        }
        if th.iter().chain(&al).any(|v| !v.is_finite()) {
            return None;
        }
        let before = self.exact(theta, &r);
        let after = self.exact(&th, &self.residuals(&th, &al));
        (after <= before).then_some((th, al))
    }
}

/// Minimizes `sum rho_tau(y - a_i - x'theta) + lambda |theta|_1`.
pub fn fit_quantile(d: &DesignMatrix, tau: f64, lambda: f64) -> Result<LinearModel, ModelError> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(ModelError::Hyperparams(format!("tau = {tau} outside (0, 1)")));
    }
    if !(lambda >= 0.0) {
        return Err(ModelError::Hyperparams(format!("lambda = {lambda} is negative")));
    }
    d.check_targets()?;
    let m = d.n_features();
    let k = d.countries.len();
    let prob = Problem { d, tau, lambda, m, k };
    let mut counts = vec![0usize; k];
    for &c in &d.country {
        counts[c] += 1;
    }
    let present: Vec<usize> = (0..k).filter(|&c| counts[c] > 0).collect();

    // least-squares start (lightly ridged) keeps coefficients off the L1 kink
    let (mut theta, mut alpha) = prob
        .weighted_step(&vec![1.0; d.n_rows()], &vec![lambda.max(1e-12); m])
        .ok_or(ModelError::RankDeficient { columns: d.feature_names.clone() })?;
    let mut r = prob.residuals(&theta, &alpha);
    let mut history = vec![prob.smoothed(&theta, &r)];
    let mut iterations = 0;
    loop {
        if iterations >= MAX_ITERATIONS {
            let n = history.len();
            return Err(ModelError::NotConverged {
                iterations,
                gap: history[n - 1 - WINDOW] - history[n - 1],
                last: theta,
            });
        }
        iterations += 1;
        let w: Vec<f64> = r.iter().map(|v| 0.5 / v.abs().max(SMOOTHING)).collect();
        let pen: Vec<f64> = theta.iter().map(|t| lambda / t.abs().max(SMOOTHING)).collect();
        let (th, al) = prob
            .weighted_step(&w, &pen)
            .ok_or(ModelError::RankDeficient { columns: d.feature_names.clone() })?;
        theta = th;
        alpha = al;
        r = prob.residuals(&theta, &alpha);
        let f = prob.smoothed(&theta, &r);
        history.push(f);
        let n = history.len();
        if n > WINDOW && history[n - 1 - WINDOW] - f < TOLERANCE * f.abs().max(1.0) {
            break;
        }
    }
    for t in &mut theta {
        if t.abs() <= SMOOTHING {
            *t = 0.0;
        }
    }
    if let Some((th, al)) = prob.snap(&theta, &alpha, &present, 1e-5) {
        theta = th;
        alpha = al;
    }
    Ok(LinearModel {
        intercepts: (0..k).map(|c| (counts[c] > 0).then(|| alpha[c])).collect(),
        slopes: theta,
        sweeps: iterations,
    })
}
