//! Damped Gauss-Newton (Levenberg-Marquardt) least squares for models with a
//! handful of parameters.
//!
//! Residual functions write into a caller-supplied buffer and return `false`
//! when the parameters leave the feasible region; such trial steps are
//! rejected exactly like steps that fail to reduce the objective.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NlsSettings {
    pub max_iterations: usize,
    /// Relative parameter-change threshold for convergence.
    pub tolerance: f64,
    /// Initial damping, relative to the largest diagonal entry of `J'J`.
    pub damping: f64,
    /// Jittered initializations tried in addition to the deterministic ones.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for NlsSettings {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-10,
            damping: 1e-3,
            restarts: 8,
            seed: 0,
        }
    }
}

impl NlsSettings {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || !(self.tolerance > 0.0) || !(self.damping > 0.0) {
            return Err(Error::InvalidArgument(
                "NLS settings must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlsOutcome {
    pub params: Vec<f64>,
    /// Residual sum of squares at `params`.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after the initialization and after every accepted step.
    pub trace: Vec<f64>,
}

const MAX_DAMPING: f64 = 1e16;

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Central-difference Jacobian with step `1e-6 * max(|theta_k|, 1)`, falling
/// back to a one-sided difference when one side is infeasible.
fn jacobian<F>(f: &F, theta: &[f64], r0: &[f64], jac: &mut DMatrix<f64>) -> bool
where
    F: Fn(&[f64], &mut [f64]) -> bool,
{
    let n = r0.len();
    let mut plus = vec![0.0; n];
    let mut minus = vec![0.0; n];
    let mut t = theta.to_vec();
    for k in 0..theta.len() {
        let h = 1e-6 * theta[k].abs().max(1.0);
        t[k] = theta[k] + h;
        let ok_p = f(&t, &mut plus);
        t[k] = theta[k] - h;
        let ok_m = f(&t, &mut minus);
        t[k] = theta[k];
        match (ok_p, ok_m) {
            (true, true) => {
                for i in 0..n {
                    jac[(i, k)] = (plus[i] - minus[i]) / (2.0 * h);
                }
            }
            (true, false) => {
                for i in 0..n {
                    jac[(i, k)] = (plus[i] - r0[i]) / h;
                }
            }
            (false, true) => {
                for i in 0..n {
                    jac[(i, k)] = (r0[i] - minus[i]) / h;
                }
            }
            (false, false) => return false,
        }
    }
    true
}

/// Minimizes the sum of squared residuals from `init`.
///
/// Returns `None` when `init` itself is infeasible.
pub fn levenberg_marquardt<F>(
    f: &F,
    n_obs: usize,
    init: &[f64],
    settings: &NlsSettings,
) -> Option<NlsOutcome>
where
    F: Fn(&[f64], &mut [f64]) -> bool,
{
    let p = init.len();
    let mut theta = init.to_vec();
    let mut r = vec![0.0; n_obs];
    if !f(&theta, &mut r) {
        return None;
    }
    let mut obj = sum_sq(&r);
    if !obj.is_finite() {
        return None;
    }
    let mut trace = vec![obj];
    let mut jac = DMatrix::<f64>::zeros(n_obs, p);
    let mut trial = vec![0.0; n_obs];
    let mut mu: Option<f64> = None;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < settings.max_iterations {
        if obj <= 1e-30 {
            converged = true;
            break;
        }
        iterations += 1;
        if !jacobian(f, &theta, &r, &mut jac) {
            break;
        }
        let rv = DVector::from_column_slice(&r);
        let a = jac.transpose() * &jac;
        let g = jac.transpose() * rv;
        let max_diag = (0..p).map(|k| a[(k, k)]).fold(0.0, f64::max);
        if max_diag == 0.0 || g.amax() <= 1e-15 * (1.0 + obj) * max_diag.sqrt().max(1.0) {
            converged = true;
            break;
        }
        let damp = mu.get_or_insert(settings.damping * max_diag);
        let floor = 1e-12 * max_diag;

        let mut accepted = false;
        while *damp <= MAX_DAMPING * max_diag {
            let mut m = a.clone();
            for k in 0..p {
                m[(k, k)] += *damp * a[(k, k)].max(floor);
            }
            let step = match m.clone().cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => match m.lu().solve(&(-&g)) {
                    Some(s) => s,
                    None => {
                        *damp *= 10.0;
                        continue;
                    }
                },
            };
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + s).collect();
            if f(&cand, &mut trial) {
                let cand_obj = sum_sq(&trial);
                if cand_obj.is_finite() && cand_obj < obj {
                    let rel = step
                        .iter()
                        .zip(&theta)
                        .map(|(s, t)| s.abs() / (t.abs() + settings.tolerance))
                        .fold(0.0, f64::max);
                    let gain = (obj - cand_obj) / obj;
                    theta = cand;
                    std::mem::swap(&mut r, &mut trial);
                    obj = cand_obj;
                    trace.push(obj);
                    *damp = (*damp / 10.0).max(1e-15 * max_diag);
                    accepted = true;
                    if rel < settings.tolerance || gain < 1e-15 {
                        converged = true;
                    }
                    break;
                }
            }
            *damp *= 10.0;
        }
        if !accepted {
            // No descent direction at any damping: a numerical stationary point.
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }

    Some(NlsOutcome {
        params: theta,
        objective: obj,
        iterations,
        converged,
        trace,
    })
}

/// Runs [`levenberg_marquardt`] from every initialization (in parallel) and
/// keeps the lowest objective, ties going to the earliest initialization.
///
/// Returns the winning outcome and its index.
pub fn multistart<F>(
    f: &F,
    n_obs: usize,
    inits: &[Vec<f64>],
    settings: &NlsSettings,
) -> Result<(NlsOutcome, usize)>
where
    F: Fn(&[f64], &mut [f64]) -> bool + Sync,
{
    let outcomes: Vec<Option<NlsOutcome>> = inits
        .par_iter()
        .map(|init| levenberg_marquardt(f, n_obs, init, settings))
        .collect();
    outcomes
        .into_iter()
        .enumerate()
        .filter_map(|(i, o)| o.map(|o| (o, i)))
        .min_by(|a, b| {
            a.0.objective
                .total_cmp(&b.0.objective)
                .then(a.1.cmp(&b.1))
        })
        .ok_or_else(|| Error::Fit("no feasible initialization".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_recovered() {
        let t: Vec<f64> = (0..20).map(|i| i as f64 * 0.25).collect();
        let y: Vec<f64> = t.iter().map(|&t| 3.0 * (-0.7 * t).exp()).collect();
        let f = |p: &[f64], out: &mut [f64]| {
            for i in 0..t.len() {
                out[i] = y[i] - p[0] * (-p[1] * t[i]).exp();
            }
            true
        };
        let o = levenberg_marquardt(&f, t.len(), &[1.0, 0.1], &NlsSettings::default()).unwrap();
        assert!(o.converged);
        assert!((o.params[0] - 3.0).abs() < 1e-7, "{:?}", o.params);
        assert!((o.params[1] - 0.7).abs() < 1e-7);
        assert!(o.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn infeasible_region_is_never_entered() {
        // Minimum of (p - (-1))^2 lies outside p > 0; the fit must stay inside.
        let f = |p: &[f64], out: &mut [f64]| {
            if p[0] <= 0.0 {
                return false;
            }
            out[0] = p[0] + 1.0;
            true
        };
        let o = levenberg_marquardt(&f, 1, &[2.0], &NlsSettings::default()).unwrap();
        assert!(o.params[0] > 0.0);
        assert!(levenberg_marquardt(&f, 1, &[-1.0], &NlsSettings::default()).is_none());
    }

    #[test]
    fn multistart_prefers_lowest_then_index() {
        // Global minimum at p = 1; a worse local one near p = -1.
        let f = |p: &[f64], out: &mut [f64]| {
            out[0] = p[0] * p[0] - 1.0;
            out[1] = 0.1 * (p[0] - 1.0);
            true
        };
        let inits = vec![vec![-3.0], vec![3.0], vec![3.0]];
        let (o, idx) = multistart(&f, 2, &inits, &NlsSettings::default()).unwrap();
        assert!(o.objective < 1e-20);
        assert_eq!(idx, 1);
    }
}
