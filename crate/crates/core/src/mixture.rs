//! Gaussian mixtures of linear regressions of `ln y` on `ln N`, fit by EM,
//! with BIC and held-out likelihood for choosing the number of components.

use std::f64::consts::PI;

use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng;
use crate::stats;

pub const DEFAULT_RESTARTS: usize = 20;
pub const MAX_EM_ITERATIONS: usize = 2000;
pub const EM_TOLERANCE: f64 = 1e-9;
/// Restarts whose smallest noise scale falls below this are discarded.
pub const MIN_SIGMA: f64 = 1e-8;
/// Restarts ending with a component weight below this are discarded as
/// collapsed onto a handful of points.
pub const MIN_WEIGHT: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixtureFit {
    pub k: usize,
    pub weights: Vec<f64>,
    /// Components are sorted by intercept.
    pub intercepts: Vec<f64>,
    pub slopes: Vec<f64>,
    pub sigmas: Vec<f64>,
    /// Weighted least-squares standard errors of the slopes.
    pub slope_se: Vec<f64>,
    /// Whether every pair of slopes agrees within two combined standard
    /// errors; `None` for a single component.
    pub slopes_agree: Option<bool>,
    /// `n x k`, rows in dataset order.
    pub responsibilities: Vec<Vec<f64>>,
    pub log_likelihood: f64,
    /// Log-likelihood after every EM iteration of the winning restart.
    pub log_likelihood_trace: Vec<f64>,
    /// `-2 log L + p ln n`.
    pub bic: f64,
    /// `p = 4k - 1`: weights, intercepts, slopes and noise scales, less the
    /// sum-to-one constraint.
    pub bic_params: usize,
    pub converged: bool,
    pub iterations: usize,
    pub degenerate_restarts: usize,
    pub seed: u64,
}

impl MixtureFit {
    /// Mixture log-density of one `(ln N, ln y)` point.
    pub fn log_density(&self, x: f64, y: f64) -> f64 {
        let terms: Vec<f64> = (0..self.k)
            .map(|c| {
                self.weights[c].ln()
                    + log_normal(y, self.intercepts[c] + self.slopes[c] * x, self.sigmas[c])
            })
            .collect();
        log_sum_exp(&terms)
    }
}

fn log_normal(y: f64, mu: f64, sigma: f64) -> f64 {
    let z = (y - mu) / sigma;
    -0.5 * (2.0 * PI).ln() - sigma.ln() - 0.5 * z * z
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

struct Params {
    weights: Vec<f64>,
    intercepts: Vec<f64>,
    slopes: Vec<f64>,
    sigmas: Vec<f64>,
    slope_se: Vec<f64>,
}

fn m_step(x: &[f64], y: &[f64], resp: &[Vec<f64>], k: usize) -> Option<Params> {
    let n = x.len();
    let mut p = Params {
        weights: Vec::with_capacity(k),
        intercepts: Vec::with_capacity(k),
        slopes: Vec::with_capacity(k),
        sigmas: Vec::with_capacity(k),
        slope_se: Vec::with_capacity(k),
    };
    for c in 0..k {
        let w: Vec<f64> = resp.iter().map(|r| r[c]).collect();
        let sw: f64 = w.iter().sum();
        if sw < 1e-10 * n as f64 {
            return None;
        }
        let line = stats::weighted_ols_line(x, y, &w).ok()?;
        let var = x
            .iter()
            .zip(y)
            .zip(&w)
            .map(|((a, b), wi)| wi * (b - line.predict(*a)).powi(2))
            .sum::<f64>()
            / sw;
        let sigma = var.sqrt();
        if !(sigma >= MIN_SIGMA) {
            return None;
        }
        let mx = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
        let sxx: f64 = x.iter().zip(&w).map(|(a, b)| b * (a - mx).powi(2)).sum();
        p.weights.push(sw / n as f64);
        p.intercepts.push(line.intercept);
        p.slopes.push(line.slope);
        p.sigmas.push(sigma);
        p.slope_se.push(sigma / sxx.sqrt());
    }
    Some(p)
}

/// Fills `resp` and returns the log-likelihood.
fn e_step(x: &[f64], y: &[f64], p: &Params, resp: &mut [Vec<f64>]) -> f64 {
    let k = p.weights.len();
    let mut ll = 0.0;
    let mut terms = vec![0.0; k];
    for i in 0..x.len() {
        for c in 0..k {
            terms[c] = p.weights[c].ln()
                + log_normal(y[i], p.intercepts[c] + p.slopes[c] * x[i], p.sigmas[c]);
        }
        let lse = log_sum_exp(&terms);
        ll += lse;
        for c in 0..k {
            resp[i][c] = (terms[c] - lse).exp();
        }
    }
    ll
}

struct RunOutcome {
    params: Params,
    resp: Vec<Vec<f64>>,
    ll: f64,
    trace: Vec<f64>,
    converged: bool,
    iterations: usize,
}

/// Random initial responsibilities: each component starts from the line
/// through two randomly chosen points, and every point is shared among the
/// lines by a Gaussian kernel of its residuals.
fn initial_responsibilities(x: &[f64], y: &[f64], k: usize, g: &mut rng::Rng) -> Vec<Vec<f64>> {
    let n = x.len();
    let scale = stats::ols_line(x, y)
        .map(|l| (l.rss / n as f64).sqrt())
        .unwrap_or(1.0)
        .max(1e-6);
    let lines: Vec<(f64, f64)> = (0..k)
        .map(|_| {
            let i = g.random_range(0..n);
            let mut j = g.random_range(0..n);
            if j == i {
                j = (i + 1) % n;
            }
            if x[i] == x[j] {
                (y[i], 0.0)
            } else {
                let b = (y[j] - y[i]) / (x[j] - x[i]);
                (y[i] - b * x[i], b)
            }
        })
        .collect();
    (0..n)
        .map(|i| {
            let t: Vec<f64> = lines
                .iter()
                .map(|(a, b)| -0.5 * ((y[i] - a - b * x[i]) / scale).powi(2))
                .collect();
            let lse = log_sum_exp(&t);
            t.iter().map(|v| (v - lse).exp().max(1e-12)).collect()
        })
        .collect()
}

fn run_em(x: &[f64], y: &[f64], k: usize, g: &mut rng::Rng) -> Option<RunOutcome> {
    let mut resp = initial_responsibilities(x, y, k, g);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut params = m_step(x, y, &resp, k)?;
    let mut ll = e_step(x, y, &params, &mut resp);
    trace.push(ll);
    while iterations < MAX_EM_ITERATIONS {
        iterations += 1;
        params = m_step(x, y, &resp, k)?;
        let next = e_step(x, y, &params, &mut resp);
        trace.push(next);
        let done = (next - ll).abs() <= EM_TOLERANCE * ll.abs().max(1.0);
        ll = next;
        if done {
            converged = true;
            break;
        }
    }
    if !ll.is_finite() || (k > 1 && params.weights.iter().any(|&w| w < MIN_WEIGHT)) {
        return None;
    }
    Some(RunOutcome {
        params,
        resp,
        ll,
        trace,
        converged,
        iterations,
    })
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("need at least one component".into()));
    }
    if n < 5 * k {
        return Err(Error::InvalidArgument(format!(
            "{k} components need at least {} records, got {n}",
            5 * k
        )));
    }
    Ok(())
}

/// EM fit of a `k`-component mixture of regressions, best of `restarts`
/// random initializations.
pub fn fit_mixture(d: &Dataset, k: usize, restarts: usize, seed: u64) -> Result<MixtureFit> {
    fit_xy(&d.log_population(), &d.log_per_capita(), k, restarts, seed)
}

fn fit_xy(x: &[f64], y: &[f64], k: usize, restarts: usize, seed: u64) -> Result<MixtureFit> {
    let n = x.len();
    check_k(n, k)?;
    let restarts = if k == 1 { 1 } else { restarts.max(1) };
    let runs: Vec<Option<RunOutcome>> = (0..restarts)
        .into_par_iter()
        .map(|r| run_em(x, y, k, &mut rng::stream(seed, r as u64)))
        .collect();
    let degenerate_restarts = runs.iter().filter(|r| r.is_none()).count();
    let best = runs
        .into_iter()
        .flatten()
        .fold(None::<RunOutcome>, |best, r| match best {
            Some(b) if b.ll >= r.ll => Some(b),
            _ => Some(r),
        })
        .ok_or_else(|| Error::Fit(format!("all {restarts} EM restarts degenerate for k = {k}")))?;

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| best.params.intercepts[a].total_cmp(&best.params.intercepts[b]));
    let pick = |v: &[f64]| order.iter().map(|&c| v[c]).collect::<Vec<f64>>();
    let slopes = pick(&best.params.slopes);
    let slope_se = pick(&best.params.slope_se);
    let slopes_agree = (k > 1).then(|| {
        (0..k).all(|a| {
            (a + 1..k).all(|b| {
                (slopes[a] - slopes[b]).abs()
                    <= 2.0 * (slope_se[a].powi(2) + slope_se[b].powi(2)).sqrt()
            })
        })
    });
    let bic_params = 4 * k - 1;
    Ok(MixtureFit {
        k,
        weights: pick(&best.params.weights),
        intercepts: pick(&best.params.intercepts),
        sigmas: pick(&best.params.sigmas),
        slopes,
        slope_se,
        slopes_agree,
        responsibilities: best.resp.iter().map(|row| pick(row)).collect(),
        log_likelihood: best.ll,
        log_likelihood_trace: best.trace,
        bic: -2.0 * best.ll + bic_params as f64 * (n as f64).ln(),
        bic_params,
        converged: best.converged,
        iterations: best.iterations,
        degenerate_restarts,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentScore {
    pub k: usize,
    pub bic: Option<f64>,
    pub log_likelihood: Option<f64>,
    /// Held-out log-likelihood summed over folds.
    pub cv_log_likelihood: Option<f64>,
    /// Why this `k` has no score, if it failed.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionReport {
    pub per_k: Vec<ComponentScore>,
    pub chosen_by_bic: usize,
    pub chosen_by_cv: usize,
    pub folds: usize,
    pub restarts: usize,
    pub seed: u64,
}

/// Fits `k = 1..=k_max` and nominates a `k` by minimum BIC and by maximum
/// k-fold held-out log-likelihood. Failed `k` are reported and excluded.
pub fn select_components(
    d: &Dataset,
    k_max: usize,
    folds: usize,
    restarts: usize,
    seed: u64,
) -> Result<SelectionReport> {
    if k_max == 0 {
        return Err(Error::InvalidArgument("k_max must be at least 1".into()));
    }
    let n = d.len();
    if folds < 2 || folds > n {
        return Err(Error::InvalidArgument(format!(
            "folds must lie in [2, n], got {folds}"
        )));
    }
    let x = d.log_population();
    let y = d.log_per_capita();
    let assignment = rng::fold_assignment(&d.ids(), folds, seed);

    let per_k: Vec<ComponentScore> = (1..=k_max)
        .into_par_iter()
        .map(|k| {
            let ks = rng::derive_seed(seed, k as u64);
            let full = fit_xy(&x, &y, k, restarts, ks);
            let cv: Result<f64> = (0..folds)
                .into_par_iter()
                .map(|f| {
                    let (train, test): (Vec<usize>, Vec<usize>) =
                        (0..n).partition(|&i| assignment[i] != f);
                    let tx: Vec<f64> = train.iter().map(|&i| x[i]).collect();
                    let ty: Vec<f64> = train.iter().map(|&i| y[i]).collect();
                    let fit = fit_xy(&tx, &ty, k, restarts, rng::derive_seed(ks, f as u64 + 1))?;
                    Ok(test.iter().map(|&i| fit.log_density(x[i], y[i])).sum::<f64>())
                })
                .collect::<Result<Vec<f64>>>()
                .map(|v| v.iter().sum());
            match (full, cv) {
                (Ok(fit), Ok(cv)) => ComponentScore {
                    k,
                    bic: Some(fit.bic),
                    log_likelihood: Some(fit.log_likelihood),
                    cv_log_likelihood: Some(cv),
                    error: None,
                },
                (Err(e), _) | (_, Err(e)) => ComponentScore {
                    k,
                    bic: None,
                    log_likelihood: None,
                    cv_log_likelihood: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    let best_by = |key: &dyn Fn(&ComponentScore) -> Option<f64>, minimize: bool| {
        per_k
            .iter()
            .filter_map(|s| key(s).map(|v| (s.k, v)))
            .fold(None::<(usize, f64)>, |best, (k, v)| match best {
                Some((_, bv)) if (minimize && bv <= v) || (!minimize && bv >= v) => best,
                _ => Some((k, v)),
            })
            .map(|(k, _)| k)
    };
    let chosen_by_bic = best_by(&|s| s.bic, true)
        .ok_or_else(|| Error::Fit("no component count could be fit".into()))?;
    let chosen_by_cv = best_by(&|s| s.cv_log_likelihood, false)
        .ok_or_else(|| Error::Fit("no component count could be cross-validated".into()))?;
    Ok(SelectionReport {
        per_k,
        chosen_by_bic,
        chosen_by_cv,
        folds,
        restarts,
        seed,
    })
}
