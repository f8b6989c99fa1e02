//! Log-additive model `ln y = a + b ln N + sum_j f_j(x_j)` over sector shares,
//! fit by backfitting with smoothing splines.
//!
//! Penalties are chosen in a first backfitting pass that reselects each
//! smoother's penalty by leave-one-out CV on every update. They are then
//! frozen and backfitting runs to convergence at fixed penalties, where the
//! penalized objective
//! `(1/n) |ln y - fitted|^2 + sum_j lambda_j * integral (f_j'')^2`
//! cannot increase from one sweep to the next.

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng;
use crate::scaling;
use crate::spline::{LambdaGrid, SplineBasis, SplineFit};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackfitSettings {
    /// Stop when no fitted value moves by more than this in a sweep.
    pub tolerance: f64,
    pub max_sweeps: usize,
    /// Sweep cap for the penalty-selection pass.
    pub selection_sweeps: usize,
    /// Fixed penalties, one per kept share column; skips selection.
    pub lambdas: Option<Vec<f64>>,
}

impl Default for BackfitSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_sweeps: 500,
            selection_sweeps: 50,
            lambdas: None,
        }
    }
}

/// Minimum sample size for the additive model.
pub const MIN_ADDITIVE_N: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartialResponse {
    pub sector: String,
    /// Index of the share column in the dataset.
    pub column: usize,
    /// `f_j`, shifted to mean zero over the fitting data.
    pub spline: SplineFit,
    /// Pointwise standard errors at the spline's knots.
    pub knot_se: Vec<f64>,
}

impl PartialResponse {
    pub fn evaluate(&self, x: f64) -> f64 {
        self.spline.evaluate(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdditiveFit {
    pub intercept: f64,
    pub include_size: bool,
    /// Zero when the size term is excluded.
    pub size_exponent: f64,
    /// OLS standard error of the size exponent with the smooths held fixed.
    pub size_exponent_se: f64,
    pub partials: Vec<PartialResponse>,
    /// Share columns dropped for being constant.
    pub dropped_columns: Vec<usize>,
    pub ids: Vec<String>,
    pub fitted_log: Vec<f64>,
    pub residuals_log: Vec<f64>,
    /// `residuals_log + f_j(x_j)`, one vector per partial.
    pub partial_residuals: Vec<Vec<f64>>,
    pub rms_log: f64,
    pub r_squared_log: f64,
    /// Residual scale behind the standard-error bands.
    pub sigma: f64,
    pub converged: bool,
    pub backfit_iterations: usize,
    /// Penalized objective after every fixed-penalty sweep.
    pub objective_trace: Vec<f64>,
}

impl AdditiveFit {
    /// Predicted `ln y` at a population and a full row of sector shares.
    pub fn predict(&self, population: f64, shares: &[Option<f64>]) -> Result<f64> {
        let mut v = self.intercept + self.size_exponent * population.ln();
        for p in &self.partials {
            let x = shares.get(p.column).copied().flatten().ok_or_else(|| {
                Error::InvalidArgument(format!("missing share for {}", p.sector))
            })?;
            v += p.evaluate(x);
        }
        Ok(v)
    }
}

struct Smooth {
    column: usize,
    x: Vec<f64>,
    basis: SplineBasis,
    values: Vec<f64>,
    spline: Option<SplineFit>,
}

fn center(mut s: SplineFit, shift: f64) -> SplineFit {
    for v in s.knot_values.iter_mut().chain(s.fitted.iter_mut()) {
        *v -= shift;
    }
    for r in s.residuals.iter_mut() {
        *r += shift;
    }
    s
}

struct State {
    intercept: f64,
    slope: f64,
    slope_se: f64,
    fitted: Vec<f64>,
}

/// One full sweep. Returns the largest change in any fitted value.
fn sweep(
    y: &[f64],
    ln_n: &[f64],
    include_size: bool,
    smooths: &mut [Smooth],
    grids: &[LambdaGrid],
    state: &mut State,
) -> Result<f64> {
    let n = y.len();
    let smooth_sum = |smooths: &[Smooth], skip: Option<usize>| -> Vec<f64> {
        let mut s = vec![0.0; n];
        for (k, sm) in smooths.iter().enumerate() {
            if Some(k) != skip {
                for (a, v) in s.iter_mut().zip(&sm.values) {
                    *a += v;
                }
            }
        }
        s
    };

    let others = smooth_sum(smooths, None);
    let target: Vec<f64> = y.iter().zip(&others).map(|(a, b)| a - b).collect();
    if include_size {
        let line = stats::ols_line(ln_n, &target)?;
        state.intercept = line.intercept;
        state.slope = line.slope;
        state.slope_se = line.slope_se;
    } else {
        state.intercept = stats::mean(&target);
    }

    for k in 0..smooths.len() {
        let rest = smooth_sum(smooths, Some(k));
        let partial: Vec<f64> = (0..n)
            .map(|i| y[i] - state.intercept - state.slope * ln_n[i] - rest[i])
            .collect();
        let fit = smooths[k].basis.fit(&partial, &grids[k])?;
        let shift = stats::mean(&fit.fitted);
        state.intercept += shift;
        let fit = center(fit, shift);
        smooths[k].values = fit.fitted.clone();
        smooths[k].spline = Some(fit);
    }

    let all = smooth_sum(smooths, None);
    let fitted: Vec<f64> = (0..n)
        .map(|i| state.intercept + state.slope * ln_n[i] + all[i])
        .collect();
    let change = fitted
        .iter()
        .zip(&state.fitted)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    state.fitted = fitted;
    Ok(change)
}

fn objective(y: &[f64], state: &State, smooths: &[Smooth]) -> f64 {
    let rss: f64 = y
        .iter()
        .zip(&state.fitted)
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    rss / y.len() as f64
        + smooths
            .iter()
            .filter_map(|s| s.spline.as_ref())
            .map(|s| s.lambda * s.roughness())
            .sum::<f64>()
}

/// Fits the additive model on the records of `d` with complete sector shares.
pub fn fit_additive(d: &Dataset, include_size: bool, settings: &BackfitSettings) -> Result<AdditiveFit> {
    let d = d.complete_sector_subset();
    let n = d.len();
    if n < MIN_ADDITIVE_N {
        return Err(Error::InvalidArgument(format!(
            "additive model needs at least {MIN_ADDITIVE_N} complete records, got {n}"
        )));
    }
    if !(settings.tolerance > 0.0) || settings.max_sweeps == 0 {
        return Err(Error::InvalidArgument("invalid backfit settings".into()));
    }
    let y = d.log_per_capita();
    let ln_n = d.log_population();
    let k_cols = d.sector_names.len();

    let mut smooths = Vec::new();
    let mut dropped_columns = Vec::new();
    for j in 0..k_cols {
        let x = d.sector_column(j).expect("complete subset");
        if x.iter().all(|v| *v == x[0]) {
            log::warn!("dropping constant share column {}", d.sector_names[j]);
            dropped_columns.push(j);
            continue;
        }
        let basis = SplineBasis::new(&x, &vec![1.0; n])
            .map_err(|e| match e {
                Error::Rank(m) => Error::Rank(format!("share {}: {m}", d.sector_names[j])),
                other => other,
            })?;
        smooths.push(Smooth {
            column: j,
            x,
            basis,
            values: vec![0.0; n],
            spline: None,
        });
    }

    let mut state = State {
        intercept: 0.0,
        slope: 0.0,
        slope_se: 0.0,
        fitted: vec![0.0; n],
    };

    let fixed: Vec<LambdaGrid> = match &settings.lambdas {
        Some(l) => {
            if l.len() != smooths.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} penalties given for {} smooths",
                    l.len(),
                    smooths.len()
                )));
            }
            l.iter().map(|&v| LambdaGrid::Fixed(v)).collect()
        }
        None => {
            let auto = vec![LambdaGrid::Auto; smooths.len()];
            for _ in 0..settings.selection_sweeps {
                if sweep(&y, &ln_n, include_size, &mut smooths, &auto, &mut state)? < 1e-6 {
                    break;
                }
            }
            smooths
                .iter()
                .map(|s| LambdaGrid::Fixed(s.spline.as_ref().expect("swept").lambda))
                .collect()
        }
    };

    let mut converged = false;
    let mut iterations = 0;
    let mut objective_trace = Vec::new();
    while iterations < settings.max_sweeps {
        iterations += 1;
        let change = sweep(&y, &ln_n, include_size, &mut smooths, &fixed, &mut state)?;
        objective_trace.push(objective(&y, &state, &smooths));
        if change < settings.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("backfitting stopped after {iterations} sweeps without converging");
    }

    let residuals_log: Vec<f64> = y.iter().zip(&state.fitted).map(|(a, b)| a - b).collect();
    let rss: f64 = residuals_log.iter().map(|r| r * r).sum();
    let edf_total = 1.0
        + f64::from(u8::from(include_size))
        + smooths
            .iter()
            .map(|s| s.spline.as_ref().unwrap().edf - 1.0)
            .sum::<f64>();
    let sigma = (rss / (n as f64 - edf_total).max(1.0)).sqrt();

    let partial_residuals = smooths
        .iter()
        .map(|s| residuals_log.iter().zip(&s.values).map(|(r, f)| r + f).collect())
        .collect();
    let partials = smooths
        .into_iter()
        .map(|s| {
            let spline = s.spline.expect("swept");
            debug_assert_eq!(s.x.len(), n);
            PartialResponse {
                sector: d.sector_names[s.column].clone(),
                column: s.column,
                knot_se: spline.knot_standard_errors(sigma),
                spline,
            }
        })
        .collect();

    let rms_log = stats::rms(&residuals_log);
    Ok(AdditiveFit {
        intercept: state.intercept,
        include_size,
        size_exponent: state.slope,
        size_exponent_se: state.slope_se,
        partials,
        dropped_columns,
        ids: d.ids().iter().map(|s| s.to_string()).collect(),
        r_squared_log: 1.0 - rms_log * rms_log / stats::variance_mle(&y),
        rms_log,
        fitted_log: state.fitted,
        residuals_log,
        partial_residuals,
        sigma,
        converged,
        backfit_iterations: iterations,
        objective_trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdditiveCvResult {
    pub include_size: bool,
    pub additive_mse: f64,
    /// Pure power law on the same folds.
    pub power_mse: f64,
    /// `(additive, power)` squared-error sums per fold.
    pub per_fold: Vec<(f64, f64)>,
    pub n: usize,
    pub folds: usize,
    pub seed: u64,
}

/// K-fold CV mean squared error of `ln y` for the additive model, with
/// penalty selection repeated inside every fold, and for the power law on the
/// same folds.
pub fn additive_cv(
    d: &Dataset,
    include_size: bool,
    folds: usize,
    seed: u64,
    settings: &BackfitSettings,
) -> Result<AdditiveCvResult> {
    let d = d.complete_sector_subset();
    let n = d.len();
    if folds < 2 || folds > n {
        return Err(Error::InvalidArgument(format!(
            "folds must lie in [2, n], got {folds}"
        )));
    }
    let assignment = rng::fold_assignment(&d.ids(), folds, seed);
    let ln_y = d.log_per_capita();
    let per_fold: Vec<Result<(f64, f64)>> = (0..folds)
        .into_par_iter()
        .map(|k| {
            let train: Vec<usize> = (0..n).filter(|&i| assignment[i] != k).collect();
            let train_d = d.select(&train);
            let add = fit_additive(&train_d, include_size, settings)?;
            let pow = scaling::fit_power_per_capita(&train_d)?;
            let mut sa = 0.0;
            let mut sp = 0.0;
            for i in (0..n).filter(|&i| assignment[i] == k) {
                let r = &d.records()[i];
                sa += (ln_y[i] - add.predict(r.population, &r.sector_shares)?).powi(2);
                sp += (ln_y[i] - pow.predict_log_per_capita(r.population)).powi(2);
            }
            Ok((sa, sp))
        })
        .collect();
    let per_fold = per_fold.into_iter().collect::<Result<Vec<_>>>()?;
    let (sa, sp) = per_fold
        .iter()
        .fold((0.0, 0.0), |acc, f| (acc.0 + f.0, acc.1 + f.1));
    Ok(AdditiveCvResult {
        include_size,
        additive_mse: sa / n as f64,
        power_mse: sp / n as f64,
        per_fold,
        n,
        folds,
        seed,
    })
}
