//! Model comparison: in-sample and cross-validated error, bootstrap
//! intervals for the exponent, and the aggregation-artifact diagnostics.

use std::collections::BTreeMap;

use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nls::NlsSettings;
use crate::rng;
use crate::scaling::{self, ModelKind, ScalingFit};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelMetrics {
    /// In-sample RMS error of `ln y`.
    pub rms_log: f64,
    pub r_squared_log: f64,
    /// In-sample RMS error of `y` in dollars, predicting `exp(fitted ln y)`.
    pub rms_dollars: f64,
    /// `100 * (exp(rms_log) - 1)`, the typical percentage miss.
    pub pct_margin: f64,
    /// Cross-validated RMS error of `ln y`.
    pub cv_rms: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineMetrics {
    pub rms_log: f64,
    /// RMS error of predicting the mean of `y` for every city.
    pub rms_dollars: f64,
    pub cv_rms: f64,
}

/// Paired bootstrap comparison of per-city CV squared errors against the
/// power law.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvDifferenceTest {
    pub model: ModelKind,
    /// Mean of `e_power^2 - e_model^2` over cities; positive favours `model`.
    pub mean_difference: f64,
    /// One-sided bootstrap p-value for "model is no better than the power law".
    pub p_value: f64,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub schema_version: u32,
    pub label: String,
    pub per_model: BTreeMap<ModelKind, ModelMetrics>,
    pub constant_baseline: BaselineMetrics,
    pub n: usize,
    pub folds: usize,
    pub seed: u64,
    pub cv_difference_tests: Vec<CvDifferenceTest>,
}

/// Replicates used for the paired CV-difference bootstrap.
pub const CV_DIFFERENCE_REPLICATES: usize = 1000;

fn r_squared(residuals: &[f64], observed: &[f64]) -> f64 {
    let var = stats::variance_mle(observed);
    if var == 0.0 {
        // Nothing to explain; no model beats the constant.
        return 0.0;
    }
    let rms = stats::rms(residuals);
    1.0 - rms * rms / var
}

/// Cross-validated squared errors of `ln y`, one per record in dataset order.
pub fn cv_squared_errors(
    d: &Dataset,
    kind: ModelKind,
    folds: usize,
    seed: u64,
    nls: &NlsSettings,
) -> Result<Vec<f64>> {
    let assignment = rng::fold_assignment(&d.ids(), folds, seed);
    let ln_y = d.log_per_capita();
    let per_fold: Vec<Result<Vec<(usize, f64)>>> = (0..folds)
        .into_par_iter()
        .map(|k| {
            let train: Vec<usize> = (0..d.len()).filter(|&i| assignment[i] != k).collect();
            let test: Vec<usize> = (0..d.len()).filter(|&i| assignment[i] == k).collect();
            let fit = scaling::fit_model(&d.select(&train), kind, nls)
                .map_err(|e| e.in_model(kind))?;
            Ok(test
                .into_iter()
                .map(|i| {
                    let pred = fit.predict_log_per_capita(d.records()[i].population);
                    (i, (ln_y[i] - pred).powi(2))
                })
                .collect())
        })
        .collect();
    let mut out = vec![f64::NAN; d.len()];
    for fold in per_fold {
        for (i, e) in fold? {
            out[i] = e;
        }
    }
    Ok(out)
}

fn paired_difference_p_value(diffs: &[f64], replicates: usize, seed: u64) -> f64 {
    let n = diffs.len();
    let at_or_below = (0..replicates)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::stream(seed, b as u64);
            let m = (0..n).map(|_| diffs[r.random_range(0..n)]).sum::<f64>() / n as f64;
            usize::from(m <= 0.0)
        })
        .sum::<usize>();
    (1 + at_or_below) as f64 / (replicates + 1) as f64
}

/// Compares per-capita scaling models on `d`.
///
/// In-sample error uses the fit to all of `d`; CV error refits every model on
/// each training fold, with folds keyed by record id.
pub fn compare_models(
    d: &Dataset,
    models: &[ModelKind],
    folds: usize,
    seed: u64,
    nls: &NlsSettings,
) -> Result<ComparisonReport> {
    if folds < 2 || folds > d.len() {
        return Err(Error::InvalidArgument(format!(
            "folds must lie in [2, n], got {folds}"
        )));
    }
    let ln_n = d.log_population();
    let ln_y = d.log_per_capita();
    let y = d.per_capita();

    let fits: Vec<Result<(ModelKind, ScalingFit, Vec<f64>)>> = models
        .par_iter()
        .map(|&kind| {
            let fit = scaling::fit_model(d, kind, nls).map_err(|e| e.in_model(kind))?;
            let cv = cv_squared_errors(d, kind, folds, seed, nls)?;
            Ok((kind, fit, cv))
        })
        .collect();

    let mut per_model = BTreeMap::new();
    let mut cv_errors = BTreeMap::new();
    for item in fits {
        let (kind, fit, cv) = item?;
        let fitted = fit.fitted_log_per_capita(&ln_n);
        let resid: Vec<f64> = ln_y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
        let rms_log = stats::rms(&resid);
        let dollars: Vec<f64> = y.iter().zip(&fitted).map(|(a, f)| a - f.exp()).collect();
        per_model.insert(
            kind,
            ModelMetrics {
                rms_log,
                r_squared_log: r_squared(&resid, &ln_y),
                rms_dollars: stats::rms(&dollars),
                pct_margin: 100.0 * (rms_log.exp() - 1.0),
                cv_rms: stats::mean(&cv).sqrt(),
                converged: fit.converged,
            },
        );
        cv_errors.insert(kind, cv);
    }

    let baseline_cv = cv_squared_errors(d, ModelKind::Constant, folds, seed, nls)?;
    let constant_baseline = BaselineMetrics {
        rms_log: stats::variance_mle(&ln_y).sqrt(),
        rms_dollars: stats::variance_mle(&y).sqrt(),
        cv_rms: stats::mean(&baseline_cv).sqrt(),
    };

    let mut cv_difference_tests = Vec::new();
    if let Some(power) = cv_errors.get(&ModelKind::PowerPerCapita) {
        for (&kind, errs) in &cv_errors {
            if kind == ModelKind::PowerPerCapita {
                continue;
            }
            let diffs: Vec<f64> = power.iter().zip(errs).map(|(p, m)| p - m).collect();
            cv_difference_tests.push(CvDifferenceTest {
                model: kind,
                mean_difference: stats::mean(&diffs),
                p_value: paired_difference_p_value(
                    &diffs,
                    CV_DIFFERENCE_REPLICATES,
                    rng::derive_seed(seed, kind as u64 + 1),
                ),
                replicates: CV_DIFFERENCE_REPLICATES,
            });
        }
    }

    Ok(ComparisonReport {
        schema_version: crate::SCHEMA_VERSION,
        label: d.label.clone(),
        per_model,
        constant_baseline,
        n: d.len(),
        folds,
        seed,
        cv_difference_tests,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapResult {
    /// Requested replicate count B.
    pub replicates: usize,
    /// Exponent estimates of the successful replicates, in replicate order.
    pub estimates: Vec<f64>,
    /// Replicates whose resample had no spread in population.
    pub skipped: Vec<usize>,
    pub point_estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub seed: u64,
}

/// Case-resampling bootstrap of the aggregate power-law exponent with a 95%
/// percentile interval.
pub fn bootstrap_exponent(d: &Dataset, replicates: usize, seed: u64) -> Result<BootstrapResult> {
    if replicates == 0 {
        return Err(Error::InvalidArgument("need at least one replicate".into()));
    }
    let point = scaling::fit_power_aggregate(d)?
        .aggregate_exponent()
        .expect("power fit has an exponent");
    let x = d.log_population();
    let y = d.log_aggregate();
    let n = x.len();
    let draws: Vec<Option<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut g = rng::stream(seed, r as u64);
            let idx: Vec<usize> = (0..n).map(|_| g.random_range(0..n)).collect();
            let xs: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
            let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            stats::ols_line(&xs, &ys).ok().map(|l| l.slope)
        })
        .collect();
    let mut estimates = Vec::with_capacity(replicates);
    let mut skipped = Vec::new();
    for (r, e) in draws.into_iter().enumerate() {
        match e {
            Some(b) => estimates.push(b),
            None => skipped.push(r),
        }
    }
    if estimates.is_empty() {
        return Err(Error::Degenerate("every bootstrap resample was degenerate".into()));
    }
    let sorted = stats::sorted(&estimates);
    Ok(BootstrapResult {
        replicates,
        ci_low: stats::percentile_order_stat(&sorted, 0.025),
        ci_high: stats::percentile_order_stat(&sorted, 0.975),
        estimates,
        skipped,
        point_estimate: point,
        seed,
    })
}

/// `Var[ln N] / (Var[ln N] + Var[ln y])`: the R² a slope-one regression of
/// `ln Y` on `ln N` would have if `y` were independent of `N`.
pub fn independence_r2_bound(d: &Dataset) -> Result<f64> {
    if d.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 records".into()));
    }
    let vn = stats::variance(&d.log_population());
    let vy = stats::variance(&d.log_per_capita());
    if vn + vy == 0.0 {
        return Err(Error::Undefined("zero total variance".into()));
    }
    Ok(vn / (vn + vy))
}

/// R² of `ln Y` against the line `ln Y = a + ln N` with `a` fit by least
/// squares, computed directly from residuals.
pub fn slope_one_r2(d: &Dataset) -> Result<f64> {
    let ln_n = d.log_population();
    let ln_agg = d.log_aggregate();
    let offset: Vec<f64> = ln_agg.iter().zip(&ln_n).map(|(a, b)| a - b).collect();
    let a = stats::mean(&offset);
    let m = stats::mean(&ln_agg);
    let ss_tot: f64 = ln_agg.iter().map(|v| (v - m).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Undefined("zero variance in ln Y".into()));
    }
    let ss_res: f64 = offset.iter().map(|v| (v - a).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateExtrapolation {
    pub model: ModelKind,
    /// `ln N_i + fitted ln y(N_i)`.
    pub fitted_log_aggregate: Vec<f64>,
    pub r_squared_log: f64,
}

/// Carries a per-capita fit back to city totals, `Y_hat = N * y_hat(N)`, and
/// scores it on `ln Y`.
pub fn extrapolate_to_aggregate(fit: &ScalingFit, d: &Dataset) -> Result<AggregateExtrapolation> {
    if !fit.model_kind.is_per_capita() {
        return Err(Error::InvalidArgument(
            "extrapolation needs a per-capita fit".into(),
        ));
    }
    let fitted: Vec<f64> = d
        .records()
        .iter()
        .map(|r| r.population.ln() + fit.predict_log_per_capita(r.population))
        .collect();
    let observed = d.log_aggregate();
    let m = stats::mean(&observed);
    let ss_tot: f64 = observed.iter().map(|v| (v - m).powi(2)).sum();
    let ss_res: f64 = observed
        .iter()
        .zip(&fitted)
        .map(|(o, f)| (o - f).powi(2))
        .sum();
    Ok(AggregateExtrapolation {
        model: fit.model_kind,
        fitted_log_aggregate: fitted,
        r_squared_log: 1.0 - ss_res / ss_tot,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::CityRecord;

    fn dataset(pops: &[f64], pc: &[f64]) -> Dataset {
        let recs = pops
            .iter()
            .zip(pc)
            .enumerate()
            .map(|(i, (&n, &y))| CityRecord::new(format!("m{i}"), "", n, n * y, vec![]).unwrap())
            .collect();
        Dataset::new("t", 1.0, vec![], recs).unwrap()
    }

    #[test]
    fn bound_is_one_for_constant_per_capita() {
        let d = dataset(&[10.0, 200.0, 3000.0, 5e4], &[3.0; 4]);
        assert_eq!(independence_r2_bound(&d).unwrap(), 1.0);
    }

    #[test]
    fn zero_variance_bound_undefined() {
        let d = dataset(&[10.0, 10.0], &[3.0, 3.0]);
        assert!(matches!(independence_r2_bound(&d), Err(Error::Undefined(_))));
    }

    #[test]
    fn extrapolation_adds_log_population() {
        let d = dataset(&[10.0, 100.0, 1000.0], &[2.0, 3.0, 5.0]);
        let fit = scaling::fit_power_per_capita(&d).unwrap();
        let ex = extrapolate_to_aggregate(&fit, &d).unwrap();
        for (i, r) in d.records().iter().enumerate() {
            let want = r.population.ln() + fit.fitted_log[i];
            assert!((ex.fitted_log_aggregate[i] - want).abs() < 1e-12);
        }
        let agg = scaling::fit_power_aggregate(&d).unwrap();
        assert!(extrapolate_to_aggregate(&agg, &d).is_err());
    }

    #[test]
    fn constant_fit_extrapolates_to_slope_one() {
        let d = dataset(
            &[12.0, 90.0, 400.0, 2500.0, 7e4],
            &[3.0, 2.0, 6.0, 4.5, 2.5],
        );
        let c = scaling::fit_constant(&d).unwrap();
        let ex = extrapolate_to_aggregate(&c, &d).unwrap();
        assert!((ex.r_squared_log - slope_one_r2(&d).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_small_counts() {
        let d = dataset(&[10.0, 100.0, 1000.0], &[1.0, 2.0, 2.5]);
        let b = bootstrap_exponent(&d, 5, 1).unwrap();
        assert_eq!(b.estimates.len() + b.skipped.len(), 5);
        let s = stats::sorted(&b.estimates);
        assert_eq!(b.ci_low, s[0]);
        assert_eq!(b.ci_high, s[s.len() - 1]);
    }
}
