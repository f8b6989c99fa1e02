//! Surrogate-data discrimination: simulate from a fitted model with resampled
//! log-scale residuals, refit competitors, and compare.

use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nls::NlsSettings;
use crate::rng::{self, Rng};
use crate::scaling::{self, ModelKind, ScalingFit};
use crate::stats;

fn simulate_with(fit: &ScalingFit, d: &Dataset, g: &mut Rng) -> Result<Dataset> {
    if fit.n != d.len() {
        return Err(Error::InvalidArgument(format!(
            "fit has {} observations but dataset has {}",
            fit.n,
            d.len()
        )));
    }
    // Residuals of ln Y and ln y coincide, so the aggregate fit works too.
    let fitted = fit.fitted_log_per_capita(&d.log_population());
    let res = &fit.residuals_log;
    let per_capita: Vec<f64> = fitted
        .iter()
        .map(|f| (f + res[g.random_range(0..res.len())]).exp())
        .collect();
    d.with_per_capita(&per_capita)
}

/// One surrogate dataset: `y~_i = exp(fitted ln y_i + e*_i)` with the `e*_i`
/// drawn i.i.d. from the fit's residuals. Ids and populations are kept.
pub fn simulate_surrogate(fit: &ScalingFit, d: &Dataset, seed: u64) -> Result<Dataset> {
    simulate_with(fit, d, &mut rng::stream(seed, 0))
}

fn replicate_settings(nls: &NlsSettings, seed: u64, r: usize) -> NlsSettings {
    NlsSettings {
        seed: rng::derive_seed(seed, r as u64),
        ..*nls
    }
}

/// R² on `ln Y` of a per-capita or aggregate fit to `d`.
fn aggregate_r2(fit: &ScalingFit, d: &Dataset) -> f64 {
    let ln_n = d.log_population();
    let observed = d.log_aggregate();
    let fitted = fit.fitted_log_per_capita(&ln_n);
    let m = stats::mean(&observed);
    let ss_tot: f64 = observed.iter().map(|v| (v - m).powi(2)).sum();
    let ss_res: f64 = observed
        .iter()
        .zip(fitted.iter().zip(&ln_n))
        .map(|(o, (f, l))| (o - f - l).powi(2))
        .sum();
    1.0 - ss_res / ss_tot
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurrogateSummary {
    pub generator_model: ModelKind,
    pub refit_model: ModelKind,
    /// Successful replicates; equals the number of stored estimates.
    pub replicates: usize,
    pub requested: usize,
    pub failures: usize,
    /// Aggregate exponent per replicate; empty when the refit model has none.
    pub exponents: Vec<f64>,
    /// R² on `ln Y` per replicate.
    pub r_squared: Vec<f64>,
    pub exponent_median: Option<f64>,
    pub exponent_q025: Option<f64>,
    pub exponent_q975: Option<f64>,
    pub r2_median: f64,
    pub seed: u64,
}

/// Simulates `replicates` surrogates from the `generator` fit to `d` and
/// refits `refit` to each.
///
/// Refits start from the real-data optimum in addition to the usual
/// initializations. Failed refits are counted and left out.
pub fn surrogate_refit_distribution(
    generator: ModelKind,
    refit: ModelKind,
    d: &Dataset,
    replicates: usize,
    seed: u64,
    nls: &NlsSettings,
) -> Result<SurrogateSummary> {
    if replicates == 0 {
        return Err(Error::InvalidArgument("need at least one replicate".into()));
    }
    let gen_fit = scaling::fit_model(d, generator, nls).map_err(|e| e.in_model(generator))?;
    let warm = scaling::fit_model(d, refit, nls).map_err(|e| e.in_model(refit))?;

    let outcomes: Vec<Option<(Option<f64>, f64)>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let sur = simulate_with(&gen_fit, d, &mut rng::stream(seed, r as u64)).ok()?;
            let s = replicate_settings(nls, seed, r);
            let fit = scaling::fit_model_from(&sur, refit, &s, Some(&warm)).ok()?;
            Some((fit.aggregate_exponent(), aggregate_r2(&fit, &sur)))
        })
        .collect();

    let mut exponents = Vec::new();
    let mut r_squared = Vec::new();
    let mut failures = 0;
    for o in outcomes {
        match o {
            Some((e, r2)) => {
                exponents.extend(e);
                r_squared.push(r2);
            }
            None => failures += 1,
        }
    }
    if r_squared.is_empty() {
        return Err(Error::Fit("every surrogate refit failed".into()));
    }
    let se = stats::sorted(&exponents);
    let q = |p: f64| (!se.is_empty()).then(|| stats::quantile_sorted(&se, p));
    Ok(SurrogateSummary {
        generator_model: generator,
        refit_model: refit,
        replicates: r_squared.len(),
        requested: replicates,
        failures,
        exponent_median: q(0.5),
        exponent_q025: q(0.025),
        exponent_q975: q(0.975),
        r2_median: stats::median(&r_squared),
        exponents,
        r_squared,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapTestResult {
    /// `RMS(power) - RMS(logistic)` on `ln y` for the real data.
    pub observed_gap: f64,
    /// The same gap on power-law surrogates, both models refit.
    pub null_gaps: Vec<f64>,
    pub failures: usize,
    /// Fraction of `null_gaps` at or above `observed_gap`.
    pub p_value: f64,
    pub seed: u64,
}

/// `#{null >= observed} / len(null)`.
pub fn gap_p_value(observed: f64, null: &[f64]) -> Result<f64> {
    if null.is_empty() {
        return Err(Error::InvalidArgument("empty null distribution".into()));
    }
    let count = null.iter().filter(|&&g| g >= observed).count();
    Ok(count as f64 / null.len() as f64)
}

/// Is the logistic's RMS advantage over the power law larger than the power
/// law's own surrogates produce by chance?
pub fn rms_gap_test(
    d: &Dataset,
    replicates: usize,
    seed: u64,
    nls: &NlsSettings,
) -> Result<GapTestResult> {
    if replicates == 0 {
        return Err(Error::InvalidArgument("need at least one replicate".into()));
    }
    let power = scaling::fit_power_per_capita(d).map_err(|e| e.in_model(ModelKind::PowerPerCapita))?;
    let logistic = scaling::fit_logistic(d, nls).map_err(|e| e.in_model(ModelKind::Logistic))?;
    let observed_gap = power.rms_log() - logistic.rms_log();

    let outcomes: Vec<Option<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let sur = simulate_with(&power, d, &mut rng::stream(seed, r as u64)).ok()?;
            let s = replicate_settings(nls, seed, r);
            let p = scaling::fit_power_per_capita(&sur).ok()?;
            let l = scaling::fit_logistic_from(&sur, &s, Some(&logistic)).ok()?;
            Some(p.rms_log() - l.rms_log())
        })
        .collect();
    let failures = outcomes.iter().filter(|o| o.is_none()).count();
    let null_gaps: Vec<f64> = outcomes.into_iter().flatten().collect();
    if null_gaps.is_empty() {
        return Err(Error::Fit("every surrogate refit failed".into()));
    }
    Ok(GapTestResult {
        p_value: gap_p_value(observed_gap, &null_gaps)?,
        observed_gap,
        null_gaps,
        failures,
        seed,
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
            .map(|(i, (&n, &y))| CityRecord::new(format!("s{i}"), "", n, n * y, vec![]).unwrap())
            .collect();
        Dataset::new("t", 1.0, vec![], recs).unwrap()
    }

    #[test]
    fn zero_residual_surrogate_is_the_curve() {
        let pops = [1e3, 1e4, 1e5, 1e6];
        let pc: Vec<f64> = pops.iter().map(|n: &f64| 2.0 * n.powf(0.1)).collect();
        let d = dataset(&pops, &pc);
        let fit = scaling::fit_power_per_capita(&d).unwrap();
        let s = simulate_surrogate(&fit, &d, 9).unwrap();
        for (a, b) in s.records().iter().zip(d.records()) {
            assert_eq!(a.population, b.population);
            assert_eq!(a.id, b.id);
            assert!((a.per_capita_output / b.per_capita_output - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn p_value_edges() {
        assert_eq!(gap_p_value(f64::NEG_INFINITY, &[0.1, -0.2, 0.3]).unwrap(), 1.0);
        assert_eq!(gap_p_value(0.5, &[0.5, 0.5]).unwrap(), 1.0);
        assert_eq!(gap_p_value(1.0, &[0.5, 2.0, 0.0, 3.0]).unwrap(), 0.5);
    }

    #[test]
    fn three_replicates_median_is_middle() {
        let pops = [1e3, 3e3, 1e4, 3e4, 1e5, 3e5];
        let pc = [1.0, 1.3, 1.1, 1.6, 1.2, 1.7];
        let d = dataset(&pops, &pc);
        let s = surrogate_refit_distribution(
            ModelKind::PowerPerCapita,
            ModelKind::PowerAggregate,
            &d,
            3,
            4,
            &NlsSettings::default(),
        )
        .unwrap();
        assert_eq!(s.exponents.len(), 3);
        let sorted = stats::sorted(&s.exponents);
        assert_eq!(s.exponent_median, Some(sorted[1]));
    }
}
