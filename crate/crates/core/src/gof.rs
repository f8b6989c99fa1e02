//! Residual distributions: Gaussian and Laplace maximum-likelihood fits, a
//! kernel density estimate, data-driven Neyman smooth tests, and rank
//! agreement with per-capita output.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::rng;
use crate::stats;

pub const KDE_GRID_POINTS: usize = 512;
/// Largest Legendre component considered by the smooth test.
pub const MAX_SMOOTH_DIMENSION: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    Laplace,
}

impl Family {
    /// Maximum-likelihood `(location, scale)`.
    pub fn fit(self, x: &[f64]) -> (f64, f64) {
        match self {
            Family::Gaussian => (stats::mean(x), stats::variance_mle(x).sqrt()),
            Family::Laplace => {
                let m = stats::median(x);
                (m, x.iter().map(|v| (v - m).abs()).sum::<f64>() / x.len() as f64)
            }
        }
    }

    pub fn cdf(self, x: f64, location: f64, scale: f64) -> f64 {
        let z = (x - location) / scale;
        match self {
            Family::Gaussian => Normal::standard().cdf(z),
            Family::Laplace => {
                if z < 0.0 {
                    0.5 * z.exp()
                } else {
                    1.0 - 0.5 * (-z).exp()
                }
            }
        }
    }

    fn sample(self, g: &mut rng::Rng, location: f64, scale: f64) -> f64 {
        let z = match self {
            Family::Gaussian => g.sample::<f64, _>(StandardNormal),
            Family::Laplace => {
                let u: f64 = g.random::<f64>() - 0.5;
                -u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
        };
        location + scale * z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaussianFit {
    pub mean: f64,
    /// Divide-by-n standard deviation.
    pub sd: f64,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LaplaceFit {
    /// Sample median.
    pub location: f64,
    /// Mean absolute deviation about the median.
    pub scale: f64,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Kde {
    pub bandwidth: f64,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothTestResult {
    pub family: Family,
    pub statistic: f64,
    /// Number of Legendre components chosen by the Schwarz-type rule.
    pub dimension: usize,
    pub p_value: f64,
    pub replicates: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GofReport {
    pub schema_version: u32,
    /// Model and dataset the residuals came from.
    pub residual_source: String,
    pub n: usize,
    pub gaussian: GaussianFit,
    pub laplace: LaplaceFit,
    pub kde: Kde,
    pub smooth_tests: Vec<SmoothTestResult>,
    pub spearman_vs_per_capita: Option<f64>,
    pub seed: Option<u64>,
}

fn check_sample(x: &[f64], min_n: usize) -> Result<()> {
    if x.len() < min_n {
        return Err(Error::InvalidArgument(format!(
            "need at least {min_n} residuals, got {}",
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("residuals must be finite".into()));
    }
    if stats::variance_mle(x) == 0.0 {
        return Err(Error::Degenerate("residuals have zero variance".into()));
    }
    Ok(())
}

/// Gaussian kernel density with Silverman's rule-of-thumb bandwidth,
/// `0.9 min(sd, IQR / 1.34) n^(-1/5)`, on a grid spanning the data +-3
/// bandwidths.
pub fn kde(x: &[f64]) -> Result<Kde> {
    check_sample(x, 2)?;
    let s = stats::sorted(x);
    let n = s.len() as f64;
    let sd = stats::variance(x).sqrt();
    let iqr = stats::quantile_sorted(&s, 0.75) - stats::quantile_sorted(&s, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * n.powf(-0.2);
    let (lo, hi) = (s[0] - 3.0 * h, s[s.len() - 1] + 3.0 * h);
    let step = (hi - lo) / (KDE_GRID_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..KDE_GRID_POINTS)
        .map(|i| if i == KDE_GRID_POINTS - 1 { hi } else { lo + step * i as f64 })
        .collect();
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    let density = grid
        .iter()
        .map(|g| norm * s.iter().map(|v| (-0.5 * ((g - v) / h).powi(2)).exp()).sum::<f64>())
        .collect();
    Ok(Kde {
        bandwidth: h,
        grid,
        density,
    })
}

/// Distribution fits and density estimate, without tests.
pub fn fit_residual_distributions(residuals: &[f64]) -> Result<GofReport> {
    check_sample(residuals, 8)?;
    let (mean, sd) = Family::Gaussian.fit(residuals);
    let (location, scale) = Family::Laplace.fit(residuals);
    Ok(GofReport {
        schema_version: crate::SCHEMA_VERSION,
        residual_source: String::new(),
        n: residuals.len(),
        gaussian: GaussianFit {
            mean,
            sd,
            p_value: None,
        },
        laplace: LaplaceFit {
            location,
            scale,
            p_value: None,
        },
        kde: kde(residuals)?,
        smooth_tests: Vec::new(),
        spearman_vs_per_capita: None,
        seed: None,
    })
}

/// Orthonormal Legendre polynomials on `[0, 1]`, orders `1..=m`, at `u`.
fn legendre_row(u: f64, m: usize, out: &mut [f64]) {
    let t = 2.0 * u - 1.0;
    let (mut p0, mut p1) = (1.0, t);
    for j in 1..=m {
        out[j - 1] = ((2 * j + 1) as f64).sqrt() * p1;
        let p2 = ((2 * j + 1) as f64 * t * p1 - j as f64 * p0) / (j + 1) as f64;
        p0 = p1;
        p1 = p2;
    }
}

/// `(statistic, dimension)` for a sample of probability-integral transforms.
///
/// The statistic is `n sum_{j <= J} (mean of phi_j(u))^2`, with `J` maximizing
/// the statistic minus `J ln n`.
pub fn neyman_statistic(u: &[f64]) -> (f64, usize) {
    let n = u.len() as f64;
    let mut sums = [0.0; MAX_SMOOTH_DIMENSION];
    let mut row = [0.0; MAX_SMOOTH_DIMENSION];
    for &ui in u {
        legendre_row(ui, MAX_SMOOTH_DIMENSION, &mut row);
        for (s, r) in sums.iter_mut().zip(&row) {
            *s += r;
        }
    }
    let mut cum = 0.0;
    let mut best = (f64::NEG_INFINITY, 0.0, 0);
    for (j, s) in sums.iter().enumerate() {
        cum += s * s / n;
        let penalized = cum - (j + 1) as f64 * n.ln();
        if penalized > best.0 {
            best = (penalized, cum, j + 1);
        }
    }
    (best.1, best.2)
}

/// Smooth-test statistic of `x` against `family` with MLE parameters.
pub fn smooth_statistic(x: &[f64], family: Family) -> (f64, usize) {
    let (loc, scale) = family.fit(x);
    let u: Vec<f64> = x.iter().map(|&v| family.cdf(v, loc, scale)).collect();
    neyman_statistic(&u)
}

/// Data-driven smooth test with a parametric-bootstrap p-value,
/// `(1 + #{T* >= T}) / (M + 1)`.
pub fn smooth_test(
    residuals: &[f64],
    family: Family,
    replicates: usize,
    seed: u64,
) -> Result<SmoothTestResult> {
    check_sample(residuals, 20)?;
    if replicates == 0 {
        return Err(Error::InvalidArgument("need at least one replicate".into()));
    }
    let (statistic, dimension) = smooth_statistic(residuals, family);
    let (loc, scale) = family.fit(residuals);
    let n = residuals.len();
    let exceed: usize = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut g = rng::stream(seed, r as u64);
            let sim: Vec<f64> = (0..n).map(|_| family.sample(&mut g, loc, scale)).collect();
            usize::from(smooth_statistic(&sim, family).0 >= statistic)
        })
        .sum();
    Ok(SmoothTestResult {
        family,
        statistic,
        dimension,
        p_value: (1 + exceed) as f64 / (replicates + 1) as f64,
        replicates,
        seed,
    })
}

/// Spearman correlation via midranks.
pub fn rank_comparison(residuals: &[f64], per_capita: &[f64]) -> Result<f64> {
    if residuals.len() != per_capita.len() {
        return Err(Error::InvalidArgument("vectors differ in length".into()));
    }
    stats::pearson(&stats::midranks(residuals), &stats::midranks(per_capita))
}

/// The full report: fits, density, both smooth tests and the rank comparison.
pub fn residual_report(
    residuals: &[f64],
    per_capita: &[f64],
    source: &str,
    replicates: usize,
    seed: u64,
) -> Result<GofReport> {
    let mut rep = fit_residual_distributions(residuals)?;
    let g = smooth_test(residuals, Family::Gaussian, replicates, rng::derive_seed(seed, 1))?;
    let l = smooth_test(residuals, Family::Laplace, replicates, rng::derive_seed(seed, 2))?;
    rep.gaussian.p_value = Some(g.p_value);
    rep.laplace.p_value = Some(l.p_value);
    rep.smooth_tests = vec![g, l];
    rep.spearman_vs_per_capita = Some(rank_comparison(residuals, per_capita)?);
    rep.residual_source = source.to_string();
    rep.seed = Some(seed);
    Ok(rep)
}
