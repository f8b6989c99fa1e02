//! Parametric and nonparametric scaling relations between population and
//! output.
//!
//! All fits report fitted values and residuals on the log scale of their
//! response: `ln Y` for the aggregate power law, `ln y` for everything else.

use std::fmt;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, SpeedRecord};
use crate::error::{Error, Result};
use crate::nls::{self, NlsSettings};
use crate::rng;
use crate::spline::{LambdaGrid, SplineBasis, SplineFit};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// `ln Y = ln c + b ln N`.
    PowerAggregate,
    /// `ln y = ln c + (b - 1) ln N`.
    PowerPerCapita,
    /// `y = r ln(N / k)`.
    Logarithmic,
    /// `ln y = d1 + d2 * sigmoid((N - d3) / d4)`.
    Logistic,
    /// `ln y = s(ln N)` with `s` a smoothing spline.
    Spline,
    /// `ln y = mean(ln y)`, the size-free baseline.
    Constant,
}

impl ModelKind {
    /// The four per-capita scaling forms in reporting order.
    pub const PER_CAPITA: [ModelKind; 4] = [
        ModelKind::PowerPerCapita,
        ModelKind::Logarithmic,
        ModelKind::Logistic,
        ModelKind::Spline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::PowerAggregate => "power_aggregate",
            ModelKind::PowerPerCapita => "power",
            ModelKind::Logarithmic => "logarithmic",
            ModelKind::Logistic => "logistic",
            ModelKind::Spline => "spline",
            ModelKind::Constant => "constant",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "power_aggregate" | "aggregate" => ModelKind::PowerAggregate,
            "power" | "power_per_capita" => ModelKind::PowerPerCapita,
            "log" | "logarithmic" => ModelKind::Logarithmic,
            "logistic" => ModelKind::Logistic,
            "spline" => ModelKind::Spline,
            "constant" => ModelKind::Constant,
            other => {
                return Err(Error::InvalidArgument(format!("unknown model {other:?}")));
            }
        })
    }

    pub fn is_per_capita(self) -> bool {
        self != ModelKind::PowerAggregate
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    Ols,
    Nls,
    PenalizedSpline,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Param {
    pub name: &'static str,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingFit {
    pub model_kind: ModelKind,
    pub method: FitMethod,
    pub params: Vec<Param>,
    pub fitted_log: Vec<f64>,
    pub residuals_log: Vec<f64>,
    pub n: usize,
    pub converged: bool,
    pub iterations: usize,
    #[serde(skip)]
    pub spline: Option<SplineFit>,
    /// Whether the spline was fit to `(N, y)` rather than `(ln N, ln y)`.
    #[serde(skip)]
    pub raw_scale_spline: bool,
}

impl ScalingFit {
    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|p| p.name == name).map(|p| p.value)
    }

    pub fn rms_log(&self) -> f64 {
        stats::rms(&self.residuals_log)
    }

    /// Exponent of the aggregate relation `Y ~ N^b` for the power-law fits.
    pub fn aggregate_exponent(&self) -> Option<f64> {
        match self.model_kind {
            ModelKind::PowerAggregate => self.param("b"),
            ModelKind::PowerPerCapita => self.param("exponent").map(|e| e + 1.0),
            _ => None,
        }
    }

    /// Predicted log of the fit's own response at `population`.
    pub fn predict_log(&self, population: f64) -> f64 {
        let ln_n = population.ln();
        match self.model_kind {
            ModelKind::PowerAggregate => self.param("ln_c").unwrap() + self.param("b").unwrap() * ln_n,
            _ => self.predict_log_per_capita(population),
        }
    }

    /// Predicted `ln y` at `population`, for every kind.
    pub fn predict_log_per_capita(&self, population: f64) -> f64 {
        let ln_n = population.ln();
        let p = |name: &str| self.param(name).expect("parameter present for kind");
        match self.model_kind {
            ModelKind::PowerAggregate => p("ln_c") + (p("b") - 1.0) * ln_n,
            ModelKind::PowerPerCapita => p("ln_c") + p("exponent") * ln_n,
            ModelKind::Logarithmic => {
                let inner = p("r") * (ln_n - p("k").ln());
                inner.max(f64::MIN_POSITIVE).ln()
            }
            ModelKind::Logistic => p("d1") + p("d2") * sigmoid((population - p("d3")) / p("d4")),
            ModelKind::Spline => {
                let s = self.spline.as_ref().expect("spline fit retained");
                if self.raw_scale_spline {
                    s.evaluate(population).max(f64::MIN_POSITIVE).ln()
                } else {
                    s.evaluate(ln_n)
                }
            }
            ModelKind::Constant => p("mean_log"),
        }
    }

    /// Fitted `ln y` at the fit's own data, whatever its response scale.
    pub fn fitted_log_per_capita(&self, log_population: &[f64]) -> Vec<f64> {
        match self.model_kind {
            ModelKind::PowerAggregate => self
                .fitted_log
                .iter()
                .zip(log_population)
                .map(|(f, l)| f - l)
                .collect(),
            _ => self.fitted_log.clone(),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn build(
    kind: ModelKind,
    method: FitMethod,
    params: Vec<Param>,
    observed_log: &[f64],
    fitted_log: Vec<f64>,
    converged: bool,
    iterations: usize,
) -> ScalingFit {
    let residuals_log = observed_log
        .iter()
        .zip(&fitted_log)
        .map(|(o, f)| o - f)
        .collect();
    ScalingFit {
        model_kind: kind,
        method,
        params,
        n: observed_log.len(),
        fitted_log,
        residuals_log,
        converged,
        iterations,
        spline: None,
        raw_scale_spline: false,
    }
}

fn check_nonempty(d: &Dataset) -> Result<()> {
    if d.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 records, got {}",
            d.len()
        )));
    }
    Ok(())
}

/// OLS of `ln Y` on `ln N`.
pub fn fit_power_aggregate(d: &Dataset) -> Result<ScalingFit> {
    check_nonempty(d)?;
    let x = d.log_population();
    let y = d.log_aggregate();
    power_ols(&x, &y, ModelKind::PowerAggregate)
}

/// OLS of `ln y` on `ln N`; the stored exponent is `b - 1`.
pub fn fit_power_per_capita(d: &Dataset) -> Result<ScalingFit> {
    check_nonempty(d)?;
    let x = d.log_population();
    let y = d.log_per_capita();
    power_ols(&x, &y, ModelKind::PowerPerCapita)
}

fn power_ols(ln_n: &[f64], ln_resp: &[f64], kind: ModelKind) -> Result<ScalingFit> {
    let line = stats::ols_line(ln_n, ln_resp).map_err(|e| e.in_model(kind))?;
    let slope_name = if kind == ModelKind::PowerAggregate {
        "b"
    } else {
        "exponent"
    };
    let fitted = ln_n.iter().map(|&x| line.predict(x)).collect();
    Ok(build(
        kind,
        FitMethod::Ols,
        vec![
            Param { name: "ln_c", value: line.intercept },
            Param { name: slope_name, value: line.slope },
            Param { name: "exponent_se", value: line.slope_se },
        ],
        ln_resp,
        fitted,
        true,
        0,
    ))
}

/// The size-free baseline: every city predicted at the mean of `ln y`.
pub fn fit_constant(d: &Dataset) -> Result<ScalingFit> {
    check_nonempty(d)?;
    let y = d.log_per_capita();
    let m = stats::mean(&y);
    Ok(build(
        ModelKind::Constant,
        FitMethod::Ols,
        vec![Param { name: "mean_log", value: m }],
        &y,
        vec![m; y.len()],
        true,
        0,
    ))
}

fn log_model_residuals<'a>(
    ln_n: &'a [f64],
    ln_y: &'a [f64],
) -> impl Fn(&[f64], &mut [f64]) -> bool + Sync + 'a {
    // theta = (ln r, ln k)
    move |theta: &[f64], out: &mut [f64]| {
        for i in 0..ln_n.len() {
            let inner = ln_n[i] - theta[1];
            if !(inner > 0.0) {
                return false;
            }
            out[i] = ln_y[i] - theta[0] - inner.ln();
        }
        true
    }
}

fn log_profile_init(ln_n: &[f64], ln_y: &[f64], kappa: f64) -> Vec<f64> {
    let rho = ln_n
        .iter()
        .zip(ln_y)
        .map(|(x, y)| y - (x - kappa).ln())
        .sum::<f64>()
        / ln_n.len() as f64;
    vec![rho, kappa]
}

/// Nonlinear least squares for `ln y = ln r + ln(ln N - ln k)`.
///
/// `k` is parameterized on the log scale and any step with `N_min <= k` is
/// rejected.
pub fn fit_logarithmic(d: &Dataset, s: &NlsSettings) -> Result<ScalingFit> {
    fit_logarithmic_from(d, s, None)
}

/// [`fit_logarithmic`] with an extra initialization taken from `warm`.
pub fn fit_logarithmic_from(
    d: &Dataset,
    s: &NlsSettings,
    warm: Option<&ScalingFit>,
) -> Result<ScalingFit> {
    check_nonempty(d)?;
    s.validate()?;
    let ln_n = d.log_population();
    let ln_y = d.log_per_capita();
    logarithmic_nls(&ln_n, &ln_y, s, warm)
}

fn logarithmic_nls(
    ln_n: &[f64],
    ln_y: &[f64],
    s: &NlsSettings,
    warm: Option<&ScalingFit>,
) -> Result<ScalingFit> {
    let kind = ModelKind::Logarithmic;
    let min_ln_n = ln_n.iter().copied().fold(f64::INFINITY, f64::min);
    let mut inits: Vec<Vec<f64>> = Vec::new();
    if let Some(w) = warm {
        if let (Some(r), Some(k)) = (w.param("r"), w.param("k")) {
            if r > 0.0 && k > 0.0 && k.ln() < min_ln_n {
                inits.push(vec![r.ln(), k.ln()]);
            }
        }
    }
    for delta in [0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0] {
        inits.push(log_profile_init(ln_n, ln_y, min_ln_n - delta));
    }
    let mut rng = rng::stream(s.seed, 0x106);
    for _ in 0..s.restarts {
        let delta = (rng.random_range(0.1f64.ln()..30f64.ln())).exp();
        inits.push(log_profile_init(ln_n, ln_y, min_ln_n - delta));
    }
    let f = log_model_residuals(ln_n, ln_y);
    let (best, _) = nls::multistart(&f, ln_n.len(), &inits, s).map_err(|e| e.in_model(kind))?;
    let (rho, kappa) = (best.params[0], best.params[1]);
    let fitted = ln_n.iter().map(|x| rho + (x - kappa).ln()).collect();
    Ok(build(
        kind,
        FitMethod::Nls,
        vec![
            Param { name: "r", value: rho.exp() },
            Param { name: "k", value: kappa.exp() },
        ],
        ln_y,
        fitted,
        best.converged,
        best.iterations,
    ))
}

/// The linear-scale variant: OLS of `y` on `ln N`, i.e. `y = a + r ln N` with
/// `k = exp(-a / r)`. Residuals are still reported on `ln y`.
pub fn fit_logarithmic_linear_scale(d: &Dataset) -> Result<ScalingFit> {
    check_nonempty(d)?;
    logarithmic_ols(&d.log_population(), &d.per_capita())
}

fn logarithmic_ols(ln_n: &[f64], y: &[f64]) -> Result<ScalingFit> {
    let kind = ModelKind::Logarithmic;
    let line = stats::ols_line(ln_n, y).map_err(|e| e.in_model(kind))?;
    let fitted_lin: Vec<f64> = ln_n.iter().map(|&x| line.predict(x)).collect();
    if fitted_lin.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Fit("fitted values must be positive on the data".into()).in_model(kind));
    }
    if line.slope == 0.0 {
        return Err(Error::Fit("zero slope leaves k undefined".into()).in_model(kind));
    }
    let ln_y: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    Ok(build(
        kind,
        FitMethod::Ols,
        vec![
            Param { name: "r", value: line.slope },
            Param { name: "k", value: (-line.intercept / line.slope).exp() },
        ],
        &ln_y,
        fitted_lin.iter().map(|v| v.ln()).collect(),
        true,
        0,
    ))
}

fn logistic_residuals<'a>(
    n: &'a [f64],
    ln_y: &'a [f64],
    d4_floor: f64,
) -> impl Fn(&[f64], &mut [f64]) -> bool + Sync + 'a {
    move |t: &[f64], out: &mut [f64]| {
        if !(t[3].abs() > d4_floor) {
            return false;
        }
        for i in 0..n.len() {
            out[i] = ln_y[i] - t[0] - t[1] * sigmoid((n[i] - t[2]) / t[3]);
        }
        true
    }
}

/// Least-squares `(d1, d2)` for a fixed sigmoid location and scale.
fn logistic_profile(n: &[f64], ln_y: &[f64], d3: f64, d4: f64) -> Option<(f64, f64)> {
    let z: Vec<f64> = n.iter().map(|v| sigmoid((v - d3) / d4)).collect();
    stats::ols_line(&z, ln_y).ok().map(|l| (l.intercept, l.slope))
}

/// Nonlinear least squares for `ln y = d1 + d2 sigmoid((N - d3) / d4)`, with
/// `N` on the linear scale.
pub fn fit_logistic(d: &Dataset, s: &NlsSettings) -> Result<ScalingFit> {
    fit_logistic_from(d, s, None)
}

pub fn fit_logistic_from(
    d: &Dataset,
    s: &NlsSettings,
    warm: Option<&ScalingFit>,
) -> Result<ScalingFit> {
    check_nonempty(d)?;
    s.validate()?;
    logistic_nls(&d.populations(), &d.log_per_capita(), s, warm)
}

fn logistic_nls(
    n: &[f64],
    ln_y: &[f64],
    s: &NlsSettings,
    warm: Option<&ScalingFit>,
) -> Result<ScalingFit> {
    let kind = ModelKind::Logistic;
    let sorted_n = stats::sorted(n);
    let sorted_y = stats::sorted(ln_y);
    let iqr = stats::quantile_sorted(&sorted_n, 0.75) - stats::quantile_sorted(&sorted_n, 0.25);
    let spread = if iqr > 0.0 {
        iqr
    } else {
        (sorted_n[sorted_n.len() - 1] - sorted_n[0]).max(1.0)
    };
    let d4_floor = 1e-12 * sorted_n[sorted_n.len() - 1].abs().max(1.0);

    let mut inits: Vec<Vec<f64>> = Vec::new();
    if let Some(w) = warm {
        if let Some(p) = ["d1", "d2", "d3", "d4"]
            .iter()
            .map(|k| w.param(k))
            .collect::<Option<Vec<f64>>>()
        {
            inits.push(p);
        }
    }
    inits.push(vec![
        sorted_y[0],
        sorted_y[sorted_y.len() - 1] - sorted_y[0],
        stats::median(n),
        spread,
    ]);
    let mut rng = rng::stream(s.seed, 0x1061);
    for _ in 0..s.restarts {
        let d3 = stats::quantile_sorted(&sorted_n, rng.random_range(0.05..0.95));
        let d4 = spread * rng.random_range(-2.0f64..2.0).exp();
        let (d1, d2) = logistic_profile(n, ln_y, d3, d4).unwrap_or((sorted_y[0], 0.0));
        inits.push(vec![d1, d2, d3, d4]);
    }
    let f = logistic_residuals(n, ln_y, d4_floor);
    let (best, _) = nls::multistart(&f, n.len(), &inits, s).map_err(|e| e.in_model(kind))?;
    let t = &best.params;
    let fitted = n
        .iter()
        .map(|v| t[0] + t[1] * sigmoid((v - t[2]) / t[3]))
        .collect();
    Ok(build(
        kind,
        FitMethod::Nls,
        vec![
            Param { name: "d1", value: t[0] },
            Param { name: "d2", value: t[1] },
            Param { name: "d3", value: t[2] },
            Param { name: "d4", value: t[3] },
        ],
        ln_y,
        fitted,
        best.converged,
        best.iterations,
    ))
}

/// Smoothing spline of `ln y` on `ln N`, penalty chosen by leave-one-out CV.
pub fn fit_spline_scaling(d: &Dataset, grid: &LambdaGrid) -> Result<ScalingFit> {
    check_nonempty(d)?;
    let kind = ModelKind::Spline;
    let x = d.log_population();
    let y = d.log_per_capita();
    let sp = SplineBasis::new(&x, &vec![1.0; x.len()])
        .and_then(|b| b.fit(&y, grid))
        .map_err(|e| e.in_model(kind))?;
    let mut fit = build(
        kind,
        FitMethod::PenalizedSpline,
        vec![
            Param { name: "lambda", value: sp.lambda },
            Param { name: "edf", value: sp.edf },
        ],
        &y,
        sp.fitted.clone(),
        true,
        0,
    );
    fit.spline = Some(sp);
    Ok(fit)
}

/// Smoothing spline on the untransformed `(N, y)` scale; residuals still on `ln y`.
pub fn fit_spline_raw_scale(d: &Dataset, grid: &LambdaGrid) -> Result<ScalingFit> {
    check_nonempty(d)?;
    let kind = ModelKind::Spline;
    let x = d.populations();
    let y = d.per_capita();
    let sp = SplineBasis::new(&x, &vec![1.0; x.len()])
        .and_then(|b| b.fit(&y, grid))
        .map_err(|e| e.in_model(kind))?;
    if sp.fitted.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Fit("raw-scale spline fitted a non-positive value".into()).in_model(kind));
    }
    let mut fit = build(
        kind,
        FitMethod::PenalizedSpline,
        vec![
            Param { name: "lambda", value: sp.lambda },
            Param { name: "edf", value: sp.edf },
        ],
        &d.log_per_capita(),
        sp.fitted.iter().map(|v| v.ln()).collect(),
        true,
        0,
    );
    fit.spline = Some(sp);
    fit.raw_scale_spline = true;
    Ok(fit)
}

/// Fits one model by kind with default options.
pub fn fit_model(d: &Dataset, kind: ModelKind, s: &NlsSettings) -> Result<ScalingFit> {
    fit_model_from(d, kind, s, None)
}

pub fn fit_model_from(
    d: &Dataset,
    kind: ModelKind,
    s: &NlsSettings,
    warm: Option<&ScalingFit>,
) -> Result<ScalingFit> {
    match kind {
        ModelKind::PowerAggregate => fit_power_aggregate(d),
        ModelKind::PowerPerCapita => fit_power_per_capita(d),
        ModelKind::Logarithmic => fit_logarithmic_from(d, s, warm),
        ModelKind::Logistic => fit_logistic_from(d, s, warm),
        ModelKind::Spline => fit_spline_scaling(d, &LambdaGrid::Auto),
        ModelKind::Constant => fit_constant(d),
    }
}

/// The three walking-speed fits.
#[derive(Debug, Clone, Serialize)]
pub struct SpeedFits {
    /// `ln v` on `ln N` by OLS.
    pub power: ScalingFit,
    /// `v` on `ln N` by OLS.
    pub logarithmic: ScalingFit,
    /// NLS on `ln v`.
    pub logistic: ScalingFit,
}

impl SpeedFits {
    /// Fitted speeds (m/s) of the three curves at `population`.
    pub fn speeds_at(&self, population: f64) -> [f64; 3] {
        [
            self.power.predict_log_per_capita(population).exp(),
            self.logarithmic.predict_log_per_capita(population).exp(),
            self.logistic.predict_log_per_capita(population).exp(),
        ]
    }

    /// Largest pairwise gap between the curves over a log-spaced grid on
    /// `[lo, hi]`.
    pub fn max_pairwise_gap(&self, lo: f64, hi: f64, points: usize) -> f64 {
        let (a, b) = (lo.ln(), hi.ln());
        (0..points)
            .map(|i| {
                let n = (a + (b - a) * i as f64 / (points - 1).max(1) as f64).exp();
                let v = self.speeds_at(n);
                (v[0] - v[1])
                    .abs()
                    .max((v[0] - v[2]).abs())
                    .max((v[1] - v[2]).abs())
            })
            .fold(0.0, f64::max)
    }
}

pub fn fit_speed_models(records: &[SpeedRecord], s: &NlsSettings) -> Result<SpeedFits> {
    if records.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 speed records, got {}",
            records.len()
        )));
    }
    let n: Vec<f64> = records.iter().map(|r| r.population).collect();
    let ln_n: Vec<f64> = n.iter().map(|v| v.ln()).collect();
    let v: Vec<f64> = records.iter().map(SpeedRecord::speed).collect();
    let ln_v: Vec<f64> = v.iter().map(|x| x.ln()).collect();
    let power = power_ols(&ln_n, &ln_v, ModelKind::PowerPerCapita)?;
    let logarithmic = logarithmic_ols(&ln_n, &v)?;
    let logistic = if records.len() >= 4 {
        logistic_nls(&n, &ln_v, s, None)?
    } else {
        return Err(Error::InvalidArgument(
            "logistic speed fit needs at least 4 records".into(),
        ));
    };
    Ok(SpeedFits {
        power,
        logarithmic,
        logistic,
    })
}

/// Power and logarithmic speed fits only; these interpolate two points exactly.
pub fn fit_speed_two_forms(records: &[SpeedRecord]) -> Result<(ScalingFit, ScalingFit)> {
    let n: Vec<f64> = records.iter().map(|r| r.population).collect();
    let ln_n: Vec<f64> = n.iter().map(|v| v.ln()).collect();
    let v: Vec<f64> = records.iter().map(SpeedRecord::speed).collect();
    let ln_v: Vec<f64> = v.iter().map(|x| x.ln()).collect();
    Ok((
        power_ols(&ln_n, &ln_v, ModelKind::PowerPerCapita)?,
        logarithmic_ols(&ln_n, &v)?,
    ))
}
