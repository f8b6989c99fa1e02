use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use urbscale::additive::MIN_ADDITIVE_N;
use urbscale::dataset::{load_speed_csv, DatasetConfig};
use urbscale::eval::AggregateExtrapolation;
use urbscale::gof::Family;
use urbscale::{
    additive_cv, bootstrap_exponent, compare_models, extrapolate_to_aggregate, fit_additive,
    fit_mixture, fit_model, fit_power_aggregate, fit_speed_models, independence_r2_bound,
    load_bundled, load_city_csv_detect, load_speed_fixture, residual_report, rms_gap_test,
    select_components, stats, surrogate_refit_distribution, BackfitSettings, Dataset, ModelKind,
    NlsSettings, ScalingFit, SpeedRecord, SCHEMA_VERSION,
};

use crate::figure::{grid, Figure, Mark, Scale, Series};
use crate::{Cli, Command, Common, InModule, UsageError};

trait InModuleExt<T> {
    fn module(self, m: &'static str) -> Result<T>;
}

impl<T> InModuleExt<T> for urbscale::Result<T> {
    fn module(self, m: &'static str) -> Result<T> {
        self.map_err(|e| anyhow::Error::new(e).context(InModule(m)))
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema_version: u32,
    command: &'a str,
    dataset: &'a str,
    seed: Option<u64>,
    result: T,
}

/// Where results go: files under `--out`, or stdout.
struct Sink {
    out: Option<PathBuf>,
    figures: bool,
    artifacts: Vec<String>,
}

impl Sink {
    fn new(c: &Common) -> Result<Sink> {
        if c.figures && c.out.is_none() {
            return Err(usage("--figures needs --out"));
        }
        if let Some(dir) = &c.out {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        Ok(Sink {
            out: c.out.clone(),
            figures: c.figures,
            artifacts: Vec::new(),
        })
    }

    fn to_text<T: Serialize>(value: &T) -> Result<String> {
        Ok(serde_json::to_string_pretty(value)? + "\n")
    }

    /// Writes `<name>.json` when there is an output directory.
    fn file<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        if let Some(dir) = &self.out {
            let path = dir.join(format!("{name}.json"));
            std::fs::write(&path, Self::to_text(value)?).with_context(|| format!("writing {}", path.display()))?;
            self.artifacts.push(format!("{name}.json"));
        }
        Ok(())
    }

    /// Writes `<name>.json`, or prints it when there is no output directory.
    fn emit<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        if self.out.is_some() {
            self.file(name, value)
        } else {
            print!("{}", Self::to_text(value)?);
            Ok(())
        }
    }

    fn figure(&mut self, fig: &Figure, stem: &str) -> Result<()> {
        if let (true, Some(dir)) = (self.figures, &self.out) {
            let written = fig.write(dir, stem)?;
            self.artifacts.extend(written);
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        if self.out.is_some() {
            println!("{}", json!({ "artifacts": self.artifacts }));
        }
        Ok(())
    }
}

fn need_seed(c: &Common, command: &str) -> Result<u64> {
    c.seed.ok_or_else(|| usage(format!("--seed is required for `{command}`")))
}

fn load_dataset(c: &Common) -> Result<Dataset> {
    if let Some(f) = c.deflator {
        if !(f > 0.0 && f.is_finite()) {
            return Err(usage(format!("--deflator must be positive and finite, got {f}")));
        }
    }
    let mut d = match (&c.config, &c.input) {
        (Some(cfg), Some(input)) => {
            let mut cfg = DatasetConfig::load(cfg).module("dataset")?;
            if let Some(f) = c.deflator {
                cfg.deflator = f;
            }
            cfg.load_dataset(input).module("dataset")?
        }
        (Some(_), None) => return Err(usage("--config needs --input")),
        (None, Some(input)) => load_city_csv_detect(input, c.deflator.unwrap_or(1.0)).module("dataset")?,
        (None, None) => {
            let d = load_bundled("gmp_2006").module("dataset")?;
            match c.deflator {
                Some(f) if f != 1.0 => {
                    let pc: Vec<f64> = d.per_capita().iter().map(|y| y * f).collect();
                    let mut scaled = d.with_per_capita(&pc).module("dataset")?;
                    scaled.deflator = f;
                    scaled
                }
                _ => d,
            }
        }
    };
    if let Some(label) = &c.label {
        d.label = label.clone();
    }
    Ok(d)
}

fn parse_models(names: &[String]) -> Result<Vec<ModelKind>> {
    let mut out = Vec::new();
    for n in names {
        let k = ModelKind::parse(n).map_err(|e| usage(e.to_string()))?;
        if !out.contains(&k) {
            out.push(k);
        }
    }
    if out.is_empty() {
        return Err(usage("--models is empty"));
    }
    Ok(out)
}

pub fn run(cli: &Cli) -> Result<()> {
    let c = &cli.common;
    let mut sink = Sink::new(c)?;
    match &cli.command {
        Command::Fit { models, bootstrap } => {
            let kinds = parse_models(models)?;
            let seed = if *bootstrap > 0 { Some(need_seed(c, "fit --bootstrap")?) } else { None };
            let d = load_dataset(c)?;
            let out = fit_section(&d, &kinds, *bootstrap, seed, &mut sink)?;
            sink.emit("fit", &envelope("fit", &d, seed, out))?;
        }
        Command::Compare { models, folds } => {
            let kinds = parse_models(models)?;
            let seed = need_seed(c, "compare")?;
            let d = load_dataset(c)?;
            let out = compare_section(&d, &kinds, *folds, seed, &mut sink)?;
            sink.emit("compare", &envelope("compare", &d, Some(seed), out))?;
        }
        Command::Surrogate { surrogates, generator, refit } => {
            let generator = ModelKind::parse(generator).map_err(|e| usage(e.to_string()))?;
            let refit = ModelKind::parse(refit).map_err(|e| usage(e.to_string()))?;
            let seed = need_seed(c, "surrogate")?;
            let d = load_dataset(c)?;
            let out = surrogate_section(&d, generator, refit, *surrogates, seed, &mut sink)?;
            sink.emit("surrogate", &envelope("surrogate", &d, Some(seed), out))?;
        }
        Command::Gam { folds } => {
            let seed = need_seed(c, "gam")?;
            let d = load_dataset(c)?;
            let out = gam_section(&d, *folds, seed, &mut sink)?;
            sink.emit("gam", &envelope("gam", &d, Some(seed), out))?;
        }
        Command::Mixture { max_components, folds, restarts } => {
            let seed = need_seed(c, "mixture")?;
            let d = load_dataset(c)?;
            let out = mixture_section(&d, *max_components, *folds, *restarts, seed)?;
            sink.emit("mixture", &envelope("mixture", &d, Some(seed), out))?;
        }
        Command::Residuals { surrogates } => {
            let seed = need_seed(c, "residuals")?;
            let d = load_dataset(c)?;
            let out = residuals_section(&d, *surrogates, seed, &mut sink)?;
            sink.emit("residuals", &envelope("residuals", &d, Some(seed), out))?;
        }
        Command::Pace => {
            let recs = match &c.input {
                Some(p) => load_speed_csv(p).module("dataset")?,
                None => load_speed_fixture().module("dataset")?,
            };
            let out = pace_section(&recs, &mut sink)?;
            let env = Envelope {
                schema_version: SCHEMA_VERSION,
                command: "pace",
                dataset: c.label.as_deref().unwrap_or("pace_of_life"),
                seed: None,
                result: out,
            };
            sink.emit("pace", &env)?;
        }
        Command::Report { folds, bootstrap, surrogates } => {
            let seed = need_seed(c, "report")?;
            let d = load_dataset(c)?;
            let manifest = report(c, &d, *folds, *bootstrap, *surrogates, seed, &mut sink)?;
            sink.emit("manifest", &manifest)?;
        }
    }
    sink.finish()
}

fn envelope<'a, T: Serialize>(command: &'a str, d: &'a Dataset, seed: Option<u64>, result: T) -> Envelope<'a, T> {
    Envelope {
        schema_version: SCHEMA_VERSION,
        command,
        dataset: &d.label,
        seed,
        result,
    }
}

fn r_squared_aggregate(fit: &ScalingFit, d: &Dataset) -> f64 {
    let v = stats::variance_mle(&d.log_aggregate());
    if v > 0.0 {
        1.0 - fit.rms_log().powi(2) / v
    } else {
        0.0
    }
}

#[derive(Serialize)]
struct FitOut {
    fits: BTreeMap<ModelKind, ScalingFit>,
    aggregate_r_squared_log: Option<f64>,
    bootstrap: Option<urbscale::BootstrapResult>,
}

fn fit_section(d: &Dataset, kinds: &[ModelKind], bootstrap: usize, seed: Option<u64>, sink: &mut Sink) -> Result<FitOut> {
    let nls = NlsSettings::default();
    let mut fits = BTreeMap::new();
    for &k in kinds {
        fits.insert(k, fit_model(d, k, &nls).module("scaling_models")?);
    }
    let aggregate_r_squared_log = fits.get(&ModelKind::PowerAggregate).map(|f| r_squared_aggregate(f, d));
    let bootstrap = match seed {
        Some(s) if bootstrap > 0 => Some(bootstrap_exponent(d, bootstrap, s).module("model_eval")?),
        _ => None,
    };
    let per_capita: Vec<&ScalingFit> = fits.values().filter(|f| f.model_kind.is_per_capita()).collect();
    if !per_capita.is_empty() {
        sink.figure(&per_capita_figure(d, &per_capita, "Per-capita output and fitted curves"), "fit_per_capita")?;
    }
    Ok(FitOut {
        fits,
        aggregate_r_squared_log,
        bootstrap,
    })
}

fn population_range(d: &Dataset) -> (f64, f64) {
    let p = d.populations();
    (
        p.iter().copied().fold(f64::INFINITY, f64::min),
        p.iter().copied().fold(0.0, f64::max),
    )
}

fn per_capita_figure(d: &Dataset, fits: &[&ScalingFit], title: &str) -> Figure {
    let (lo, hi) = population_range(d);
    let xs = grid(lo, hi, 200, Scale::Log);
    let mut series = vec![Series::new("cities", Mark::Points, d.populations(), d.per_capita())];
    for f in fits {
        let ys = xs.iter().map(|&n| f.predict_log_per_capita(n).exp()).collect();
        series.push(Series::new(f.model_kind.name(), Mark::Line, xs.clone(), ys));
    }
    Figure {
        title: title.into(),
        x_label: "population N".into(),
        y_label: "per-capita output y".into(),
        x_scale: Scale::Log,
        y_scale: Scale::Log,
        series,
    }
}

#[derive(Serialize)]
struct CompareOut {
    comparison: urbscale::ComparisonReport,
    aggregate_power: ScalingFit,
    aggregate_r_squared_log: f64,
    independence_r2_bound: f64,
    extrapolations: Vec<AggregateExtrapolation>,
}

fn compare_section(d: &Dataset, kinds: &[ModelKind], folds: usize, seed: u64, sink: &mut Sink) -> Result<CompareOut> {
    let nls = NlsSettings::default();
    let comparison = compare_models(d, kinds, folds, seed, &nls).module("model_eval")?;
    let aggregate_power = fit_power_aggregate(d).module("scaling_models")?;
    let bound = independence_r2_bound(d).module("model_eval")?;
    let mut fits = Vec::new();
    let mut extrapolations = Vec::new();
    for &k in kinds.iter().filter(|k| k.is_per_capita()) {
        let f = fit_model(d, k, &nls).module("scaling_models")?;
        extrapolations.push(extrapolate_to_aggregate(&f, d).module("model_eval")?);
        fits.push(f);
    }

    if sink.figures {
        let (lo, hi) = population_range(d);
        let xs = grid(lo, hi, 200, Scale::Log);
        let aggregate: Vec<f64> = d.records().iter().map(|r| r.aggregate_output).collect();
        let line: Vec<f64> = xs.iter().map(|&n| aggregate_power.predict_log(n).exp()).collect();
        let fig1 = Figure {
            title: "Aggregate output against population".into(),
            x_label: "population N".into(),
            y_label: "output Y".into(),
            x_scale: Scale::Log,
            y_scale: Scale::Log,
            series: vec![
                Series::new("cities", Mark::Points, d.populations(), aggregate.clone()),
                Series::new("power law", Mark::Line, xs.clone(), line),
            ],
        };
        sink.figure(&fig1, "fig_aggregate")?;
        let refs: Vec<&ScalingFit> = fits.iter().collect();
        sink.figure(&per_capita_figure(d, &refs, "Per-capita output and fitted curves"), "fig_per_capita")?;
        let mut series = vec![Series::new("cities", Mark::Points, d.populations(), aggregate)];
        for f in &fits {
            let ys = xs.iter().map(|&n| n * f.predict_log_per_capita(n).exp()).collect();
            series.push(Series::new(f.model_kind.name(), Mark::Line, xs.clone(), ys));
        }
        let fig3 = Figure {
            title: "Per-capita fits carried to aggregates".into(),
            x_label: "population N".into(),
            y_label: "output Y".into(),
            x_scale: Scale::Log,
            y_scale: Scale::Log,
            series,
        };
        sink.figure(&fig3, "fig_extrapolated")?;
    }

    Ok(CompareOut {
        aggregate_r_squared_log: r_squared_aggregate(&aggregate_power, d),
        comparison,
        aggregate_power,
        independence_r2_bound: bound,
        extrapolations,
    })
}

#[derive(Serialize)]
struct SurrogateOut {
    summary: urbscale::SurrogateSummary,
    gap_test: urbscale::GapTestResult,
}

fn histogram(values: &[f64], bins: usize) -> (Vec<f64>, Vec<f64>) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() || hi <= lo {
        return (vec![lo], vec![values.len() as f64]);
    }
    let w = (hi - lo) / bins as f64;
    let mut counts = vec![0.0; bins];
    for v in values {
        counts[(((v - lo) / w) as usize).min(bins - 1)] += 1.0;
    }
    ((0..bins).map(|i| lo + (i as f64 + 0.5) * w).collect(), counts)
}

fn surrogate_section(
    d: &Dataset,
    generator: ModelKind,
    refit: ModelKind,
    replicates: usize,
    seed: u64,
    sink: &mut Sink,
) -> Result<SurrogateOut> {
    let nls = NlsSettings::default();
    let summary = surrogate_refit_distribution(generator, refit, d, replicates, seed, &nls).module("surrogate_tests")?;
    let gap_test = rms_gap_test(d, replicates, seed, &nls).module("surrogate_tests")?;
    if sink.figures {
        let (xs, counts) = histogram(&summary.exponents, 30);
        let top = counts.iter().copied().fold(0.0, f64::max);
        let mut series = vec![Series::new("surrogate refits", Mark::Line, xs, counts)];
        if let Some(b) = fit_model(d, refit, &nls).ok().and_then(|f| f.aggregate_exponent()) {
            series.push(Series::new("real data", Mark::Dashed, vec![b, b], vec![0.0, top]));
        }
        let fig = Figure {
            title: format!("Exponents refit to {generator} surrogates"),
            x_label: "aggregate exponent b".into(),
            y_label: "count".into(),
            x_scale: Scale::Linear,
            y_scale: Scale::Linear,
            series,
        };
        sink.figure(&fig, "fig_surrogate_exponents")?;
    }
    Ok(SurrogateOut { summary, gap_test })
}

#[derive(Serialize)]
struct GamOut {
    fit: urbscale::AdditiveFit,
    cv_with_size: urbscale::AdditiveCvResult,
    cv_without_size: urbscale::AdditiveCvResult,
}

fn gam_section(d: &Dataset, folds: usize, seed: u64, sink: &mut Sink) -> Result<GamOut> {
    let settings = BackfitSettings::default();
    let fit = fit_additive(d, true, &settings).module("hierarchy_gam")?;
    let cv_with_size = additive_cv(d, true, folds, seed, &settings).module("hierarchy_gam")?;
    let cv_without_size = additive_cv(d, false, folds, seed, &settings).module("hierarchy_gam")?;
    if sink.figures {
        let sub = d.complete_sector_subset();
        for (j, p) in fit.partials.iter().enumerate() {
            let x = sub.sector_column(p.column).unwrap_or_default();
            let knots = p.spline.knots.clone();
            let upper = p.spline.knot_values.iter().zip(&p.knot_se).map(|(v, s)| v + 2.0 * s).collect();
            let lower = p.spline.knot_values.iter().zip(&p.knot_se).map(|(v, s)| v - 2.0 * s).collect();
            let fig = Figure {
                title: format!("Partial response to {}", p.sector),
                x_label: format!("{} share", p.sector),
                y_label: "partial effect on ln y".into(),
                x_scale: Scale::Linear,
                y_scale: Scale::Linear,
                series: vec![
                    Series::new("partial residuals", Mark::Points, x, fit.partial_residuals[j].clone()),
                    Series::new("estimate", Mark::Line, knots.clone(), p.spline.knot_values.clone()),
                    Series::new("+2 se", Mark::Dashed, knots.clone(), upper),
                    Series::new("-2 se", Mark::Dashed, knots, lower),
                ],
            };
            sink.figure(&fig, &format!("fig_partial_{}", p.sector))?;
        }
    }
    Ok(GamOut {
        fit,
        cv_with_size,
        cv_without_size,
    })
}

#[derive(Serialize)]
struct MixtureOut {
    selection: urbscale::SelectionReport,
    chosen_fit: urbscale::MixtureFit,
}

fn mixture_section(d: &Dataset, k_max: usize, folds: usize, restarts: usize, seed: u64) -> Result<MixtureOut> {
    let selection = select_components(d, k_max, folds, restarts, seed).module("mixture_regressions")?;
    let chosen_fit = fit_mixture(d, selection.chosen_by_bic, restarts, seed).module("mixture_regressions")?;
    Ok(MixtureOut { selection, chosen_fit })
}

fn residuals_section(d: &Dataset, replicates: usize, seed: u64, sink: &mut Sink) -> Result<urbscale::GofReport> {
    let fit = fit_power_aggregate(d).module("scaling_models")?;
    let source = format!("power_aggregate {}", d.label);
    let rep = residual_report(&fit.residuals_log, &d.per_capita(), &source, replicates, seed).module("residual_gof")?;
    if sink.figures {
        let g = &rep.kde.grid;
        let gauss = g.iter().map(|&x| density(Family::Gaussian, x, rep.gaussian.mean, rep.gaussian.sd)).collect();
        let lap = g.iter().map(|&x| density(Family::Laplace, x, rep.laplace.location, rep.laplace.scale)).collect();
        let fig = Figure {
            title: "Power-law residual density".into(),
            x_label: "residual of ln Y".into(),
            y_label: "density".into(),
            x_scale: Scale::Linear,
            y_scale: Scale::Linear,
            series: vec![
                Series::new("kernel estimate", Mark::Line, g.clone(), rep.kde.density.clone()),
                Series::new("Gaussian", Mark::Dashed, g.clone(), gauss),
                Series::new("Laplace", Mark::Dashed, g.clone(), lap),
            ],
        };
        sink.figure(&fig, "fig_residual_density")?;
        let fig = Figure {
            title: "Residual rank against per-capita rank".into(),
            x_label: "rank of per-capita output".into(),
            y_label: "rank of residual".into(),
            x_scale: Scale::Linear,
            y_scale: Scale::Linear,
            series: vec![Series::new(
                "cities",
                Mark::Points,
                stats::midranks(&d.per_capita()),
                stats::midranks(&fit.residuals_log),
            )],
        };
        sink.figure(&fig, "fig_residual_ranks")?;
    }
    Ok(rep)
}

fn density(family: Family, x: f64, location: f64, scale: f64) -> f64 {
    if scale.is_nan() || scale <= 0.0 {
        return 0.0;
    }
    let z = (x - location) / scale;
    match family {
        Family::Gaussian => (-0.5 * z * z).exp() / (scale * (2.0 * std::f64::consts::PI).sqrt()),
        Family::Laplace => (-z.abs()).exp() / (2.0 * scale),
    }
}

#[derive(Serialize)]
struct SpeedRow<'a> {
    #[serde(flatten)]
    record: &'a SpeedRecord,
    speed_m_s: f64,
    speed_sd_m_s: f64,
}

#[derive(Serialize)]
struct PaceOut<'a> {
    records: Vec<SpeedRow<'a>>,
    fits: urbscale::SpeedFits,
    max_pairwise_gap: f64,
    largest_speed_sd: f64,
}

fn pace_section<'a>(recs: &'a [SpeedRecord], sink: &mut Sink) -> Result<PaceOut<'a>> {
    let fits = fit_speed_models(recs, &NlsSettings::default()).module("scaling_models")?;
    let lo = recs.iter().map(|r| r.population).fold(f64::INFINITY, f64::min);
    let hi = recs.iter().map(|r| r.population).fold(0.0, f64::max);
    let max_pairwise_gap = fits.max_pairwise_gap(lo, hi, 500);
    let largest_speed_sd = recs.iter().map(SpeedRecord::speed_sd).fold(0.0, f64::max);
    if sink.figures {
        let xs = grid(lo, hi, 200, Scale::Log);
        let curve = |i: usize| xs.iter().map(|&n| fits.speeds_at(n)[i]).collect::<Vec<_>>();
        let fig = Figure {
            title: "Walking speed against population".into(),
            x_label: "population N".into(),
            y_label: "speed v (m/s)".into(),
            x_scale: Scale::Log,
            y_scale: Scale::Linear,
            series: vec![
                Series::new(
                    "locations",
                    Mark::Points,
                    recs.iter().map(|r| r.population).collect(),
                    recs.iter().map(SpeedRecord::speed).collect(),
                ),
                Series::new("power", Mark::Line, xs.clone(), curve(0)),
                Series::new("logarithmic", Mark::Line, xs.clone(), curve(1)),
                Series::new("logistic", Mark::Line, xs.clone(), curve(2)),
            ],
        };
        sink.figure(&fig, "fig_pace")?;
    }
    Ok(PaceOut {
        records: recs
            .iter()
            .map(|r| SpeedRow {
                record: r,
                speed_m_s: r.speed(),
                speed_sd_m_s: r.speed_sd(),
            })
            .collect(),
        fits,
        max_pairwise_gap,
        largest_speed_sd,
    })
}

fn skipped(reason: impl std::fmt::Display) -> Value {
    json!({ "skipped": reason.to_string() })
}

#[allow(clippy::too_many_arguments)]
fn report(
    c: &Common,
    d: &Dataset,
    folds: usize,
    bootstrap: usize,
    surrogates: usize,
    seed: u64,
    sink: &mut Sink,
) -> Result<Value> {
    let kinds = ModelKind::PER_CAPITA;

    let fit = fit_section(d, &[ModelKind::PowerAggregate], bootstrap, Some(seed), sink)?;
    sink.file("fit", &envelope("fit", d, Some(seed), &fit))?;
    let agg = &fit.fits[&ModelKind::PowerAggregate];
    let ci = fit.bootstrap.as_ref().map(|b| [b.ci_low, b.ci_high]);

    let cmp = compare_section(d, &kinds, folds, seed, sink)?;
    sink.file("compare", &envelope("compare", d, Some(seed), &cmp))?;
    let metric = |f: fn(&urbscale::eval::ModelMetrics) -> f64| -> Vec<f64> {
        kinds.iter().map(|k| f(&cmp.comparison.per_model[k])).collect()
    };
    let extrapolated: BTreeMap<ModelKind, f64> = cmp
        .extrapolations
        .iter()
        .map(|x| (x.model, x.r_squared_log))
        .collect();

    let sur = surrogate_section(d, ModelKind::Logistic, ModelKind::PowerAggregate, surrogates, seed, sink)?;
    sink.file("surrogate", &envelope("surrogate", d, Some(seed), &sur))?;

    let complete = d.complete_sector_subset().len();
    let gam = if complete < MIN_ADDITIVE_N {
        skipped(format!("{complete} records with all sector shares, need {MIN_ADDITIVE_N}"))
    } else {
        let g = gam_section(d, folds, seed, sink)?;
        sink.file("gam", &envelope("gam", d, Some(seed), &g))?;
        json!({
            "n": g.fit.ids.len(),
            "size_exponent": g.fit.size_exponent,
            "size_exponent_se": g.fit.size_exponent_se,
            "rms_log": g.fit.rms_log,
            "r_squared_log": g.fit.r_squared_log,
            "cv_mse": g.cv_with_size.additive_mse,
            "cv_mse_power": g.cv_with_size.power_mse,
            "cv_mse_without_size": g.cv_without_size.additive_mse,
        })
    };

    let mix = mixture_section(d, 4, folds, 20, seed)?;
    sink.file("mixture", &envelope("mixture", d, Some(seed), &mix))?;

    let res = residuals_section(d, 999, seed, sink)?;
    sink.file("residuals", &envelope("residuals", d, Some(seed), &res))?;

    let pace_recs = match &c.input {
        None => load_speed_fixture().ok(),
        Some(_) => None,
    };
    let pace = match pace_recs {
        Some(recs) => {
            let p = pace_section(&recs, sink)?;
            sink.file("pace", &p)?;
            json!({
                "records": recs.len(),
                "max_pairwise_gap": p.max_pairwise_gap,
                "largest_speed_sd": p.largest_speed_sd,
            })
        }
        None => skipped("no walking-speed table for this input"),
    };

    Ok(json!({
        "schema_version": SCHEMA_VERSION,
        "command": "report",
        "dataset": d.label,
        "n": d.len(),
        "seed": seed,
        "aggregate": {
            "b": agg.param("b"),
            "ln_c": agg.param("ln_c"),
            "r_squared_log": fit.aggregate_r_squared_log,
            "rms_log": agg.rms_log(),
            "bootstrap_replicates": bootstrap,
            "bootstrap_ci": ci,
        },
        "per_capita": {
            "models": kinds.iter().map(|k| k.name()).collect::<Vec<_>>(),
            "rms_log": metric(|m| m.rms_log),
            "r_squared_log": metric(|m| m.r_squared_log),
            "rms_dollars": metric(|m| m.rms_dollars),
            "cv_rms": metric(|m| m.cv_rms),
            "constant_rms_log": cmp.comparison.constant_baseline.rms_log,
            "constant_rms_dollars": cmp.comparison.constant_baseline.rms_dollars,
            "folds": folds,
        },
        "independence_r2_bound": cmp.independence_r2_bound,
        "extrapolated_r_squared_log": extrapolated,
        "surrogate": {
            "replicates": sur.summary.replicates,
            "exponent_median": sur.summary.exponent_median,
            "exponent_band": [sur.summary.exponent_q025, sur.summary.exponent_q975],
            "r2_median": sur.summary.r2_median,
            "gap_p_value": sur.gap_test.p_value,
        },
        "gam": gam,
        "mixture": {
            "chosen_by_bic": mix.selection.chosen_by_bic,
            "chosen_by_cv": mix.selection.chosen_by_cv,
        },
        "residuals": {
            "gaussian_p_value": res.gaussian.p_value,
            "laplace_p_value": res.laplace.p_value,
            "spearman_vs_per_capita": res.spearman_vs_per_capita,
        },
        "pace": pace,
    }))
}
