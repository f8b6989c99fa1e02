//! Competing scaling-law models for urban economic data.
//!
//! The crate fits power-law, logarithmic, logistic and smoothing-spline
//! relations between city population and (per-capita or aggregate) output,
//! and carries the inferential machinery used to compare them: k-fold
//! cross-validation, case-resampling bootstrap, surrogate-data tests,
//! a backfitted additive model over sector shares, mixtures of regressions
//! fit by EM, and smooth goodness-of-fit tests for the residuals.
//!
//! Every stochastic routine takes an explicit `u64` seed. Replicates draw from
//! independent streams derived from `(seed, replicate index)`, so results do
//! not depend on how the work is scheduled across threads.

// NaN-rejecting comparisons and index loops over parallel arrays are idiomatic here.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod additive;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod gof;
pub mod mixture;
pub mod nls;
pub mod rng;
pub mod scaling;
pub mod spline;
pub mod stats;
pub mod surrogate;
pub mod synthetic;

pub use additive::{additive_cv, fit_additive, AdditiveCvResult, AdditiveFit, BackfitSettings};
pub use dataset::{
    load_bundled, load_city_csv, load_city_csv_detect, load_speed_csv, load_speed_fixture,
    CityRecord, CsvSchema, Dataset, DatasetConfig, OutputKind, SpeedRecord,
};
pub use error::{Error, Result};
pub use eval::{
    bootstrap_exponent, compare_models, extrapolate_to_aggregate, independence_r2_bound,
    BootstrapResult, ComparisonReport,
};
pub use gof::{
    fit_residual_distributions, rank_comparison, residual_report, smooth_test, Family, GofReport,
};
pub use mixture::{fit_mixture, select_components, MixtureFit, SelectionReport};
pub use nls::NlsSettings;
pub use scaling::{
    fit_logarithmic, fit_logistic, fit_model, fit_power_aggregate, fit_power_per_capita,
    fit_speed_models, fit_spline_scaling, ModelKind, ScalingFit, SpeedFits,
};
pub use spline::{evaluate_spline, fit_spline, LambdaGrid, SplineFit};
pub use surrogate::{
    rms_gap_test, simulate_surrogate, surrogate_refit_distribution, GapTestResult,
    SurrogateSummary,
};

/// Version tag written into every serialized report.
pub const SCHEMA_VERSION: u32 = 1;
