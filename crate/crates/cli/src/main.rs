mod commands;
mod figure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

/// Compare scaling-law models of city output against population.
#[derive(Parser, Debug)]
#[command(name = "urbscale", version, about)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// City CSV (id, name, population, output, optional share columns).
    /// Defaults to the bundled `gmp_2006` table.
    #[arg(long, global = true, env = "URBSCALE_INPUT")]
    pub input: Option<PathBuf>,
    /// `key = value` dataset description: label, deflator and column names.
    #[arg(long, global = true, env = "URBSCALE_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, env = "URBSCALE_LABEL")]
    pub label: Option<String>,
    /// Multiplier applied to every output value.
    #[arg(long, global = true, env = "URBSCALE_DEFLATOR")]
    pub deflator: Option<f64>,
    /// Required by every command that draws random numbers.
    #[arg(long, global = true, env = "URBSCALE_SEED")]
    pub seed: Option<u64>,
    /// Output directory, created if absent. Without it the JSON result goes
    /// to stdout.
    #[arg(long, global = true, env = "URBSCALE_OUT")]
    pub out: Option<PathBuf>,
    /// Also write SVG figures with sibling CSVs (needs --out).
    #[arg(long, global = true, env = "URBSCALE_FIGURES")]
    pub figures: bool,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Fit scaling models and report their parameters.
    Fit {
        #[arg(long, value_delimiter = ',', default_value = "power_aggregate,power,logarithmic,logistic,spline")]
        models: Vec<String>,
        /// Case-bootstrap replicates for the aggregate exponent (0 skips it).
        #[arg(long, default_value_t = 0)]
        bootstrap: usize,
    },
    /// In-sample and cross-validated comparison of the per-capita models.
    Compare {
        #[arg(long, value_delimiter = ',', default_value = "power,logarithmic,logistic,spline")]
        models: Vec<String>,
        #[arg(long, default_value_t = 6)]
        folds: usize,
    },
    /// Surrogate-data refits and the RMS-gap test.
    Surrogate {
        #[arg(long, default_value_t = 1000)]
        surrogates: usize,
        #[arg(long, default_value = "logistic")]
        generator: String,
        #[arg(long, default_value = "power_aggregate")]
        refit: String,
    },
    /// Additive model on population and sector shares.
    Gam {
        #[arg(long, default_value_t = 6)]
        folds: usize,
    },
    /// Mixture-of-regressions component selection.
    Mixture {
        #[arg(long, default_value_t = 4)]
        max_components: usize,
        #[arg(long, default_value_t = 6)]
        folds: usize,
        #[arg(long, default_value_t = 20)]
        restarts: usize,
    },
    /// Distribution of the aggregate power-law residuals.
    Residuals {
        /// Parametric-bootstrap replicates per smooth test.
        #[arg(long, default_value_t = 999)]
        surrogates: usize,
    },
    /// Walking speed against population. Reads a speed CSV from --input, or
    /// the bundled fixture.
    Pace,
    /// Runs every analysis and writes a manifest of the headline numbers.
    Report {
        #[arg(long, default_value_t = 6)]
        folds: usize,
        #[arg(long, default_value_t = 1000)]
        bootstrap: usize,
        #[arg(long, default_value_t = 1000)]
        surrogates: usize,
    },
}

/// Bad invocation that clap itself cannot detect.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Tags an error with the analysis module it came from.
#[derive(Debug)]
pub struct InModule(pub &'static str);

impl std::fmt::Display for InModule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "in {}", self.0)
    }
}

fn error_json(kind: &str, module: Option<&str>, message: &str) -> String {
    json!({ "error": { "kind": kind, "module": module, "message": message } }).to_string()
}

fn report_failure(e: &anyhow::Error) -> ExitCode {
    if let Some(u) = e.downcast_ref::<UsageError>() {
        eprintln!("{}", error_json("usage", None, &u.0));
        return ExitCode::from(2);
    }
    let module = e.downcast_ref::<InModule>().map(|m| m.0);
    let kind = e
        .chain()
        .find_map(|c| c.downcast_ref::<urbscale::Error>())
        .map_or("io", urbscale::Error::kind);
    let message = e.chain().map(ToString::to_string).collect::<Vec<_>>().join(": ");
    eprintln!("{}", error_json(kind, module, &message));
    ExitCode::from(1)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprintln!("{}", error_json("usage", None, e.to_string().trim()));
            return ExitCode::from(2);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report_failure(&e),
    }
}
