//! `pals` command-line front end.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
//! Failures are reported on stderr as a single JSON object.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pals::data::{ColumnRef, RowFilter};
use pals::simlab::{Method, ModelId, NoiseConvention, PredictorCase};
use pals::{ErrorKind, PalsError};
use serde::Serialize;

mod commands;

#[derive(Debug, Parser)]
#[command(name = "pals", version, about = "Principal asymmetric least squares for dimension reduction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
enum Command {
    /// Linear PALS on a CSV dataset.
    Fit(FitArgs),
    /// Kernel PALS on a CSV dataset.
    KernelFit(KernelFitArgs),
    /// Monte Carlo accuracy tables.
    Simulate(SimulateArgs),
    /// Rate and normality diagnostic for linear PALS.
    Diagnose(DiagnoseArgs),
    /// Write a simulated dataset as CSV.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args, Serialize)]
pub struct Common {
    /// Output file; stdout when omitted.
    #[arg(long, env = "PALS_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, env = "PALS_FORMAT")]
    pub format: Option<Format>,
    /// Worker threads.
    #[arg(long, env = "PALS_JOBS")]
    pub jobs: Option<usize>,
    /// Print the resolved configuration as JSON and exit.
    #[arg(long)]
    #[serde(skip)]
    pub dry_run: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct InputArgs {
    #[arg(long, env = "PALS_INPUT")]
    pub input: PathBuf,
    /// Response column, by header name or zero-based index.
    #[arg(long, env = "PALS_RESPONSE")]
    pub response: ColumnRef,
    /// Columns left out of the predictors.
    #[arg(long, value_delimiter = ',', env = "PALS_DROP")]
    pub drop: Vec<ColumnRef>,
    /// Drop rows where COLUMN equals VALUE, e.g. `CHAS=1`.
    #[arg(long, value_name = "COLUMN=VALUE", env = "PALS_EXCLUDE_WHERE")]
    pub exclude_where: Vec<RowFilter>,
}

#[derive(Debug, Args, Serialize)]
pub struct EstimatorArgs {
    /// Structural dimension d.
    #[arg(long, default_value_t = 1, env = "PALS_DIM")]
    pub dim: usize,
    /// Expectile levels; defaults to 0.1, 0.2, ..., 0.9.
    #[arg(long, value_delimiter = ',', env = "PALS_TAUS")]
    pub taus: Vec<f64>,
    #[arg(long, conflicts_with = "lambda_grid", env = "PALS_LAMBDA")]
    pub lambda: Option<f64>,
    /// Candidate λ values; defaults to 0.1, 1, 10, 100.
    #[arg(long, value_delimiter = ',', env = "PALS_LAMBDA_GRID")]
    pub lambda_grid: Vec<f64>,
    /// Select λ by distance correlation with the response.
    #[arg(long, env = "PALS_DC")]
    pub dc: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub est: EstimatorArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Serialize)]
pub struct KernelFitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub est: EstimatorArgs,
    /// Kernel basis size m; defaults to n/2.
    #[arg(long, env = "PALS_BASIS_SIZE")]
    pub basis_size: Option<usize>,
    /// Gaussian bandwidth r; defaults to the Monte Carlo rule for the predictor dimension.
    #[arg(long, env = "PALS_BANDWIDTH")]
    pub bandwidth: Option<f64>,
    /// Columns with true sufficient predictors; excluded from X and scored against.
    #[arg(long, value_delimiter = ',', env = "PALS_TRUTH_COLUMN")]
    pub truth_column: Vec<ColumnRef>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Preset protocol: 1 (case ii, p varies), 2 (cases i-iii), 4 (kernel models).
    #[arg(long, value_parser = ["1", "2", "4"], env = "PALS_TABLE")]
    pub table: Option<String>,
    #[arg(long, value_delimiter = ',', env = "PALS_MODEL")]
    pub model: Vec<ModelId>,
    #[arg(long, value_delimiter = ',', env = "PALS_P")]
    pub p: Vec<usize>,
    #[arg(long, value_delimiter = ',', env = "PALS_CASE")]
    pub case: Vec<PredictorCase>,
    #[arg(long, value_delimiter = ',', env = "PALS_N")]
    pub n: Vec<usize>,
    #[arg(long, value_delimiter = ',', env = "PALS_METHODS")]
    pub methods: Vec<Method>,
    #[arg(long, value_delimiter = ',', env = "PALS_TAUS")]
    pub taus: Vec<f64>,
    #[arg(long, value_delimiter = ',', env = "PALS_LAMBDA_GRID")]
    pub lambda_grid: Vec<f64>,
    #[arg(long, env = "PALS_BASIS_SIZE")]
    pub basis_size: Option<usize>,
    #[arg(long, default_value_t = 100, env = "PALS_REPS")]
    pub reps: usize,
    #[arg(long, default_value_t = 1, env = "PALS_SEED")]
    pub seed: u64,
    /// Reading of the 0.2 noise level in models IV and V.
    #[arg(long, default_value = "variance", env = "PALS_NOISE")]
    pub noise: NoiseConvention,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Serialize)]
pub struct DiagnoseArgs {
    #[arg(long, default_value = "III", env = "PALS_MODEL")]
    pub model: ModelId,
    #[arg(long, default_value = "i", env = "PALS_CASE")]
    pub case: PredictorCase,
    #[arg(long, default_value_t = 10, env = "PALS_P")]
    pub p: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [200, 800, 3200], env = "PALS_N")]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 100.0, env = "PALS_LAMBDA")]
    pub lambda: f64,
    #[arg(long, default_value_t = 50, env = "PALS_REPS")]
    pub reps: usize,
    #[arg(long, default_value_t = 1, env = "PALS_SEED")]
    pub seed: u64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    #[arg(long, env = "PALS_MODEL")]
    pub model: ModelId,
    #[arg(long, default_value = "i", env = "PALS_CASE")]
    pub case: PredictorCase,
    #[arg(long, default_value_t = 10, env = "PALS_P")]
    pub p: usize,
    #[arg(long, default_value_t = 100, env = "PALS_N")]
    pub n: usize,
    #[arg(long, default_value_t = 1, env = "PALS_SEED")]
    pub seed: u64,
    #[arg(long, default_value = "variance", env = "PALS_NOISE")]
    pub noise: NoiseConvention,
    #[command(flatten)]
    pub common: Common,
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Fit(a) => &a.common,
            Command::KernelFit(a) => &a.common,
            Command::Simulate(a) => &a.common,
            Command::Diagnose(a) => &a.common,
            Command::Generate(a) => &a.common,
        }
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    schema_version: u32,
    error: ErrorDetail<'a>,
}

#[derive(Serialize)]
struct ErrorDetail<'a> {
    kind: &'a str,
    exit_code: u8,
    message: String,
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Usage => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numerical => 4,
    }
}

fn report(err: &PalsError) -> ExitCode {
    let kind = err.kind();
    let code = exit_code(kind);
    let body = ErrorBody {
        schema_version: commands::SCHEMA_VERSION,
        error: ErrorDetail {
            kind: match kind {
                ErrorKind::Usage => "usage",
                ErrorKind::Data => "data",
                ErrorKind::Numerical => "numerical",
            },
            exit_code: code,
            message: err.to_string(),
        },
    };
    eprintln!("{}", serde_json::to_string(&body).expect("error body serializes"));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PALS_LOG", "warn")).init();
    let cli = Cli::parse();

    if cli.command.common().dry_run {
        let resolved = serde_json::json!({
            "schema_version": commands::SCHEMA_VERSION,
            "config": &cli.command,
        });
        println!("{}", serde_json::to_string_pretty(&resolved).expect("config serializes"));
        return ExitCode::SUCCESS;
    }

    let result = match &cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::KernelFit(a) => commands::kernel_fit(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Diagnose(a) => commands::diagnose(a),
        Command::Generate(a) => commands::generate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}
