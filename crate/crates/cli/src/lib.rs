//! Command-line front end: argument parsing, thread pool setup and exit codes.

mod commands;
mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use report::{Report, SCHEMA_VERSION};

/// Environment variable read when `--threads` is absent.
pub const THREADS_ENV: &str = "SHIFTSHARE_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "shiftshare", version, about = "Overidentification tests and diagnostics for shift-share designs")]
pub struct Cli {
    /// Worker threads (defaults to $SHIFTSHARE_THREADS, then the core count).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    /// Write the JSON report here instead of standard output.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test the moment conditions implied by exogenous shares.
    OveridShares(SharesArgs),
    /// Test the moment conditions implied by exogenous shocks.
    OveridShocks(ShocksArgs),
    /// Standard error of beta when the number of periods is large.
    LongpanelSe(LongPanelArgs),
    /// Share correlations, first-stage signs and within-cluster shock covariances.
    Diagnostics(DiagnosticsArgs),
    /// Rejection frequencies under a fitted null process.
    Simulate(SimulateArgs),
    /// Load and validate a dataset.
    Validate(DataArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Observation file, one row per (unit, period).
    #[arg(long)]
    pub data: PathBuf,
    /// Shock file.
    #[arg(long)]
    pub shocks: PathBuf,
    /// JSON column map.
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Gaussian,
    Rademacher,
    Mammen,
    Multinomial,
}

#[derive(Debug, Clone, Args)]
pub struct BootstrapArgs {
    /// Bootstrap draws.
    #[arg(long = "B", default_value_t = 1000)]
    pub b: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = SchemeArg::Gaussian)]
    pub scheme: SchemeArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitModeArg {
    Pooled,
    PerPeriod,
}

#[derive(Debug, Clone, Args)]
pub struct SharesOptionArgs {
    /// Aggregate moment shares to this many code digits.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=8))]
    pub sic: Option<u8>,
    /// One moment per sector, summed over periods.
    #[arg(long, conflicts_with = "period")]
    pub pool_time: bool,
    /// Only the moments of this period label.
    #[arg(long)]
    pub period: Option<String>,
    #[arg(long, value_enum, default_value_t = FitModeArg::Pooled)]
    pub fit_mode: FitModeArg,
}

#[derive(Debug, Clone, Args)]
pub struct SharesArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub options: SharesOptionArgs,
    #[command(flatten)]
    pub bootstrap: BootstrapArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClusteringArg {
    None,
    Sector,
    SectorCluster,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EMethodArg {
    Ridge,
    Projection,
}

#[derive(Debug, Clone, Args)]
pub struct ShocksOptionArgs {
    /// Estimator of the shock residual; `projection` when --projection is given, `ridge` otherwise.
    #[arg(long, value_enum)]
    pub e_method: Option<EMethodArg>,
    /// Ridge penalty of the shock residual.
    #[arg(
        long,
        visible_alias = "ridge-lambda",
        default_value_t = shiftshare::shocks::DEFAULT_LAMBDA,
        conflicts_with = "projection"
    )]
    pub lambda: f64,
    /// CSV with a `sector` column and one column per projection direction.
    #[arg(long)]
    pub projection: Option<PathBuf>,
    /// `logit20` (eps^2 and 19 logistic densities) or a JSON moment list.
    #[arg(long, default_value = "logit20")]
    pub moments: String,
    #[arg(long, value_enum, default_value_t = ClusteringArg::SectorCluster)]
    pub clustering: ClusteringArg,
}

#[derive(Debug, Clone, Args)]
pub struct ShocksArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub options: ShocksOptionArgs,
    #[command(flatten)]
    pub bootstrap: BootstrapArgs,
}

#[derive(Debug, Clone, Args)]
pub struct LongPanelArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// HAC lags, or `auto` for floor(1.3 T^(1/3)).
    #[arg(long, default_value = "auto")]
    pub bandwidth: String,
}

#[derive(Debug, Clone, Args)]
pub struct DiagnosticsArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Advisory bound on absolute share correlations.
    #[arg(long, default_value_t = shiftshare::diagnostics::DEFAULT_CORR_THRESHOLD)]
    pub threshold: f64,
    /// Ridge penalty of the shock residual used by the shock checks.
    #[arg(long, default_value_t = shiftshare::shocks::DEFAULT_LAMBDA)]
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DgpArg {
    Shares,
    Shocks,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub dgp: DgpArg,
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    /// Seed of the simulated data and of the bootstrap.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Observation file of a base dataset; the built-in synthetic base otherwise.
    #[arg(long, requires_all = ["shocks", "config"])]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub shocks: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed of the built-in synthetic base.
    #[arg(long, default_value_t = shiftshare::mc::SyntheticBase::DEFAULT_SEED)]
    pub base_seed: u64,
    /// Write the base dataset (obs.csv, shocks.csv, config.json) to this directory.
    #[arg(long)]
    pub export_base: Option<PathBuf>,
    #[command(flatten)]
    pub shares: SharesOptionArgs,
    #[command(flatten)]
    pub shocks_test: ShocksOptionArgs,
    /// Ridge penalty projecting the controls on the shares.
    #[arg(long, default_value_t = shiftshare::mc::DEFAULT_FIT_LAMBDA)]
    pub lambda_fit: f64,
    #[arg(long = "B", default_value_t = 500)]
    pub b: usize,
    #[arg(long, value_enum, default_value_t = SchemeArg::Gaussian)]
    pub scheme: SchemeArg,
}

/// Why a run stopped.
#[derive(Debug)]
pub enum Failure {
    Invalid(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Invalid(_) => EXIT_INVALID,
            Failure::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl From<shiftshare::Error> for Failure {
    fn from(e: shiftshare::Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Invalid(e.to_string())
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Invalid(m) => write!(f, "error: {m}"),
            Failure::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, Failure> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Invalid(format!("{THREADS_ENV} must be a thread count, got `{v}`"))),
        _ => Ok(None),
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    // a second initialisation in the same process is harmless
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
}

/// Runs the command line `argv` (program name first) and returns the exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    init_logging(cli.verbose);
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("{f}");
            f.code()
        }
    }
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let threads = thread_count(cli.threads)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure::Invalid("thread count must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Failure::Invalid(format!("cannot start worker threads: {e}")))?;
    pool.install(|| commands::dispatch(cli))
}
