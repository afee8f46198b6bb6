//! `mbnf` command-line tool: data preparation, training runs, backtests and
//! the analyses that accompany them.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod report;
pub mod train;

pub use config::{RunConfig, RunManifest};

/// Exit code for an unknown subcommand or malformed arguments.
pub const EXIT_USAGE: i32 = 2;
/// Exit code for a configuration that fails validation.
pub const EXIT_CONFIG: i32 = 3;
/// Exit code for any other failure.
pub const EXIT_RUNTIME: i32 = 1;

/// A rejected configuration; maps to [`EXIT_CONFIG`].
#[derive(Debug, thiserror::Error)]
#[error("invalid configuration: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Parser)]
#[command(name = "mbnf", version, about = "Model-based trading agents with normalizing-flow dynamics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute technical indicators for a price CSV.
    Indicators(commands::IndicatorsArgs),
    /// Fit alpha-stable laws to daily price differences.
    FitStable(commands::FitStableArgs),
    /// Train an agent; one run directory per seed.
    Train(train::TrainArgs),
    /// Performance report of an equity curve.
    Backtest(commands::BacktestArgs),
    /// Pairwise pattern causality between tickers.
    Causality(commands::CausalityArgs),
    /// Loss sharpness at every checkpoint of a run.
    Sharpness(commands::SharpnessArgs),
    /// Copy a run's transition buffers, optionally filtered by kind.
    ExportBuffer(commands::ExportBufferArgs),
    /// Aggregate test metrics over seed runs.
    Report(report::ReportArgs),
    /// Write a seeded synthetic price CSV.
    Synth(commands::SynthArgs),
}

/// Ticker list and date window shared by the data commands.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Price CSV `date,ticker,open,high,low,close,volume[,shares_outstanding]`.
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated tickers; all by default.
    #[arg(long, value_delimiter = ',')]
    pub tickers: Vec<String>,
    #[arg(long)]
    pub start: Option<chrono::NaiveDate>,
    #[arg(long)]
    pub end: Option<chrono::NaiveDate>,
}

impl DataArgs {
    pub fn load(&self) -> anyhow::Result<mbnf_core::market::PriceTable> {
        let range = match (self.start, self.end) {
            (None, None) => None,
            (lo, hi) => Some((lo.unwrap_or(chrono::NaiveDate::MIN), hi.unwrap_or(chrono::NaiveDate::MAX))),
        };
        Ok(mbnf_core::market::load_ohlcv(&self.data, &self.tickers, range)?)
    }
}

pub fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Indicators(a) => commands::indicators(&a),
        Command::FitStable(a) => commands::fit_stable(&a),
        Command::Train(a) => train::train(&a).map(|_| ()),
        Command::Backtest(a) => commands::backtest(&a),
        Command::Causality(a) => commands::causality(&a),
        Command::Sharpness(a) => commands::sharpness(&a),
        Command::ExportBuffer(a) => commands::export_buffer(&a),
        Command::Report(a) => report::report(&a),
        Command::Synth(a) => commands::synth(&a),
    }
}

/// Exit code for a failed command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<mbnf_core::Error>() {
            if matches!(e, mbnf_core::Error::InvalidConfig(_) | mbnf_core::Error::SplitOrder(_)) {
                return EXIT_CONFIG;
            }
        }
    }
    EXIT_RUNTIME
}

/// Parses `argv` (program name first), runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
