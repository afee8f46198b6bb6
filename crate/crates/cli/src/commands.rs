//! Data, analysis and backtest subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use mbnf_core::analysis::{critic_sharpness, export_buffer as write_buffer, flow_sharpness, read_buffer_export};
use mbnf_core::causality::{causality_matrix, edge_list, PcConfig};
use mbnf_core::dynamics::{SampleKind, TransitionSample};
use mbnf_core::flow::FlowModel;
use mbnf_core::market::{compute_indicators, write_indicators, write_ohlcv};
use mbnf_core::metrics::{compute_metrics, MetricsReport};
use mbnf_core::sac::SacAgent;
use mbnf_core::stable::{self, histogram, price_diff_series};
use mbnf_core::synth::{synthetic_market, SynthConfig};

use crate::train::read_equity;
use crate::DataArgs;

/// Report column headers, in the order of [`MetricsReport::values`].
pub const TABLE_COLUMNS: [&str; 7] = [
    "Annualized Return",
    "Cumulative Return",
    "Annualized Volatility",
    "Sharpe Ratio",
    "Calmar Ratio",
    "Stability",
    "Maximum Drawdown",
];

/// Causality thresholds written as edge lists, in percent.
pub const EDGE_THRESHOLDS: [u32; 3] = [30, 50, 70];

fn csv_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Debug, Clone, Args)]
pub struct IndicatorsArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn indicators(args: &IndicatorsArgs) -> anyhow::Result<()> {
    let prices = args.data.load()?;
    write_indicators(&args.out, &prices, &compute_indicators(&prices))?;
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct FitStableArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Parameter table `ticker,alpha,beta,mu,sigma`.
    #[arg(long)]
    pub out: PathBuf,
    /// Histogram CSV of the price differences; defaults to `<out stem>_hist.csv`.
    #[arg(long)]
    pub hist: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
}

pub fn default_hist_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("stable");
    out.with_file_name(format!("{stem}_hist.csv"))
}

pub fn fit_stable(args: &FitStableArgs) -> anyhow::Result<()> {
    let prices = args.data.load()?;
    let mut params = String::from("ticker,alpha,beta,mu,sigma\n");
    let mut hist = String::from("ticker,bin_lo,bin_hi,count,density\n");
    for (ticker, close) in prices.tickers.iter().zip(&prices.close) {
        let diffs = price_diff_series(close)?;
        let p = stable::fit_stable(&diffs).with_context(|| format!("fitting {ticker}"))?;
        params.push_str(&format!("{ticker},{},{},{},{}\n", p.alpha, p.beta, p.mu, p.sigma));
        for (lo, hi, count, density) in histogram(&diffs, args.bins)? {
            hist.push_str(&format!("{ticker},{lo},{hi},{count},{density}\n"));
        }
    }
    fs::write(&args.out, params)?;
    let hist_path = args.hist.clone().unwrap_or_else(|| default_hist_path(&args.out));
    fs::write(hist_path, hist)?;
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct BacktestArgs {
    /// Equity curve CSV `date,asset`.
    #[arg(long)]
    pub equity: PathBuf,
    /// Output directory; defaults to the equity file's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// One-row CSV with [`TABLE_COLUMNS`]; undefined ratios are empty cells.
pub fn metrics_csv(m: &MetricsReport) -> String {
    let values: Vec<String> = m.values().into_iter().map(csv_cell).collect();
    format!("{}\n{}\n", TABLE_COLUMNS.join(","), values.join(","))
}

pub fn backtest(args: &BacktestArgs) -> anyhow::Result<()> {
    let (_, curve) = read_equity(&args.equity)?;
    let report = compute_metrics(&curve)?;
    let dir = match &args.out {
        Some(d) => d.clone(),
        None => args.equity.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    fs::create_dir_all(&dir)?;
    let stem = args.equity.file_stem().and_then(|s| s.to_str()).unwrap_or("equity");
    let json = serde_json::to_string_pretty(&report)?;
    fs::write(dir.join(format!("{stem}_report.json")), format!("{json}\n"))?;
    fs::write(dir.join(format!("{stem}_report.csv")), metrics_csv(&report))?;
    println!("{json}");
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct CausalityArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub embedding: usize,
    #[arg(long, default_value_t = 1)]
    pub lag: usize,
    #[arg(long, default_value_t = 3)]
    pub neighbors: usize,
    #[arg(long, default_value_t = 1)]
    pub horizon: usize,
}

fn matrix_csv(tickers: &[String], m: &[Vec<f64>]) -> String {
    let mut out = format!("ticker,{}\n", tickers.join(","));
    for (t, row) in tickers.iter().zip(m) {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        out.push_str(&format!("{t},{}\n", cells.join(",")));
    }
    out
}

pub fn causality(args: &CausalityArgs) -> anyhow::Result<()> {
    let cfg = PcConfig {
        embedding: args.embedding,
        lag: args.lag,
        neighbors: args.neighbors,
        horizon: args.horizon,
    };
    cfg.validate()?;
    let prices = args.data.load()?;
    let m = causality_matrix(&prices, &cfg)?;
    fs::create_dir_all(&args.out)?;
    for (name, mat) in [("positive", &m.positive), ("negative", &m.negative), ("dark", &m.dark)] {
        fs::write(args.out.join(format!("{name}.csv")), matrix_csv(&m.tickers, mat))?;
    }
    for pct in EDGE_THRESHOLDS {
        let theta = pct as f64 / 100.0;
        let mut out = String::from("kind,from,to,weight\n");
        for (kind, mat) in [("positive", &m.positive), ("negative", &m.negative)] {
            for (i, j, w) in edge_list(mat, theta) {
                out.push_str(&format!("{kind},{},{},{w}\n", m.tickers[i], m.tickers[j]));
            }
        }
        fs::write(args.out.join(format!("edges_theta{pct}.csv")), out)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SharpnessTarget {
    Critic,
    Flow,
}

#[derive(Debug, Clone, Args)]
pub struct SharpnessArgs {
    #[arg(long, value_enum)]
    pub target: SharpnessTarget,
    /// A run directory, or a single checkpoint directory.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Transition buffer used as the fixed loss sample; defaults to the run's `buffer_export.csv`.
    #[arg(long)]
    pub buffer: Option<PathBuf>,
    /// Output CSV `episode,lambda_max`; defaults to `sharpness_<target>.csv` in the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    pub samples: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
}

/// `(episode, checkpoint dir)` pairs and the run directory they belong to.
fn checkpoint_dirs(path: &Path) -> anyhow::Result<(PathBuf, Vec<(usize, PathBuf)>)> {
    let index = |p: &Path| -> Option<usize> { p.file_name()?.to_str()?.strip_prefix("refit_")?.parse().ok() };
    if path.join("agent").is_dir() {
        let run = path.parent().and_then(Path::parent).map(Path::to_path_buf).unwrap_or_default();
        return Ok((run, vec![(index(path).unwrap_or(0), path.to_path_buf())]));
    }
    let (run, root) = if path.join("checkpoints").is_dir() {
        (path.to_path_buf(), path.join("checkpoints"))
    } else {
        (path.parent().map(Path::to_path_buf).unwrap_or_default(), path.to_path_buf())
    };
    let mut found = Vec::new();
    for entry in fs::read_dir(&root).with_context(|| format!("listing {}", root.display()))? {
        let p = entry?.path();
        if let Some(k) = index(&p) {
            found.push((k, p));
        }
    }
    if found.is_empty() {
        bail!("no refit checkpoints under {}", root.display());
    }
    found.sort();
    Ok((run, found))
}

pub fn sharpness(args: &SharpnessArgs) -> anyhow::Result<()> {
    let (run, checkpoints) = checkpoint_dirs(&args.checkpoint)?;
    let buffer_path = args.buffer.clone().unwrap_or_else(|| run.join("buffer_export.csv"));
    let rows = read_buffer_export(&buffer_path)?;
    let pick = |kind: SampleKind| -> Vec<(TransitionSample, Vec<f64>)> {
        rows.iter().filter(|(x, _)| x.kind == kind).take(args.samples).cloned().collect()
    };
    let real = pick(SampleKind::Real);
    let mut out = String::from("episode,lambda_max\n");
    for (episode, dir) in &checkpoints {
        let result = match args.target {
            SharpnessTarget::Critic => {
                let agent = SacAgent::load(&dir.join("agent"))?;
                let mut batch: Vec<TransitionSample> = pick(SampleKind::Model).into_iter().map(|(x, _)| x).collect();
                if batch.is_empty() {
                    batch = real.iter().map(|(x, _)| x.clone()).collect();
                }
                let (inputs, targets) = agent.critic_targets(&batch)?;
                critic_sharpness(agent.q_nets()[0], &inputs, &targets, args.tol, args.max_iter)?
            }
            SharpnessTarget::Flow => {
                let stem = dir.join("dynamics").join("flow");
                if !stem.with_extension("json").exists() {
                    bail!("{} holds no flow model", dir.display());
                }
                let flow = FlowModel::load(&stem)?;
                let d = flow.dim();
                let deltas: Vec<Vec<f64>> = real.iter().map(|(_, delta)| delta[1..=d].to_vec()).collect();
                flow_sharpness(&flow, &deltas, args.tol, args.max_iter)?
            }
        };
        out.push_str(&format!("{episode},{}\n", result.lambda_max));
    }
    let target = match args.target {
        SharpnessTarget::Critic => "critic",
        SharpnessTarget::Flow => "flow",
    };
    let path = args.out.clone().unwrap_or_else(|| run.join(format!("sharpness_{target}.csv")));
    fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BufferKind {
    All,
    Real,
    Model,
}

#[derive(Debug, Clone, Args)]
pub struct ExportBufferArgs {
    /// Run directory holding `buffer_export.csv`.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = BufferKind::All)]
    pub kind: BufferKind,
}

pub fn export_buffer(args: &ExportBufferArgs) -> anyhow::Result<()> {
    let rows = read_buffer_export(&args.run.join("buffer_export.csv"))?;
    let keep = |k: SampleKind| match args.kind {
        BufferKind::All => true,
        BufferKind::Real => k == SampleKind::Real,
        BufferKind::Model => k == SampleKind::Model,
    };
    let (real, model): (Vec<_>, Vec<_>) = rows
        .into_iter()
        .map(|(x, _)| x)
        .filter(|x| keep(x.kind))
        .partition(|x| x.kind == SampleKind::Real);
    let n = write_buffer(&args.out, &real, &model)?;
    eprintln!("wrote {n} transitions to {}", args.out.display());
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub stocks: Option<usize>,
    #[arg(long)]
    pub days: Option<usize>,
    /// Daily trend increment per stock.
    #[arg(long)]
    pub drift: Option<f64>,
}

pub fn synth(args: &SynthArgs) -> anyhow::Result<()> {
    let mut cfg = SynthConfig::default();
    cfg.n_stocks = args.stocks.unwrap_or(cfg.n_stocks);
    cfg.n_days = args.days.unwrap_or(cfg.n_days);
    cfg.drift = args.drift.unwrap_or(cfg.drift);
    write_ohlcv(&args.out, &synthetic_market(&cfg, args.seed)?)?;
    Ok(())
}
