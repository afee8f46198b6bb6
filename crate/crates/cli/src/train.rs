//! `train`: one seeded MBNF or MBPO run per output directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use chrono::NaiveDate;
use clap::Args;
use mbnf_core::analysis::export_buffer;
use mbnf_core::dynamics::Dynamics;
use mbnf_core::env::Market;
use mbnf_core::flow::write_fit_curve;
use mbnf_core::mbrl::{evaluate, run_loop, write_refit_log, write_train_log, ModelKind, RefitLog, ReplayBuffer};
use mbnf_core::metrics::{compute_metrics, MetricsReport};
use mbnf_core::sac::SacAgent;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, RunManifest};

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's model kind (`mbnf` or `mbpo`).
    #[arg(long)]
    pub model: Option<ModelKind>,
    /// Train only this seed instead of the config's seed list.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Drop the technical-indicator block from observations.
    #[arg(long)]
    pub no_indicators: bool,
    /// Parent of the run directories.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Skip the per-refit agent and model checkpoints.
    #[arg(long)]
    pub no_checkpoints: bool,
}

/// Test-split metrics of the deterministic policy plus the other splits for reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub train: MetricsReport,
    pub val: MetricsReport,
    pub test: MetricsReport,
}

/// `<model>[-noind]-seed<seed>`.
pub fn run_dir_name(model: ModelKind, use_indicators: bool, seed: u64) -> String {
    let suffix = if use_indicators { "" } else { "-noind" };
    format!("{}{suffix}-seed{seed}", model.as_str())
}

pub fn train(args: &TrainArgs) -> anyhow::Result<Vec<PathBuf>> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(m) = args.model {
        cfg.model = m;
    }
    if args.no_indicators {
        cfg.use_indicators = false;
    }
    let seeds = match args.seed {
        Some(s) => vec![s],
        None => cfg.seeds.clone(),
    };
    let mut dirs = Vec::with_capacity(seeds.len());
    for seed in seeds {
        let dir = args.out.join(run_dir_name(cfg.model, cfg.use_indicators, seed));
        run_seed(&cfg, seed, &dir, !args.no_checkpoints).with_context(|| format!("seed {seed}"))?;
        eprintln!("wrote {}", dir.display());
        dirs.push(dir);
    }
    Ok(dirs)
}

pub fn write_equity(path: &Path, dates: &[NaiveDate], curve: &[f64]) -> anyhow::Result<()> {
    let mut out = String::from("date,asset\n");
    for (d, v) in dates.iter().zip(curve) {
        out.push_str(&format!("{d},{v}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_equity(path: &Path) -> anyhow::Result<(Vec<NaiveDate>, Vec<f64>)> {
    #[derive(Deserialize)]
    struct Row {
        date: NaiveDate,
        asset: f64,
    }
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut dates = Vec::new();
    let mut curve = Vec::new();
    for row in reader.deserialize::<Row>() {
        let row = row.with_context(|| format!("reading {}", path.display()))?;
        dates.push(row.date);
        curve.push(row.asset);
    }
    Ok((dates, curve))
}

pub fn save_dynamics(dir: &Path, dynamics: &Dynamics) -> mbnf_core::Result<()> {
    fs::create_dir_all(dir)?;
    match dynamics {
        Dynamics::Flow(m) => {
            m.flow.save(&dir.join("flow"))?;
            fs::write(dir.join("noise_scale.json"), serde_json::to_string(&m.noise_scale)?)?;
        }
        Dynamics::Ensemble(m) => fs::write(dir.join("ensemble.json"), serde_json::to_string(m)?)?,
    }
    Ok(())
}

fn save_checkpoint(dir: &Path, agent: &SacAgent, dynamics: &Dynamics) -> mbnf_core::Result<()> {
    agent.save(&dir.join("agent"))?;
    save_dynamics(&dir.join("dynamics"), dynamics)
}

/// Trains one seed into `run_dir` and returns its split metrics.
pub fn run_seed(cfg: &RunConfig, seed: u64, run_dir: &Path, checkpoints: bool) -> anyhow::Result<SplitMetrics> {
    fs::create_dir_all(run_dir)?;
    RunManifest::new(cfg.clone(), seed).write(run_dir)?;
    let prices = cfg.load_prices()?;
    let split = cfg.split(&prices)?;
    let market = Market::new(prices);
    let loop_cfg = cfg.loop_config();

    let ckpt_root = run_dir.join("checkpoints");
    let mut hook = |log: &RefitLog, agent: &SacAgent, dynamics: &Dynamics, _: &ReplayBuffer| {
        if checkpoints {
            save_checkpoint(&ckpt_root.join(format!("refit_{:03}", log.refit)), agent, dynamics)?;
        }
        Ok(())
    };
    let out = run_loop(&market, split.train.clone(), &loop_cfg, cfg.model, seed, Some(&mut hook))?;

    write_train_log(&run_dir.join("train_log.csv"), &out.steps)?;
    write_refit_log(&run_dir.join("refit_log.csv"), &out.refits)?;
    if cfg.model == ModelKind::Mbnf {
        let curve: Vec<f64> = out.refits.iter().map(|r| -r.model_loss).collect();
        write_fit_curve(&run_dir.join("flow_curve.csv"), &curve)?;
    }
    export_buffer(&run_dir.join("buffer_export.csv"), &out.env_buffer.to_vec(), &out.agent_buffer.to_vec())?;
    if checkpoints {
        save_checkpoint(&ckpt_root.join("final"), &out.agent, &out.dynamics)?;
    }

    let mut reports = Vec::with_capacity(3);
    for (name, range) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        let curve = evaluate(&out.agent, &market, range.clone(), &loop_cfg.env, 1, seed)?.remove(0);
        write_equity(&run_dir.join(format!("equity_{name}.csv")), &market.prices.dates[range.clone()], &curve)?;
        reports.push(compute_metrics(&curve)?);
    }
    let metrics = SplitMetrics {
        train: reports[0],
        val: reports[1],
        test: reports[2],
    };
    fs::write(run_dir.join("metrics.json"), serde_json::to_string_pretty(&metrics)? + "\n")?;
    Ok(metrics)
}
