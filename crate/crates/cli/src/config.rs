//! Run configuration and the per-run manifest archived next to every artifact.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use mbnf_core::dynamics::EnsembleConfig;
use mbnf_core::env::{EnvConfig, DEFAULT_H_MAX, DEFAULT_INITIAL_BALANCE};
use mbnf_core::flow::{FitOptions, FlowConfig};
use mbnf_core::market::{load_ohlcv, split_dataset, DatasetSplit, PriceTable};
use mbnf_core::mbrl::{LoopConfig, LoopSchedule, ModelKind};
use mbnf_core::sac::SacConfig;
use mbnf_core::synth::{synthetic_market, SynthConfig};
use serde::{Deserialize, Serialize};

use crate::ConfigError;

/// Share of trading days used for training and validation when no split dates are given.
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.7;
pub const DEFAULT_VAL_FRACTION: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Price CSV; relative paths resolve against the config file's directory.
    pub data: Option<PathBuf>,
    /// Generate prices instead of reading `data`.
    pub synthetic: Option<SynthConfig>,
    pub synthetic_seed: u64,
    /// Empty selects every ticker in the data.
    pub tickers: Vec<String>,
    pub start_date: Option<NaiveDate>,
    pub end_date: Option<NaiveDate>,
    pub train_end: Option<NaiveDate>,
    pub val_end: Option<NaiveDate>,
    pub cost_percentage: f64,
    pub initial_balance: f64,
    pub h_max: i64,
    pub use_indicators: bool,
    pub model: ModelKind,
    pub seeds: Vec<u64>,
    pub schedule: LoopSchedule,
    pub sac: SacConfig,
    pub flow: FlowConfig,
    pub flow_fit: FitOptions,
    pub ensemble: EnsembleConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            synthetic: None,
            synthetic_seed: 0,
            tickers: Vec::new(),
            start_date: None,
            end_date: None,
            train_end: None,
            val_end: None,
            cost_percentage: 0.001,
            initial_balance: DEFAULT_INITIAL_BALANCE,
            h_max: DEFAULT_H_MAX,
            use_indicators: true,
            model: ModelKind::Mbnf,
            seeds: (0..10).collect(),
            schedule: LoopSchedule::default(),
            sac: SacConfig::default(),
            flow: FlowConfig::default(),
            flow_fit: FitOptions::default(),
            ensemble: EnsembleConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads and validates a config; relative data paths are made absolute.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        if let Some(data) = &cfg.data {
            if data.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.data = Some(base.join(data));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match (&self.data, &self.synthetic) {
            (None, None) => return Err(ConfigError("config needs either `data` or `synthetic`".into())),
            (Some(_), Some(_)) => return Err(ConfigError("`data` and `synthetic` are mutually exclusive".into())),
            _ => {}
        }
        if self.train_end.is_some() != self.val_end.is_some() {
            return Err(ConfigError("give both `train_end` and `val_end`, or neither".into()));
        }
        if let (Some(a), Some(b)) = (self.train_end, self.val_end) {
            if a >= b {
                return Err(ConfigError(format!("train_end {a} must precede val_end {b}")));
            }
        }
        if self.seeds.is_empty() {
            return Err(ConfigError("seed list is empty".into()));
        }
        self.loop_config().validate().map_err(|e| match e {
            mbnf_core::Error::InvalidConfig(msg) => ConfigError(msg),
            other => ConfigError(other.to_string()),
        })?;
        Ok(())
    }

    pub fn env(&self) -> EnvConfig {
        EnvConfig {
            initial_balance: self.initial_balance,
            h_max: self.h_max,
            cost_percentage: self.cost_percentage,
            use_indicators: self.use_indicators,
        }
    }

    pub fn loop_config(&self) -> LoopConfig {
        LoopConfig {
            schedule: self.schedule.clone(),
            env: self.env(),
            sac: self.sac.clone(),
            flow: self.flow.clone(),
            flow_fit: self.flow_fit.clone(),
            ensemble: self.ensemble.clone(),
        }
    }

    pub fn load_prices(&self) -> anyhow::Result<PriceTable> {
        let range = match (self.start_date, self.end_date) {
            (None, None) => None,
            (lo, hi) => Some((lo.unwrap_or(NaiveDate::MIN), hi.unwrap_or(NaiveDate::MAX))),
        };
        if let Some(synth) = &self.synthetic {
            let mut table = synthetic_market(synth, self.synthetic_seed)?;
            if !self.tickers.is_empty() {
                table = table.select(&self.tickers)?;
            }
            if let Some((lo, hi)) = range {
                let a = table.dates.partition_point(|d| *d < lo);
                let b = table.dates.partition_point(|d| *d <= hi);
                if b <= a {
                    return Err(ConfigError(format!("no synthetic dates inside {lo}..={hi}")).into());
                }
                table = table.slice(a..b);
            }
            return Ok(table);
        }
        let path = self.data.as_ref().ok_or_else(|| ConfigError("no data path".into()))?;
        Ok(load_ohlcv(path, &self.tickers, range)?)
    }

    /// Date split if configured, otherwise the default train/validation fractions.
    pub fn split(&self, prices: &PriceTable) -> anyhow::Result<DatasetSplit> {
        if let (Some(a), Some(b)) = (self.train_end, self.val_end) {
            return Ok(split_dataset(prices, a, b)?);
        }
        let n = prices.n_days();
        let train = (n as f64 * DEFAULT_TRAIN_FRACTION).round() as usize;
        let val = train + (n as f64 * DEFAULT_VAL_FRACTION).round() as usize;
        if train < 2 || val <= train || val + 2 > n {
            return Err(ConfigError(format!("{n} trading days are too few to split")).into());
        }
        Ok(DatasetSplit {
            train: 0..train,
            val: train..val,
            test: val..n,
        })
    }
}

/// `config.json` of a run directory: the exact configuration, seed and tool version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
}

impl RunManifest {
    pub fn new(config: RunConfig, seed: u64) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config: RunConfig {
                seeds: vec![seed],
                ..config
            },
        }
    }

    pub fn read(run_dir: &Path) -> anyhow::Result<Self> {
        let path = run_dir.join("config.json");
        let text = fs::read_to_string(&path).map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, run_dir: &Path) -> anyhow::Result<()> {
        fs::write(run_dir.join("config.json"), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}
