//! `report`: per-metric mean, min and max over seed runs, grouped by model
//! and indicator setting.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use mbnf_core::mbrl::ModelKind;
use mbnf_core::metrics::MetricsReport;

use crate::commands::TABLE_COLUMNS;
use crate::config::RunManifest;
use crate::train::SplitMetrics;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Run directories, or directories whose children are runs.
    #[arg(long, num_args = 1.., required = true)]
    pub runs: Vec<PathBuf>,
    /// Long-form CSV; a wide summary goes to `<stem>_table.csv` beside it.
    #[arg(long, default_value = "report.csv")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub model: ModelKind,
    pub indicators: bool,
    pub n_seeds: usize,
    pub metric: &'static str,
    /// Seeds on which the metric is defined; `mean`, `min`, `max` are over these.
    pub n_defined: usize,
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

/// Run directories below `paths`, in sorted order.
pub fn discover_runs(paths: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut runs = Vec::new();
    for p in paths {
        if p.join("config.json").is_file() {
            runs.push(p.clone());
            continue;
        }
        let mut children: Vec<PathBuf> = fs::read_dir(p)
            .with_context(|| format!("listing {}", p.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|c| c.join("config.json").is_file())
            .collect();
        children.sort();
        runs.extend(children);
    }
    if runs.is_empty() {
        bail!("no run directories found");
    }
    Ok(runs)
}

fn read_metrics(run: &Path, split: Split) -> anyhow::Result<MetricsReport> {
    let path = run.join("metrics.json");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let m: SplitMetrics = serde_json::from_str(&text)?;
    Ok(match split {
        Split::Train => m.train,
        Split::Val => m.val,
        Split::Test => m.test,
    })
}

/// Model, seeds seen and their metrics.
type Group = (ModelKind, Vec<u64>, Vec<MetricsReport>);

/// Rows ordered by model, then metric, then with-indicators before without.
pub fn aggregate(runs: &[PathBuf], split: Split) -> anyhow::Result<Vec<ReportRow>> {
    let mut groups: BTreeMap<(u8, bool), Group> = BTreeMap::new();
    for run in runs {
        let manifest = RunManifest::read(run)?;
        let model = manifest.config.model;
        let with = manifest.config.use_indicators;
        let key = (model as u8, !with);
        let entry = groups.entry(key).or_insert_with(|| (model, Vec::new(), Vec::new()));
        if entry.1.contains(&manifest.seed) {
            bail!("seed {} of {} appears twice", manifest.seed, model.as_str());
        }
        entry.1.push(manifest.seed);
        entry.2.push(read_metrics(run, split)?);
    }
    let mut rows = Vec::new();
    let models: Vec<u8> = {
        let mut m: Vec<u8> = groups.keys().map(|k| k.0).collect();
        m.dedup();
        m
    };
    for model in models {
        for (mi, &metric) in TABLE_COLUMNS.iter().enumerate() {
            for without in [false, true] {
                let Some((kind, seeds, reports)) = groups.get(&(model, without)) else {
                    continue;
                };
                let vals: Vec<f64> = reports.iter().filter_map(|r| r.values()[mi]).collect();
                let n = vals.len();
                rows.push(ReportRow {
                    model: *kind,
                    indicators: !without,
                    n_seeds: seeds.len(),
                    metric,
                    n_defined: n,
                    mean: (n > 0).then(|| vals.iter().sum::<f64>() / n as f64),
                    min: vals.iter().copied().reduce(f64::min),
                    max: vals.iter().copied().reduce(f64::max),
                });
            }
        }
    }
    Ok(rows)
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn group_label(model: ModelKind, indicators: bool) -> String {
    if indicators {
        model.as_str().to_string()
    } else {
        format!("{} (no indicators)", model.as_str())
    }
}

pub fn report(args: &ReportArgs) -> anyhow::Result<()> {
    let runs = discover_runs(&args.runs)?;
    let rows = aggregate(&runs, args.split)?;

    let mut long = String::from("model,indicators,n_seeds,metric,n_defined,mean,min,max\n");
    for r in &rows {
        long.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.model.as_str(),
            if r.indicators { "with" } else { "without" },
            r.n_seeds,
            r.metric,
            r.n_defined,
            cell(r.mean),
            cell(r.min),
            cell(r.max)
        ));
    }
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&args.out, long)?;

    let mut labels: Vec<(ModelKind, bool)> = Vec::new();
    for r in &rows {
        if !labels.contains(&(r.model, r.indicators)) {
            labels.push((r.model, r.indicators));
        }
    }
    let mut table = String::from("Backtest Indicators");
    for &(m, i) in &labels {
        table.push(',');
        table.push_str(&group_label(m, i));
    }
    table.push('\n');
    for metric in TABLE_COLUMNS {
        table.push_str(metric);
        for &(m, i) in &labels {
            let mean = rows
                .iter()
                .find(|r| r.metric == metric && r.model == m && r.indicators == i)
                .and_then(|r| r.mean);
            table.push(',');
            table.push_str(&cell(mean));
        }
        table.push('\n');
    }
    let stem = args.out.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    fs::write(args.out.with_file_name(format!("{stem}_table.csv")), table)?;
    Ok(())
}
