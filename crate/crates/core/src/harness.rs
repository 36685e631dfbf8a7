//! Run directories, ablation sweeps and their summaries.
//!
//! A training run directory holds `checkpoint.tpsm`, `loss.csv` and
//! `config.json`. Evaluation reports are written as `*.eval.json`, which is
//! what [`summarize`] collects.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::eval::{evaluate_model, feature_variance, EvalReport, FeatureLayer};
use crate::model::SegmentationModel;
use crate::synth::{Dataset, DatasetManifest, Split};
use crate::synth::Clip;
use crate::train::{train_on, write_loss_csv, FlowProvider, Objective, TrainConfig, TrainOutcome, TrainingData};

pub const CHECKPOINT_FILE: &str = "checkpoint.tpsm";
pub const LOSS_FILE: &str = "loss.csv";
pub const CONFIG_ECHO_FILE: &str = "config.json";
pub const REPORT_SUFFIX: &str = ".eval.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const SUMMARY_HEADER: &str = "objective,eta,tau,lambda_t,miou,temporal_consistency";

pub fn config_echo(config: &TrainConfig, manifest: &DatasetManifest) -> serde_json::Value {
    json!({
        "train": config,
        "dataset": {
            "root": manifest.root,
            "content_hash": manifest.content_hash(),
        },
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Trains and writes checkpoint, loss log and config echo into `out_dir`.
pub fn train_run(data: &TrainingData, config: &TrainConfig, out_dir: &Path) -> Result<TrainOutcome> {
    config.validate()?;
    create_dir(out_dir)?;
    write_json(&out_dir.join(CONFIG_ECHO_FILE), &config_echo(config, &data.manifest))?;
    let outcome = train_on(data, config)?;
    outcome.model.save_checkpoint(&out_dir.join(CHECKPOINT_FILE))?;
    write_loss_csv(&outcome.log, &out_dir.join(LOSS_FILE))?;
    Ok(outcome)
}

/// Scores a model on the evaluation clips, with feature variance.
pub fn evaluate_run(
    model: &SegmentationModel,
    eval_clips: &[Clip],
    config: &TrainConfig,
    echo: serde_json::Value,
) -> Result<EvalReport> {
    let mut flows = FlowProvider::new(config.flow_source);
    let metrics = evaluate_model(model, eval_clips, &mut flows)?;
    let variance = feature_variance(model, eval_clips, FeatureLayer::Penultimate, config.seed)?;
    Ok(EvalReport::new(&metrics, &variance, echo))
}

pub fn load_eval_clips(manifest: &DatasetManifest) -> Result<Vec<Clip>> {
    Dataset {
        manifest: manifest.clone(),
    }
    .load_split(Split::TargetEval)
}

pub fn write_report(report: &EvalReport, path: &Path) -> Result<()> {
    write_json(path, report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grid {
    Eta,
    Tau,
    LambdaT,
}

impl Grid {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "eta" => Ok(Grid::Eta),
            "tau" => Ok(Grid::Tau),
            "lambda_t" | "lambda" => Ok(Grid::LambdaT),
            other => Err(Error::Config(format!("unknown grid {other:?}, expected eta, tau or lambda_t"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Grid::Eta => "eta",
            Grid::Tau => "tau",
            Grid::LambdaT => "lambda_t",
        }
    }

    pub fn values(self) -> &'static [f64] {
        match self {
            Grid::Eta => &[1.0, 2.0, 3.0],
            Grid::Tau => &[0.0, 0.25, 0.5],
            Grid::LambdaT => &[0.1, 0.2, 0.5, 1.0, 1.5, 2.0],
        }
    }

    /// The TPS configuration of every cell, in grid order.
    pub fn configs(self, base: &TrainConfig) -> Vec<TrainConfig> {
        self.values()
            .iter()
            .map(|&v| {
                let mut c = TrainConfig {
                    objective: Objective::Tps,
                    ..base.clone()
                };
                match self {
                    Grid::Eta => c.eta = v as usize,
                    Grid::Tau => c.tau = v,
                    Grid::LambdaT => c.lambda_t = v,
                }
                c
            })
            .collect()
    }
}

/// Runs every cell of `grid` under `out_dir/cell_{i}` and writes the summary.
pub fn ablate(manifest: &DatasetManifest, base: &TrainConfig, grid: Grid, out_dir: &Path) -> Result<Summary> {
    let configs = grid.configs(base);
    for c in &configs {
        c.validate()?;
        if manifest.length < c.eta + 2 {
            return Err(Error::ClipTooShort(format!(
                "the {} grid needs clips of at least {} frames, dataset has {}",
                grid.name(),
                c.eta + 2,
                manifest.length
            )));
        }
    }
    let data = TrainingData::load(manifest)?;
    let eval_clips = load_eval_clips(manifest)?;
    create_dir(out_dir)?;
    for (i, config) in configs.iter().enumerate() {
        let cell_dir = out_dir.join(format!("cell_{i}"));
        let outcome = train_run(&data, config, &cell_dir)?;
        let mut echo = config_echo(config, manifest);
        echo["cell"] = json!(i);
        echo["grid"] = json!(grid.name());
        let report = evaluate_run(&outcome.model, &eval_clips, config, echo)?;
        write_report(&report, &cell_dir.join(format!("cell_{i}{REPORT_SUFFIX}")))?;
        log::info!("{} cell {i}: mIoU {:.4}", grid.name(), report.miou);
    }
    let summary = summarize(out_dir)?;
    summary.write_csv(&out_dir.join(SUMMARY_FILE))?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub objective: String,
    pub eta: usize,
    pub tau: f64,
    pub lambda_t: f64,
    pub miou: f64,
    pub temporal_consistency: f64,
    pub report: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub warnings: Vec<String>,
}

impl Summary {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{SUMMARY_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.objective, r.eta, r.tau, r.lambda_t, r.miou, r.temporal_consistency
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Aligned table with a warning-count footer.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<12} {:>4} {:>6} {:>8} {:>8} {:>8}\n",
            "objective", "eta", "tau", "lambda_t", "miou", "tc"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<12} {:>4} {:>6.3} {:>8.3} {:>8.4} {:>8.4}\n",
                r.objective, r.eta, r.tau, r.lambda_t, r.miou, r.temporal_consistency
            ));
        }
        out.push_str(&format!("{} rows, {} warnings\n", self.rows.len(), self.warnings.len()));
        out
    }
}

fn collect_reports(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    for p in paths {
        if p.is_dir() {
            collect_reports(&p, out)?;
        } else if p.to_string_lossy().ends_with(REPORT_SUFFIX) {
            out.push(p);
        }
    }
    Ok(())
}

fn row_from_report(path: &Path) -> std::result::Result<(SummaryRow, Option<u64>), String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let report: EvalReport = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let train = &report.config_echo["train"];
    let config: TrainConfig = serde_json::from_value(train.clone()).map_err(|e| format!("config echo: {e}"))?;
    let cell = report.config_echo["cell"].as_u64();
    Ok((
        SummaryRow {
            objective: config.objective.name().to_string(),
            eta: config.eta,
            tau: config.tau,
            lambda_t: config.lambda_t,
            miou: report.miou,
            temporal_consistency: report.temporal_consistency,
            report: path.to_path_buf(),
        },
        cell,
    ))
}

/// Collects every report under `run_dir`, best mIoU first.
///
/// Equal mIoU keeps config order: the recorded cell index, then path.
/// Unreadable reports are skipped and counted in `warnings`.
pub fn summarize(run_dir: &Path) -> Result<Summary> {
    let mut paths = Vec::new();
    collect_reports(run_dir, &mut paths)?;
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for (order, p) in paths.iter().enumerate() {
        match row_from_report(p) {
            Ok((row, cell)) => rows.push((row, cell.unwrap_or(u64::MAX), order)),
            Err(e) => {
                log::warn!("skipping {}: {e}", p.display());
                warnings.push(format!("{}: {e}", p.display()));
            }
        }
    }
    rows.sort_by(|a, b| b.0.miou.total_cmp(&a.0.miou).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    Ok(Summary {
        rows: rows.into_iter().map(|(r, _, _)| r).collect(),
        warnings,
    })
}
