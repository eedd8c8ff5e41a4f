//! Variant-by-seed sweeps and their persisted records.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Mutex;
use std::thread;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::Metrics;
use super::pipeline::binding_for;
use super::trainer::{evaluate, train, EpochStats, TrainConfig};
use crate::data::SampleSet;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Stdn, Variant};

pub const RUN_RECORD_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub variant: Variant,
    pub seed: u64,
    pub config_digest: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub history: Vec<EpochStats>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub stopped_early: bool,
    pub params_digest: String,
    pub metrics: Option<Metrics>,
    /// Seconds; left empty unless timing was requested so that records of
    /// identical runs compare byte for byte.
    pub wall_clock_s: Option<f64>,
}

impl RunRecord {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn config_digest(model: &ModelConfig, train: &TrainConfig) -> Result<String> {
    let mut bytes = serde_json::to_vec(model)?;
    bytes.extend(serde_json::to_vec(train)?);
    Ok(sha256_hex(&bytes))
}

pub fn params_digest(model: &Stdn) -> Result<String> {
    let mut buf = Vec::new();
    model.save(&mut buf)?;
    Ok(sha256_hex(&buf))
}

/// Index sets a run trains, selects and scores on.
#[derive(Debug, Clone, Copy)]
pub struct RunData<'a> {
    pub set: &'a SampleSet,
    pub train: &'a [usize],
    pub val: &'a [usize],
    pub test: &'a [usize],
}

/// Train one model from a fresh seed, then score it on the test indices
/// (if any).
pub fn run_once(data: RunData<'_>, model: &ModelConfig, train_cfg: &TrainConfig, timed: bool) -> Result<(Stdn, RunRecord)> {
    let clock = Instant::now();
    let fresh = Stdn::new(model.clone(), train_cfg.seed)?;
    let mut outcome = train(fresh, data.set, data.train, data.val, train_cfg)?;
    outcome.model.set_data_binding(Some(binding_for(data.set)));
    let metrics = if data.test.is_empty() {
        None
    } else {
        Some(evaluate(&outcome.model, data.set, data.test, train_cfg.eval_threshold, train_cfg.threads)?)
    };
    let best_val_loss = outcome
        .best_epoch
        .and_then(|e| outcome.history.get(e - 1))
        .and_then(|h| h.val_loss);
    let record = RunRecord {
        schema_version: RUN_RECORD_SCHEMA,
        variant: model.variant,
        seed: train_cfg.seed,
        config_digest: config_digest(model, train_cfg)?,
        model: model.clone(),
        train: train_cfg.clone(),
        history: outcome.history,
        best_epoch: outcome.best_epoch,
        best_val_loss,
        stopped_early: outcome.stopped_early,
        params_digest: params_digest(&outcome.model)?,
        metrics,
        wall_clock_s: timed.then(|| clock.elapsed().as_secs_f64()),
    };
    Ok((outcome.model, record))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationPlan {
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    /// Shared architecture; the variant field is overridden per cell.
    pub model: ModelConfig,
    /// Shared training settings; the seed is overridden per cell.
    pub train: TrainConfig,
    /// Cells trained concurrently.
    pub jobs: usize,
    pub timed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CellOutcome {
    Done(RunRecord),
    Failed {
        variant: Variant,
        seed: u64,
        error: String,
        exit_code: i32,
    },
}

impl CellOutcome {
    pub fn variant(&self) -> Variant {
        match self {
            CellOutcome::Done(r) => r.variant,
            CellOutcome::Failed { variant, .. } => *variant,
        }
    }
}

/// Mean and sample standard deviation (0 for a single value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub variant: Variant,
    pub completed: usize,
    pub failed: usize,
    pub rmse_start: Option<Summary>,
    pub mape_start: Option<Summary>,
    pub rmse_end: Option<Summary>,
    pub mape_end: Option<Summary>,
}

impl ReportRow {
    /// Mean over seeds of the per-run mean RMSE across both tasks.
    pub fn mean_rmse(&self) -> Option<f64> {
        match (self.rmse_start, self.rmse_end) {
            (Some(s), Some(e)) => Some((s.mean + e.mean) / 2.0),
            (Some(s), None) => Some(s.mean),
            (None, Some(e)) => Some(e.mean),
            (None, None) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<ReportRow>,
    pub cells: Vec<CellOutcome>,
}

impl AblationReport {
    pub fn any_failed(&self) -> bool {
        self.cells.iter().any(|c| matches!(c, CellOutcome::Failed { .. }))
    }

    /// Highest exit code among failed cells, 0 if none failed.
    pub fn exit_code(&self) -> i32 {
        self.cells
            .iter()
            .filter_map(|c| match c {
                CellOutcome::Failed { exit_code, .. } => Some(*exit_code),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn row(&self, variant: Variant) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    fn fmt_summary(s: Option<Summary>) -> String {
        s.map_or_else(|| "n/a".to_string(), |s| format!("{:.4}±{:.4}", s.mean, s.std))
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["variant", "seed-count", "failed", "rmse_start", "mape_start", "rmse_end", "mape_end"])?;
        for r in &self.rows {
            w.write_record([
                r.variant.name().to_string(),
                r.completed.to_string(),
                r.failed.to_string(),
                Self::fmt_summary(r.rmse_start),
                Self::fmt_summary(r.mape_start),
                Self::fmt_summary(r.rmse_end),
                Self::fmt_summary(r.mape_end),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_text(&self) -> String {
        let header = ["variant", "seeds", "rmse_start", "mape_start", "rmse_end", "mape_end"];
        let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for r in &self.rows {
            let seeds = if r.failed > 0 {
                format!("{} ({} failed)", r.completed, r.failed)
            } else {
                r.completed.to_string()
            };
            rows.push(vec![
                r.variant.name().to_string(),
                seeds,
                Self::fmt_summary(r.rmse_start),
                Self::fmt_summary(r.mape_start),
                Self::fmt_summary(r.rmse_end),
                Self::fmt_summary(r.mape_end),
            ]);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for r in rows {
            let line: Vec<String> = r.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        out
    }
}

fn summarize(variant: Variant, cells: &[CellOutcome]) -> ReportRow {
    let done: Vec<&RunRecord> = cells
        .iter()
        .filter_map(|c| match c {
            CellOutcome::Done(r) if r.variant == variant => Some(r),
            _ => None,
        })
        .collect();
    let failed = cells
        .iter()
        .filter(|c| matches!(c, CellOutcome::Failed { variant: v, .. } if *v == variant))
        .count();
    let pick = |f: &dyn Fn(&Metrics) -> Option<f64>| {
        let v: Vec<f64> = done.iter().filter_map(|r| r.metrics.as_ref().and_then(f)).collect();
        Summary::of(&v)
    };
    ReportRow {
        variant,
        completed: done.len(),
        failed,
        rmse_start: pick(&|m| m.start.rmse),
        mape_start: pick(&|m| m.start.mape),
        rmse_end: pick(&|m| m.end.rmse),
        mape_end: pick(&|m| m.end.mape),
    }
}

/// Record file name for one cell.
pub fn record_file_name(variant: Variant, seed: u64) -> String {
    format!("{}-seed{seed}.json", variant.name().to_lowercase())
}

/// Train every (variant, seed) cell on identical samples. A failing cell
/// is recorded and the sweep continues. Records are handed to `persist`
/// as they complete.
pub fn run_ablation(
    data: RunData<'_>,
    plan: &AblationPlan,
    persist: Option<&(dyn Fn(&RunRecord) -> Result<()> + Sync)>,
) -> Result<AblationReport> {
    if plan.variants.is_empty() || plan.seeds.is_empty() {
        return Err(Error::config("ablation needs at least one variant and one seed"));
    }
    let cells: Vec<(Variant, u64)> = plan
        .variants
        .iter()
        .flat_map(|&v| plan.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let run_cell = |&(variant, seed): &(Variant, u64)| -> CellOutcome {
        let model = ModelConfig {
            variant,
            ..plan.model.clone()
        };
        let train_cfg = TrainConfig {
            seed,
            ..plan.train.clone()
        };
        info!("training {variant} seed {seed}");
        let result = run_once(data, &model, &train_cfg, plan.timed).and_then(|(_, record)| {
            if let Some(p) = persist {
                p(&record)?;
            }
            Ok(record)
        });
        match result {
            Ok(r) => CellOutcome::Done(r),
            Err(e) => {
                warn!("{variant} seed {seed} failed: {e}");
                CellOutcome::Failed {
                    variant,
                    seed,
                    error: e.to_string(),
                    exit_code: e.exit_code(),
                }
            }
        }
    };
    let outcomes: Vec<CellOutcome> = if plan.jobs <= 1 {
        cells.iter().map(run_cell).collect()
    } else {
        let slots: Mutex<Vec<Option<CellOutcome>>> = Mutex::new(vec![None; cells.len()]);
        let next = Mutex::new(0usize);
        thread::scope(|s| {
            for _ in 0..plan.jobs.min(cells.len()) {
                s.spawn(|| loop {
                    let k = {
                        let mut n = next.lock().expect("queue lock");
                        let k = *n;
                        *n += 1;
                        k
                    };
                    let Some(cell) = cells.get(k) else { break };
                    let out = run_cell(cell);
                    slots.lock().expect("slot lock")[k] = Some(out);
                });
            }
        });
        slots
            .into_inner()
            .expect("slot lock")
            .into_iter()
            .zip(&cells)
            .map(|(o, &(variant, seed))| {
                o.unwrap_or(CellOutcome::Failed {
                    variant,
                    seed,
                    error: "worker panicked".into(),
                    exit_code: 3,
                })
            })
            .collect()
    };
    let rows = plan.variants.iter().map(|&v| summarize(v, &outcomes)).collect();
    Ok(AblationReport { rows, cells: outcomes })
}

/// Write each record to `dir` as JSON via a temp-file rename.
pub fn persist_to_dir(dir: &Path) -> impl Fn(&RunRecord) -> Result<()> + Sync + '_ {
    move |r: &RunRecord| {
        let path = dir.join(record_file_name(r.variant, r.seed));
        crate::io_util::write_atomic(&path, r.to_json()?.as_bytes())
    }
}
