//! Desk-scale synthetic benchmark: a 4x4 city over 40 days with per-day
//! peak shifts and destination preferences that switch at noon. The last
//! 10 days are held out.

use serde::{Deserialize, Serialize};

use super::ablation::{run_ablation, AblationPlan, AblationReport, RunData};
use super::baseline::historical_average_baseline;
use super::metrics::Metrics;
use super::pipeline::{prepare, SplitConfig};
use super::trainer::TrainConfig;
use crate::data::{synthesize_city, SampleEntry, SynthConfig, TensorBundle};
use crate::error::Result;
use crate::model::{ModelConfig, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub synth: SynthConfig,
    pub data_seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitConfig,
}

impl Default for Benchmark {
    fn default() -> Self {
        Self {
            synth: SynthConfig {
                days: 40,
                ..SynthConfig::default()
            },
            data_seed: 7,
            // narrower than the full-size model so a sweep fits in minutes
            model: ModelConfig {
                patch_size: 5,
                conv_layers: 2,
                filters: 8,
                short_len: 4,
                hidden: 16,
                dropout: 0.0,
                ..ModelConfig::default()
            },
            train: TrainConfig {
                max_epochs: 40,
                learning_rate: 0.002,
                patience: 5,
                ..TrainConfig::default()
            },
            split: SplitConfig {
                test_days: 10,
                train_fraction: 0.8,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkResult {
    pub report: AblationReport,
    /// Historical average scored on the same test samples.
    pub baseline: Metrics,
}

impl BenchmarkResult {
    pub fn baseline_mean_rmse(&self) -> Option<f64> {
        Some((self.baseline.start.rmse? + self.baseline.end.rmse?) / 2.0)
    }

    pub fn mean_rmse(&self, variant: Variant) -> Option<f64> {
        self.report.row(variant)?.mean_rmse()
    }
}

impl Benchmark {
    pub fn bundle(&self) -> Result<TensorBundle> {
        let city = synthesize_city(&self.synth, self.data_seed)?;
        Ok(TensorBundle::from_trips(&city.trips, &city.grid, &city.time))
    }

    /// Train every `(variant, seed)` cell and score the baseline.
    pub fn run(&self, variants: &[Variant], seeds: &[u64], jobs: usize) -> Result<BenchmarkResult> {
        let bundle = self.bundle()?;
        let spec = self.model.sample_spec(bundle.time.intervals_per_day()?);
        let (set, split) = prepare(&bundle, &spec, &self.split)?;
        let data = RunData {
            set: &set,
            train: &split.train,
            val: &split.val,
            test: &split.test,
        };
        let plan = AblationPlan {
            variants: variants.to_vec(),
            seeds: seeds.to_vec(),
            model: self.model.clone(),
            train: self.train.clone(),
            jobs,
            timed: true,
        };
        let report = run_ablation(data, &plan, None)?;
        let test: Vec<SampleEntry> = split.test.iter().map(|&k| set.entries[k].clone()).collect();
        let baseline = historical_average_baseline(
            &bundle.volume,
            &bundle.time,
            split.fit_range.clone(),
            &test,
            self.train.eval_threshold,
        )?;
        Ok(BenchmarkResult { report, baseline })
    }
}
