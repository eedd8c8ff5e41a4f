//! Training, evaluation, baselines and ablation sweeps.

mod ablation;
mod baseline;
mod benchmark;
mod metrics;
mod pipeline;
mod trainer;

pub use ablation::{
    config_digest, params_digest, persist_to_dir, record_file_name, run_ablation, run_once, sha256_hex, AblationPlan,
    AblationReport, CellOutcome, ReportRow, RunData, RunRecord, Summary, RUN_RECORD_SCHEMA,
};
pub use benchmark::{Benchmark, BenchmarkResult};
pub use baseline::{historical_average_baseline, HistoricalAverage};
pub use metrics::{Metrics, TaskMetrics};
pub use pipeline::{binding_for, prepare, samples_for_model, DataSplit, SplitConfig};
pub use trainer::{
    evaluate, materialize, mean_loss, predict_all, train, EarlyStopping, EpochStats, StopDecision, TrainConfig,
    TrainOutcome,
};
