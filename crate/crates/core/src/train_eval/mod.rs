//! Training, evaluation, experiment protocols and significance testing.

mod checkpoint;
mod evaluate;
mod experiment;
mod metrics;
mod optim;
mod train;
mod wilcoxon;

pub use checkpoint::{from_bytes, load_checkpoint, save_checkpoint, to_bytes, FORMAT_VERSION, MAGIC};
pub use evaluate::{evaluate, predict_all};
pub use experiment::{
    run_experiment, run_once, summarize, Comparison, ExperimentConfig, ExperimentData, ExperimentSummary, MetricStat,
    ModelRun, ModelSummary, Protocol, RunResult, RunSeeds, COMPARED_METRICS,
};
pub use metrics::{predictive_entropy, ClassMetrics, Confusion, MetricsReport};
pub use optim::{clip_grad_norm, Adam};
pub use train::{train, EpochRecord, Optimizer, TrainConfig, TrainTrace};
pub use wilcoxon::{
    exact_distribution, signed_rank_distribution, wilcoxon_p, wilcoxon_signed_rank, Alternative, WilcoxonResult,
    EXACT_MAX_N, MIN_N,
};
