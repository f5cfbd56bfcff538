use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::evaluate::evaluate;
use super::metrics::MetricsReport;
use super::train::{train, TrainConfig, TrainTrace};
use super::wilcoxon::wilcoxon_signed_rank;
use crate::corpus::{stratified_split_indices, EmbeddingTable, LabeledExample};
use crate::diffcore::RngStream;
use crate::encoder::HyperParams;
use crate::error::{Error, Result};
use crate::mcd::McdConfig;
use crate::model::{Model, ModelKind, ModelSpec};
use crate::vi::ViConfig;

const RUN_STREAM: u64 = 0xE8E7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Protocol {
    /// 80% train / 20% test; the best run is reported.
    #[serde(rename = "80_20")]
    Split80_20,
    /// 40% train / 60% test; mean and variance over runs are reported.
    #[serde(rename = "40_60")]
    Split40_60,
}

impl Protocol {
    pub fn train_fraction(self) -> f64 {
        match self {
            Protocol::Split80_20 => 0.8,
            Protocol::Split40_60 => 0.4,
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Split80_20 => "80_20",
            Protocol::Split40_60 => "40_60",
        })
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "80_20" | "split80_20" => Ok(Protocol::Split80_20),
            "40_60" | "split40_60" => Ok(Protocol::Split40_60),
            other => Err(Error::Config(format!(
                "unknown protocol {other:?} (expected 80_20 or 40_60)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    pub runs: usize,
    pub models: Vec<ModelKind>,
    pub hp: HyperParams,
    pub mcd: McdConfig,
    pub vi: ViConfig,
    /// `seed` is the root seed; each run derives its own.
    pub train: TrainConfig,
    /// Worker threads for independent runs; 1 runs them in sequence.
    pub jobs: usize,
}

impl ExperimentConfig {
    pub fn new(protocol: Protocol) -> Self {
        ExperimentConfig {
            protocol,
            runs: 10,
            models: ModelKind::ALL.to_vec(),
            hp: HyperParams::default(),
            mcd: McdConfig::default(),
            vi: ViConfig::default(),
            train: TrainConfig {
                track_train_accuracy: false,
                ..TrainConfig::default()
            },
            jobs: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if self.models.is_empty() {
            return Err(Error::Config("no model kinds selected".into()));
        }
        let mut seen = self.models.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.models.len() {
            return Err(Error::Config("model kinds listed more than once".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        self.train.validate()?;
        for kind in &self.models {
            self.spec(*kind).validate()?;
        }
        Ok(())
    }

    pub fn spec(&self, kind: ModelKind) -> ModelSpec {
        ModelSpec {
            kind,
            hp: self.hp.clone(),
            mcd: self.mcd.clone(),
            vi: self.vi.clone(),
        }
    }
}

/// The encoded corpus an experiment draws its splits from.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub examples: Vec<LabeledExample>,
    pub vocab_size: usize,
    pub embeddings: Option<EmbeddingTable>,
}

/// Seeds of one run. All model kinds in a run share them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSeeds {
    pub split: u64,
    pub init: u64,
    pub train: u64,
    pub eval: u64,
}

impl RunSeeds {
    pub fn derive(root: u64, run: usize) -> Self {
        use rand::RngCore;
        let mut r = RngStream::new(root, RUN_STREAM).derive(run as u64);
        RunSeeds {
            split: r.next_u64(),
            init: r.next_u64(),
            train: r.next_u64(),
            eval: r.next_u64(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRun {
    pub model_kind: ModelKind,
    pub metrics: MetricsReport,
    pub final_loss: Option<f64>,
    pub trace: TrainTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run: usize,
    pub seeds: RunSeeds,
    pub n_train: usize,
    pub n_test: usize,
    pub test_positives: usize,
    pub models: Vec<ModelRun>,
}

/// Mean, population variance and standard deviation of one metric over runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub mean: f64,
    pub variance: f64,
    pub std_dev: f64,
}

impl MetricStat {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Usage("no values to aggregate".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(MetricStat {
            mean,
            variance,
            std_dev: variance.sqrt(),
        })
    }
}

/// Per-model aggregate, metrics in reporting order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model_kind: ModelKind,
    pub accuracy: MetricStat,
    pub mean_entropy: MetricStat,
    pub non_urgent_precision: MetricStat,
    pub non_urgent_recall: MetricStat,
    pub non_urgent_f1: MetricStat,
    pub urgent_precision: MetricStat,
    pub urgent_recall: MetricStat,
    pub urgent_f1: MetricStat,
    /// Run with the highest accuracy (ties go to the earliest run).
    pub best_run: usize,
    pub best: MetricsReport,
}

/// Paired signed-rank comparison of one metric between two model kinds
/// (differences `model − baseline`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: String,
    pub model_kind: ModelKind,
    pub baseline: ModelKind,
    pub n_nonzero: Option<usize>,
    pub w_plus: Option<f64>,
    pub p_two_sided: Option<f64>,
    pub p_less: Option<f64>,
    pub p_greater: Option<f64>,
    pub exact: Option<bool>,
    /// Why no p-value was computed, if none was.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub protocol: Protocol,
    pub train_fraction: f64,
    pub runs: usize,
    pub root_seed: u64,
    /// Which table the protocol headlines: "best_run" or "mean_variance".
    pub headline: String,
    pub models: Vec<ModelSummary>,
    pub comparisons: Vec<Comparison>,
    pub per_run: Vec<RunResult>,
}

impl ExperimentSummary {
    pub fn model(&self, kind: ModelKind) -> Option<&ModelSummary> {
        self.models.iter().find(|m| m.model_kind == kind)
    }
}

/// Metrics compared with the signed-rank test against the baseline.
pub const COMPARED_METRICS: [&str; 2] = ["mean_entropy", "urgent_recall"];

fn metric_value(m: &MetricsReport, name: &str) -> f64 {
    match name {
        "accuracy" => m.accuracy,
        "mean_entropy" => m.mean_entropy,
        "non_urgent_precision" => m.non_urgent.precision,
        "non_urgent_recall" => m.non_urgent.recall,
        "non_urgent_f1" => m.non_urgent.f1,
        "urgent_precision" => m.urgent.precision,
        "urgent_recall" => m.urgent.recall,
        "urgent_f1" => m.urgent.f1,
        _ => unreachable!("unknown metric {name}"),
    }
}

/// Trains and evaluates every configured model kind on one stratified split.
pub fn run_once(data: &ExperimentData, cfg: &ExperimentConfig, run: usize) -> Result<RunResult> {
    let seeds = RunSeeds::derive(cfg.train.seed, run);
    let labels: Vec<u8> = data.examples.iter().map(|e| e.label).collect();
    let (train_idx, test_idx) = stratified_split_indices(&labels, cfg.protocol.train_fraction(), seeds.split)?;
    let train_set: Vec<LabeledExample> = train_idx.iter().map(|&i| data.examples[i].clone()).collect();
    let test_set: Vec<LabeledExample> = test_idx.iter().map(|&i| data.examples[i].clone()).collect();
    let mut models = Vec::with_capacity(cfg.models.len());
    for &kind in &cfg.models {
        let mut model = Model::new(cfg.spec(kind), data.vocab_size, data.embeddings.as_ref(), seeds.init)?;
        let trace = train(
            &mut model,
            &train_set,
            &TrainConfig {
                seed: seeds.train,
                ..cfg.train.clone()
            },
        )?;
        let metrics = evaluate(&model, &test_set, RngStream::new(seeds.eval, 0))?;
        log::info!(
            "run {run} {kind}: accuracy {:.4} urgent recall {:.4} entropy {:.4}",
            metrics.accuracy,
            metrics.urgent.recall,
            metrics.mean_entropy
        );
        models.push(ModelRun {
            model_kind: kind,
            metrics,
            final_loss: trace.epochs.last().map(|e| e.loss),
            trace,
        });
    }
    Ok(RunResult {
        run,
        seeds,
        n_train: train_set.len(),
        n_test: test_set.len(),
        test_positives: test_set.iter().filter(|e| e.label == 1).count(),
        models,
    })
}

/// Aggregates finished runs into the protocol summary.
pub fn summarize(cfg: &ExperimentConfig, per_run: Vec<RunResult>) -> Result<ExperimentSummary> {
    let mut models = Vec::new();
    for (k, &kind) in cfg.models.iter().enumerate() {
        let reports: Vec<&MetricsReport> = per_run.iter().map(|r| &r.models[k].metrics).collect();
        let stat =
            |name: &str| MetricStat::from_values(&reports.iter().map(|m| metric_value(m, name)).collect::<Vec<_>>());
        let mut best_run = 0;
        for (i, m) in reports.iter().enumerate() {
            if m.accuracy > reports[best_run].accuracy {
                best_run = i;
            }
        }
        models.push(ModelSummary {
            model_kind: kind,
            accuracy: stat("accuracy")?,
            mean_entropy: stat("mean_entropy")?,
            non_urgent_precision: stat("non_urgent_precision")?,
            non_urgent_recall: stat("non_urgent_recall")?,
            non_urgent_f1: stat("non_urgent_f1")?,
            urgent_precision: stat("urgent_precision")?,
            urgent_recall: stat("urgent_recall")?,
            urgent_f1: stat("urgent_f1")?,
            best_run: per_run[best_run].run,
            best: reports[best_run].clone(),
        });
    }

    let mut comparisons = Vec::new();
    if let Some(base_pos) = cfg.models.iter().position(|k| *k == ModelKind::Base) {
        for (k, &kind) in cfg.models.iter().enumerate().filter(|(_, k)| **k != ModelKind::Base) {
            for metric in COMPARED_METRICS {
                let a: Vec<f64> = per_run
                    .iter()
                    .map(|r| metric_value(&r.models[k].metrics, metric))
                    .collect();
                let b: Vec<f64> = per_run
                    .iter()
                    .map(|r| metric_value(&r.models[base_pos].metrics, metric))
                    .collect();
                let mut c = Comparison {
                    metric: metric.to_string(),
                    model_kind: kind,
                    baseline: ModelKind::Base,
                    n_nonzero: None,
                    w_plus: None,
                    p_two_sided: None,
                    p_less: None,
                    p_greater: None,
                    exact: None,
                    note: None,
                };
                match wilcoxon_signed_rank(&a, &b) {
                    Ok(w) => {
                        c.n_nonzero = Some(w.n);
                        c.w_plus = Some(w.w_plus);
                        c.p_two_sided = Some(w.p_two_sided);
                        c.p_less = Some(w.p_less);
                        c.p_greater = Some(w.p_greater);
                        c.exact = Some(w.exact);
                    }
                    Err(Error::InsufficientData(msg)) => c.note = Some(msg),
                    Err(e) => return Err(e),
                }
                comparisons.push(c);
            }
        }
    }

    Ok(ExperimentSummary {
        protocol: cfg.protocol,
        train_fraction: cfg.protocol.train_fraction(),
        runs: cfg.runs,
        root_seed: cfg.train.seed,
        headline: match cfg.protocol {
            Protocol::Split80_20 => "best_run",
            Protocol::Split40_60 => "mean_variance",
        }
        .to_string(),
        models,
        comparisons,
        per_run,
    })
}

/// Runs the protocol `cfg.runs` times. Runs are independent and may execute
/// on `cfg.jobs` threads; results are collected in run order.
pub fn run_experiment(data: &ExperimentData, cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    cfg.validate()?;
    if data.examples.is_empty() {
        return Err(Error::Data("dataset is empty".into()));
    }
    let per_run: Vec<RunResult> = if cfg.jobs == 1 {
        (0..cfg.runs).map(|r| run_once(data, cfg, r)).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", cfg.jobs)))?;
        pool.install(|| {
            (0..cfg.runs)
                .into_par_iter()
                .map(|r| run_once(data, cfg, r))
                .collect::<Result<_>>()
        })?
    };
    summarize(cfg, per_run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::AttentionMode;
    use crate::synthetic::imbalanced_corpus;
    use crate::train_eval::Confusion;

    #[test]
    fn population_variance_examples() {
        let s = MetricStat::from_values(&[0.8, 0.9]).unwrap();
        assert!((s.mean - 0.85).abs() < 1e-15);
        assert!((s.variance - 0.0025).abs() < 1e-15);
        assert!((s.std_dev - 0.05).abs() < 1e-15);
        let one = MetricStat::from_values(&[0.7]).unwrap();
        assert_eq!((one.mean, one.variance), (0.7, 0.0));
    }

    fn fake_run(run: usize, accs: &[(ModelKind, usize)]) -> RunResult {
        RunResult {
            run,
            seeds: RunSeeds::derive(0, run),
            n_train: 0,
            n_test: 10,
            test_positives: 2,
            models: accs
                .iter()
                .map(|&(kind, correct)| ModelRun {
                    model_kind: kind,
                    metrics: MetricsReport::from_confusion(
                        Confusion {
                            true_negative: correct,
                            false_positive: 10 - correct,
                            ..Confusion::default()
                        },
                        0.1,
                    )
                    .unwrap(),
                    final_loss: None,
                    trace: TrainTrace {
                        model_kind: kind,
                        epochs: vec![],
                        steps: 0,
                        stopped_early: false,
                    },
                })
                .collect(),
        }
    }

    #[test]
    fn summary_of_fixture_metrics() {
        let cfg = ExperimentConfig {
            runs: 2,
            models: vec![ModelKind::Base, ModelKind::Mcd],
            ..ExperimentConfig::new(Protocol::Split80_20)
        };
        let runs = vec![
            fake_run(0, &[(ModelKind::Base, 8), (ModelKind::Mcd, 9)]),
            fake_run(1, &[(ModelKind::Base, 9), (ModelKind::Mcd, 9)]),
        ];
        let s = summarize(&cfg, runs).unwrap();
        let base = s.model(ModelKind::Base).unwrap();
        assert!((base.accuracy.mean - 0.85).abs() < 1e-15);
        assert!((base.accuracy.variance - 0.0025).abs() < 1e-15);
        assert_eq!(base.best_run, 1);
        // ties go to the earliest run
        assert_eq!(s.model(ModelKind::Mcd).unwrap().best_run, 0);
        assert_eq!(s.models.len(), 2);
        // two runs are too few for the signed-rank test
        assert!(s
            .comparisons
            .iter()
            .all(|c| c.p_two_sided.is_none() && c.note.is_some()));
    }

    fn tiny_config(protocol: Protocol, runs: usize) -> (ExperimentData, ExperimentConfig) {
        let corpus = imbalanced_corpus(60, 0.2, 8, 3);
        let data = ExperimentData {
            examples: corpus.examples,
            vocab_size: corpus.vocab_size,
            embeddings: None,
        };
        let cfg = ExperimentConfig {
            runs,
            hp: HyperParams {
                max_len: 8,
                embed_dim: 6,
                hidden: 6,
                z_dim: 3,
                attention: AttentionMode::Softmax,
            },
            mcd: McdConfig {
                dropout_rate: 0.3,
                num_samples: 5,
            },
            vi: ViConfig {
                test_samples: 5,
                ..ViConfig::default()
            },
            train: TrainConfig {
                epochs: 2,
                batch_size: 16,
                track_train_accuracy: false,
                ..TrainConfig::default()
            },
            ..ExperimentConfig::new(protocol)
        };
        (data, cfg)
    }

    #[test]
    fn single_run_has_zero_variance_and_same_splits() {
        let (data, cfg) = tiny_config(Protocol::Split40_60, 1);
        let s = run_experiment(&data, &cfg).unwrap();
        for m in &s.models {
            assert_eq!(m.accuracy.variance, 0.0);
            assert_eq!(m.urgent_f1.variance, 0.0);
        }
        assert_eq!(s.models.len(), 3);
        let r = &s.per_run[0];
        assert_eq!(r.n_train + r.n_test, 60);
        assert!(r.models.iter().all(|m| m.metrics.n_test == r.n_test));
    }

    #[test]
    fn parallel_runs_match_sequential() {
        let (data, cfg) = tiny_config(Protocol::Split80_20, 3);
        let seq = run_experiment(&data, &cfg).unwrap();
        let par = run_experiment(&data, &ExperimentConfig { jobs: 3, ..cfg }).unwrap();
        assert_eq!(
            serde_json::to_string(&seq).unwrap(),
            serde_json::to_string(&par).unwrap()
        );
    }

    #[test]
    fn protocol_names() {
        for p in [Protocol::Split80_20, Protocol::Split40_60] {
            assert_eq!(p.to_string().parse::<Protocol>().unwrap(), p);
        }
        assert_eq!(serde_json::to_string(&Protocol::Split40_60).unwrap(), "\"40_60\"");
    }
}
