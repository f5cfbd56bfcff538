use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::evaluate::evaluate;
use super::optim::{clip_grad_norm, Adam};
use crate::corpus::LabeledExample;
use crate::diffcore::{RngStream, Tape};
use crate::error::{Error, Result};
use crate::model::{Model, ModelKind};

const SHUFFLE_STREAM: u64 = 0x5407;
const NOISE_STREAM: u64 = 0x2015;
const TRACE_EVAL_STREAM: u64 = 0x7ACE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    AdaptiveMoment,
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("adaptive_moment")
    }
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "adaptive_moment" | "adam" => Ok(Optimizer::AdaptiveMoment),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub gradient_clip_norm: Option<f64>,
    /// Weight each example's loss by `n / (2 · n_class)`.
    pub class_weighting: bool,
    /// Record training-set accuracy (via the model's prediction path) each epoch.
    pub track_train_accuracy: bool,
    /// Stop once the tracked training accuracy reaches 1.
    pub stop_at_perfect_train_accuracy: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 20,
            seed: 0,
            optimizer: Optimizer::AdaptiveMoment,
            gradient_clip_norm: Some(5.0),
            class_weighting: false,
            track_train_accuracy: true,
            stop_at_perfect_train_accuracy: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate {} must be > 0",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if let Some(c) = self.gradient_clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Config(format!("gradient_clip_norm {c} must be > 0")));
            }
        }
        if self.stop_at_perfect_train_accuracy && !self.track_train_accuracy {
            return Err(Error::Config(
                "stopping at perfect train accuracy needs track_train_accuracy".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-example loss over the epoch (weighted when class weighting is on).
    pub loss: f64,
    /// Mean reconstruction cross-entropy (VI only).
    pub reconstruction: Option<f64>,
    /// Mean KL term (VI only).
    pub kl: Option<f64>,
    pub kl_weight: Option<f64>,
    pub train_accuracy: Option<f64>,
    pub max_grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub model_kind: ModelKind,
    pub epochs: Vec<EpochRecord>,
    pub steps: u64,
    pub stopped_early: bool,
}

impl TrainTrace {
    pub fn final_train_accuracy(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.train_accuracy)
    }
}

fn class_weights(examples: &[LabeledExample]) -> [f64; 2] {
    let n = examples.len() as f64;
    let pos = examples.iter().filter(|e| e.label == 1).count() as f64;
    [n / (2.0 * (n - pos)), n / (2.0 * pos)]
}

fn divergence(epoch: usize, step: u64, e: Error) -> Error {
    match e {
        Error::NonFinite { op } => Error::Divergence(format!("epoch {epoch}, step {step}: non-finite value in {op}")),
        other => other,
    }
}

/// Mini-batch training. Base and MCD minimize cross-entropy (MCD with its
/// dropout active), VI minimizes the negative ELBO.
pub fn train(model: &mut Model, examples: &[LabeledExample], cfg: &TrainConfig) -> Result<TrainTrace> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    for class in 0..=1u8 {
        if !examples.iter().any(|e| e.label == class) {
            return Err(Error::Data(format!("training split has no examples of class {class}")));
        }
    }
    let weights = if cfg.class_weighting {
        class_weights(examples)
    } else {
        [1.0, 1.0]
    };
    let root = RngStream::new(cfg.seed, NOISE_STREAM);
    let shuffle_root = RngStream::new(cfg.seed, SHUFFLE_STREAM);
    let is_vi = model.kind() == ModelKind::Vi;
    let mut opt = Adam::new(&model.store, cfg.learning_rate);
    let mut trace = TrainTrace {
        model_kind: model.kind(),
        epochs: Vec::with_capacity(cfg.epochs),
        steps: 0,
        stopped_early: false,
    };

    for epoch in 0..cfg.epochs {
        let kl_weight = model.spec.vi.kl_weight_at(epoch);
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut shuffle_root.derive(epoch as u64));
        let epoch_rng = root.derive(epoch as u64);
        let (mut loss_sum, mut recon_sum, mut kl_sum) = (0.0, 0.0, 0.0);
        let mut max_norm: f64 = 0.0;

        for batch in order.chunks(cfg.batch_size) {
            let step = opt.steps_taken();
            let mut results = Vec::with_capacity(batch.len());
            for &i in batch {
                let ex = &examples[i];
                let rng = epoch_rng.derive(i as u64);
                let mut tape = Tape::new(&model.store);
                let parts = model
                    .loss(&mut tape, ex, &rng, kl_weight)
                    .map_err(|e| divergence(epoch, step, e))?;
                let value = tape.scalar(parts.loss);
                if !value.is_finite() {
                    return Err(Error::Divergence(format!(
                        "epoch {epoch}, step {step}: loss is {value}"
                    )));
                }
                let grads = tape.backward(parts.loss).map_err(|e| divergence(epoch, step, e))?;
                results.push((weights[usize::from(ex.label)], value, parts, grads));
            }
            model.store.zero_grad();
            let scale = 1.0 / batch.len() as f64;
            for (w, value, parts, grads) in &results {
                model.store.accumulate(grads, w * scale);
                loss_sum += w * value;
                recon_sum += parts.reconstruction.unwrap_or(0.0);
                kl_sum += parts.kl.unwrap_or(0.0);
            }
            let norm = match cfg.gradient_clip_norm {
                Some(c) => clip_grad_norm(&mut model.store, c),
                None => model.store.grad_norm(),
            };
            if !norm.is_finite() {
                return Err(Error::Divergence(format!(
                    "epoch {epoch}, step {step}: gradient norm is {norm}"
                )));
            }
            max_norm = max_norm.max(norm);
            opt.step(&mut model.store)?;
        }

        let n = examples.len() as f64;
        let train_accuracy = if cfg.track_train_accuracy {
            Some(
                evaluate(
                    model,
                    examples,
                    RngStream::new(cfg.seed, TRACE_EVAL_STREAM).derive(epoch as u64),
                )?
                .accuracy,
            )
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            loss: loss_sum / n,
            reconstruction: is_vi.then_some(recon_sum / n),
            kl: is_vi.then_some(kl_sum / n),
            kl_weight: is_vi.then_some(kl_weight),
            train_accuracy,
            max_grad_norm: max_norm,
        };
        log::debug!(
            "{} epoch {epoch}: loss {:.5} train acc {:?}",
            model.kind(),
            record.loss,
            record.train_accuracy
        );
        trace.epochs.push(record);
        if cfg.stop_at_perfect_train_accuracy && train_accuracy == Some(1.0) {
            trace.stopped_early = true;
            break;
        }
    }
    trace.steps = opt.steps_taken();
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{AttentionMode, HyperParams};
    use crate::model::ModelSpec;
    use crate::synthetic::separable_corpus;

    fn spec(kind: ModelKind) -> ModelSpec {
        ModelSpec {
            hp: HyperParams {
                max_len: 8,
                embed_dim: 8,
                hidden: 8,
                z_dim: 4,
                attention: AttentionMode::Softmax,
            },
            ..ModelSpec::new(kind)
        }
    }

    #[test]
    fn zero_epochs_leave_parameters() {
        let data = separable_corpus(16, 8, 3);
        let mut m = Model::new(spec(ModelKind::Base), data.vocab_size, None, 1).unwrap();
        let before = m.store.clone();
        let trace = train(
            &mut m,
            &data.examples,
            &TrainConfig {
                epochs: 0,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        assert!(trace.epochs.is_empty());
        for ((_, a), (_, b)) in before.iter().zip(m.store.iter()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = separable_corpus(16, 8, 3);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            ..TrainConfig::default()
        };
        for kind in ModelKind::ALL {
            let mut a = Model::new(spec(kind), data.vocab_size, None, 5).unwrap();
            let mut b = Model::new(spec(kind), data.vocab_size, None, 5).unwrap();
            let ta = train(&mut a, &data.examples, &cfg).unwrap();
            let tb = train(&mut b, &data.examples, &cfg).unwrap();
            assert_eq!(ta, tb);
            for ((_, p), (_, q)) in a.store.iter().zip(b.store.iter()) {
                assert_eq!(p.value, q.value);
            }
        }
    }

    #[test]
    fn vi_trace_has_components() {
        let data = separable_corpus(16, 8, 3);
        let mut m = Model::new(spec(ModelKind::Vi), data.vocab_size, None, 2).unwrap();
        let trace = train(
            &mut m,
            &data.examples,
            &TrainConfig {
                epochs: 2,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        for e in &trace.epochs {
            assert!(e.reconstruction.is_some() && e.kl.is_some());
            assert!(e.kl.unwrap().is_finite());
        }
    }

    #[test]
    fn rejects_single_class_data() {
        let data = separable_corpus(16, 8, 3);
        let zeros: Vec<_> = data.examples.iter().filter(|e| e.label == 0).cloned().collect();
        let mut m = Model::new(spec(ModelKind::Base), data.vocab_size, None, 1).unwrap();
        assert!(matches!(
            train(&mut m, &zeros, &TrainConfig::default()),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            train(&mut m, &[], &TrainConfig::default()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn exploding_learning_rate_reports_divergence() {
        let data = separable_corpus(16, 8, 3);
        let mut m = Model::new(spec(ModelKind::Base), data.vocab_size, None, 1).unwrap();
        for p in m.store.iter_mut() {
            p.value.fill(f64::NAN);
        }
        let err = train(
            &mut m,
            &data.examples,
            &TrainConfig {
                epochs: 1,
                ..TrainConfig::default()
            },
        )
        .unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn base_loss_mostly_decreases_on_a_fixed_batch() {
        let data = separable_corpus(8, 8, 11);
        let cfg = TrainConfig {
            epochs: 10,
            batch_size: 8,
            learning_rate: 1e-3,
            track_train_accuracy: false,
            ..TrainConfig::default()
        };
        let mut good = 0;
        for seed in 0..10 {
            let mut m = Model::new(spec(ModelKind::Base), data.vocab_size, None, seed).unwrap();
            let t = train(&mut m, &data.examples, &TrainConfig { seed, ..cfg.clone() }).unwrap();
            let losses: Vec<f64> = t.epochs.iter().map(|e| e.loss).collect();
            good += usize::from(losses.windows(2).all(|w| w[1] <= w[0]));
        }
        assert!(good >= 9, "{good}/10 seeds non-increasing");
    }
}
