//! Monte Carlo Dropout: the baseline network with dropout after each LSTM
//! layer and on the prediction-layer input, kept active at prediction time.
//! The prediction averages the logits of `M` stochastic passes and applies
//! the softmax to that average.

use serde::{Deserialize, Serialize};

use crate::diffcore::{softmax_rows, ParamStore, RngStream, Tape, Tensor};
use crate::encoder::{predict_logits, DropoutMasks, Encoder, Linear, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::train_eval::predictive_entropy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McdConfig {
    pub dropout_rate: f64,
    pub num_samples: usize,
}

impl Default for McdConfig {
    fn default() -> Self {
        McdConfig {
            dropout_rate: 0.3,
            num_samples: 50,
        }
    }
}

impl McdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.num_samples < 1 {
            return Err(Error::Config("num_samples must be at least 1".into()));
        }
        Ok(())
    }
}

/// Aggregate of one or more forward passes for a single input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    pub mean_probs: [f64; NUM_CLASSES],
    pub mean_logits: [f64; NUM_CLASSES],
    pub per_sample_logits: Vec<[f64; NUM_CLASSES]>,
    pub entropy: f64,
    pub predicted_label: u8,
}

impl PredictiveDistribution {
    /// Averages per-sample logits with a running mean (identical samples
    /// average to themselves exactly), then applies the softmax.
    pub fn from_samples(per_sample_logits: Vec<[f64; NUM_CLASSES]>) -> Result<Self> {
        if per_sample_logits.is_empty() {
            return Err(Error::Usage("no samples to aggregate".into()));
        }
        let mut mean = [0.0; NUM_CLASSES];
        for (k, sample) in per_sample_logits.iter().enumerate() {
            for (m, &x) in mean.iter_mut().zip(sample) {
                *m += (x - *m) / (k + 1) as f64;
            }
        }
        let probs_t = softmax_rows(&Tensor::row_vector(mean.to_vec())?);
        let mean_probs = [probs_t.data()[0], probs_t.data()[1]];
        let entropy = predictive_entropy(&mean_probs)?;
        // ties go to the non-urgent class
        let predicted_label = u8::from(mean_probs[1] > mean_probs[0]);
        Ok(PredictiveDistribution {
            mean_probs,
            mean_logits: mean,
            per_sample_logits,
            entropy,
            predicted_label,
        })
    }

    pub fn num_samples(&self) -> usize {
        self.per_sample_logits.len()
    }
}

pub(crate) fn logits_pair(t: &Tensor) -> [f64; NUM_CLASSES] {
    [t.data()[0], t.data()[1]]
}

/// Deterministic baseline logits (no dropout).
pub fn base_logits(store: &ParamStore, encoder: &Encoder, head: &Linear, tokens: &[usize]) -> Result<[f64; 2]> {
    let mut tape = Tape::new(store);
    let state = encoder.encode(&mut tape, tokens, None)?;
    let logits = predict_logits(&mut tape, &state, head, None)?;
    Ok(logits_pair(tape.value(logits)))
}

fn masks(cfg: &McdConfig, rng: &RngStream, sample_index: usize) -> DropoutMasks {
    DropoutMasks {
        rate: cfg.dropout_rate,
        stream: rng.derive(sample_index as u64),
    }
}

/// One stochastic pass. Its masks depend only on `(rng, sample_index, site)`.
pub fn mcd_forward(
    store: &ParamStore,
    encoder: &Encoder,
    head: &Linear,
    tokens: &[usize],
    cfg: &McdConfig,
    rng: &RngStream,
    sample_index: usize,
) -> Result<[f64; 2]> {
    cfg.validate()?;
    let m = masks(cfg, rng, sample_index);
    let mut tape = Tape::new(store);
    let state = encoder.encode(&mut tape, tokens, Some(&m))?;
    let logits = predict_logits(&mut tape, &state, head, Some(&m))?;
    Ok(logits_pair(tape.value(logits)))
}

/// `M`-sample Monte Carlo Dropout prediction.
///
/// Layer 1 sits before the first dropout site, so it is evaluated once and
/// only the layers above it are re-run for each sample.
pub fn mcd_predict(
    store: &ParamStore,
    encoder: &Encoder,
    head: &Linear,
    tokens: &[usize],
    cfg: &McdConfig,
    rng: &RngStream,
) -> Result<PredictiveDistribution> {
    cfg.validate()?;
    let mut tape = Tape::new(store);
    let layer1 = encoder.first_layer(&mut tape, tokens)?;
    let mark = tape.mark();
    let mut samples = Vec::with_capacity(cfg.num_samples);
    for i in 0..cfg.num_samples {
        let m = masks(cfg, rng, i);
        let state = encoder.upper(&mut tape, layer1, Some(&m))?;
        let logits = predict_logits(&mut tape, &state, head, Some(&m))?;
        samples.push(logits_pair(tape.value(logits)));
        tape.rewind(mark);
    }
    PredictiveDistribution::from_samples(samples)
}
