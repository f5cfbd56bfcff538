//! The three model kinds behind one type.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{EmbeddingTable, LabeledExample};
use crate::diffcore::{ParamStore, RngStream, Tape, Var};
use crate::encoder::{predict_logits, DropoutMasks, Encoder, HyperParams, Linear, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::mcd::{base_logits, mcd_predict, McdConfig, PredictiveDistribution};
use crate::vi::{elbo_loss, vi_predict, ViConfig, ViHeads};

/// Stream id used for parameter initialization.
const INIT_STREAM: u64 = 0x1417;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Base,
    Mcd,
    Vi,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Base, ModelKind::Mcd, ModelKind::Vi];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Base => "base",
            ModelKind::Mcd => "mcd",
            ModelKind::Vi => "vi",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "base" => Ok(ModelKind::Base),
            "mcd" => Ok(ModelKind::Mcd),
            "vi" => Ok(ModelKind::Vi),
            other => Err(Error::Config(format!(
                "unknown model kind {other:?} (expected base, mcd or vi)"
            ))),
        }
    }
}

/// Everything needed to rebuild a model's parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub hp: HyperParams,
    pub mcd: McdConfig,
    pub vi: ViConfig,
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        ModelSpec {
            kind,
            hp: HyperParams::default(),
            mcd: McdConfig::default(),
            vi: ViConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        self.mcd.validate()?;
        self.vi.validate()
    }

    /// Stochastic passes per prediction.
    pub fn num_samples(&self) -> usize {
        match self.kind {
            ModelKind::Base => 1,
            ModelKind::Mcd => self.mcd.num_samples,
            ModelKind::Vi => self.vi.test_samples,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Head {
    Classifier(Linear),
    Variational(ViHeads),
}

/// Scalar pieces of one example's training loss.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub loss: Var,
    pub reconstruction: Option<f64>,
    pub kl: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub head: Head,
}

impl Model {
    /// Fresh parameters drawn from `seed`. `embeddings`, when given, seeds the
    /// embedding table.
    pub fn new(spec: ModelSpec, vocab_size: usize, embeddings: Option<&EmbeddingTable>, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(seed, INIT_STREAM);
        let encoder = Encoder::new(&mut store, &spec.hp, vocab_size, embeddings, &mut rng)?;
        let head = match spec.kind {
            ModelKind::Base | ModelKind::Mcd => Head::Classifier(Linear::new(
                &mut store,
                "output",
                2 * spec.hp.hidden,
                NUM_CLASSES,
                &mut rng,
            )),
            ModelKind::Vi => Head::Variational(ViHeads::new(&mut store, &spec.hp, &spec.vi, &mut rng)?),
        };
        Ok(Model {
            spec,
            store,
            encoder,
            head,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    pub fn vocab_size(&self) -> usize {
        self.encoder.vocab_size(&self.store)
    }

    /// Training loss for one example on `tape` (which must borrow
    /// `self.store`). `rng` drives dropout masks or latent noise.
    pub fn loss(
        &self,
        tape: &mut Tape<'_>,
        example: &LabeledExample,
        rng: &RngStream,
        kl_weight: f64,
    ) -> Result<LossParts> {
        let label = example.label;
        match (&self.head, self.spec.kind) {
            (Head::Classifier(head), kind) => {
                let masks = (kind == ModelKind::Mcd).then(|| DropoutMasks {
                    rate: self.spec.mcd.dropout_rate,
                    stream: rng.clone(),
                });
                let state = self.encoder.encode_example(tape, example, masks.as_ref())?;
                let logits = predict_logits(tape, &state, head, masks.as_ref())?;
                Ok(LossParts {
                    loss: tape.cross_entropy(logits, &[usize::from(label)])?,
                    reconstruction: None,
                    kl: None,
                })
            }
            (Head::Variational(heads), _) => {
                let state = self.encoder.encode_example(tape, example, None)?;
                let parts = elbo_loss(tape, &state, heads, label, &self.spec.vi, kl_weight, rng)?;
                Ok(LossParts {
                    loss: parts.loss,
                    reconstruction: Some(parts.reconstruction),
                    kl: Some(parts.kl),
                })
            }
        }
    }

    /// Predictive distribution for a token sequence using the kind's own
    /// prediction path. Never sees a label.
    pub fn predict(&self, tokens: &[usize], rng: &RngStream) -> Result<PredictiveDistribution> {
        match (&self.head, self.spec.kind) {
            (Head::Classifier(head), ModelKind::Mcd) => {
                mcd_predict(&self.store, &self.encoder, head, tokens, &self.spec.mcd, rng)
            }
            (Head::Classifier(head), _) => {
                PredictiveDistribution::from_samples(vec![base_logits(&self.store, &self.encoder, head, tokens)?])
            }
            (Head::Variational(heads), _) => vi_predict(&self.store, &self.encoder, heads, tokens, &self.spec.vi, rng),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::AttentionMode;

    fn spec(kind: ModelKind) -> ModelSpec {
        ModelSpec {
            kind,
            hp: HyperParams {
                max_len: 6,
                embed_dim: 4,
                hidden: 5,
                z_dim: 3,
                attention: AttentionMode::Softmax,
            },
            ..ModelSpec::new(kind)
        }
    }

    #[test]
    fn kind_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.as_str().parse::<ModelKind>().unwrap(), k);
        }
        assert!("bnn".parse::<ModelKind>().is_err());
    }

    #[test]
    fn same_seed_same_parameters() {
        for k in ModelKind::ALL {
            let a = Model::new(spec(k), 9, None, 4).unwrap();
            let b = Model::new(spec(k), 9, None, 4).unwrap();
            for ((_, p), (_, q)) in a.store.iter().zip(b.store.iter()) {
                assert_eq!(p.value, q.value);
            }
        }
    }

    #[test]
    fn predictions_are_distributions() {
        let rng = RngStream::new(0, 0);
        for k in ModelKind::ALL {
            let m = Model::new(spec(k), 9, None, 1).unwrap();
            let d = m.predict(&[2, 3, 4], &rng).unwrap();
            assert_eq!(d.num_samples(), m.spec.num_samples());
            assert!((d.mean_probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn vi_loss_reports_components() {
        let m = Model::new(spec(ModelKind::Vi), 9, None, 1).unwrap();
        let ex = LabeledExample {
            token_ids: vec![2, 3, 0, 0, 0, 0],
            true_length: 2,
            label: 1,
        };
        let mut t = Tape::new(&m.store);
        let parts = m.loss(&mut t, &ex, &RngStream::new(1, 1), 1.0).unwrap();
        let (r, kl) = (parts.reconstruction.unwrap(), parts.kl.unwrap());
        assert!((t.scalar(parts.loss) - (r + kl)).abs() < 1e-12);
        assert!(kl >= 0.0);
    }
}
