//! The deterministic baseline: embedding lookup, a two-layer LSTM, dot-product
//! attention of the final state over the layer-2 outputs, and a two-class
//! prediction layer on `context ⊕ final_state`.
//!
//! Only the first `true_length` tokens of an example are run through the
//! recurrence, so padding can never influence the final state, the attention
//! weights or the logits.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{EmbeddingTable, LabeledExample};
use crate::diffcore::{Axis, ParamId, ParamStore, RngStream, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const NUM_LAYERS: usize = 2;
pub const NUM_CLASSES: usize = 2;

/// How dot-product scores become attention weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// Softmax over the valid-position scores.
    Softmax,
    /// Raw ratio `score_m / Σ score`, falling back to uniform weights when
    /// the denominator vanishes.
    Ratio,
}

impl fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionMode::Softmax => "softmax",
            AttentionMode::Ratio => "ratio",
        })
    }
}

impl FromStr for AttentionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(AttentionMode::Softmax),
            "ratio" => Ok(AttentionMode::Ratio),
            other => Err(Error::Config(format!("unknown attention mode {other:?}"))),
        }
    }
}

/// Below this magnitude the ratio-attention denominator is treated as zero.
pub const RATIO_DEGENERATE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub max_len: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub z_dim: usize,
    pub attention: AttentionMode,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            max_len: 128,
            embed_dim: 300,
            hidden: 128,
            z_dim: 16,
            attention: AttentionMode::Softmax,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("max_len", self.max_len),
            ("embed_dim", self.embed_dim),
            ("hidden", self.hidden),
            ("z_dim", self.z_dim),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

fn uniform_matrix(rows: usize, cols: usize, bound: f64, rng: &mut RngStream) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.uniform_range(-bound, bound)).collect();
    Tensor::new(rows, cols, data).expect("positive dimensions")
}

/// Fully connected layer `x · W + b`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    /// Weights uniform in `±1/√fan_in`, zero bias.
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut RngStream) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Linear {
            weight: store.add(format!("{name}.weight"), uniform_matrix(input, output, bound, rng)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(1, output)),
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        tape.affine(x, w, b)
    }
}

/// One LSTM layer. Gate blocks along the `4h` axis: input, forget,
/// candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmLayer {
    pub input_weights: ParamId,
    pub recurrent_weights: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmLayer {
    /// Weights uniform in `±1/√fan_in`; forget-gate bias 1, other biases 0.
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut RngStream) -> Self {
        let wx = uniform_matrix(input, 4 * hidden, 1.0 / (input as f64).sqrt(), rng);
        let wh = uniform_matrix(hidden, 4 * hidden, 1.0 / (hidden as f64).sqrt(), rng);
        let mut bias = Tensor::zeros(1, 4 * hidden);
        bias.data_mut()[hidden..2 * hidden].fill(1.0);
        LstmLayer {
            input_weights: store.add(format!("{name}.input_weights"), wx),
            recurrent_weights: store.add(format!("{name}.recurrent_weights"), wh),
            bias: store.add(format!("{name}.bias"), bias),
            hidden,
        }
    }

    // `pre` already holds x·Wx + b for this step; `None` is the zero state.
    fn cell(&self, tape: &mut Tape<'_>, pre: Var, prev: Option<LstmState>) -> Result<LstmState> {
        let h = self.hidden;
        let gates = match prev {
            Some(s) => {
                let wh = tape.param(self.recurrent_weights);
                let rec = tape.matmul(s.h, wh)?;
                tape.add(pre, rec)?
            }
            None => pre,
        };
        let i = tape.slice_cols(gates, 0, h)?;
        let i = tape.sigmoid(i)?;
        let f = tape.slice_cols(gates, h, h)?;
        let f = tape.sigmoid(f)?;
        let g = tape.slice_cols(gates, 2 * h, h)?;
        let g = tape.tanh(g)?;
        let o = tape.slice_cols(gates, 3 * h, h)?;
        let o = tape.sigmoid(o)?;
        let ig = tape.mul(i, g)?;
        let c = match prev {
            Some(s) => {
                let fc = tape.mul(f, s.c)?;
                tape.add(fc, ig)?
            }
            None => ig,
        };
        let tc = tape.tanh(c)?;
        let h = tape.mul(o, tc)?;
        Ok(LstmState { h, c })
    }

    /// One recurrence step on a `1 × input` row.
    pub fn step(&self, tape: &mut Tape<'_>, x: Var, prev: Option<LstmState>) -> Result<LstmState> {
        let wx = tape.param(self.input_weights);
        let b = tape.param(self.bias);
        let pre = tape.affine(x, wx, b)?;
        self.cell(tape, pre, prev)
    }

    /// Runs the layer over an `L × input` sequence from the zero state and
    /// returns the `L × h` stack of hidden states.
    pub fn run(&self, tape: &mut Tape<'_>, inputs: Var) -> Result<Var> {
        let len = tape.shape(inputs)[0];
        let wx = tape.param(self.input_weights);
        let b = tape.param(self.bias);
        let pre = tape.affine(inputs, wx, b)?;
        let mut state = None;
        let mut outputs = Vec::with_capacity(len);
        for t in 0..len {
            let row = tape.slice_rows(pre, t, 1)?;
            let next = self.cell(tape, row, state)?;
            outputs.push(next.h);
            state = Some(next);
        }
        if outputs.len() == 1 {
            return Ok(outputs[0]);
        }
        tape.concat(&outputs, Axis::Rows)
    }
}

/// Where a dropout mask is applied in a stochastic pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutSite {
    AfterLayer1 = 0,
    AfterLayer2 = 1,
    PredictionInput = 2,
}

/// Dropout masks for one stochastic forward pass; the mask at each site is
/// drawn from `stream.derive(site)`.
#[derive(Debug, Clone)]
pub struct DropoutMasks {
    pub rate: f64,
    pub stream: RngStream,
}

impl DropoutMasks {
    pub fn apply(&self, tape: &mut Tape<'_>, x: Var, site: DropoutSite) -> Result<Var> {
        let mut rng = self.stream.derive(site as u64);
        tape.dropout(x, self.rate, &mut rng, true)
    }
}

fn maybe_drop(tape: &mut Tape<'_>, x: Var, masks: Option<&DropoutMasks>, site: DropoutSite) -> Result<Var> {
    match masks {
        Some(m) => m.apply(tape, x, site),
        None => Ok(x),
    }
}

/// Outputs of the encoder for one sequence of `length` valid tokens.
#[derive(Debug, Clone, Copy)]
pub struct EncoderState {
    /// `length × h` layer-2 hidden states.
    pub hidden_seq: Var,
    /// `1 × h` state at the last valid position.
    pub last: Var,
    /// `1 × length` attention weights.
    pub alpha: Var,
    /// `1 × h` attention-weighted context.
    pub context: Var,
    pub length: usize,
}

impl EncoderState {
    /// Attention weights over all `max_len` positions, zero on padding.
    pub fn padded_alpha(&self, tape: &Tape<'_>, max_len: usize) -> Vec<f64> {
        let mut out = tape.value(self.alpha).data().to_vec();
        out.resize(max_len.max(self.length), 0.0);
        out
    }
}

/// `1 × L` weights from the scores `last · h_mᵀ`.
pub fn attention_weights(tape: &mut Tape<'_>, hidden_seq: Var, last: Var, mode: AttentionMode) -> Result<Var> {
    let scores = tape.matmul_nt(last, hidden_seq)?;
    weights_from_scores(tape, scores, mode)
}

/// Normalizes a `1 × L` row of attention scores.
pub fn weights_from_scores(tape: &mut Tape<'_>, scores: Var, mode: AttentionMode) -> Result<Var> {
    match mode {
        AttentionMode::Softmax => tape.softmax(scores),
        AttentionMode::Ratio => {
            let total: f64 = tape.value(scores).data().iter().sum();
            if total.abs() < RATIO_DEGENERATE_EPS {
                let n = tape.shape(scores)[1];
                log::warn!("ratio attention denominator {total:e} is degenerate; using uniform weights");
                tape.constant(Tensor::filled(1, n, 1.0 / n as f64))
            } else {
                tape.normalize_sum(scores)
            }
        }
    }
}

/// `Σ_m α_m h_m`.
pub fn context_vector(tape: &mut Tape<'_>, alpha: Var, hidden_seq: Var) -> Result<Var> {
    tape.matmul(alpha, hidden_seq)
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub embedding: ParamId,
    pub layer1: LstmLayer,
    pub layer2: LstmLayer,
    pub hp: HyperParams,
}

impl Encoder {
    /// Registers the embedding table (from `init` when given, otherwise the
    /// uniform fallback) and both LSTM layers.
    pub fn new(
        store: &mut ParamStore,
        hp: &HyperParams,
        vocab_size: usize,
        init: Option<&EmbeddingTable>,
        rng: &mut RngStream,
    ) -> Result<Self> {
        hp.validate()?;
        let table = match init {
            Some(t) => {
                if t.matrix.shape() != [vocab_size, hp.embed_dim] {
                    return Err(Error::Config(format!(
                        "embedding table is {:?}, model expects [{vocab_size}, {}]",
                        t.matrix.shape(),
                        hp.embed_dim
                    )));
                }
                t.clone()
            }
            None => EmbeddingTable::random(vocab_size, hp.embed_dim, rng),
        };
        let embedding = store.add("embedding", table.matrix);
        let layer1 = LstmLayer::new(store, "lstm1", hp.embed_dim, hp.hidden, rng);
        let layer2 = LstmLayer::new(store, "lstm2", hp.hidden, hp.hidden, rng);
        Ok(Encoder {
            embedding,
            layer1,
            layer2,
            hp: hp.clone(),
        })
    }

    pub fn vocab_size(&self, store: &ParamStore) -> usize {
        store.value(self.embedding).rows()
    }

    /// `ids.len() × d` embedding rows.
    pub fn embed(&self, tape: &mut Tape<'_>, ids: &[usize]) -> Result<Var> {
        tape.gather_rows(self.embedding, ids)
    }

    /// Layer-1 hidden states for `tokens`, before any dropout.
    pub fn first_layer(&self, tape: &mut Tape<'_>, tokens: &[usize]) -> Result<Var> {
        if tokens.is_empty() {
            return Err(Error::EmptySequence);
        }
        let emb = self.embed(tape, tokens)?;
        self.layer1.run(tape, emb)
    }

    /// Everything above layer 1: optional dropout, layer 2, optional dropout,
    /// final state and attention.
    pub fn upper(&self, tape: &mut Tape<'_>, layer1_out: Var, masks: Option<&DropoutMasks>) -> Result<EncoderState> {
        let length = tape.shape(layer1_out)[0];
        let x = maybe_drop(tape, layer1_out, masks, DropoutSite::AfterLayer1)?;
        let hidden = self.layer2.run(tape, x)?;
        let hidden_seq = maybe_drop(tape, hidden, masks, DropoutSite::AfterLayer2)?;
        let last = if length == 1 {
            hidden_seq
        } else {
            tape.slice_rows(hidden_seq, length - 1, 1)?
        };
        let alpha = attention_weights(tape, hidden_seq, last, self.hp.attention)?;
        let context = context_vector(tape, alpha, hidden_seq)?;
        Ok(EncoderState {
            hidden_seq,
            last,
            alpha,
            context,
            length,
        })
    }

    /// Encodes the valid tokens of a sequence.
    pub fn encode(&self, tape: &mut Tape<'_>, tokens: &[usize], masks: Option<&DropoutMasks>) -> Result<EncoderState> {
        let l1 = self.first_layer(tape, tokens)?;
        self.upper(tape, l1, masks)
    }

    pub fn encode_example(
        &self,
        tape: &mut Tape<'_>,
        example: &LabeledExample,
        masks: Option<&DropoutMasks>,
    ) -> Result<EncoderState> {
        self.encode(tape, example.tokens(), masks)
    }
}

/// `head(context ⊕ last)`, with dropout on the concatenated input when masks
/// are given.
pub fn predict_logits(
    tape: &mut Tape<'_>,
    state: &EncoderState,
    head: &Linear,
    masks: Option<&DropoutMasks>,
) -> Result<Var> {
    let features = tape.concat(&[state.context, state.last], Axis::Cols)?;
    let features = maybe_drop(tape, features, masks, DropoutSite::PredictionInput)?;
    head.forward(tape, features)
}
