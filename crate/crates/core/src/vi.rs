//! Variational-inference variant.
//!
//! A latent `z` sits between the encoder and the prediction layer. During
//! training it is drawn from an inference network `q(z | x, y)` that also sees
//! the label; at prediction time it is drawn from a conditional prior
//! `p(z | x)`. Both are diagonal Gaussians parameterized by mean and log
//! standard deviation. Training minimizes the negative evidence lower bound:
//! the Monte Carlo cross-entropy of `recon(z ⊕ final_state ⊕ context)` plus
//! the closed-form `KL(q ‖ p)`.

use serde::{Deserialize, Serialize};

use crate::diffcore::{kl_term, Axis, ParamStore, RngStream, Tape, Tensor, Var};
use crate::encoder::{Encoder, EncoderState, HyperParams, Linear, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::mcd::{logits_pair, PredictiveDistribution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViConfig {
    pub train_samples: usize,
    pub test_samples: usize,
    pub kl_weight: f64,
    /// Epochs of linear KL warm-up; 0 disables it.
    pub kl_warmup_epochs: usize,
    pub log_sigma_min: f64,
    pub log_sigma_max: f64,
}

impl Default for ViConfig {
    fn default() -> Self {
        ViConfig {
            train_samples: 1,
            test_samples: 20,
            kl_weight: 1.0,
            kl_warmup_epochs: 0,
            log_sigma_min: -8.0,
            log_sigma_max: 8.0,
        }
    }
}

impl ViConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_samples < 1 || self.test_samples < 1 {
            return Err(Error::Config("VI sample counts must be at least 1".into()));
        }
        if !self.kl_weight.is_finite() || self.kl_weight < 0.0 {
            return Err(Error::Config(format!("kl_weight {} must be >= 0", self.kl_weight)));
        }
        if self.log_sigma_min.is_nan() || self.log_sigma_max.is_nan() || self.log_sigma_min >= self.log_sigma_max {
            return Err(Error::Config("log_sigma_min must be below log_sigma_max".into()));
        }
        Ok(())
    }

    /// KL weight in effect during `epoch` (0-based).
    pub fn kl_weight_at(&self, epoch: usize) -> f64 {
        if self.kl_warmup_epochs == 0 {
            self.kl_weight
        } else {
            self.kl_weight * ((epoch + 1) as f64 / self.kl_warmup_epochs as f64).min(1.0)
        }
    }
}

/// Diagonal Gaussian by value.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDiag {
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
}

impl GaussianDiag {
    pub fn new(mu: Vec<f64>, log_sigma: Vec<f64>) -> Result<Self> {
        if mu.len() != log_sigma.len() || mu.is_empty() {
            return Err(Error::shape(
                "gaussian",
                format!("{} means, {} log-sigmas", mu.len(), log_sigma.len()),
            ));
        }
        if mu.iter().chain(&log_sigma).any(|v| !v.is_finite()) {
            return Err(Error::Domain("gaussian parameters must be finite".into()));
        }
        Ok(GaussianDiag { mu, log_sigma })
    }

    pub fn standard(dim: usize) -> Self {
        GaussianDiag {
            mu: vec![0.0; dim],
            log_sigma: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.log_sigma.iter().map(|l| l.exp()).collect()
    }

    pub fn log_density(&self, z: &[f64]) -> f64 {
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        self.mu
            .iter()
            .zip(&self.log_sigma)
            .zip(z)
            .map(|((m, ls), x)| {
                let u = (x - m) / ls.exp();
                -0.5 * ln_2pi - ls - 0.5 * u * u
            })
            .sum()
    }

    /// `μ + σ ⊙ ε`.
    pub fn reparameterize(&self, eps: &[f64]) -> Vec<f64> {
        self.mu
            .iter()
            .zip(&self.log_sigma)
            .zip(eps)
            .map(|((m, ls), e)| m + ls.exp() * e)
            .collect()
    }
}

/// Closed-form `KL(q ‖ p) = Σ_j [ln(σp/σq) + (σq² + (μq − μp)²)/(2σp²) − ½]`.
pub fn kl_diag_gaussians(q: &GaussianDiag, p: &GaussianDiag) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::shape(
            "kl_diag_gaussians",
            format!("dims {} vs {}", q.dim(), p.dim()),
        ));
    }
    Ok((0..q.dim())
        .map(|j| kl_term(q.mu[j], q.log_sigma[j], p.mu[j], p.log_sigma[j]))
        .sum())
}

/// Diagonal Gaussian as tape nodes (`1 × z_dim` each).
#[derive(Debug, Clone, Copy)]
pub struct GaussianVars {
    pub mu: Var,
    pub log_sigma: Var,
}

impl GaussianVars {
    pub fn to_value(self, tape: &Tape<'_>) -> GaussianDiag {
        GaussianDiag {
            mu: tape.value(self.mu).data().to_vec(),
            log_sigma: tape.value(self.log_sigma).data().to_vec(),
        }
    }
}

/// The VI-specific layers on top of the encoder.
#[derive(Debug, Clone)]
pub struct ViHeads {
    /// Label embedding `1 → z_dim`.
    pub label_embed: Linear,
    /// `tanh(affine)` on `final_state ⊕ label_embed(y)`, width `h`.
    pub posterior_hidden: Linear,
    /// `tanh(affine)` on `final_state`, width `h`.
    pub prior_hidden: Linear,
    pub posterior_mean: Linear,
    pub posterior_log_sigma: Linear,
    pub prior_mean: Linear,
    pub prior_log_sigma: Linear,
    /// `z ⊕ final_state ⊕ context → 2` logits.
    pub reconstruction: Linear,
    pub z_dim: usize,
    pub log_sigma_range: (f64, f64),
}

impl ViHeads {
    pub fn new(store: &mut ParamStore, hp: &HyperParams, cfg: &ViConfig, rng: &mut RngStream) -> Result<Self> {
        cfg.validate()?;
        let (h, z) = (hp.hidden, hp.z_dim);
        Ok(ViHeads {
            label_embed: Linear::new(store, "vi.label_embed", 1, z, rng),
            posterior_hidden: Linear::new(store, "vi.posterior_hidden", h + z, h, rng),
            prior_hidden: Linear::new(store, "vi.prior_hidden", h, h, rng),
            posterior_mean: Linear::new(store, "vi.posterior_mean", h, z, rng),
            posterior_log_sigma: Linear::new(store, "vi.posterior_log_sigma", h, z, rng),
            prior_mean: Linear::new(store, "vi.prior_mean", h, z, rng),
            prior_log_sigma: Linear::new(store, "vi.prior_log_sigma", h, z, rng),
            reconstruction: Linear::new(store, "vi.reconstruction", z + 2 * h, NUM_CLASSES, rng),
            z_dim: z,
            log_sigma_range: (cfg.log_sigma_min, cfg.log_sigma_max),
        })
    }

    fn gaussian(&self, tape: &mut Tape<'_>, pi: Var, mean: &Linear, log_sigma: &Linear) -> Result<GaussianVars> {
        let mu = mean.forward(tape, pi)?;
        let ls = log_sigma.forward(tape, pi)?;
        let (lo, hi) = self.log_sigma_range;
        let log_sigma = tape.clamp(ls, lo, hi)?;
        Ok(GaussianVars { mu, log_sigma })
    }

    /// `q(z | x, y)`.
    pub fn posterior(&self, tape: &mut Tape<'_>, last: Var, label: u8) -> Result<GaussianVars> {
        let y = tape.constant(Tensor::scalar(f64::from(label)))?;
        let fy = self.label_embed.forward(tape, y)?;
        let input = tape.concat(&[last, fy], Axis::Cols)?;
        let pre = self.posterior_hidden.forward(tape, input)?;
        let pi = tape.tanh(pre)?;
        self.gaussian(tape, pi, &self.posterior_mean, &self.posterior_log_sigma)
    }

    /// `p(z | x)`; has no label input.
    pub fn prior(&self, tape: &mut Tape<'_>, last: Var) -> Result<GaussianVars> {
        let pre = self.prior_hidden.forward(tape, last)?;
        let pi = tape.tanh(pre)?;
        self.gaussian(tape, pi, &self.prior_mean, &self.prior_log_sigma)
    }

    pub fn reconstruction_logits(&self, tape: &mut Tape<'_>, z: Var, state: &EncoderState) -> Result<Var> {
        let input = tape.concat(&[z, state.last, state.context], Axis::Cols)?;
        self.reconstruction.forward(tape, input)
    }
}

/// `z = μ + exp(log σ) ⊙ ε`, differentiable in `μ` and `log σ`.
pub fn reparameterize(tape: &mut Tape<'_>, g: GaussianVars, eps: &[f64]) -> Result<Var> {
    let [_, dim] = tape.shape(g.mu);
    if eps.len() != dim {
        return Err(Error::shape(
            "reparameterize",
            format!("{} noise values for {dim} dims", eps.len()),
        ));
    }
    let sigma = tape.exp(g.log_sigma)?;
    let eps = tape.constant(Tensor::row_vector(eps.to_vec())?)?;
    let scaled = tape.mul(sigma, eps)?;
    tape.add(g.mu, scaled)
}

/// Standard-normal draws for sample `index` of a stream.
pub fn draw_eps(rng: &RngStream, index: usize, dim: usize) -> Vec<f64> {
    let mut r = rng.derive(index as u64);
    (0..dim).map(|_| r.standard_normal()).collect()
}

#[derive(Debug, Clone, Copy)]
pub struct ElboParts {
    /// `reconstruction + kl_weight × kl`.
    pub loss: Var,
    pub reconstruction: f64,
    pub kl: f64,
}

/// Negative ELBO for one labelled sequence: cross-entropy averaged over
/// `train_samples` posterior draws plus `kl_weight × KL(q ‖ p)`.
pub fn elbo_loss(
    tape: &mut Tape<'_>,
    state: &EncoderState,
    heads: &ViHeads,
    label: u8,
    cfg: &ViConfig,
    kl_weight: f64,
    rng: &RngStream,
) -> Result<ElboParts> {
    let q = heads.posterior(tape, state.last, label)?;
    let p = heads.prior(tape, state.last)?;
    let mut recon_terms = Vec::with_capacity(cfg.train_samples);
    for m in 0..cfg.train_samples {
        let eps = draw_eps(rng, m, heads.z_dim);
        let z = reparameterize(tape, q, &eps)?;
        let logits = heads.reconstruction_logits(tape, z, state)?;
        recon_terms.push(tape.cross_entropy(logits, &[usize::from(label)])?);
    }
    let recon = if recon_terms.len() == 1 {
        recon_terms[0]
    } else {
        let stacked = tape.concat(&recon_terms, Axis::Cols)?;
        tape.mean(stacked)?
    };
    let kl = tape.kl_diag_gaussians(q.mu, q.log_sigma, p.mu, p.log_sigma)?;
    let weighted = tape.scale(kl, kl_weight)?;
    let loss = tape.add(recon, weighted)?;
    Ok(ElboParts {
        loss,
        reconstruction: tape.scalar(recon),
        kl: tape.scalar(kl),
    })
}

/// Prediction from `test_samples` prior draws, aggregated like MCD.
/// Takes only the token ids, never a label.
pub fn vi_predict(
    store: &ParamStore,
    encoder: &Encoder,
    heads: &ViHeads,
    tokens: &[usize],
    cfg: &ViConfig,
    rng: &RngStream,
) -> Result<PredictiveDistribution> {
    cfg.validate()?;
    let mut tape = Tape::new(store);
    let state = encoder.encode(&mut tape, tokens, None)?;
    let p = heads.prior(&mut tape, state.last)?;
    let mark = tape.mark();
    let mut samples = Vec::with_capacity(cfg.test_samples);
    for m in 0..cfg.test_samples {
        let eps = draw_eps(rng, m, heads.z_dim);
        let z = reparameterize(&mut tape, p, &eps)?;
        let logits = heads.reconstruction_logits(&mut tape, z, &state)?;
        samples.push(logits_pair(tape.value(logits)));
        tape.rewind(mark);
    }
    PredictiveDistribution::from_samples(samples)
}
