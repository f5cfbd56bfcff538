//! Finite-difference verification suite: every differentiable operation plus
//! end-to-end losses of all three model kinds.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::corpus::LabeledExample;
use crate::diffcore::{
    grad_check, randomize_uniform, Axis, GradCheckConfig, GradCheckReport, ParamId, ParamStore, RngStream, Tape,
    Tensor, Var,
};
use crate::encoder::{attention_weights, context_vector, AttentionMode, HyperParams, LstmLayer};
use crate::error::{Error, Result};
use crate::model::{Model, ModelKind, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SuiteSize {
    /// h=8, sequence length 6, z=4, vocabulary 20, batch of 2.
    Small,
    /// h=16, sequence length 10, z=8, vocabulary 40, batch of 3.
    Medium,
}

impl fmt::Display for SuiteSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SuiteSize::Small => "small",
            SuiteSize::Medium => "medium",
        })
    }
}

impl FromStr for SuiteSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(SuiteSize::Small),
            "medium" => Ok(SuiteSize::Medium),
            other => Err(Error::Usage(format!(
                "unknown gradcheck size {other:?} (small or medium)"
            ))),
        }
    }
}

struct Dims {
    hidden: usize,
    seq: usize,
    z: usize,
    vocab: usize,
    batch: usize,
}

impl SuiteSize {
    fn dims(self) -> Dims {
        match self {
            SuiteSize::Small => Dims {
                hidden: 8,
                seq: 6,
                z: 4,
                vocab: 20,
                batch: 2,
            },
            SuiteSize::Medium => Dims {
                hidden: 16,
                seq: 10,
                z: 8,
                vocab: 40,
                batch: 3,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub size: SuiteSize,
    pub epsilon: f64,
    pub tolerance: f64,
    pub checks: Vec<GradCheckReport>,
    /// Names of checks that are expected to fail (negative controls).
    pub negative_controls: Vec<String>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(GradCheckReport::passed)
    }

    pub fn failed(&self) -> impl Iterator<Item = &GradCheckReport> {
        self.checks.iter().filter(|c| !c.passed())
    }

    /// One line per check: name, coordinates, max relative error, verdict.
    pub fn table(&self) -> String {
        let mut s = format!("{:<28} {:>7} {:>12}  result\n", "check", "coords", "max rel err");
        for c in &self.checks {
            s.push_str(&format!(
                "{:<28} {:>7} {:>12.3e}  {}\n",
                c.name,
                c.coordinates,
                c.max_relative_error,
                if c.passed() { "pass" } else { "FAIL" }
            ));
            for f in c.failures.iter().take(5) {
                s.push_str(&format!(
                    "    {}[{}]: analytic {:.6e} numeric {:.6e} rel {:.3e}\n",
                    f.param, f.index, f.analytic, f.numeric, f.relative_error
                ));
            }
            if c.failures.len() > 5 {
                s.push_str(&format!("    ... {} more\n", c.failures.len() - 5));
            }
        }
        s
    }
}

type Build = dyn for<'a> Fn(&mut Tape<'a>, &[Var]) -> Result<Var> + Sync;

/// Checks `build` over fresh parameters drawn uniformly from `[lo, hi]`.
/// Non-scalar outputs are reduced with a fixed random projection so every
/// output coordinate contributes.
fn op_check(
    name: &str,
    shapes: &[(usize, usize)],
    range: (f64, f64),
    seed: u64,
    cfg: GradCheckConfig,
    build: &Build,
) -> Result<GradCheckReport> {
    let mut rng = RngStream::new(seed, 0x0C4E);
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = shapes
        .iter()
        .enumerate()
        .map(|(i, &(r, c))| {
            let data = (0..r * c).map(|_| rng.uniform_range(range.0, range.1)).collect();
            store.add(
                format!("{name}.in{i}"),
                Tensor::new(r, c, data).expect("positive shape"),
            )
        })
        .collect();
    grad_check(
        name,
        &store,
        |t| {
            let inputs: Vec<Var> = ids.iter().map(|&id| t.param(id)).collect();
            let out = build(t, &inputs)?;
            project(t, out, seed)
        },
        cfg,
    )
}

fn project(t: &mut Tape<'_>, out: Var, seed: u64) -> Result<Var> {
    let [r, c] = t.shape(out);
    if r * c == 1 {
        return Ok(out);
    }
    let mut rng = RngStream::new(seed, 0x9E07);
    let weights = (0..r * c).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let w = t.constant(Tensor::new(r, c, weights)?)?;
    let prod = t.mul(out, w)?;
    t.sum(prod)
}

/// Pushes values away from the clamp kinks at ±1.
fn clamp_safe(t: &mut Tape<'_>, x: Var) -> Result<Var> {
    t.elementwise(
        x,
        |v| if (v.abs() - 1.0).abs() < 0.05 { v * 1.2 } else { v },
        |v| if (v.abs() - 1.0).abs() < 0.05 { 1.2 } else { 1.0 },
    )
}

fn operation_checks(cfg: GradCheckConfig, dims: &Dims) -> Result<Vec<GradCheckReport>> {
    let h = dims.hidden;
    let l = dims.seq;
    let wide = (-2.0, 2.0);
    let mut out = Vec::new();
    let mut add = |name: &str, shapes: &[(usize, usize)], range: (f64, f64), build: &Build| -> Result<()> {
        let seed = out.len() as u64 + 1;
        out.push(op_check(name, shapes, range, seed, cfg, build)?);
        Ok(())
    };
    add("affine", &[(3, 4), (4, 5), (1, 5)], wide, &|t, v| {
        t.affine(v[0], v[1], v[2])
    })?;
    add("matmul", &[(3, 4), (4, 2)], wide, &|t, v| t.matmul(v[0], v[1]))?;
    add("matmul_nt", &[(3, 4), (5, 4)], wide, &|t, v| t.matmul_nt(v[0], v[1]))?;
    add("add", &[(2, 3), (2, 3)], wide, &|t, v| t.add(v[0], v[1]))?;
    add("sub", &[(2, 3), (2, 3)], wide, &|t, v| t.sub(v[0], v[1]))?;
    add("mul", &[(2, 3), (2, 3)], wide, &|t, v| t.mul(v[0], v[1]))?;
    add("scale", &[(2, 3)], wide, &|t, v| t.scale(v[0], -1.7))?;
    add("sigmoid", &[(3, 3)], wide, &|t, v| t.sigmoid(v[0]))?;
    add("tanh", &[(3, 3)], wide, &|t, v| t.tanh(v[0]))?;
    add("exp", &[(3, 3)], wide, &|t, v| t.exp(v[0]))?;
    add("clamp", &[(3, 4)], wide, &|t, v| {
        let x = clamp_safe(t, v[0])?;
        t.clamp(x, -1.0, 1.0)
    })?;
    add("slice_rows", &[(5, 3)], wide, &|t, v| t.slice_rows(v[0], 1, 3))?;
    add("slice_cols", &[(3, 5)], wide, &|t, v| t.slice_cols(v[0], 2, 2))?;
    add("concat_cols", &[(2, 3), (2, 2)], wide, &|t, v| {
        t.concat(&[v[0], v[1]], Axis::Cols)
    })?;
    add("concat_rows", &[(2, 3), (1, 3)], wide, &|t, v| {
        t.concat(&[v[0], v[1]], Axis::Rows)
    })?;
    add("dropout_frozen_mask", &[(3, 4)], wide, &|t, v| {
        let mut rng = RngStream::new(5, 5);
        t.dropout(v[0], 0.4, &mut rng, true)
    })?;
    add("softmax", &[(3, 4)], wide, &|t, v| t.softmax(v[0]))?;
    add("normalize_sum", &[(1, 5)], (0.5, 2.0), &|t, v| t.normalize_sum(v[0]))?;
    add("cross_entropy", &[(3, 2)], wide, &|t, v| {
        t.cross_entropy(v[0], &[1, 0, 1])
    })?;
    add("weighted_cross_entropy", &[(3, 2)], wide, &|t, v| {
        t.weighted_cross_entropy(v[0], &[1, 0, 1], &[2.0, 0.5, 1.0])
    })?;
    add("sum", &[(3, 4)], wide, &|t, v| t.sum(v[0]))?;
    add("mean", &[(3, 4)], wide, &|t, v| t.mean(v[0]))?;
    add("kl_diag_gaussians", &[(1, 4), (1, 4), (1, 4), (1, 4)], wide, &|t, v| {
        t.kl_diag_gaussians(v[0], v[1], v[2], v[3])
    })?;
    add("attention_softmax", &[(l, h)], (-1.0, 1.0), &move |t, v| {
        let last = t.slice_rows(v[0], l - 1, 1)?;
        let alpha = attention_weights(t, v[0], last, AttentionMode::Softmax)?;
        context_vector(t, alpha, v[0])
    })?;
    // positive states keep the ratio denominator away from zero
    add("attention_ratio", &[(l, h)], (0.2, 1.0), &move |t, v| {
        let last = t.slice_rows(v[0], l - 1, 1)?;
        let alpha = attention_weights(t, v[0], last, AttentionMode::Ratio)?;
        context_vector(t, alpha, v[0])
    })?;

    // gather and the LSTM cell need parameters of their own
    let mut rng = RngStream::new(99, 0);
    let mut store = ParamStore::new();
    let table = store.add("embedding", Tensor::zeros(dims.vocab, 4));
    let lstm = LstmLayer::new(&mut store, "lstm", 4, h, &mut rng);
    randomize_uniform(&mut store, 1.0, &mut rng);
    let ids: Vec<usize> = (0..l).map(|i| (i * 7 + 2) % dims.vocab).chain([2]).collect();
    out.push(grad_check(
        "gather_rows",
        &store,
        |t| {
            let g = t.gather_rows(table, &ids)?;
            project(t, g, 77)
        },
        cfg,
    )?);
    out.push(grad_check(
        "lstm_step",
        &store,
        |t| {
            let x = t.gather_rows(table, &ids[..1])?;
            let s1 = lstm.step(t, x, None)?;
            let x2 = t.gather_rows(table, &ids[1..2])?;
            let s2 = lstm.step(t, x2, Some(s1))?;
            let both = t.concat(&[s2.h, s2.c], Axis::Cols)?;
            project(t, both, 78)
        },
        cfg,
    )?);
    out.push(grad_check(
        "lstm_sequence",
        &store,
        |t| {
            let x = t.gather_rows(table, &ids)?;
            let hs = lstm.run(t, x)?;
            project(t, hs, 79)
        },
        cfg,
    )?);
    Ok(out)
}

fn batch(dims: &Dims) -> Vec<LabeledExample> {
    (0..dims.batch)
        .map(|b| {
            let len = dims.seq - b % 2;
            let mut token_ids: Vec<usize> = (0..len).map(|i| 2 + (i * 5 + b * 3) % (dims.vocab - 2)).collect();
            token_ids.resize(dims.seq, 0);
            LabeledExample {
                token_ids,
                true_length: len,
                label: (b % 2) as u8,
            }
        })
        .collect()
}

fn end_to_end(kind: ModelKind, attention: AttentionMode, cfg: GradCheckConfig, dims: &Dims) -> Result<GradCheckReport> {
    let spec = ModelSpec {
        hp: HyperParams {
            max_len: dims.seq,
            embed_dim: 6,
            hidden: dims.hidden,
            z_dim: dims.z,
            attention,
        },
        ..ModelSpec::new(kind)
    };
    let mut model = Model::new(spec, dims.vocab, None, 11)?;
    randomize_uniform(&mut model.store, 0.5, &mut RngStream::new(12, 0));
    let examples = batch(dims);
    // frozen masks / noise: every evaluation re-derives the same streams
    let noise = RngStream::new(13, 0);
    let name = format!("end_to_end_{kind}_{attention}");
    grad_check(
        &name,
        &model.store,
        |t| {
            let mut losses = Vec::with_capacity(examples.len());
            for (i, ex) in examples.iter().enumerate() {
                losses.push(model.loss(t, ex, &noise.derive(i as u64), 1.0)?.loss);
            }
            let stacked = t.concat(&losses, Axis::Cols)?;
            t.mean(stacked)
        },
        cfg,
    )
}

/// A check whose analytic derivative is deliberately wrong.
pub fn negative_control(cfg: GradCheckConfig) -> Result<GradCheckReport> {
    op_check(
        "negative_control_corrupted_adjoint",
        &[(2, 3)],
        (-2.0, 2.0),
        1234,
        cfg,
        &|t, v| t.elementwise(v[0], f64::sin, |x| x.cos() + 0.1),
    )
}

/// Runs every operation and end-to-end check. With `include_negative_control`
/// a deliberately broken check is added, so the suite must fail.
pub fn run_suite(size: SuiteSize, include_negative_control: bool) -> Result<SuiteReport> {
    let cfg = GradCheckConfig::default();
    let dims = size.dims();
    let mut checks = operation_checks(cfg, &dims)?;
    for kind in ModelKind::ALL {
        checks.push(end_to_end(kind, AttentionMode::Softmax, cfg, &dims)?);
    }
    checks.push(end_to_end(ModelKind::Base, AttentionMode::Ratio, cfg, &dims)?);
    let mut negative_controls = Vec::new();
    if include_negative_control {
        let c = negative_control(cfg)?;
        negative_controls.push(c.name.clone());
        checks.push(c);
    }
    Ok(SuiteReport {
        size,
        epsilon: cfg.epsilon,
        tolerance: cfg.tolerance,
        checks,
        negative_controls,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let r = run_suite(SuiteSize::Small, false).unwrap();
        assert!(r.passed(), "{}", r.table());
        assert!(r.checks.len() >= 30);
        assert!(r.checks.iter().any(|c| c.name == "end_to_end_vi_softmax"));
    }

    #[test]
    fn negative_control_is_caught() {
        let c = negative_control(GradCheckConfig::default()).unwrap();
        assert!(!c.passed());
        assert_eq!(c.failures.len(), 6);
    }
}
