//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every operation appends a node holding its output value and enough of its
//! inputs to compute the adjoint. [`Tape::backward`] walks the nodes in
//! reverse insertion order, which is a valid reverse topological order since
//! a node can only reference nodes recorded before it.
//!
//! Parameters are read directly from a borrowed [`ParamStore`]; their
//! gradients come back as a [`Gradients`] value so that any number of tapes
//! can share one store read-only.

use std::collections::HashMap;

use super::params::{Gradients, ParamId, ParamStore};
use super::rng::RngStream;
use super::tensor::{matmul_acc, matmul_nt_acc, matmul_tn_acc, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    Affine {
        x: Var,
        w: Var,
        b: Var,
    },
    MatMul {
        a: Var,
        b: Var,
    },
    MatMulNt {
        a: Var,
        b: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Clamp {
        a: Var,
        lo: f64,
        hi: f64,
    },
    SliceRows {
        a: Var,
        start: usize,
    },
    SliceCols {
        a: Var,
        start: usize,
    },
    Concat {
        parts: Vec<Var>,
        axis: Axis,
    },
    Dropout {
        a: Var,
        mask: Vec<f64>,
    },
    Softmax(Var),
    NormalizeSum(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        weights: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    Gather {
        table: ParamId,
        ids: Vec<usize>,
    },
    KlDiag {
        mu_q: Var,
        ls_q: Var,
        mu_p: Var,
        ls_p: Var,
    },
    Elementwise {
        a: Var,
        deriv: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    // `None` for parameter leaves, whose value lives in the store.
    value: Option<Tensor>,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
}

/// Position on a tape that [`Tape::rewind`] can return to.
#[derive(Debug, Clone, Copy)]
pub struct Mark(usize);

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.rows(), t.cols(), t.data().iter().map(|&v| f(v)).collect()).expect("shape preserved")
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_rows(t: &Tensor) -> Tensor {
    let cols = t.cols();
    let mut out = Vec::with_capacity(t.len());
    for r in 0..t.rows() {
        let row = t.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / total));
    }
    Tensor::new(t.rows(), cols, out).expect("shape preserved")
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Per-dimension closed-form KL(N(μq, σq²) ‖ N(μp, σp²)) with log-σ inputs.
pub fn kl_term(mu_q: f64, ls_q: f64, mu_p: f64, ls_p: f64) -> f64 {
    let var_ratio = (2.0 * (ls_q - ls_p)).exp();
    let diff = mu_q - mu_p;
    let mean_term = diff * diff * (-2.0 * ls_p).exp();
    ls_p - ls_q + 0.5 * (var_ratio + mean_term) - 0.5
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn mark(&self) -> Mark {
        Mark(self.nodes.len())
    }

    /// Drops every node recorded after `mark`. Vars created after the mark
    /// become invalid.
    pub fn rewind(&mut self, mark: Mark) {
        self.nodes.truncate(mark.0);
        self.param_nodes.retain(|_, v| v.0 < mark.0);
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.value(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.value(v).shape()
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    fn push(&mut self, op: Op, value: Tensor, name: &'static str) -> Result<Var> {
        check_finite(name, &value)?;
        self.nodes.push(Node { op, value: Some(value) });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(Op::Leaf, value, "constant")
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        v
    }

    /// `x · w + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let [n, a] = xv.shape();
        let [a2, cols] = wv.shape();
        if a != a2 || bv.shape() != [1, cols] {
            return Err(Error::shape(
                "affine",
                format!("x {:?} · w {:?} + b {:?}", xv.shape(), wv.shape(), bv.shape()),
            ));
        }
        let mut out = Vec::with_capacity(n * cols);
        for _ in 0..n {
            out.extend_from_slice(bv.data());
        }
        matmul_acc(xv.data(), wv.data(), &mut out, n, a, cols);
        let t = Tensor::new(n, cols, out)?;
        self.push(Op::Affine { x, w, b }, t, "affine")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let [n, k] = av.shape();
        let [k2, m] = bv.shape();
        if k != k2 {
            return Err(Error::shape("matmul", format!("{:?} · {:?}", av.shape(), bv.shape())));
        }
        let mut out = vec![0.0; n * m];
        matmul_acc(av.data(), bv.data(), &mut out, n, k, m);
        let t = Tensor::new(n, m, out)?;
        self.push(Op::MatMul { a, b }, t, "matmul")
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let [n, k] = av.shape();
        let [m, k2] = bv.shape();
        if k != k2 {
            return Err(Error::shape(
                "matmul_nt",
                format!("{:?} · {:?}ᵀ", av.shape(), bv.shape()),
            ));
        }
        let mut out = vec![0.0; n * m];
        matmul_nt_acc(av.data(), bv.data(), &mut out, n, k, m);
        let t = Tensor::new(n, m, out)?;
        self.push(Op::MatMulNt { a, b }, t, "matmul_nt")
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape(name, format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(av.rows(), av.cols(), data)?;
        self.push(op, t, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let t = map(self.value(a), |v| v * factor);
        self.push(Op::Scale(a, factor), t, "scale")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let t = map(self.value(a), sigmoid_scalar);
        self.push(Op::Sigmoid(a), t, "sigmoid")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let t = map(self.value(a), f64::tanh);
        self.push(Op::Tanh(a), t, "tanh")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let t = map(self.value(a), f64::exp);
        self.push(Op::Exp(a), t, "exp")
    }

    /// Element-wise clamp; the gradient is zero where the input is outside `[lo, hi]`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let t = map(self.value(a), |v| v.clamp(lo, hi));
        self.push(Op::Clamp { a, lo, hi }, t, "clamp")
    }

    /// Element-wise map with a caller-supplied derivative.
    pub fn elementwise(&mut self, a: Var, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64) -> Result<Var> {
        let av = self.value(a);
        let t = map(av, f);
        let deriv = av.data().iter().map(|&v| df(v)).collect();
        self.push(Op::Elementwise { a, deriv }, t, "elementwise")
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        if len == 0 || start + len > av.rows() {
            return Err(Error::shape(
                "slice_rows",
                format!("rows {start}..{} of {:?}", start + len, av.shape()),
            ));
        }
        let cols = av.cols();
        let data = av.data()[start * cols..(start + len) * cols].to_vec();
        let t = Tensor::new(len, cols, data)?;
        self.push(Op::SliceRows { a, start }, t, "slice_rows")
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        if len == 0 || start + len > av.cols() {
            return Err(Error::shape(
                "slice_cols",
                format!("cols {start}..{} of {:?}", start + len, av.shape()),
            ));
        }
        let mut data = Vec::with_capacity(av.rows() * len);
        for r in 0..av.rows() {
            data.extend_from_slice(&av.row(r)[start..start + len]);
        }
        let t = Tensor::new(av.rows(), len, data)?;
        self.push(Op::SliceCols { a, start }, t, "slice_cols")
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "no parts"));
        }
        let shapes: Vec<[usize; 2]> = parts.iter().map(|&p| self.shape(p)).collect();
        let t = match axis {
            Axis::Rows => {
                let cols = shapes[0][1];
                if shapes.iter().any(|s| s[1] != cols) {
                    return Err(Error::shape("concat", format!("row concat of {shapes:?}")));
                }
                let rows = shapes.iter().map(|s| s[0]).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for &p in parts {
                    data.extend_from_slice(self.value(p).data());
                }
                Tensor::new(rows, cols, data)?
            }
            Axis::Cols => {
                let rows = shapes[0][0];
                if shapes.iter().any(|s| s[0] != rows) {
                    return Err(Error::shape("concat", format!("column concat of {shapes:?}")));
                }
                let cols = shapes.iter().map(|s| s[1]).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row(r));
                    }
                }
                Tensor::new(rows, cols, data)?
            }
        };
        self.push(
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            t,
            "concat",
        )
    }

    /// Inverted dropout. When `active`, each element is zeroed with
    /// probability `rate` and survivors are scaled by `1/(1−rate)`;
    /// otherwise the input is returned unchanged (no node is recorded).
    pub fn dropout(&mut self, a: Var, rate: f64, rng: &mut RngStream, active: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !active {
            return Ok(a);
        }
        let keep = 1.0 - rate;
        let n = self.value(a).len();
        let mask: Vec<f64> = if rate == 0.0 {
            vec![1.0; n]
        } else {
            (0..n)
                .map(|_| if rng.uniform() < rate { 0.0 } else { 1.0 / keep })
                .collect()
        };
        self.dropout_with_mask(a, mask)
    }

    /// Dropout with an explicit, already-scaled mask.
    pub fn dropout_with_mask(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        let av = self.value(a);
        if mask.len() != av.len() {
            return Err(Error::shape(
                "dropout",
                format!("mask of {} for {:?}", mask.len(), av.shape()),
            ));
        }
        let data = av.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let t = Tensor::new(av.rows(), av.cols(), data)?;
        self.push(Op::Dropout { a, mask }, t, "dropout")
    }

    /// Row-wise `exp(x − rowmax) / Σ`.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = softmax_rows(self.value(a));
        self.push(Op::Softmax(a), t, "softmax")
    }

    /// `x / Σx` over all elements.
    pub fn normalize_sum(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let total: f64 = av.data().iter().sum();
        if total == 0.0 {
            return Err(Error::Domain("normalize_sum over a zero total".into()));
        }
        let t = map(av, |v| v / total);
        self.push(Op::NormalizeSum(a), t, "normalize_sum")
    }

    /// Mean over rows of `−log softmax(logits)[label]`, via log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let n = labels.len();
        self.weighted_cross_entropy(logits, labels, &vec![1.0; n])
    }

    /// Mean over rows of `weight_i × −log softmax(logits)[label_i]`.
    pub fn weighted_cross_entropy(&mut self, logits: Var, labels: &[usize], weights: &[f64]) -> Result<Var> {
        let lv = self.value(logits);
        let [n, k] = lv.shape();
        if labels.len() != n || weights.len() != n {
            return Err(Error::shape(
                "cross_entropy",
                format!("{} labels for {n} rows", labels.len()),
            ));
        }
        let mut total = 0.0;
        for (r, (&label, &w)) in labels.iter().zip(weights).enumerate() {
            if label >= k {
                return Err(Error::Domain(format!("label {label} out of range for {k} classes")));
            }
            let row = lv.row(r);
            total += w * (log_sum_exp(row) - row[label]);
        }
        let t = Tensor::scalar(total / n as f64);
        self.push(
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                weights: weights.to_vec(),
            },
            t,
            "cross_entropy",
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let t = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(Op::Sum(a), t, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let t = Tensor::scalar(av.data().iter().sum::<f64>() / av.len() as f64);
        self.push(Op::Mean(a), t, "mean")
    }

    /// Rows `ids` of the parameter matrix `table`, stacked.
    pub fn gather_rows(&mut self, table: ParamId, ids: &[usize]) -> Result<Var> {
        let tv = self.params.value(table);
        if ids.is_empty() {
            return Err(Error::shape("gather_rows", "no ids"));
        }
        let cols = tv.cols();
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= tv.rows() {
                return Err(Error::Domain(format!(
                    "token id {id} out of range for table of {} rows",
                    tv.rows()
                )));
            }
            data.extend_from_slice(tv.row(id));
        }
        let t = Tensor::new(ids.len(), cols, data)?;
        self.push(
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            t,
            "gather_rows",
        )
    }

    /// Closed-form KL(q ‖ p) between diagonal Gaussians parameterized by
    /// mean and log standard deviation, summed over every element.
    pub fn kl_diag_gaussians(&mut self, mu_q: Var, ls_q: Var, mu_p: Var, ls_p: Var) -> Result<Var> {
        let shape = self.shape(mu_q);
        if [ls_q, mu_p, ls_p].iter().any(|&v| self.shape(v) != shape) {
            return Err(Error::shape("kl_diag_gaussians", "operand shapes differ"));
        }
        let total: f64 = (0..shape[0] * shape[1])
            .map(|i| {
                kl_term(
                    self.value(mu_q).data()[i],
                    self.value(ls_q).data()[i],
                    self.value(mu_p).data()[i],
                    self.value(ls_p).data()[i],
                )
            })
            .sum();
        self.push(
            Op::KlDiag { mu_q, ls_q, mu_p, ls_p },
            Tensor::scalar(total),
            "kl_diag_gaussians",
        )
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != [1, 1] {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::scalar(1.0));
        let mut grads = Gradients::with_len(self.params.len());

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let out = self.value(Var(i));
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Param(id) => grads.add_dense(*id, g),
                Op::Affine { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let [n, a] = xv.shape();
                    let cols = wv.cols();
                    let mut gb = vec![0.0; cols];
                    for r in 0..n {
                        for (acc, v) in gb.iter_mut().zip(g.row(r)) {
                            *acc += v;
                        }
                    }
                    let mut gx = vec![0.0; n * a];
                    matmul_nt_acc(g.data(), wv.data(), &mut gx, n, cols, a);
                    let mut gw = vec![0.0; a * cols];
                    matmul_tn_acc(xv.data(), g.data(), &mut gw, n, a, cols);
                    self.acc(&mut adj, *x, Tensor::new(n, a, gx)?);
                    self.acc(&mut adj, *w, Tensor::new(a, cols, gw)?);
                    self.acc(&mut adj, *b, Tensor::new(1, cols, gb)?);
                }
                Op::MatMul { a, b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let [n, k] = av.shape();
                    let m = bv.cols();
                    let mut ga = vec![0.0; n * k];
                    matmul_nt_acc(g.data(), bv.data(), &mut ga, n, m, k);
                    let mut gb = vec![0.0; k * m];
                    matmul_tn_acc(av.data(), g.data(), &mut gb, n, k, m);
                    self.acc(&mut adj, *a, Tensor::new(n, k, ga)?);
                    self.acc(&mut adj, *b, Tensor::new(k, m, gb)?);
                }
                Op::MatMulNt { a, b } => {
                    // out = a·bᵀ: ga = g·b, gb = gᵀ·a
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let [n, k] = av.shape();
                    let m = bv.rows();
                    let mut ga = vec![0.0; n * k];
                    matmul_acc(g.data(), bv.data(), &mut ga, n, m, k);
                    let mut gb = vec![0.0; m * k];
                    matmul_tn_acc(g.data(), av.data(), &mut gb, n, m, k);
                    self.acc(&mut adj, *a, Tensor::new(n, k, ga)?);
                    self.acc(&mut adj, *b, Tensor::new(m, k, gb)?);
                }
                Op::Add(a, b) => {
                    self.acc(&mut adj, *a, g.clone());
                    self.acc(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    self.acc(&mut adj, *b, map(&g, |v| -v));
                    self.acc(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = zip_map(&g, self.value(*b), |gv, bv| gv * bv);
                    let gb = zip_map(&g, self.value(*a), |gv, av| gv * av);
                    self.acc(&mut adj, *a, ga);
                    self.acc(&mut adj, *b, gb);
                }
                Op::Scale(a, f) => self.acc(&mut adj, *a, map(&g, |v| v * f)),
                Op::Sigmoid(a) => self.acc(&mut adj, *a, zip_map(&g, out, |gv, y| gv * y * (1.0 - y))),
                Op::Tanh(a) => self.acc(&mut adj, *a, zip_map(&g, out, |gv, y| gv * (1.0 - y * y))),
                Op::Exp(a) => self.acc(&mut adj, *a, zip_map(&g, out, |gv, y| gv * y)),
                Op::Clamp { a, lo, hi } => {
                    let ga = zip_map(&g, self.value(*a), |gv, x| if x < *lo || x > *hi { 0.0 } else { gv });
                    self.acc(&mut adj, *a, ga);
                }
                Op::Elementwise { a, deriv } => {
                    let data = g.data().iter().zip(deriv).map(|(gv, d)| gv * d).collect();
                    self.acc(&mut adj, *a, Tensor::new(g.rows(), g.cols(), data)?);
                }
                Op::SliceRows { a, start } => {
                    let [rows, cols] = self.shape(*a);
                    let mut ga = Tensor::zeros(rows, cols);
                    ga.data_mut()[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                    self.acc(&mut adj, *a, ga);
                }
                Op::SliceCols { a, start } => {
                    let [rows, cols] = self.shape(*a);
                    let mut ga = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        ga.data_mut()[r * cols + start..r * cols + start + g.cols()].copy_from_slice(g.row(r));
                    }
                    self.acc(&mut adj, *a, ga);
                }
                Op::Concat { parts, axis } => {
                    let mut offset = 0;
                    for &p in parts {
                        let [rows, cols] = self.shape(p);
                        let piece = match axis {
                            Axis::Rows => {
                                let c = g.cols();
                                let d = g.data()[offset * c..(offset + rows) * c].to_vec();
                                offset += rows;
                                Tensor::new(rows, cols, d)?
                            }
                            Axis::Cols => {
                                let mut d = Vec::with_capacity(rows * cols);
                                for r in 0..rows {
                                    d.extend_from_slice(&g.row(r)[offset..offset + cols]);
                                }
                                offset += cols;
                                Tensor::new(rows, cols, d)?
                            }
                        };
                        self.acc(&mut adj, p, piece);
                    }
                }
                Op::Dropout { a, mask } => {
                    let data = g.data().iter().zip(mask).map(|(gv, m)| gv * m).collect();
                    self.acc(&mut adj, *a, Tensor::new(g.rows(), g.cols(), data)?);
                }
                Op::Softmax(a) => {
                    let cols = out.cols();
                    let mut ga = Vec::with_capacity(out.len());
                    for r in 0..out.rows() {
                        let (y, gr) = (out.row(r), g.row(r));
                        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        ga.extend(y.iter().zip(gr).map(|(yv, gv)| yv * (gv - dot)));
                    }
                    self.acc(&mut adj, *a, Tensor::new(out.rows(), cols, ga)?);
                }
                Op::NormalizeSum(a) => {
                    let total: f64 = self.value(*a).data().iter().sum();
                    let dot: f64 = out.data().iter().zip(g.data()).map(|(y, gv)| y * gv).sum();
                    self.acc(&mut adj, *a, map(&g, |gv| (gv - dot) / total));
                }
                Op::CrossEntropy {
                    logits,
                    labels,
                    weights,
                } => {
                    let lv = self.value(*logits);
                    let n = labels.len() as f64;
                    let upstream = g.item();
                    let mut probs = softmax_rows(lv);
                    let cols = probs.cols();
                    for (r, (&label, &w)) in labels.iter().zip(weights).enumerate() {
                        let row = &mut probs.data_mut()[r * cols..(r + 1) * cols];
                        row[label] -= 1.0;
                        row.iter_mut().for_each(|v| *v *= upstream * w / n);
                    }
                    self.acc(&mut adj, *logits, probs);
                }
                Op::Sum(a) => {
                    let [r, c] = self.shape(*a);
                    self.acc(&mut adj, *a, Tensor::filled(r, c, g.item()));
                }
                Op::Mean(a) => {
                    let [r, c] = self.shape(*a);
                    self.acc(&mut adj, *a, Tensor::filled(r, c, g.item() / (r * c) as f64));
                }
                Op::Gather { table, ids } => {
                    for (r, &id) in ids.iter().enumerate() {
                        grads.add_row(*table, id, g.row(r));
                    }
                }
                Op::KlDiag { mu_q, ls_q, mu_p, ls_p } => {
                    let up = g.item();
                    let [r, c] = self.shape(*mu_q);
                    let (mq, lq, mp, lp) = (
                        self.value(*mu_q).data(),
                        self.value(*ls_q).data(),
                        self.value(*mu_p).data(),
                        self.value(*ls_p).data(),
                    );
                    let n = r * c;
                    let (mut g_mq, mut g_lq, mut g_mp, mut g_lp) =
                        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
                    for j in 0..n {
                        let inv_var_p = (-2.0 * lp[j]).exp();
                        let diff = mq[j] - mp[j];
                        let ratio = (2.0 * (lq[j] - lp[j])).exp();
                        g_mq[j] = up * diff * inv_var_p;
                        g_mp[j] = -up * diff * inv_var_p;
                        g_lq[j] = up * (ratio - 1.0);
                        g_lp[j] = up * (1.0 - ratio - diff * diff * inv_var_p);
                    }
                    self.acc(&mut adj, *mu_q, Tensor::new(r, c, g_mq)?);
                    self.acc(&mut adj, *ls_q, Tensor::new(r, c, g_lq)?);
                    self.acc(&mut adj, *mu_p, Tensor::new(r, c, g_mp)?);
                    self.acc(&mut adj, *ls_p, Tensor::new(r, c, g_lp)?);
                }
            }
        }
        Ok(grads)
    }

    fn acc(&self, adj: &mut [Option<Tensor>], v: Var, g: Tensor) {
        match &mut adj[v.0] {
            Some(t) => t.add_assign(&g),
            slot => *slot = Some(g),
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("shape preserved")
}
