use std::collections::BTreeMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A learnable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Owner of every learnable tensor of a model.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = Tensor::zeros(value.rows(), value.cols());
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Adds `scale × grads` into the gradient accumulators.
    pub fn accumulate(&mut self, grads: &Gradients, scale: f64) {
        for (i, g) in grads.entries.iter().enumerate() {
            let Some(g) = g else { continue };
            let acc = &mut self.params[i].grad;
            match g {
                ParamGrad::Dense(t) => acc.add_scaled(t, scale),
                ParamGrad::Rows(rows) => {
                    let cols = acc.cols();
                    let data = acc.data_mut();
                    for (&r, v) in rows {
                        for (a, b) in data[r * cols..(r + 1) * cols].iter_mut().zip(v) {
                            *a += scale * b;
                        }
                    }
                }
            }
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params.iter().map(|p| p.grad.sum_squares()).sum::<f64>().sqrt()
    }

    /// Replaces the value of `name`, requiring an identical shape.
    pub fn load_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self
            .find(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter {name}: expected shape {:?}, found {:?}",
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum ParamGrad {
    Dense(Tensor),
    /// Row-sparse gradient of an embedding table, keyed by row.
    Rows(BTreeMap<usize, Vec<f64>>),
}

/// Per-parameter gradients produced by one reverse pass.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    entries: Vec<Option<ParamGrad>>,
}

impl Gradients {
    pub(crate) fn with_len(n: usize) -> Self {
        Gradients { entries: vec![None; n] }
    }

    pub(crate) fn add_dense(&mut self, id: ParamId, g: Tensor) {
        match &mut self.entries[id.0] {
            slot @ None => *slot = Some(ParamGrad::Dense(g)),
            Some(ParamGrad::Dense(t)) => t.add_assign(&g),
            Some(ParamGrad::Rows(_)) => {
                let rows = match self.entries[id.0].take() {
                    Some(ParamGrad::Rows(rows)) => rows,
                    _ => unreachable!(),
                };
                let mut t = g;
                let cols = t.cols();
                for (r, v) in rows {
                    for (a, b) in t.data_mut()[r * cols..(r + 1) * cols].iter_mut().zip(&v) {
                        *a += b;
                    }
                }
                self.entries[id.0] = Some(ParamGrad::Dense(t));
            }
        }
    }

    pub(crate) fn add_row(&mut self, id: ParamId, row: usize, g: &[f64]) {
        let slot = &mut self.entries[id.0];
        if slot.is_none() {
            *slot = Some(ParamGrad::Rows(BTreeMap::new()));
        }
        match slot.as_mut().unwrap() {
            ParamGrad::Rows(rows) => {
                let acc = rows.entry(row).or_insert_with(|| vec![0.0; g.len()]);
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            ParamGrad::Dense(t) => {
                let cols = t.cols();
                for (a, b) in t.data_mut()[row * cols..(row + 1) * cols].iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&ParamGrad> {
        self.entries.get(id.0).and_then(Option::as_ref)
    }

    /// Dense view of the gradient for `id`; zero when the parameter was unreached.
    pub fn dense(&self, id: ParamId, shape: [usize; 2]) -> Tensor {
        let mut out = Tensor::zeros(shape[0], shape[1]);
        match self.get(id) {
            None => {}
            Some(ParamGrad::Dense(t)) => out = t.clone(),
            Some(ParamGrad::Rows(rows)) => {
                let cols = shape[1];
                for (&r, v) in rows {
                    out.data_mut()[r * cols..(r + 1) * cols].copy_from_slice(v);
                }
            }
        }
        out
    }
}
