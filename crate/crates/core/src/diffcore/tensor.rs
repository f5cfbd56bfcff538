use std::fmt;

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`. Vectors are `1 × n`, scalars `1 × 1`.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor[{}x{}]{:?}", self.rows, self.cols, self.data)
    }
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape("tensor", format!("zero dimension {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::shape(
                "tensor",
                format!("{} values for shape {rows}x{cols}", data.len()),
            ));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn row_vector(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Tensor::new(1, n, values)
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("tensor", "ragged rows"));
        }
        Tensor::new(rows.len(), cols, rows.concat())
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// The single value of a `1 × 1` tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn add_scaled(&mut self, other: &Tensor, scale: f64) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `out (n×b) += a (n×k) · w (k×b)`.
pub(crate) fn matmul_acc(a: &[f64], w: &[f64], out: &mut [f64], n: usize, k: usize, b: usize) {
    for i in 0..n {
        let out_row = &mut out[i * b..(i + 1) * b];
        for (kk, &x) in a[i * k..(i + 1) * k].iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let w_row = &w[kk * b..(kk + 1) * b];
            for (o, &wv) in out_row.iter_mut().zip(w_row) {
                *o += x * wv;
            }
        }
    }
}

/// `out (n×m) += a (n×k) · bᵀ` where `b` is `m×k`.
pub(crate) fn matmul_nt_acc(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..m {
            let b_row = &b[j * k..(j + 1) * k];
            out[i * m + j] += a_row.iter().zip(b_row).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out (k×b) += aᵀ · g` where `a` is `n×k` and `g` is `n×b`.
pub(crate) fn matmul_tn_acc(a: &[f64], g: &[f64], out: &mut [f64], n: usize, k: usize, b: usize) {
    for i in 0..n {
        let g_row = &g[i * b..(i + 1) * b];
        for (kk, &x) in a[i * k..(i + 1) * k].iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let out_row = &mut out[kk * b..(kk + 1) * b];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += x * gv;
            }
        }
    }
}
