//! Dense linear algebra, layer primitives with hand-written backward passes,
//! a flat parameter store, the Adam optimizer and a finite-difference
//! gradient oracle.
//!
//! Vectors are plain `Vec<f64>` / `&[f64]`; [`Tensor2`] is the only matrix
//! type. Layers never own their weights: they hold [`ParamId`] handles into a
//! [`ParamSet`], which keeps every value and gradient in two contiguous
//! buffers so the optimizer and the gradient checker can treat the whole
//! model as one flat coordinate vector.

mod adam;
mod gradcheck;
mod gru;
mod linear;
mod params;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{finite_diff_grad, relative_error};
pub use gru::{GruCell, GruTrace};
pub use linear::Linear;
pub use params::{ParamEntry, ParamId, ParamSet};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyInput("Tensor2::from_vec"));
        }
        check_len("Tensor2::from_vec", rows * cols, data.len())?;
        check_finite("Tensor2::from_vec", &data)?;
        Ok(Self { rows, cols, data })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self · x`
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("Tensor2::matvec", self.cols, x.len())?;
        Ok((0..self.rows).map(|r| dot(self.row(r), x)).collect())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn check_finite(context: &'static str, xs: &[f64]) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context))
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::EmptyInput("softmax"));
    }
    check_finite("softmax", logits)?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Given `p = softmax(z)` and `dL/dp`, return `dL/dz`.
pub fn softmax_backward(probs: &[f64], dprobs: &[f64]) -> Vec<f64> {
    let inner = dot(probs, dprobs);
    probs
        .iter()
        .zip(dprobs)
        .map(|(p, dp)| p * (dp - inner))
        .collect()
}

/// Applies tanh in place and returns nothing; the activated buffer doubles as
/// the cache needed by [`tanh_backward`].
pub fn tanh_inplace(xs: &mut [f64]) {
    for x in xs.iter_mut() {
        *x = x.tanh();
    }
}

/// `dL/da` for `y = tanh(a)`, given `y` and `dL/dy`.
pub fn tanh_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    y.iter().zip(dy).map(|(y, d)| d * (1.0 - y * y)).collect()
}

/// Index of the largest entry; exact ties resolve to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
