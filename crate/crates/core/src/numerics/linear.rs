use serde::{Deserialize, Serialize};

use super::{axpy, dot, ParamId, ParamSet, Tensor2};
use crate::error::{check_len, Result};

/// Affine map `y = W·x + b`.
///
/// The weight is stored input-major (`input × output`), i.e. as `Wᵀ`, so the
/// forward pass and both gradient products walk contiguous rows, and zero
/// inputs (the bulk of an occupancy raster) are skipped outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(ps: &mut ParamSet, name: &str, input: usize, output: usize) -> Self {
        let weight = ps.add_uniform(&format!("{name}.weight"), input, output, input);
        let bias = Some(ps.add_uniform(&format!("{name}.bias"), 1, output, input));
        Self {
            weight,
            bias,
            input,
            output,
        }
    }

    pub fn without_bias(ps: &mut ParamSet, name: &str, input: usize, output: usize) -> Self {
        let weight = ps.add_uniform(&format!("{name}.weight"), input, output, input);
        Self {
            weight,
            bias: None,
            input,
            output,
        }
    }

    /// Overwrites the parameters from a conventional `output × input` matrix.
    pub fn set(&self, ps: &mut ParamSet, w: &Tensor2, b: Option<&[f64]>) -> Result<()> {
        check_len("Linear::set rows", self.output, w.rows)?;
        check_len("Linear::set cols", self.input, w.cols)?;
        let out = self.output;
        let dst = ps.value_mut(self.weight);
        for o in 0..w.rows {
            for i in 0..w.cols {
                dst[i * out + o] = w.get(o, i);
            }
        }
        if let (Some(bid), Some(b)) = (self.bias, b) {
            check_len("Linear::set bias", self.output, b.len())?;
            ps.value_mut(bid).copy_from_slice(b);
        }
        Ok(())
    }

    /// Weight entry `W[o][i]` in the conventional orientation.
    pub fn weight_at(&self, ps: &ParamSet, o: usize, i: usize) -> f64 {
        ps.value(self.weight)[i * self.output + o]
    }

    pub fn forward(&self, ps: &ParamSet, x: &[f64]) -> Result<Vec<f64>> {
        check_len("Linear::forward", self.input, x.len())?;
        Ok(self.forward_unchecked(ps, x))
    }

    pub(crate) fn forward_unchecked(&self, ps: &ParamSet, x: &[f64]) -> Vec<f64> {
        let mut y = match self.bias {
            Some(b) => ps.value(b).to_vec(),
            None => vec![0.0; self.output],
        };
        let w = ps.value(self.weight);
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                axpy(xi, &w[i * self.output..(i + 1) * self.output], &mut y);
            }
        }
        y
    }

    /// Accumulates `dL/dW`, `dL/db` into the gradient buffer and, when asked,
    /// returns `dL/dx`.
    pub fn backward(&self, ps: &mut ParamSet, x: &[f64], dy: &[f64], want_dx: bool) -> Option<Vec<f64>> {
        debug_assert_eq!(x.len(), self.input);
        debug_assert_eq!(dy.len(), self.output);
        let out = self.output;
        let wr = ps.entry(self.weight).range();
        if let Some(b) = self.bias {
            let br = ps.entry(b).range();
            axpy(1.0, dy, &mut ps.grads[br]);
        }
        let dx = want_dx.then(|| {
            let w = &ps.values[wr.clone()];
            (0..self.input)
                .map(|i| dot(&w[i * out..(i + 1) * out], dy))
                .collect::<Vec<f64>>()
        });
        let gw = &mut ps.grads[wr];
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                axpy(xi, dy, &mut gw[i * out..(i + 1) * out]);
            }
        }
        dx
    }
}
