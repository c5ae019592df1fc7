use serde::{Deserialize, Serialize};

use super::{sigmoid, Linear, ParamSet};
use crate::error::{check_len, Result};

/// Gated recurrent cell.
///
/// ```text
/// z  = σ(Wz·x + Uz·h + bz)
/// r  = σ(Wr·x + Ur·h + br)
/// n  = tanh(Wn·x + r ∘ (Un·h) + bn)
/// h' = (1 − z) ∘ n + z ∘ h
/// ```
///
/// Biases live on the input path; the hidden path is bias-free.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GruCell {
    pub wz: Linear,
    pub wr: Linear,
    pub wn: Linear,
    pub uz: Linear,
    pub ur: Linear,
    pub un: Linear,
    pub input_size: usize,
    pub hidden_size: usize,
}

/// Intermediate values from one step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GruTrace {
    pub x: Vec<f64>,
    pub h: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub n: Vec<f64>,
    pub un_h: Vec<f64>,
    pub h_next: Vec<f64>,
}

impl GruCell {
    pub fn new(ps: &mut ParamSet, name: &str, input_size: usize, hidden_size: usize) -> Self {
        // Hidden-path init uses fan_in = hidden, input path fan_in = input.
        Self {
            wz: Linear::new(ps, &format!("{name}.wz"), input_size, hidden_size),
            wr: Linear::new(ps, &format!("{name}.wr"), input_size, hidden_size),
            wn: Linear::new(ps, &format!("{name}.wn"), input_size, hidden_size),
            uz: Linear::without_bias(ps, &format!("{name}.uz"), hidden_size, hidden_size),
            ur: Linear::without_bias(ps, &format!("{name}.ur"), hidden_size, hidden_size),
            un: Linear::without_bias(ps, &format!("{name}.un"), hidden_size, hidden_size),
            input_size,
            hidden_size,
        }
    }

    pub fn step(&self, ps: &ParamSet, h: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.step_traced(ps, h, x)?.h_next)
    }

    pub fn step_traced(&self, ps: &ParamSet, h: &[f64], x: &[f64]) -> Result<GruTrace> {
        check_len("gru hidden", self.hidden_size, h.len())?;
        check_len("gru input", self.input_size, x.len())?;
        let mut z = self.wz.forward_unchecked(ps, x);
        let mut r = self.wr.forward_unchecked(ps, x);
        let mut n = self.wn.forward_unchecked(ps, x);
        let uz = self.uz.forward_unchecked(ps, h);
        let ur = self.ur.forward_unchecked(ps, h);
        let un_h = self.un.forward_unchecked(ps, h);
        for i in 0..self.hidden_size {
            z[i] = sigmoid(z[i] + uz[i]);
            r[i] = sigmoid(r[i] + ur[i]);
        }
        for i in 0..self.hidden_size {
            n[i] = (n[i] + r[i] * un_h[i]).tanh();
        }
        let h_next = (0..self.hidden_size)
            .map(|i| (1.0 - z[i]) * n[i] + z[i] * h[i])
            .collect();
        Ok(GruTrace {
            x: x.to_vec(),
            h: h.to_vec(),
            z,
            r,
            n,
            un_h,
            h_next,
        })
    }

    /// Backpropagates `dL/dh'` through one step. Accumulates parameter
    /// gradients and returns `(dL/dh, dL/dx)`.
    pub fn backward(&self, ps: &mut ParamSet, t: &GruTrace, dh_next: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hs = self.hidden_size;
        let mut dh = vec![0.0; hs];
        let mut da_z = vec![0.0; hs];
        let mut da_r = vec![0.0; hs];
        let mut da_n = vec![0.0; hs];
        let mut d_unh = vec![0.0; hs];
        for i in 0..hs {
            let g = dh_next[i];
            let dn = g * (1.0 - t.z[i]);
            let dz = g * (t.h[i] - t.n[i]);
            dh[i] = g * t.z[i];
            da_n[i] = dn * (1.0 - t.n[i] * t.n[i]);
            d_unh[i] = da_n[i] * t.r[i];
            let dr = da_n[i] * t.un_h[i];
            da_z[i] = dz * t.z[i] * (1.0 - t.z[i]);
            da_r[i] = dr * t.r[i] * (1.0 - t.r[i]);
        }
        let mut dx = vec![0.0; self.input_size];
        for (lin, d) in [(&self.wz, &da_z), (&self.wr, &da_r), (&self.wn, &da_n)] {
            let g = lin.backward(ps, &t.x, d, true).unwrap_or_default();
            dx.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        for (lin, d) in [(&self.uz, &da_z), (&self.ur, &da_r), (&self.un, &d_unh)] {
            let g = lin.backward(ps, &t.h, d, true).unwrap_or_default();
            dh.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        (dh, dx)
    }
}
