use serde::{Deserialize, Serialize};

use super::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coupled L2 penalty: `wd·θ` is added to the gradient before the moment update.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam with bias-corrected moments. Moment buffers persist across steps.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, n_params: usize) -> Self {
        Self {
            config,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update from the current gradients, then zeroes them.
    pub fn step(&mut self, params: &mut ParamSet, lr: f64) {
        assert_eq!(self.m.len(), params.len(), "optimizer/parameter size mismatch");
        self.t += 1;
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let values = &mut params.values;
        let grads = &mut params.grads;
        for i in 0..values.len() {
            let g = grads[i] + weight_decay * values[i];
            let m = beta1 * self.m[i] + (1.0 - beta1) * g;
            let v = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            self.m[i] = m;
            self.v[i] = v;
            values[i] -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
            grads[i] = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_without_decay_leaves_params() {
        let mut ps = ParamSet::new(4);
        ps.add_uniform("w", 8, 8, 8);
        let before = ps.values().to_vec();
        let mut opt = Adam::new(AdamConfig::default(), ps.len());
        for _ in 0..3 {
            opt.step(&mut ps, 1e-3);
        }
        assert_eq!(ps.values(), &before[..]);
    }

    #[test]
    fn first_step_matches_hand_rolled_update() {
        let mut ps = ParamSet::new(0);
        let id = ps.add_zeros("w", 1, 1);
        ps.value_mut(id)[0] = 0.7;
        let cfg = AdamConfig::default();
        let mut opt = Adam::new(cfg, 1);
        let lr = 1e-3;
        // Oracle: m̂ = g, v̂ = g², Δ = −lr·g/(|g|+eps).
        let mut w = 0.7;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=3 {
            ps.grads_mut()[0] = 1.0;
            opt.step(&mut ps, lr);
            let g = 1.0;
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let mh = m / (1.0 - cfg.beta1.powi(t));
            let vh = v / (1.0 - cfg.beta2.powi(t));
            w -= lr * mh / (vh.sqrt() + cfg.eps);
            assert!((ps.values()[0] - w).abs() < 1e-15);
        }
        // The first step moves by almost exactly lr.
        let mut ps2 = ParamSet::new(0);
        ps2.add_zeros("w", 1, 1);
        let mut opt2 = Adam::new(cfg, 1);
        ps2.grads_mut()[0] = 1.0;
        opt2.step(&mut ps2, lr);
        assert!((ps2.values()[0] + lr / (1.0 + cfg.eps)).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_enters_the_gradient() {
        let cfg = AdamConfig {
            weight_decay: 1e-7,
            ..AdamConfig::default()
        };
        let mut ps = ParamSet::new(0);
        let id = ps.add_zeros("w", 1, 1);
        ps.value_mut(id)[0] = 2.0;
        let mut opt = Adam::new(cfg, 1);
        opt.step(&mut ps, 1.0);
        // Effective gradient is 2e-7 > 0, so the step is ≈ −1·g/(|g|+eps).
        let g = 1e-7 * 2.0;
        let expected = 2.0 - g / (g + cfg.eps);
        assert!((ps.values()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_is_bit_identical() {
        let mut ps = ParamSet::new(8);
        ps.add_uniform("w", 4, 4, 4);
        let before = ps.values().to_vec();
        ps.grads_mut().iter_mut().enumerate().for_each(|(i, g)| *g = i as f64 - 7.5);
        let mut opt = Adam::new(
            AdamConfig {
                weight_decay: 1e-2,
                ..AdamConfig::default()
            },
            ps.len(),
        );
        opt.step(&mut ps, 0.0);
        for (a, b) in ps.values().iter().zip(&before) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(ps.grads().iter().all(|&g| g == 0.0));
    }
}
