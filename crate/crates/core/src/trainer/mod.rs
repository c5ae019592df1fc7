//! Loss composition and the joint training loop.

pub mod dataset;
mod loss;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use dataset::{Dataset, DatasetManifest, GenConfig, Split};
pub use loss::{
    batch_loss, batch_loss_and_grad, feature_loss, load_balance_loss, sample_loss, traj_loss, value_loss,
    value_loss_grad, LossBreakdown, LossWeights, Sample, LOAD_BALANCE_COEFF,
};

use crate::error::{Error, Result};
use crate::model::{Model, Variant};
use crate::numerics::{Adam, AdamConfig, ParamSet};
use crate::router::DEFAULT_TAU;
use crate::sim::ScenarioKind;

/// Every field is optional in a config file; missing ones take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// The learning rate is divided by this factor from the decay epoch on.
    pub lr_decay_factor: f64,
    /// Decay epoch as a fraction of `epochs`.
    pub lr_decay_fraction: f64,
    pub tau: f64,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::DualAware,
            seed: 0,
            epochs: 32,
            batch_size: 32,
            lr: 1e-4,
            weight_decay: 1e-7,
            lr_decay_factor: 2.0,
            lr_decay_fraction: 30.0 / 32.0,
            tau: DEFAULT_TAU,
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {} must be positive", self.lr));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive".into());
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay {} must be non-negative", self.weight_decay));
        }
        if !(self.lr_decay_factor >= 1.0) {
            return bad(format!("lr_decay_factor {} must be at least 1", self.lr_decay_factor));
        }
        if !(0.0..=1.0).contains(&self.lr_decay_fraction) {
            return bad(format!("lr_decay_fraction {} outside [0, 1]", self.lr_decay_fraction));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau {} outside [0, 1]", self.tau));
        }
        self.weights.validate()
    }

    /// Zero-based index of the first epoch run at the decayed rate.
    pub fn decay_epoch(&self) -> usize {
        (self.epochs as f64 * self.lr_decay_fraction).round() as usize
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch >= self.decay_epoch() {
            self.lr / self.lr_decay_factor
        } else {
            self.lr
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub samples: usize,
    pub loss: LossBreakdown,
    /// Router argmax accuracy on the validation samples, when any were given.
    pub val_router_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: Model,
    pub params: ParamSet,
    pub log: Vec<EpochLog>,
}

/// Returns an error naming the first scenario kind without training samples.
pub fn check_subsets(samples: &[Sample]) -> Result<()> {
    for kind in ScenarioKind::ALL {
        if !samples.iter().any(|s| s.kind == kind) {
            return Err(Error::EmptySubset(kind.name()));
        }
    }
    Ok(())
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Fraction of samples whose router argmax equals their label.
pub fn router_accuracy(model: &Model, ps: &ParamSet, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("router_accuracy"));
    }
    let mut hits = 0usize;
    for s in samples {
        let fused = model.encoders.encode(ps, &s.obs)?;
        if model.route(ps, &fused)?.top_kind() == s.kind {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// Trains all sub-networks jointly with Adam. `on_epoch` sees each log line
/// as soon as the epoch finishes.
pub fn train(
    config: &TrainConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutput> {
    config.validate()?;
    check_subsets(train_set)?;
    let (model, mut ps) = Model::init(config.seed);
    let mut adam = Adam::new(
        AdamConfig {
            weight_decay: config.weight_decay,
            ..AdamConfig::default()
        },
        ps.len(),
    );
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        order.shuffle(&mut epoch_rng(config.seed, epoch));
        let mut parts = Vec::new();
        let mut weights = Vec::new();
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let lb = batch_loss_and_grad(&model, &mut ps, &batch, &config.weights, config.variant)?;
            if !lb.total.is_finite() {
                return Err(Error::NonFinite("training loss"));
            }
            adam.step(&mut ps, lr);
            parts.push(lb);
            weights.push(batch.len());
        }
        let entry = EpochLog {
            epoch: epoch + 1,
            lr,
            samples: train_set.len(),
            loss: weighted_mean(&parts, &weights, &config.weights),
            val_router_accuracy: match (config.variant, val_set.is_empty()) {
                (Variant::SingleExpert, _) | (_, true) => None,
                _ => Some(router_accuracy(&model, &ps, val_set)?),
            },
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TrainOutput { model, params: ps, log })
}

fn weighted_mean(parts: &[LossBreakdown], counts: &[usize], w: &LossWeights) -> LossBreakdown {
    let total: usize = counts.iter().sum();
    let expanded: Vec<LossBreakdown> = parts
        .iter()
        .zip(counts)
        .map(|(p, &c)| {
            let f = c as f64 * parts.len() as f64 / total as f64;
            LossBreakdown {
                traj_global: p.traj_global * f,
                feature_global: p.feature_global * f,
                value_global: p.value_global * f,
                traj_adaptive: p.traj_adaptive * f,
                feature_adaptive: p.feature_adaptive * f,
                value_adaptive: p.value_adaptive * f,
                scenario: p.scenario * f,
                speed: p.speed * f,
                load_balance: p.load_balance * f,
                total: 0.0,
            }
        })
        .collect();
    let mut out = LossBreakdown::mean(&expanded);
    out.total = out.weighted_total(w);
    out
}
