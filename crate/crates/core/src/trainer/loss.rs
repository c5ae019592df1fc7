use serde::{Deserialize, Serialize};

use crate::encoders::{EncoderTrace, Observation};
use crate::error::{check_len, Error, Result};
use crate::experts::{ExpertGrad, ExpertId, ExpertOutput, ExpertTrace, Waypoints, FEATURE_DIM};
use crate::model::{Model, Variant};
use crate::numerics::{argmax, softmax, softmax_backward, ParamSet};
use crate::router::{scenario_loss, scenario_loss_grad, RouterTrace, SCENE_EXPERTS};
use crate::sim::{ScenarioKind, WAYPOINTS};

/// Coefficient of the load-balance term used by the unlabelled top-1 variant.
pub const LOAD_BALANCE_COEFF: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub traj: f64,
    pub feature: f64,
    pub value: f64,
    pub global: f64,
    pub adaptive: f64,
    pub scenario: f64,
    pub speed: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            traj: 1.0,
            feature: 0.05,
            value: 0.001,
            global: 1.0,
            adaptive: 1.0,
            scenario: 1.0,
            speed: 0.05,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.traj,
            self.feature,
            self.value,
            self.global,
            self.adaptive,
            self.scenario,
            self.speed,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// Unweighted loss terms plus their weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub traj_global: f64,
    pub feature_global: f64,
    pub value_global: f64,
    pub traj_adaptive: f64,
    pub feature_adaptive: f64,
    pub value_adaptive: f64,
    pub scenario: f64,
    pub speed: f64,
    /// Load-balance penalty, already scaled; zero outside the unlabelled variant.
    pub load_balance: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        let global = w.traj * self.traj_global + w.feature * self.feature_global + w.value * self.value_global;
        let adaptive =
            w.traj * self.traj_adaptive + w.feature * self.feature_adaptive + w.value * self.value_adaptive;
        w.global * global + w.adaptive * adaptive + w.scenario * self.scenario + w.speed * self.speed + self.load_balance
    }

    fn terms_mut(&mut self) -> [&mut f64; 10] {
        [
            &mut self.traj_global,
            &mut self.feature_global,
            &mut self.value_global,
            &mut self.traj_adaptive,
            &mut self.feature_adaptive,
            &mut self.value_adaptive,
            &mut self.scenario,
            &mut self.speed,
            &mut self.load_balance,
            &mut self.total,
        ]
    }

    /// Element-wise mean of several breakdowns.
    pub fn mean(parts: &[LossBreakdown]) -> LossBreakdown {
        let mut out = LossBreakdown::default();
        if parts.is_empty() {
            return out;
        }
        for p in parts {
            let mut p = *p;
            for (o, v) in out.terms_mut().into_iter().zip(p.terms_mut()) {
                *o += *v;
            }
        }
        let n = parts.len() as f64;
        out.terms_mut().into_iter().for_each(|o| *o /= n);
        out
    }
}

/// One supervised example: an observation, its scenario label and oracle targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub kind: ScenarioKind,
    pub obs: Observation,
    pub waypoints: Waypoints,
    pub value: f64,
    pub feature: Vec<f64>,
    /// Target for the speed head, the measured speed.
    pub speed: f64,
}

impl Sample {
    pub fn validate(&self) -> Result<()> {
        self.obs.validate()?;
        if self.feature.len() != FEATURE_DIM {
            return Err(Error::MissingTarget(format!(
                "teacher feature has {} entries, expected {FEATURE_DIM}",
                self.feature.len()
            )));
        }
        let finite = self.waypoints.iter().flatten().chain(&self.feature).all(|v| v.is_finite())
            && self.value.is_finite()
            && self.speed.is_finite();
        if !finite {
            return Err(Error::MissingTarget("non-finite target".into()));
        }
        Ok(())
    }
}

/// `Σₜ |Δx| + |Δy|` over the waypoints, no averaging.
pub fn traj_loss(pred: &[[f64; 2]], truth: &[[f64; 2]]) -> Result<f64> {
    check_len("traj_loss prediction", WAYPOINTS, pred.len())?;
    check_len("traj_loss target", WAYPOINTS, truth.len())?;
    Ok(pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p[0] - t[0]).abs() + (p[1] - t[1]).abs())
        .sum())
}

fn traj_grad(pred: &Waypoints, truth: &Waypoints) -> Waypoints {
    let mut g = [[0.0; 2]; WAYPOINTS];
    for ((g, p), t) in g.iter_mut().zip(pred).zip(truth) {
        for d in 0..2 {
            g[d] = sign(p[d] - t[d]);
        }
    }
    g
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Unsquared Euclidean distance.
pub fn feature_loss(pred: &[f64], teacher: &[f64]) -> Result<f64> {
    check_len("feature_loss", pred.len(), teacher.len())?;
    Ok(pred.iter().zip(teacher).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
}

fn feature_grad(pred: &[f64], teacher: &[f64], norm: f64) -> Vec<f64> {
    if norm == 0.0 {
        return vec![0.0; pred.len()];
    }
    pred.iter().zip(teacher).map(|(a, b)| (a - b) / norm).collect()
}

pub fn value_loss(pred: f64, teacher: f64) -> f64 {
    (pred - teacher) * (pred - teacher)
}

pub fn value_loss_grad(pred: f64, teacher: f64) -> f64 {
    2.0 * (pred - teacher)
}

/// Imitation terms of one expert output against the sample targets, and the
/// gradient of `λ_traj·traj + λ_F·feature + λ_V·value` with respect to the output.
fn imitation(out: &ExpertOutput, s: &Sample, w: &LossWeights) -> Result<([f64; 3], ExpertGrad)> {
    let traj = traj_loss(&out.waypoints, &s.waypoints)?;
    let feat = feature_loss(&out.feature, &s.feature)?;
    let value = value_loss(out.value, s.value);
    let mut g = ExpertGrad {
        waypoints: traj_grad(&out.waypoints, &s.waypoints),
        value: w.value * value_loss_grad(out.value, s.value),
        feature: feature_grad(&out.feature, &s.feature, feat),
    };
    g.waypoints.iter_mut().flatten().for_each(|v| *v *= w.traj);
    g.feature.iter_mut().for_each(|v| *v *= w.feature);
    Ok(([traj, feat, value], g))
}

fn scale_output(out: &mut ExpertOutput, g: f64) {
    out.waypoints.iter_mut().flatten().for_each(|w| *w *= g);
    out.value *= g;
    out.feature.iter_mut().for_each(|f| *f *= g);
}

fn dot_output(g: &ExpertGrad, out: &ExpertOutput) -> f64 {
    let wp: f64 = g
        .waypoints
        .iter()
        .flatten()
        .zip(out.waypoints.iter().flatten())
        .map(|(a, b)| a * b)
        .sum();
    let f: f64 = g.feature.iter().zip(&out.feature).map(|(a, b)| a * b).sum();
    wp + g.value * out.value + f
}

/// Saved activations of one sample's forward pass.
struct SamplePass {
    fused: Vec<f64>,
    enc_trace: EncoderTrace,
    router: Option<(Vec<f64>, RouterTrace)>,
    global: Option<(ExpertTrace, ExpertGrad)>,
    /// (kind, gate, raw output, trace, output gradient)
    adaptive: Option<(ScenarioKind, Option<f64>, ExpertOutput, ExpertTrace, ExpertGrad)>,
    speed_residual: f64,
    scenario_active: bool,
}

fn sample_forward(model: &Model, ps: &ParamSet, s: &Sample, w: &LossWeights, variant: Variant) -> Result<(LossBreakdown, SamplePass)> {
    s.validate()?;
    let mut lb = LossBreakdown::default();
    let (fused, enc_trace) = model.encoders.forward_traced(ps, &s.obs)?;
    let scenario_active = matches!(variant, Variant::DualAware | Variant::ScenarioMoe);

    let router = if variant != Variant::SingleExpert {
        let (logits, trace) = model.router.forward_traced(ps, &fused)?;
        let probs = softmax(&logits)?;
        if scenario_active {
            lb.scenario = scenario_loss(&probs, s.kind)?;
        }
        Some((probs, trace))
    } else {
        None
    };

    let global = if matches!(variant, Variant::DualAware | Variant::SingleExpert) {
        let (out, trace) = model.bank.expert(ExpertId::Global).forward_traced(ps, &fused)?;
        let ([t, f, v], g) = imitation(&out, s, w)?;
        (lb.traj_global, lb.feature_global, lb.value_global) = (t, f, v);
        Some((trace, g))
    } else {
        None
    };

    // Adaptive expert: the labelled kind, or the router's top-1 pick.
    let adaptive = if variant != Variant::SingleExpert {
        let (kind, gate) = match (variant, &router) {
            (Variant::VanillaMoe, Some((probs, _))) => {
                let k = argmax(probs);
                (ScenarioKind::from_id(k).expect("five router outputs"), Some(probs[k]))
            }
            _ => (s.kind, None),
        };
        let (raw, trace) = model.bank.expert(ExpertId::Scene(kind)).forward_traced(ps, &fused)?;
        let mut out = raw.clone();
        if let Some(p) = gate {
            scale_output(&mut out, p);
        }
        let ([t, f, v], g) = imitation(&out, s, w)?;
        (lb.traj_adaptive, lb.feature_adaptive, lb.value_adaptive) = (t, f, v);
        Some((kind, gate, raw, trace, g))
    } else {
        None
    };

    let speed_residual = model.bank.predict_speed(ps, &fused)? - s.speed;
    lb.speed = speed_residual.abs();
    lb.total = lb.weighted_total(w);
    Ok((
        lb,
        SamplePass {
            fused,
            enc_trace,
            router,
            global,
            adaptive,
            speed_residual,
            scenario_active,
        },
    ))
}

/// Accumulates `scale · ∂total/∂θ` into `ps`. `extra_dprobs` is an external
/// gradient on the router probabilities, used for batch-level terms.
fn sample_backward(
    model: &Model,
    ps: &mut ParamSet,
    s: &Sample,
    pass: SamplePass,
    w: &LossWeights,
    scale: f64,
    extra_dprobs: Option<&[f64]>,
) {
    let mut d_fused = vec![0.0; pass.fused.len()];
    let mut add = |d: Vec<f64>| d_fused.iter_mut().zip(d).for_each(|(a, b)| *a += b);
    let mut dprobs = vec![0.0; SCENE_EXPERTS];
    if let Some(extra) = extra_dprobs {
        dprobs.iter_mut().zip(extra).for_each(|(a, b)| *a += b);
    }
    if let Some((trace, mut g)) = pass.global {
        g.scale(scale * w.global);
        add(model.bank.expert(ExpertId::Global).backward(ps, &trace, &g));
    }
    if let Some((kind, gate, raw, trace, mut g)) = pass.adaptive {
        g.scale(scale * w.adaptive);
        if let Some(p) = gate {
            dprobs[kind.id()] += dot_output(&g, &raw);
            g.scale(p);
        }
        add(model.bank.expert(ExpertId::Scene(kind)).backward(ps, &trace, &g));
    }
    if let Some((probs, trace)) = pass.router {
        let mut d_logits = softmax_backward(&probs, &dprobs);
        if pass.scenario_active {
            let ce = scenario_loss_grad(&probs, s.kind);
            d_logits.iter_mut().zip(ce).for_each(|(a, b)| *a += scale * w.scenario * b);
        }
        add(model.router.backward(ps, &trace, &d_logits));
    }
    add(model
        .bank
        .speed_backward(ps, &pass.fused, scale * w.speed * sign(pass.speed_residual)));
    model.encoders.backward(ps, &s.obs, &pass.enc_trace, &d_fused);
}

/// Loss of a single sample. Batch-level terms are not included.
pub fn sample_loss(model: &Model, ps: &ParamSet, s: &Sample, w: &LossWeights, variant: Variant) -> Result<LossBreakdown> {
    Ok(sample_forward(model, ps, s, w, variant)?.0)
}

/// Mean router probabilities over a batch.
fn mean_probs(model: &Model, ps: &ParamSet, batch: &[&Sample]) -> Result<Vec<f64>> {
    let mut mean = vec![0.0; SCENE_EXPERTS];
    for s in batch {
        let fused = model.encoders.encode(ps, &s.obs)?;
        let p = softmax(&model.router.route_logits(ps, &fused)?)?;
        mean.iter_mut().zip(p).for_each(|(m, p)| *m += p);
    }
    mean.iter_mut().for_each(|m| *m /= batch.len() as f64);
    Ok(mean)
}

/// `c·N·Σᵢ P̄ᵢ²`, minimal when the batch-mean router distribution is uniform.
pub fn load_balance_loss(mean_probs: &[f64]) -> f64 {
    LOAD_BALANCE_COEFF * mean_probs.len() as f64 * mean_probs.iter().map(|p| p * p).sum::<f64>()
}

fn batch_terms(model: &Model, ps: &ParamSet, batch: &[&Sample], variant: Variant) -> Result<(f64, Option<Vec<f64>>)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("batch"));
    }
    if variant != Variant::VanillaMoe {
        return Ok((0.0, None));
    }
    let mean = mean_probs(model, ps, batch)?;
    let c = 2.0 * LOAD_BALANCE_COEFF * SCENE_EXPERTS as f64 / batch.len() as f64;
    let extra = mean.iter().map(|p| c * p).collect();
    Ok((load_balance_loss(&mean), Some(extra)))
}

fn finish(parts: &[LossBreakdown], load_balance: f64, w: &LossWeights) -> LossBreakdown {
    let mut out = LossBreakdown::mean(parts);
    out.load_balance = load_balance;
    out.total = out.weighted_total(w);
    out
}

/// Mean loss over a batch, including batch-level terms.
pub fn batch_loss(model: &Model, ps: &ParamSet, batch: &[&Sample], w: &LossWeights, variant: Variant) -> Result<LossBreakdown> {
    let (lb, _) = batch_terms(model, ps, batch, variant)?;
    let parts = batch
        .iter()
        .map(|s| sample_loss(model, ps, s, w, variant))
        .collect::<Result<Vec<_>>>()?;
    Ok(finish(&parts, lb, w))
}

/// Mean loss over a batch; accumulates its gradient into `ps`.
pub fn batch_loss_and_grad(
    model: &Model,
    ps: &mut ParamSet,
    batch: &[&Sample],
    w: &LossWeights,
    variant: Variant,
) -> Result<LossBreakdown> {
    let (lb, extra) = batch_terms(model, ps, batch, variant)?;
    let scale = 1.0 / batch.len() as f64;
    let mut parts = Vec::with_capacity(batch.len());
    for s in batch {
        let (part, pass) = sample_forward(model, ps, s, w, variant)?;
        sample_backward(model, ps, s, pass, w, scale, extra.as_deref());
        parts.push(part);
    }
    Ok(finish(&parts, lb, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{Command, GRID_LEN};
    use crate::experts::ExpertBank;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_waypoints(rng: &mut ChaCha8Rng) -> Waypoints {
        let mut w = [[0.0; 2]; WAYPOINTS];
        w.iter_mut().flatten().for_each(|v| *v = rng.gen_range(-10.0..10.0));
        w
    }

    fn sample(rng: &mut ChaCha8Rng, kind: ScenarioKind) -> Sample {
        Sample {
            kind,
            obs: Observation {
                grid: (0..GRID_LEN).map(|_| rng.gen_range(0.0..=1.0)).collect(),
                speed: rng.gen_range(0.0..10.0),
                command: Command::Follow,
                goal: [rng.gen_range(5.0..60.0), rng.gen_range(-4.0..4.0)],
            },
            waypoints: rand_waypoints(rng),
            value: rng.gen_range(-20.0..200.0),
            feature: (0..FEATURE_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            speed: rng.gen_range(0.0..10.0),
        }
    }

    #[test]
    fn trajectory_loss_values() {
        let a = [[1.0, 2.0]; WAYPOINTS];
        assert_eq!(traj_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(traj_loss(&[[0.0; 2]; 4], &[[1.0; 2]; 4]).unwrap(), 8.0);
        assert!(traj_loss(&a[..3], &a).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let (p, t) = (rand_waypoints(&mut rng), rand_waypoints(&mut rng));
            let mut oracle = 0.0;
            for i in 0..WAYPOINTS {
                for d in 0..2 {
                    oracle += (p[i][d] - t[i][d]).abs();
                }
            }
            assert!((traj_loss(&p, &t).unwrap() - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn feature_loss_values() {
        let mut d = vec![0.0; 8];
        assert_eq!(feature_loss(&d, &d).unwrap(), 0.0);
        d[0] = 3.0;
        d[1] = 4.0;
        assert_eq!(feature_loss(&d, &[0.0; 8]).unwrap(), 5.0);
        assert!(feature_loss(&d, &[0.0; 7]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut sq = 0.0;
        for i in 0..64 {
            sq += (a[i] - b[i]).powi(2);
        }
        assert!((feature_loss(&a, &b).unwrap() - sq.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn value_loss_and_gradient() {
        assert_eq!(value_loss(2.0, 2.0), 0.0);
        assert_eq!(value_loss(1.0, 3.0), 4.0);
        let (v, t, h) = (0.7, -1.3, 1e-6);
        let fd = (value_loss(v + h, t) - value_loss(v - h, t)) / (2.0 * h);
        assert!((fd - value_loss_grad(v, t)).abs() < 1e-6);
    }

    #[test]
    fn perfect_experts_and_uniform_router_cost_ln5() {
        let (model, mut ps) = Model::init(4);
        for c in ps.coords_with_prefix("router.") {
            ps.values_mut()[c] = 0.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = sample(&mut rng, ScenarioKind::Overtaking);
        let fused = model.encoders.encode(&ps, &s.obs).unwrap();
        // Global and adaptive experts must both be exact, so make them identical.
        let g = ps.coords_with_prefix(&ExpertBank::prefix(ExpertId::Global));
        let a = ps.coords_with_prefix(&ExpertBank::prefix(ExpertId::Scene(s.kind)));
        for (gi, ai) in g.into_iter().zip(a) {
            ps.values_mut()[ai] = ps.values()[gi];
        }
        let out = model.bank.forward(&ps, ExpertId::Global, &fused).unwrap();
        s.waypoints = out.waypoints;
        s.value = out.value;
        s.feature = out.feature;
        s.speed = model.bank.predict_speed(&ps, &fused).unwrap();
        let w = LossWeights::default();
        let lb = sample_loss(&model, &ps, &s, &w, Variant::DualAware).unwrap();
        assert!((lb.total - w.scenario * 5f64.ln()).abs() < 1e-9, "{lb:?}");
    }

    #[test]
    fn total_is_recomputable_from_parts() {
        let (model, ps) = Model::init(5);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = LossWeights {
            traj: 0.7,
            feature: 0.2,
            value: 0.01,
            global: 1.3,
            adaptive: 0.4,
            scenario: 2.0,
            speed: 0.3,
        };
        for variant in Variant::ALL {
            let kind = ScenarioKind::from_id(rng.gen_range(0..5)).unwrap();
            let s = sample(&mut rng, kind);
            let lb = sample_loss(&model, &ps, &s, &w, variant).unwrap();
            assert!((lb.total - lb.weighted_total(&w)).abs() < 1e-12);
        }
    }

    fn grads_of(ps: &ParamSet, id: ExpertId) -> Vec<f64> {
        ps.coords_with_prefix(&ExpertBank::prefix(id))
            .into_iter()
            .map(|c| ps.grads()[c])
            .collect()
    }

    #[test]
    fn only_the_labelled_scene_expert_learns() {
        let (model, mut ps) = Model::init(6);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = sample(&mut rng, ScenarioKind::EmergencyBrake);
        batch_loss_and_grad(&model, &mut ps, &[&s], &LossWeights::default(), Variant::DualAware).unwrap();
        for kind in ScenarioKind::ALL {
            let g = grads_of(&ps, ExpertId::Scene(kind));
            let zero = g.iter().all(|&v| v == 0.0);
            assert_eq!(zero, kind != ScenarioKind::EmergencyBrake, "{kind}");
        }
    }

    #[test]
    fn zero_adaptive_weight_freezes_scene_experts() {
        let (model, mut ps) = Model::init(7);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let batch: Vec<Sample> = ScenarioKind::ALL.iter().map(|&k| sample(&mut rng, k)).collect();
        let refs: Vec<&Sample> = batch.iter().collect();
        let w = LossWeights {
            adaptive: 0.0,
            ..LossWeights::default()
        };
        batch_loss_and_grad(&model, &mut ps, &refs, &w, Variant::DualAware).unwrap();
        for kind in ScenarioKind::ALL {
            assert!(grads_of(&ps, ExpertId::Scene(kind)).iter().all(|&v| v == 0.0));
        }
        assert!(grads_of(&ps, ExpertId::Global).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn single_expert_touches_no_scene_expert_or_router() {
        let (model, mut ps) = Model::init(8);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = sample(&mut rng, ScenarioKind::Merging);
        let lb = batch_loss_and_grad(&model, &mut ps, &[&s], &LossWeights::default(), Variant::SingleExpert).unwrap();
        assert_eq!(lb.scenario, 0.0);
        assert_eq!(lb.traj_adaptive, 0.0);
        for kind in ScenarioKind::ALL {
            assert!(grads_of(&ps, ExpertId::Scene(kind)).iter().all(|&v| v == 0.0));
        }
        assert!(ps.coords_with_prefix("router.").iter().all(|&c| ps.grads()[c] == 0.0));
    }

    #[test]
    fn load_balance_is_minimal_when_uniform() {
        assert!((load_balance_loss(&[0.2; 5]) - LOAD_BALANCE_COEFF).abs() < 1e-15);
        assert!(load_balance_loss(&[1.0, 0.0, 0.0, 0.0, 0.0]) > load_balance_loss(&[0.2; 5]));
    }

    #[test]
    fn missing_targets_are_rejected() {
        let (model, ps) = Model::init(9);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut s = sample(&mut rng, ScenarioKind::GiveWay);
        s.feature.truncate(10);
        let err = sample_loss(&model, &ps, &s, &LossWeights::default(), Variant::DualAware).unwrap_err();
        assert!(matches!(err, Error::MissingTarget(_)));
        assert!(batch_loss(&model, &ps, &[], &LossWeights::default(), Variant::DualAware).is_err());
    }
}
