//! Scenario router and the uncertainty-gated expert selection rule.
//!
//! The router scores the five scene experts only. Its normalized entropy
//! decides whether the decision is trusted (argmax scene expert) or handed
//! to the global expert.

use serde::{Deserialize, Serialize};

use crate::encoders::FUSED_FEATURE;
use crate::error::{check_len, Error, Result};
use crate::experts::ExpertId;
use crate::numerics::{argmax, softmax, softmax_backward, tanh_backward, tanh_inplace, Linear, ParamSet};
use crate::sim::ScenarioKind;

pub const ROUTER_HIDDEN: usize = 64;
pub const SCENE_EXPERTS: usize = ScenarioKind::COUNT;
pub const DEFAULT_TAU: f64 = 0.5;
/// Floor applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;
const PROB_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterDistribution {
    pub probs: Vec<f64>,
    pub uncertainty: f64,
}

impl RouterDistribution {
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        let uncertainty = normalized_entropy(&probs)?;
        Ok(Self { probs, uncertainty })
    }

    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        Self::from_probs(softmax(logits)?)
    }

    /// Most probable scene expert (lowest index on exact ties).
    pub fn top_kind(&self) -> ScenarioKind {
        ScenarioKind::from_id(argmax(&self.probs)).expect("router has one output per kind")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub selected: ExpertId,
    pub distribution: RouterDistribution,
    pub tau: f64,
}

/// Two-layer router head: F → 64 (tanh) → 5 logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Router {
    l1: Linear,
    l2: Linear,
}

#[derive(Debug, Clone)]
pub struct RouterTrace {
    fused: Vec<f64>,
    hidden: Vec<f64>,
}

impl Router {
    pub fn new(ps: &mut ParamSet) -> Self {
        Self {
            l1: Linear::new(ps, "router.l1", FUSED_FEATURE, ROUTER_HIDDEN),
            l2: Linear::new(ps, "router.l2", ROUTER_HIDDEN, SCENE_EXPERTS),
        }
    }

    pub fn route_logits(&self, ps: &ParamSet, fused: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_traced(ps, fused)?.0)
    }

    pub fn forward_traced(&self, ps: &ParamSet, fused: &[f64]) -> Result<(Vec<f64>, RouterTrace)> {
        let mut hidden = self.l1.forward(ps, fused)?;
        tanh_inplace(&mut hidden);
        let logits = self.l2.forward(ps, &hidden)?;
        Ok((
            logits,
            RouterTrace {
                fused: fused.to_vec(),
                hidden,
            },
        ))
    }

    /// Accumulates parameter gradients for `dL/dlogits`; returns `dL/dF`.
    pub fn backward(&self, ps: &mut ParamSet, t: &RouterTrace, d_logits: &[f64]) -> Vec<f64> {
        let dh = self.l2.backward(ps, &t.hidden, d_logits, true).unwrap_or_default();
        let da = tanh_backward(&t.hidden, &dh);
        self.l1.backward(ps, &t.fused, &da, true).unwrap_or_default()
    }
}

fn validate_probs(probs: &[f64]) -> Result<()> {
    if probs.len() < 2 {
        return Err(Error::InvalidProbabilities(format!(
            "need at least two probabilities, got {}",
            probs.len()
        )));
    }
    if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::InvalidProbabilities(format!("entry {p} is negative or non-finite")));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
        return Err(Error::InvalidProbabilities(format!("entries sum to {sum}")));
    }
    Ok(())
}

/// `U = −Σ pᵢ ln pᵢ / ln N` with `0·ln 0 ≡ 0`, in `[0, 1]`.
pub fn normalized_entropy(probs: &[f64]) -> Result<f64> {
    validate_probs(probs)?;
    // Exactly uniform input is the maximum by definition; summing the logs
    // could land one ulp short of 1.
    if probs.iter().all(|&p| p == probs[0]) {
        return Ok(1.0);
    }
    let h: f64 = probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    Ok((h / (probs.len() as f64).ln()).clamp(0.0, 1.0))
}

/// Global expert when `U ≥ τ`, otherwise the argmax scene expert.
pub fn select(distribution: &RouterDistribution, tau: f64) -> Result<RoutingDecision> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!("tau {tau} outside [0, 1]")));
    }
    let selected = if distribution.uncertainty >= tau {
        ExpertId::Global
    } else {
        ExpertId::Scene(distribution.top_kind())
    };
    Ok(RoutingDecision {
        selected,
        distribution: distribution.clone(),
        tau,
    })
}

/// Cross-entropy `−ln max(p_k, 1e-12)` of the true kind.
pub fn scenario_loss(probs: &[f64], kind: ScenarioKind) -> Result<f64> {
    check_len("scenario_loss probabilities", SCENE_EXPERTS, probs.len())?;
    Ok(-probs[kind.id()].max(PROB_FLOOR).ln())
}

/// Gradient of [`scenario_loss`] with respect to the router logits.
pub fn scenario_loss_grad(probs: &[f64], kind: ScenarioKind) -> Vec<f64> {
    let k = kind.id();
    let mut dp = vec![0.0; probs.len()];
    if probs[k] >= PROB_FLOOR {
        dp[k] = -1.0 / probs[k];
    }
    softmax_backward(probs, &dp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn entropy_reference_points() {
        assert_eq!(normalized_entropy(&[1.0, 0.0, 0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(normalized_entropy(&[0.2; 5]).unwrap(), 1.0);
        let u = normalized_entropy(&[0.5, 0.5, 0.0, 0.0, 0.0]).unwrap();
        assert!((u - 2f64.ln() / 5f64.ln()).abs() < 1e-12);
        assert!((u - 0.4307).abs() < 1e-4);
    }

    #[test]
    fn entropy_rejects_invalid_input() {
        assert!(normalized_entropy(&[0.6, 0.6, -0.2, 0.0, 0.0]).is_err());
        assert!(normalized_entropy(&[0.5, 0.4, 0.0, 0.0, 0.0]).is_err());
        assert!(normalized_entropy(&[1.0]).is_err());
        assert!(normalized_entropy(&[f64::NAN, 0.5, 0.5, 0.0, 0.0]).is_err());
    }

    fn dist(probs: Vec<f64>) -> RouterDistribution {
        RouterDistribution::from_probs(probs).unwrap()
    }

    #[test]
    fn uncertain_input_goes_global() {
        let d = RouterDistribution {
            probs: vec![0.3, 0.25, 0.15, 0.15, 0.15],
            uncertainty: 0.6,
        };
        assert_eq!(select(&d, 0.5).unwrap().selected, ExpertId::Global);
    }

    #[test]
    fn confident_input_goes_to_argmax() {
        let d = RouterDistribution {
            probs: vec![0.05, 0.8, 0.05, 0.05, 0.05],
            uncertainty: 0.3,
        };
        assert_eq!(
            select(&d, 0.5).unwrap().selected,
            ExpertId::Scene(ScenarioKind::Overtaking)
        );
    }

    #[test]
    fn zero_threshold_always_global() {
        let d = dist(vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(select(&d, 0.0).unwrap().selected, ExpertId::Global);
        assert!(select(&d, 1.5).is_err());
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let d = dist(vec![0.0, 0.5, 0.0, 0.5, 0.0]);
        assert_eq!(select(&d, 0.9).unwrap().selected, ExpertId::Scene(ScenarioKind::Overtaking));
    }

    #[test]
    fn cross_entropy_values() {
        assert_eq!(scenario_loss(&[1.0, 0.0, 0.0, 0.0, 0.0], ScenarioKind::Merging).unwrap(), 0.0);
        assert!((scenario_loss(&[0.2; 5], ScenarioKind::GiveWay).unwrap() - 5f64.ln()).abs() < 1e-12);
        let p = (-2.0f64).exp();
        let rest = (1.0 - p) / 4.0;
        let probs = [rest, rest, p, rest, rest];
        assert!((scenario_loss(&probs, ScenarioKind::EmergencyBrake).unwrap() - 2.0).abs() < 1e-12);
        assert!(scenario_loss(&[0.0, 1.0, 0.0, 0.0, 0.0], ScenarioKind::Merging).unwrap().is_finite());
    }

    #[test]
    fn cross_entropy_grad_is_p_minus_onehot() {
        let probs = softmax(&[0.3, -1.0, 2.0, 0.0, 0.5]).unwrap();
        let g = scenario_loss_grad(&probs, ScenarioKind::Overtaking);
        for (i, (gi, pi)) in g.iter().zip(&probs).enumerate() {
            let want = pi - if i == 1 { 1.0 } else { 0.0 };
            assert!((gi - want).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_router_gives_zero_logits() {
        let mut ps = ParamSet::new(0);
        let r = Router::new(&mut ps);
        ps.zero_values();
        assert_eq!(r.route_logits(&ps, &[0.3; FUSED_FEATURE]).unwrap(), vec![0.0; SCENE_EXPERTS]);
        assert!(r.route_logits(&ps, &[0.3; 7]).is_err());
    }

    fn probs_strategy() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-6.0f64..6.0, SCENE_EXPERTS).prop_map(|l| softmax(&l).unwrap())
    }

    proptest! {
        #[test]
        fn entropy_is_permutation_invariant(p in probs_strategy(), shift in 0usize..5) {
            let mut q = p.clone();
            q.rotate_left(shift);
            let (a, b) = (normalized_entropy(&p).unwrap(), normalized_entropy(&q).unwrap());
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn logit_shift_does_not_change_the_decision(
            logits in proptest::collection::vec(-5.0f64..5.0, SCENE_EXPERTS),
            c in -50.0f64..50.0,
            tau in 0.0f64..=1.0,
        ) {
            let shifted: Vec<f64> = logits.iter().map(|l| l + c).collect();
            let a = select(&RouterDistribution::from_logits(&logits).unwrap(), tau).unwrap();
            let b = select(&RouterDistribution::from_logits(&shifted).unwrap(), tau).unwrap();
            prop_assert_eq!(a.selected, b.selected);
        }

        #[test]
        fn raising_tau_never_switches_to_global(p in probs_strategy(), t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let d = RouterDistribution::from_probs(p).unwrap();
            let at_lo = select(&d, lo).unwrap().selected;
            let at_hi = select(&d, hi).unwrap().selected;
            if at_lo != ExpertId::Global {
                prop_assert_eq!(at_hi, at_lo);
            }
        }
    }
}
