//! The full policy: encoders, expert bank and router over one parameter set.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoders::{Encoders, Observation};
use crate::error::{Error, Result};
use crate::experts::{ExpertBank, ExpertId, Waypoints};
use crate::numerics::ParamSet;
use crate::router::{select, Router, RouterDistribution, RoutingDecision};

/// Training and inference regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Global expert plus label-trained scene experts, entropy-gated at inference.
    #[serde(rename = "geminus")]
    DualAware,
    /// Label-trained scene experts, always the argmax expert, no global expert.
    #[serde(rename = "scenario_moe")]
    ScenarioMoe,
    /// Scene experts with learned top-1 routing and no scenario labels.
    #[serde(rename = "vanilla_moe")]
    VanillaMoe,
    /// The global expert alone.
    #[serde(rename = "single_expert")]
    SingleExpert,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::DualAware,
        Variant::ScenarioMoe,
        Variant::VanillaMoe,
        Variant::SingleExpert,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::DualAware => "geminus",
            Variant::ScenarioMoe => "scenario_moe",
            Variant::VanillaMoe => "vanilla_moe",
            Variant::SingleExpert => "single_expert",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

/// Layout of every sub-network; the weights live in a [`ParamSet`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Model {
    pub encoders: Encoders,
    pub bank: ExpertBank,
    pub router: Router,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub waypoints: Waypoints,
    pub value: f64,
    pub feature: Vec<f64>,
    pub speed: f64,
    pub decision: RoutingDecision,
}

impl Model {
    /// Registers all tensors in a fixed order.
    pub fn new(ps: &mut ParamSet) -> Self {
        let encoders = Encoders::new(ps);
        let bank = ExpertBank::new(ps);
        let router = Router::new(ps);
        Self { encoders, bank, router }
    }

    /// Fresh model with parameters initialised from `seed`.
    pub fn init(seed: u64) -> (Self, ParamSet) {
        let mut ps = ParamSet::new(seed);
        let model = Self::new(&mut ps);
        (model, ps)
    }

    pub fn route(&self, ps: &ParamSet, fused: &[f64]) -> Result<RouterDistribution> {
        RouterDistribution::from_logits(&self.router.route_logits(ps, fused)?)
    }

    /// Inference-time expert choice for `variant`.
    pub fn decide(variant: Variant, distribution: RouterDistribution, tau: f64) -> Result<RoutingDecision> {
        let selected = match variant {
            Variant::DualAware => return select(&distribution, tau),
            Variant::ScenarioMoe | Variant::VanillaMoe => ExpertId::Scene(distribution.top_kind()),
            Variant::SingleExpert => ExpertId::Global,
        };
        Ok(RoutingDecision {
            selected,
            distribution,
            tau,
        })
    }

    pub fn predict(&self, ps: &ParamSet, obs: &Observation, variant: Variant, tau: f64) -> Result<Prediction> {
        obs.validate()?;
        let fused = self.encoders.encode(ps, obs)?;
        let decision = Self::decide(variant, self.route(ps, &fused)?, tau)?;
        let mut out = self.bank.forward(ps, decision.selected, &fused)?;
        if variant == Variant::VanillaMoe {
            // Learned top-1 routing scales the chosen expert by its gate.
            let ExpertId::Scene(k) = decision.selected else {
                unreachable!("vanilla routing picks a scene expert")
            };
            let g = decision.distribution.probs[k.id()];
            out.waypoints.iter_mut().flatten().for_each(|w| *w *= g);
            out.value *= g;
            out.feature.iter_mut().for_each(|f| *f *= g);
        }
        Ok(Prediction {
            waypoints: out.waypoints,
            value: out.value,
            feature: out.feature,
            speed: self.bank.predict_speed(ps, &fused)?,
            decision,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{Command, GRID_LEN};

    fn obs() -> Observation {
        Observation {
            grid: vec![0.25; GRID_LEN],
            speed: 5.0,
            command: Command::Follow,
            goal: [30.0, 0.0],
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.name()));
        }
        assert!("moe".parse::<Variant>().is_err());
    }

    #[test]
    fn zero_model_falls_back_to_global_and_stands_still() {
        let (m, mut ps) = Model::init(3);
        ps.zero_values();
        let p = m.predict(&ps, &obs(), Variant::DualAware, 0.5).unwrap();
        assert_eq!(p.decision.selected, ExpertId::Global);
        assert_eq!(p.decision.distribution.uncertainty, 1.0);
        assert_eq!(p.waypoints, [[0.0; 2]; 4]);
        assert_eq!(p.speed, 0.0);
    }

    #[test]
    fn variants_choose_their_expert_family() {
        let (m, ps) = Model::init(5);
        let o = obs();
        let single = m.predict(&ps, &o, Variant::SingleExpert, 0.5).unwrap();
        assert_eq!(single.decision.selected, ExpertId::Global);
        for v in [Variant::ScenarioMoe, Variant::VanillaMoe] {
            let p = m.predict(&ps, &o, v, 0.0).unwrap();
            assert!(matches!(p.decision.selected, ExpertId::Scene(_)));
        }
        assert_eq!(m.predict(&ps, &o, Variant::DualAware, 0.0).unwrap().decision.selected, ExpertId::Global);
    }

    #[test]
    fn invalid_observation_is_rejected() {
        let (m, ps) = Model::init(5);
        let mut o = obs();
        o.grid.pop();
        assert!(m.predict(&ps, &o, Variant::DualAware, 0.5).is_err());
    }
}
