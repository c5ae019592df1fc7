//! Expert heads. Every expert maps the fused feature to a 256-d bottleneck,
//! decodes four waypoints with a GRU, and predicts a value and a 64-d
//! distillation feature. The bank holds one global expert, one expert per
//! scenario kind, and a speed head shared by all of them.

use serde::{Deserialize, Serialize};

use crate::encoders::FUSED_FEATURE;
use crate::error::{check_len, Result};
use crate::numerics::{tanh_backward, tanh_inplace, GruCell, GruTrace, Linear, ParamSet};
use crate::sim::{ScenarioKind, TEACHER_FEATURE_DIM, WAYPOINTS};

pub const BOTTLENECK: usize = 256;
pub const GRU_HIDDEN: usize = 64;
pub const FEATURE_DIM: usize = TEACHER_FEATURE_DIM;
/// Metres per unit of displacement-head output.
pub const DISPLACEMENT_SCALE: f64 = 5.0;
/// The previous waypoint is fed to the GRU multiplied by this.
pub const WAYPOINT_INPUT_SCALE: f64 = 0.1;
/// Return units per unit of value-head output.
pub const VALUE_SCALE: f64 = 50.0;
/// m/s per unit of speed-head output.
pub const SPEED_HEAD_SCALE: f64 = 10.0;
/// Global expert plus one expert per scenario kind.
pub const EXPERT_COUNT: usize = 1 + ScenarioKind::COUNT;

pub type Waypoints = [[f64; 2]; WAYPOINTS];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertOutput {
    pub waypoints: Waypoints,
    pub value: f64,
    pub feature: Vec<f64>,
}

/// Which expert of the bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExpertId {
    Global,
    Scene(ScenarioKind),
}

impl ExpertId {
    /// Position in [`ExpertBank::forward_all`] order: global first, then kinds by id.
    pub fn index(self) -> usize {
        match self {
            ExpertId::Global => 0,
            ExpertId::Scene(k) => 1 + k.id(),
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(ExpertId::Global),
            _ => ScenarioKind::from_id(i - 1).map(ExpertId::Scene),
        }
    }

    pub fn name(self) -> String {
        match self {
            ExpertId::Global => "global".to_string(),
            ExpertId::Scene(k) => k.name().to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Expert {
    l1: Linear,
    l2: Linear,
    init: Linear,
    gru: GruCell,
    displacement: Linear,
    value: Linear,
    feature: Linear,
}

/// Activations of one expert forward pass.
#[derive(Debug, Clone)]
pub struct ExpertTrace {
    fused: Vec<f64>,
    h1: Vec<f64>,
    f: Vec<f64>,
    h0: Vec<f64>,
    steps: Vec<GruTrace>,
}

/// Upstream gradients for one expert's outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertGrad {
    pub waypoints: Waypoints,
    pub value: f64,
    pub feature: Vec<f64>,
}

impl ExpertGrad {
    pub fn zeros() -> Self {
        Self {
            waypoints: [[0.0; 2]; WAYPOINTS],
            value: 0.0,
            feature: vec![0.0; FEATURE_DIM],
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.waypoints.iter_mut().flatten().for_each(|g| *g *= s);
        self.value *= s;
        self.feature.iter_mut().for_each(|g| *g *= s);
    }
}

impl Expert {
    pub fn new(ps: &mut ParamSet, name: &str) -> Self {
        Self {
            l1: Linear::new(ps, &format!("{name}.l1"), FUSED_FEATURE, BOTTLENECK),
            l2: Linear::new(ps, &format!("{name}.l2"), BOTTLENECK, BOTTLENECK),
            init: Linear::new(ps, &format!("{name}.init"), BOTTLENECK, GRU_HIDDEN),
            gru: GruCell::new(ps, &format!("{name}.gru"), 2, GRU_HIDDEN),
            displacement: Linear::new(ps, &format!("{name}.disp"), GRU_HIDDEN, 2),
            value: Linear::new(ps, &format!("{name}.value"), BOTTLENECK, 1),
            feature: Linear::new(ps, &format!("{name}.feature"), BOTTLENECK, FEATURE_DIM),
        }
    }

    pub fn forward(&self, ps: &ParamSet, fused: &[f64]) -> Result<ExpertOutput> {
        Ok(self.forward_traced(ps, fused)?.0)
    }

    pub fn forward_traced(&self, ps: &ParamSet, fused: &[f64]) -> Result<(ExpertOutput, ExpertTrace)> {
        check_len("expert input", FUSED_FEATURE, fused.len())?;
        let mut h1 = self.l1.forward_unchecked(ps, fused);
        tanh_inplace(&mut h1);
        let mut f = self.l2.forward_unchecked(ps, &h1);
        tanh_inplace(&mut f);
        let mut h0 = self.init.forward_unchecked(ps, &f);
        tanh_inplace(&mut h0);

        let mut waypoints = [[0.0; 2]; WAYPOINTS];
        let mut steps = Vec::with_capacity(WAYPOINTS);
        let mut h = h0.clone();
        let mut prev = [0.0; 2];
        for wp in waypoints.iter_mut() {
            let x = [prev[0] * WAYPOINT_INPUT_SCALE, prev[1] * WAYPOINT_INPUT_SCALE];
            let t = self.gru.step_traced(ps, &h, &x)?;
            let d = self.displacement.forward_unchecked(ps, &t.h_next);
            *wp = [prev[0] + DISPLACEMENT_SCALE * d[0], prev[1] + DISPLACEMENT_SCALE * d[1]];
            prev = *wp;
            h = t.h_next.clone();
            steps.push(t);
        }
        let value = VALUE_SCALE * self.value.forward_unchecked(ps, &f)[0];
        let feature = self.feature.forward_unchecked(ps, &f);
        Ok((
            ExpertOutput {
                waypoints,
                value,
                feature,
            },
            ExpertTrace {
                fused: fused.to_vec(),
                h1,
                f,
                h0,
                steps,
            },
        ))
    }

    /// Accumulates parameter gradients for `g` and returns `dL/dF`.
    pub fn backward(&self, ps: &mut ParamSet, t: &ExpertTrace, g: &ExpertGrad) -> Vec<f64> {
        let mut df = vec![0.0; BOTTLENECK];
        let add = |acc: &mut [f64], v: Option<Vec<f64>>| {
            if let Some(v) = v {
                acc.iter_mut().zip(&v).for_each(|(a, b)| *a += b);
            }
        };
        add(&mut df, self.value.backward(ps, &t.f, &[VALUE_SCALE * g.value], true));
        add(&mut df, self.feature.backward(ps, &t.f, &g.feature, true));

        // Reverse through the cumulative decoder. `carry` is dL/dw_t arriving
        // from later steps (w_{t+1} = w_t + δ_{t+1} and x_{t+1} = s·w_t).
        let mut dh = vec![0.0; GRU_HIDDEN];
        let mut carry = [0.0; 2];
        for (step, t_step) in t.steps.iter().enumerate().rev() {
            let gw = [g.waypoints[step][0] + carry[0], g.waypoints[step][1] + carry[1]];
            let dd = [DISPLACEMENT_SCALE * gw[0], DISPLACEMENT_SCALE * gw[1]];
            add(&mut dh, self.displacement.backward(ps, &t_step.h_next, &dd, true));
            let (dh_prev, dx) = self.gru.backward(ps, t_step, &dh);
            dh = dh_prev;
            carry = [gw[0] + WAYPOINT_INPUT_SCALE * dx[0], gw[1] + WAYPOINT_INPUT_SCALE * dx[1]];
        }
        let da0 = tanh_backward(&t.h0, &dh);
        add(&mut df, self.init.backward(ps, &t.f, &da0, true));

        let da2 = tanh_backward(&t.f, &df);
        let dh1 = self.l2.backward(ps, &t.h1, &da2, true).unwrap_or_default();
        let da1 = tanh_backward(&t.h1, &dh1);
        self.l1.backward(ps, &t.fused, &da1, true).unwrap_or_default()
    }
}

/// All experts plus the shared speed head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertBank {
    experts: Vec<Expert>,
    speed: Linear,
}

impl ExpertBank {
    pub fn new(ps: &mut ParamSet) -> Self {
        let experts = (0..EXPERT_COUNT)
            .map(|i| {
                let id = ExpertId::from_index(i).expect("index in range");
                Expert::new(ps, &format!("expert.{}", id.name()))
            })
            .collect();
        Self {
            experts,
            speed: Linear::new(ps, "speed_head", FUSED_FEATURE, 1),
        }
    }

    pub fn expert(&self, id: ExpertId) -> &Expert {
        &self.experts[id.index()]
    }

    /// Parameter-name prefix of an expert.
    pub fn prefix(id: ExpertId) -> String {
        format!("expert.{}.", id.name())
    }

    pub fn forward(&self, ps: &ParamSet, id: ExpertId, fused: &[f64]) -> Result<ExpertOutput> {
        self.expert(id).forward(ps, fused)
    }

    /// Dense forward of every expert, ordered `[global, kind 0, …, kind 4]`.
    pub fn forward_all(&self, ps: &ParamSet, fused: &[f64]) -> Result<Vec<ExpertOutput>> {
        self.experts.iter().map(|e| e.forward(ps, fused)).collect()
    }

    pub fn predict_speed(&self, ps: &ParamSet, fused: &[f64]) -> Result<f64> {
        Ok(SPEED_HEAD_SCALE * self.speed.forward(ps, fused)?[0])
    }

    /// Backward of the speed head for `dL/dspeed`; returns `dL/dF`.
    pub fn speed_backward(&self, ps: &mut ParamSet, fused: &[f64], d_speed: f64) -> Vec<f64> {
        self.speed
            .backward(ps, fused, &[SPEED_HEAD_SCALE * d_speed], true)
            .unwrap_or_default()
    }
}
