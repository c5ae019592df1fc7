//! Observation encoders: occupancy raster → 128-d image-analog feature,
//! (speed, command, goal) → 32-d measurement feature, concatenated into the
//! 160-d fused feature consumed by the router and every expert.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numerics::{tanh_backward, tanh_inplace, Linear, ParamSet};

pub const GRID_SIZE: usize = 32;
pub const GRID_CHANNELS: usize = 3;
pub const GRID_LEN: usize = GRID_CHANNELS * GRID_SIZE * GRID_SIZE;
pub const IMAGE_FEATURE: usize = 128;
pub const MEASUREMENT_FEATURE: usize = 32;
pub const FUSED_FEATURE: usize = IMAGE_FEATURE + MEASUREMENT_FEATURE;
pub const COMMAND_COUNT: usize = 6;
const MEASUREMENT_INPUT: usize = 1 + COMMAND_COUNT + 2;
const IMAGE_HIDDEN: [usize; 2] = [512, 256];
const MEASUREMENT_HIDDEN: usize = 64;

pub const SPEED_SCALE: f64 = 10.0;
pub const GOAL_SCALE: f64 = 50.0;

/// High-level navigation command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Command {
    Follow = 0,
    Left = 1,
    Right = 2,
    Straight = 3,
    ChangeLeft = 4,
    ChangeRight = 5,
}

impl Command {
    pub const ALL: [Command; COMMAND_COUNT] = [
        Command::Follow,
        Command::Left,
        Command::Right,
        Command::Straight,
        Command::ChangeLeft,
        Command::ChangeRight,
    ];

    pub fn one_hot(self) -> [f64; COMMAND_COUNT] {
        let mut v = [0.0; COMMAND_COUNT];
        v[self as usize] = 1.0;
        v
    }

    pub fn from_one_hot(bits: &[f64]) -> Result<Self> {
        check_len("command one-hot", COMMAND_COUNT, bits.len())?;
        let ones: Vec<usize> = bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == 1.0)
            .map(|(i, _)| i)
            .collect();
        let zeros = bits.iter().filter(|&&b| b == 0.0).count();
        if ones.len() != 1 || zeros != COMMAND_COUNT - 1 {
            return Err(Error::InvalidObservation(format!(
                "command must be one-hot, got {bits:?}"
            )));
        }
        Ok(Self::ALL[ones[0]])
    }
}

/// Forward-facing egocentric observation.
///
/// `grid` is channel-major then row-major: index `c·32·32 + row·32 + col`,
/// where `row` counts metres ahead of the ego centre and `col` runs from the
/// ego's right (col 0) to its left. Channels: drivable, agents, signs/markings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub grid: Vec<f64>,
    pub speed: f64,
    pub command: Command,
    pub goal: [f64; 2],
}

impl Observation {
    pub fn validate(&self) -> Result<()> {
        if self.grid.len() != GRID_LEN {
            return Err(Error::InvalidObservation(format!(
                "grid has {} cells, expected {GRID_LEN}",
                self.grid.len()
            )));
        }
        if let Some(v) = self.grid.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidObservation(format!("grid value {v} outside [0,1]")));
        }
        if !self.speed.is_finite() || self.speed < 0.0 {
            return Err(Error::InvalidObservation(format!("speed {}", self.speed)));
        }
        if !self.goal.iter().all(|g| g.is_finite()) {
            return Err(Error::InvalidObservation("non-finite goal".into()));
        }
        Ok(())
    }

    pub fn measurement_input(&self) -> Vec<f64> {
        measurement_input(self.speed, &self.command.one_hot(), self.goal)
    }
}

fn measurement_input(speed: f64, command: &[f64], goal: [f64; 2]) -> Vec<f64> {
    let mut m = Vec::with_capacity(MEASUREMENT_INPUT);
    m.push(speed / SPEED_SCALE);
    m.extend_from_slice(command);
    m.push(goal[0] / GOAL_SCALE);
    m.push(goal[1] / GOAL_SCALE);
    m
}

/// Raster encoder: 3072 → 512 → 256 → 128 (tanh on the hidden layers).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageEncoder {
    l1: Linear,
    l2: Linear,
    l3: Linear,
}

/// Measurement encoder: 9 → 64 → 64 → 32 (tanh on the hidden layers).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasurementEncoder {
    l1: Linear,
    l2: Linear,
    l3: Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Encoders {
    pub image: ImageEncoder,
    pub measurement: MeasurementEncoder,
}

/// Activations saved by [`Encoders::forward_traced`].
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    img_h1: Vec<f64>,
    img_h2: Vec<f64>,
    m_in: Vec<f64>,
    m_h1: Vec<f64>,
    m_h2: Vec<f64>,
}

impl ImageEncoder {
    pub fn new(ps: &mut ParamSet) -> Self {
        Self {
            l1: Linear::new(ps, "enc.image.l1", GRID_LEN, IMAGE_HIDDEN[0]),
            l2: Linear::new(ps, "enc.image.l2", IMAGE_HIDDEN[0], IMAGE_HIDDEN[1]),
            l3: Linear::new(ps, "enc.image.l3", IMAGE_HIDDEN[1], IMAGE_FEATURE),
        }
    }

    pub fn encode(&self, ps: &ParamSet, grid: &[f64]) -> Result<Vec<f64>> {
        check_len("image encoder input", GRID_LEN, grid.len())?;
        Ok(self.forward(ps, grid).0)
    }

    fn forward(&self, ps: &ParamSet, grid: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut h1 = self.l1.forward_unchecked(ps, grid);
        tanh_inplace(&mut h1);
        let mut h2 = self.l2.forward_unchecked(ps, &h1);
        tanh_inplace(&mut h2);
        let out = self.l3.forward_unchecked(ps, &h2);
        (out, h1, h2)
    }
}

impl MeasurementEncoder {
    pub fn new(ps: &mut ParamSet) -> Self {
        Self {
            l1: Linear::new(ps, "enc.meas.l1", MEASUREMENT_INPUT, MEASUREMENT_HIDDEN),
            l2: Linear::new(ps, "enc.meas.l2", MEASUREMENT_HIDDEN, MEASUREMENT_HIDDEN),
            l3: Linear::new(ps, "enc.meas.l3", MEASUREMENT_HIDDEN, MEASUREMENT_FEATURE),
        }
    }

    /// Encodes `(speed, one-hot command, goal)`; a command vector that is not
    /// exactly one-hot is rejected.
    pub fn encode(&self, ps: &ParamSet, speed: f64, command: &[f64], goal: [f64; 2]) -> Result<Vec<f64>> {
        Command::from_one_hot(command)?;
        if !speed.is_finite() || !goal.iter().all(|g| g.is_finite()) {
            return Err(Error::NonFinite("measurement input"));
        }
        Ok(self.forward(ps, &measurement_input(speed, command, goal)).0)
    }

    fn forward(&self, ps: &ParamSet, m: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut h1 = self.l1.forward_unchecked(ps, m);
        tanh_inplace(&mut h1);
        let mut h2 = self.l2.forward_unchecked(ps, &h1);
        tanh_inplace(&mut h2);
        let out = self.l3.forward_unchecked(ps, &h2);
        (out, h1, h2)
    }
}

/// Concatenates (image-analog, measurement) features.
pub fn fuse(image: &[f64], measurement: &[f64]) -> Result<Vec<f64>> {
    check_len("fuse image feature", IMAGE_FEATURE, image.len())?;
    check_len("fuse measurement feature", MEASUREMENT_FEATURE, measurement.len())?;
    let mut f = Vec::with_capacity(FUSED_FEATURE);
    f.extend_from_slice(image);
    f.extend_from_slice(measurement);
    Ok(f)
}

impl Encoders {
    pub fn new(ps: &mut ParamSet) -> Self {
        Self {
            image: ImageEncoder::new(ps),
            measurement: MeasurementEncoder::new(ps),
        }
    }

    pub fn encode(&self, ps: &ParamSet, obs: &Observation) -> Result<Vec<f64>> {
        Ok(self.forward_traced(ps, obs)?.0)
    }

    pub fn forward_traced(&self, ps: &ParamSet, obs: &Observation) -> Result<(Vec<f64>, EncoderTrace)> {
        obs.validate()?;
        let (img, img_h1, img_h2) = self.image.forward(ps, &obs.grid);
        let m_in = obs.measurement_input();
        let (meas, m_h1, m_h2) = self.measurement.forward(ps, &m_in);
        let fused = fuse(&img, &meas)?;
        Ok((
            fused,
            EncoderTrace {
                img_h1,
                img_h2,
                m_in,
                m_h1,
                m_h2,
            },
        ))
    }

    /// Backpropagates `dL/dF` into both encoders.
    pub fn backward(&self, ps: &mut ParamSet, obs: &Observation, t: &EncoderTrace, d_fused: &[f64]) {
        let (d_img, d_meas) = d_fused.split_at(IMAGE_FEATURE);

        let im = &self.image;
        let dh2 = im.l3.backward(ps, &t.img_h2, d_img, true).unwrap_or_default();
        let da2 = tanh_backward(&t.img_h2, &dh2);
        let dh1 = im.l2.backward(ps, &t.img_h1, &da2, true).unwrap_or_default();
        let da1 = tanh_backward(&t.img_h1, &dh1);
        im.l1.backward(ps, &obs.grid, &da1, false);

        let me = &self.measurement;
        let dh2 = me.l3.backward(ps, &t.m_h2, d_meas, true).unwrap_or_default();
        let da2 = tanh_backward(&t.m_h2, &dh2);
        let dh1 = me.l2.backward(ps, &t.m_h1, &da2, true).unwrap_or_default();
        let da1 = tanh_backward(&t.m_h1, &dh1);
        me.l1.backward(ps, &t.m_in, &da1, false);
    }
}
