//! Parametric traffic scenarios.
//!
//! A scenario describes a straight multi-lane highway, the ego vehicle and a
//! set of scripted traffic actors. Every motion parameter is drawn from a
//! truncated normal distribution, so a scenario plus a seed fully determines
//! the instantiated world.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::RunRng;

/// 65 mph, the default highway speed limit.
pub const SPEED_LIMIT_65MPH: f64 = 29.0576;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneGeometry {
    pub lane_count: u32,
    pub lane_width: f64,
    pub road_length: f64,
    pub speed_limit: f64,
}

impl LaneGeometry {
    /// Lateral coordinate of a lane's center line; lane 0 is centered at 0.
    pub fn lane_center(&self, lane_index: u32) -> f64 {
        f64::from(lane_index) * self.lane_width
    }

    fn validate(&self) -> Result<()> {
        if self.lane_count < 1 {
            return Err(Error::ScenarioInvalid("lane_count must be >= 1".into()));
        }
        if !(self.lane_width > 0.0) {
            return Err(Error::ScenarioInvalid("lane_width must be > 0".into()));
        }
        if !(self.road_length > 0.0) {
            return Err(Error::ScenarioInvalid("road_length must be > 0".into()));
        }
        if !(self.speed_limit > 0.0) {
            return Err(Error::ScenarioInvalid("speed_limit must be > 0".into()));
        }
        Ok(())
    }
}

/// A normal distribution conditioned on `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncNormalParam {
    pub mean: f64,
    pub std_dev: f64,
    pub lower: f64,
    pub upper: f64,
}

impl TruncNormalParam {
    /// A degenerate point distribution.
    pub fn fixed(value: f64) -> Self {
        Self {
            mean: value,
            std_dev: 0.0,
            lower: value,
            upper: value,
        }
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        let ok = self.std_dev >= 0.0
            && self.lower <= self.upper
            && self.mean >= self.lower
            && self.mean <= self.upper
            && self.mean.is_finite()
            && self.std_dev.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::ScenarioInvalid(format!(
                "{what}: invalid truncated normal (mean {}, std {}, bounds [{}, {}])",
                self.mean, self.std_dev, self.lower, self.upper
            )))
        }
    }

    /// Draw one value. Rejection sampling against the bounds, with a
    /// deterministic fallback to clamping after 1000 rejections so tight
    /// intervals cannot stall the stream. A zero std_dev returns the mean
    /// without consuming randomness.
    pub fn sample(&self, rng: &mut RunRng) -> f64 {
        if self.std_dev == 0.0 {
            return self.mean;
        }
        let normal = Normal::new(self.mean, self.std_dev).expect("validated std_dev");
        for _ in 0..1000 {
            let x = normal.sample(rng);
            if x >= self.lower && x <= self.upper {
                return x;
            }
        }
        normal.sample(rng).clamp(self.lower, self.upper)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    Constant,
    DecelerateToStop,
    Accelerate,
    Stationary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorSpec {
    pub actor_id: String,
    pub initial_s: TruncNormalParam,
    pub lane_index: u32,
    pub speed: TruncNormalParam,
    pub accel: TruncNormalParam,
    pub behavior: Behavior,
    pub length: f64,
    pub width: f64,
}

impl ActorSpec {
    fn validate(&self, lanes: &LaneGeometry) -> Result<()> {
        if self.lane_index >= lanes.lane_count {
            return Err(Error::ScenarioInvalid(format!(
                "actor {}: lane_index {} out of range (lane_count {})",
                self.actor_id, self.lane_index, lanes.lane_count
            )));
        }
        if !(self.length > 0.0 && self.width > 0.0) {
            return Err(Error::ScenarioInvalid(format!(
                "actor {}: length and width must be > 0",
                self.actor_id
            )));
        }
        self.initial_s.validate(&format!("{}.initial_s", self.actor_id))?;
        self.speed.validate(&format!("{}.speed", self.actor_id))?;
        self.accel.validate(&format!("{}.accel", self.actor_id))?;
        Ok(())
    }
}

/// The scenario file schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub lanes: LaneGeometry,
    pub ego: ActorSpec,
    pub actors: Vec<ActorSpec>,
    pub duration_s: f64,
    pub dt_s: f64,
    pub sensor_range_m: f64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        self.lanes.validate()?;
        self.ego.validate(&self.lanes)?;
        for actor in &self.actors {
            actor.validate(&self.lanes)?;
        }
        if !(self.dt_s > 0.0) {
            return Err(Error::ScenarioInvalid("dt_s must be > 0".into()));
        }
        if !(self.duration_s > 0.0) {
            return Err(Error::ScenarioInvalid("duration_s must be > 0".into()));
        }
        if !(self.sensor_range_m > 0.0) {
            return Err(Error::ScenarioInvalid("sensor_range_m must be > 0".into()));
        }
        let ticks = self.duration_s / self.dt_s;
        if (ticks - ticks.round()).abs() > 1e-9 {
            return Err(Error::ScenarioInvalid(format!(
                "duration_s / dt_s must be integral, got {ticks}"
            )));
        }
        Ok(())
    }

    pub fn n_ticks(&self) -> u64 {
        (self.duration_s / self.dt_s).round() as u64
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ScenarioSpec = serde_json::from_str(text)
            .map_err(|e| Error::ScenarioInvalid(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::ScenarioInvalid(format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }
}
