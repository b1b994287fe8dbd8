//! Deterministic kinematic simulator of a straight multi-lane highway.
//!
//! The world advances in lockstep with the driving pipeline: each tick it
//! emits ground truth, consumes the ego actuation command, integrates one
//! explicit-Euler step at fixed dt and re-checks collisions. Traffic actors
//! follow open-loop behavior scripts and never react to the ego.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{LaneType, ObjectClass};
use crate::rng::RunRng;
use crate::scenario::{ActorSpec, Behavior, LaneGeometry, ScenarioSpec};

/// Peak drive acceleration under full throttle.
pub const A_MAX: f64 = 3.0;
/// Peak deceleration under full brake, calibrated so that stopping from
/// 24.5872 m/s covers 64 m: v^2 / (2 * 64).
pub const B_MAX: f64 = 4.7229;
pub const WHEELBASE: f64 = 2.8;
/// Steering angle limit (rad).
pub const DELTA_MAX: f64 = 0.5;
/// Heading is kept strictly inside (-pi/2, pi/2).
const HEADING_MAX: f64 = 1.5;

/// Sentinel for "no object" distances; JSON-safe stand-in for infinity.
pub const GAP_SENTINEL: f64 = 1.0e9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// Longitudinal position along the road (m).
    pub s: f64,
    /// Signed offset from the assigned lane center (m).
    pub lateral: f64,
    /// Heading relative to the road axis (rad).
    pub heading: f64,
    pub speed: f64,
    pub accel: f64,
}

impl VehicleState {
    fn at(s: f64, speed: f64) -> Self {
        Self {
            s,
            lateral: 0.0,
            heading: 0.0,
            speed,
            accel: 0.0,
        }
    }
}

/// Ego actuation for one tick. Fields are expected to be clamped into range
/// before the command reaches the world; raw pre-clamp values live in the
/// monitored record instead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuationCommand {
    pub throttle: f64,
    pub brake: f64,
    pub steering: f64,
}

impl ActuationCommand {
    pub fn coast() -> Self {
        Self {
            throttle: 0.0,
            brake: 0.0,
            steering: 0.0,
        }
    }

    pub fn clamped(throttle: f64, brake: f64, steering: f64) -> Self {
        Self {
            throttle: throttle.clamp(0.0, 1.0),
            brake: brake.clamp(0.0, 1.0),
            steering: steering.clamp(-DELTA_MAX, DELTA_MAX),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.throttle.is_finite() && self.brake.is_finite() && self.steering.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub tick: u64,
    pub time: f64,
    pub ego: VehicleState,
    pub actors: Vec<(String, VehicleState)>,
    pub collided: bool,
}

/// One object the sensor can see, in ego-relative road coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtObject {
    pub ds: f64,
    pub dlat: f64,
    pub class: ObjectClass,
    pub length: f64,
    pub width: f64,
}

/// What the simulator exposes to the pipeline each tick.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub tick: u64,
    pub objects: Vec<GtObject>,
    pub ego_speed: f64,
    pub ego_lateral: f64,
    pub ego_heading: f64,
    pub lane_type: LaneType,
}

#[derive(Debug, Clone)]
pub struct World {
    lanes: LaneGeometry,
    ego_spec: ActorSpec,
    actor_specs: Vec<ActorSpec>,
    /// Deceleration/acceleration magnitude sampled per actor at instantiation.
    actor_accels: Vec<f64>,
    pub state: WorldState,
}

impl World {
    /// Sample every scenario parameter and build the initial world. The same
    /// (spec, rng stream) always yields a bit-identical state. Overlapping
    /// initial bounding boxes are a scenario error.
    pub fn instantiate(spec: &ScenarioSpec, rng: &mut RunRng) -> Result<World> {
        spec.validate()?;
        let ego_s = spec.ego.initial_s.sample(rng);
        let ego_speed = match spec.ego.behavior {
            Behavior::Stationary => 0.0,
            _ => spec.ego.speed.sample(rng).max(0.0),
        };
        let mut actors = Vec::with_capacity(spec.actors.len());
        let mut actor_accels = Vec::with_capacity(spec.actors.len());
        for actor in &spec.actors {
            let s = actor.initial_s.sample(rng);
            let speed = match actor.behavior {
                Behavior::Stationary => 0.0,
                _ => actor.speed.sample(rng).max(0.0),
            };
            let accel = match actor.behavior {
                Behavior::Constant | Behavior::Stationary => 0.0,
                _ => actor.accel.sample(rng).abs(),
            };
            actors.push((actor.actor_id.clone(), VehicleState::at(s, speed)));
            actor_accels.push(accel);
        }
        let world = World {
            lanes: spec.lanes.clone(),
            ego_spec: spec.ego.clone(),
            actor_specs: spec.actors.clone(),
            actor_accels,
            state: WorldState {
                tick: 0,
                time: 0.0,
                ego: VehicleState::at(ego_s, ego_speed),
                actors,
                collided: false,
            },
        };
        if let Some((a, b)) = world.first_overlap() {
            return Err(Error::ScenarioInvalid(format!(
                "initial bounding boxes of {a} and {b} overlap"
            )));
        }
        Ok(world)
    }

    pub fn lanes(&self) -> &LaneGeometry {
        &self.lanes
    }

    pub fn ego_spec(&self) -> &ActorSpec {
        &self.ego_spec
    }

    pub fn ego_abs_lateral(&self) -> f64 {
        self.lanes.lane_center(self.ego_spec.lane_index) + self.state.ego.lateral
    }

    /// Actor states with their specs, in scenario order.
    pub fn actors(&self) -> impl Iterator<Item = (&ActorSpec, &VehicleState)> {
        self.actor_specs
            .iter()
            .zip(self.state.actors.iter().map(|(_, st)| st))
    }

    /// Advance one tick. Explicit Euler: position integrates the old speed,
    /// so s(t+dt) - s(t) == speed(t) * dt holds exactly. After a collision
    /// the vehicles freeze but time keeps advancing.
    pub fn step(&mut self, cmd: &ActuationCommand, dt: f64) {
        debug_assert!(dt > 0.0);
        self.state.tick += 1;
        self.state.time = self.state.tick as f64 * dt;
        if self.state.collided {
            return;
        }

        let ego = &mut self.state.ego;
        let v0 = ego.speed;
        let psi0 = ego.heading;
        ego.accel = cmd.throttle * A_MAX - cmd.brake * B_MAX;
        ego.s += v0 * dt;
        ego.lateral += v0 * psi0.sin() * dt;
        ego.heading =
            (psi0 + v0 / WHEELBASE * cmd.steering.tan() * dt).clamp(-HEADING_MAX, HEADING_MAX);
        ego.speed = (v0 + ego.accel * dt).max(0.0);

        let limit = self.lanes.speed_limit;
        for (i, (_, st)) in self.state.actors.iter_mut().enumerate() {
            let spec = &self.actor_specs[i];
            let mag = self.actor_accels[i];
            st.accel = match spec.behavior {
                Behavior::Constant | Behavior::Stationary => 0.0,
                Behavior::DecelerateToStop => {
                    if st.speed > 0.0 {
                        -mag
                    } else {
                        0.0
                    }
                }
                Behavior::Accelerate => {
                    if st.speed < limit {
                        mag
                    } else {
                        0.0
                    }
                }
            };
            let v = st.speed;
            st.s += v * dt;
            st.speed = (v + st.accel * dt).max(0.0);
            if spec.behavior == Behavior::Accelerate {
                st.speed = st.speed.min(limit.max(v));
            }
        }

        if self.detect_collision() {
            self.state.collided = true;
        }
    }

    /// True iff any two vehicle rectangles overlap. Rectangles are
    /// axis-aligned in road coordinates; heading is ignored.
    pub fn detect_collision(&self) -> bool {
        self.first_overlap().is_some()
    }

    fn rectangles(&self) -> Vec<(&str, f64, f64, f64, f64)> {
        let mut rects = Vec::with_capacity(1 + self.state.actors.len());
        rects.push((
            self.ego_spec.actor_id.as_str(),
            self.state.ego.s,
            self.ego_abs_lateral(),
            self.ego_spec.length,
            self.ego_spec.width,
        ));
        for (spec, st) in self.actors() {
            rects.push((
                spec.actor_id.as_str(),
                st.s,
                self.lanes.lane_center(spec.lane_index) + st.lateral,
                spec.length,
                spec.width,
            ));
        }
        rects
    }

    fn first_overlap(&self) -> Option<(String, String)> {
        let rects = self.rectangles();
        for i in 0..rects.len() {
            for j in (i + 1)..rects.len() {
                let (ia, sa, la, lena, wida) = rects[i];
                let (ib, sb, lb, lenb, widb) = rects[j];
                if (sa - sb).abs() < (lena + lenb) / 2.0 && (la - lb).abs() < (wida + widb) / 2.0 {
                    return Some((ia.to_string(), ib.to_string()));
                }
            }
        }
        None
    }

    /// Everything within sensor range ahead of the ego, plus the true
    /// lane-relative ego pose. The sensor model is forward-facing only.
    pub fn ground_truth(&self, sensor_range: f64) -> GroundTruth {
        debug_assert!(sensor_range > 0.0);
        let ego_abs = self.ego_abs_lateral();
        let objects = self
            .actors()
            .filter_map(|(spec, st)| {
                let ds = st.s - self.state.ego.s;
                if ds > 0.0 && ds <= sensor_range {
                    Some(GtObject {
                        ds,
                        dlat: self.lanes.lane_center(spec.lane_index) + st.lateral - ego_abs,
                        class: ObjectClass::Vehicle,
                        length: spec.length,
                        width: spec.width,
                    })
                } else {
                    None
                }
            })
            .collect();
        GroundTruth {
            tick: self.state.tick,
            objects,
            ego_speed: self.state.ego.speed,
            ego_lateral: self.state.ego.lateral,
            ego_heading: self.state.ego.heading,
            lane_type: if self.lanes.lane_count == 1 {
                LaneType::Solid
            } else {
                LaneType::Dashed
            },
        }
    }

    /// Smallest bumper-to-bumper gap to a same-lane actor ahead of the ego,
    /// or [`GAP_SENTINEL`] when the lane ahead is clear.
    pub fn min_forward_gap(&self) -> f64 {
        let ego_abs = self.ego_abs_lateral();
        let half_lane = self.lanes.lane_width / 2.0;
        self.actors()
            .filter_map(|(spec, st)| {
                let ds = st.s - self.state.ego.s;
                let abs_lat = self.lanes.lane_center(spec.lane_index) + st.lateral;
                if ds > 0.0 && (abs_lat - ego_abs).abs() < half_lane {
                    Some(ds - (spec.length + self.ego_spec.length) / 2.0)
                } else {
                    None
                }
            })
            .fold(GAP_SENTINEL, f64::min)
    }
}
