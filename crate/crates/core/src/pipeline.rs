//! The modular driving pipeline.
//!
//! Six stages run once per simulator tick in lockstep: sense, object
//! perception, path perception, localization, planning, control. Every
//! inter-module variable is exposed to the injector through [`Fragment`]
//! intercepts at the stage boundaries, and every variable lands in the
//! [`MonitoredRecord`] post-injection. Perception is an observation model
//! over ground truth; fault propagation, not detector fidelity, is what the
//! pipeline is built to measure.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::record::MonitoredRecord;
use crate::rng::RunRng;
use crate::scenario::ScenarioSpec;
use crate::watchdog::{Hang, TickBudget};
use crate::world::{ActuationCommand, GroundTruth, GAP_SENTINEL};

pub const KP: f64 = 0.5;
pub const KI: f64 = 0.05;
pub const KD: f64 = 0.1;
pub const I_MAX: f64 = 10.0;
pub const KS1: f64 = 0.2;
pub const KS2: f64 = 1.0;
/// Time-gap law constant for car following.
pub const T_GAP: f64 = 2.0;
/// Standstill bumper gap the planner aims to keep.
pub const D_STANDOFF: f64 = 5.0;
/// Comfort deceleration assumed by the planner's braking envelope. Kept well
/// under the vehicle's physical B_MAX so the controller can track the
/// commanded profile with margin.
pub const B_PLAN: f64 = 2.5;

const LANE_SAMPLE_SPACING: f64 = 5.0;
const LANE_SAMPLE_COUNT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    Vehicle,
    Pedestrian,
    Sign,
    Unknown,
}

impl ObjectClass {
    pub const VARIANTS: [ObjectClass; 4] = [
        ObjectClass::Vehicle,
        ObjectClass::Pedestrian,
        ObjectClass::Sign,
        ObjectClass::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectClass::Vehicle => "vehicle",
            ObjectClass::Pedestrian => "pedestrian",
            ObjectClass::Sign => "sign",
            ObjectClass::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneType {
    Solid,
    Dashed,
    Double,
    Unknown,
}

impl LaneType {
    pub const VARIANTS: [LaneType; 4] = [
        LaneType::Solid,
        LaneType::Dashed,
        LaneType::Double,
        LaneType::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LaneType::Solid => "solid",
            LaneType::Dashed => "dashed",
            LaneType::Double => "double",
            LaneType::Unknown => "unknown",
        }
    }
}

/// The pipeline modules, which double as fault-site and crash attribution ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleId {
    Sense,
    ObjectPerception,
    PathPerception,
    Localization,
    Planning,
    Control,
    Actuation,
}

impl ModuleId {
    pub const ALL: [ModuleId; 7] = [
        ModuleId::Sense,
        ModuleId::ObjectPerception,
        ModuleId::PathPerception,
        ModuleId::Localization,
        ModuleId::Planning,
        ModuleId::Control,
        ModuleId::Actuation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModuleId::Sense => "sense",
            ModuleId::ObjectPerception => "object_perception",
            ModuleId::PathPerception => "path_perception",
            ModuleId::Localization => "localization",
            ModuleId::Planning => "planning",
            ModuleId::Control => "control",
            ModuleId::Actuation => "actuation",
        }
    }
}

impl std::fmt::Display for ModuleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub ds: f64,
    pub dlat: f64,
    pub class: ObjectClass,
    pub length: f64,
    pub width: f64,
    pub occluded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorFrame {
    pub frame_id: i64,
    pub objects: Vec<Detection>,
    /// (forward offset, lateral offset) samples of the lane center line in
    /// the camera frame.
    pub lane_samples: Vec<(f64, f64)>,
    pub ego_speed_reading: f64,
    pub lane_type: LaneType,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorNoiseParams {
    pub sigma: f64,
    pub occlusion: Option<(f64, f64)>,
}

impl Default for SensorNoiseParams {
    fn default() -> Self {
        Self {
            sigma: 0.0,
            occlusion: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObjectPerceptionOut {
    pub num_detected_objects: i64,
    pub object_class: Vec<ObjectClass>,
    pub object_coordinates: Vec<(f64, f64)>,
    pub bounding_box: Vec<(f64, f64)>,
}

impl ObjectPerceptionOut {
    /// List-coherence invariant, checked once per tick after injection.
    pub fn coherent(&self) -> bool {
        let n = self.object_class.len();
        self.num_detected_objects == n as i64
            && self.object_coordinates.len() == n
            && self.bounding_box.len() == n
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPerceptionOut {
    pub lane_type: LaneType,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for PathPerceptionOut {
    fn default() -> Self {
        Self {
            lane_type: LaneType::Unknown,
            c0: 0.0,
            c1: 0.0,
            c2: 0.0,
        }
    }
}

impl PathPerceptionOut {
    fn finite(&self) -> bool {
        self.c0.is_finite() && self.c1.is_finite() && self.c2.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LocalizationOut {
    pub est_s: f64,
    pub est_lateral: f64,
    pub est_heading: f64,
    pub est_speed: f64,
}

impl LocalizationOut {
    fn finite(&self) -> bool {
        self.est_s.is_finite()
            && self.est_lateral.is_finite()
            && self.est_heading.is_finite()
            && self.est_speed.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanOut {
    pub target_speed: f64,
    pub target_lateral: f64,
    pub lead_gap: f64,
}

impl PlanOut {
    fn zeroed() -> Self {
        Self {
            target_speed: 0.0,
            target_lateral: 0.0,
            lead_gap: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PidState {
    pub pid_measured_value: f64,
    pub pid_target_value: f64,
    /// Raw pre-clamp controller output; this is what injection targets and
    /// what monitoring records.
    pub pid_output: f64,
    pub integral: f64,
    pub prev_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub i_max: f64,
    pub ks1: f64,
    pub ks2: f64,
    pub t_gap: f64,
    pub d_standoff: f64,
    pub b_plan: f64,
    pub speed_limit: f64,
    pub lane_width: f64,
    pub ego_length: f64,
    pub noise: SensorNoiseParams,
}

impl PipelineParams {
    pub fn for_scenario(spec: &ScenarioSpec) -> Self {
        Self {
            kp: KP,
            ki: KI,
            kd: KD,
            i_max: I_MAX,
            ks1: KS1,
            ks2: KS2,
            t_gap: T_GAP,
            d_standoff: D_STANDOFF,
            b_plan: B_PLAN,
            speed_limit: spec.lanes.speed_limit,
            lane_width: spec.lanes.lane_width,
            ego_length: spec.ego.length,
            noise: SensorNoiseParams::default(),
        }
    }
}

/// A stage-boundary view handed to the injection hooks. Mid-module
/// fragments (`LeadGap`, `PidInputs`, `PidOutput`) exist so that corrupting
/// an upstream variable feeds the computation that consumes it.
pub enum Fragment<'a> {
    SensorFrame(&'a mut SensorFrame),
    ObjectPerception(&'a mut ObjectPerceptionOut),
    PathPerception(&'a mut PathPerceptionOut),
    Localization(&'a mut LocalizationOut),
    LeadGap(&'a mut f64),
    Plan(&'a mut PlanOut),
    PidInputs {
        measured: &'a mut f64,
        target: &'a mut f64,
    },
    PidOutput(&'a mut f64),
    Actuation {
        throttle: &'a mut f64,
        brake: &'a mut f64,
        steering: &'a mut f64,
    },
}

impl Fragment<'_> {
    pub fn module(&self) -> ModuleId {
        match self {
            Fragment::SensorFrame(_) => ModuleId::Sense,
            Fragment::ObjectPerception(_) => ModuleId::ObjectPerception,
            Fragment::PathPerception(_) => ModuleId::PathPerception,
            Fragment::Localization(_) => ModuleId::Localization,
            Fragment::LeadGap(_) | Fragment::Plan(_) => ModuleId::Planning,
            Fragment::PidInputs { .. } | Fragment::PidOutput(_) => ModuleId::Control,
            Fragment::Actuation { .. } => ModuleId::Actuation,
        }
    }
}

/// Whether a module's output reaches its consumer this tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delivery {
    Deliver,
    Withhold,
}

/// Boundary intercept point. The production implementation is the fault
/// injector; golden runs use [`NoInjection`].
pub trait PipelineHooks {
    fn intercept(
        &mut self,
        tick: u64,
        fragment: Fragment<'_>,
        rng: &mut RunRng,
        budget: &mut TickBudget,
    ) -> Result<Delivery, Hang>;
}

pub struct NoInjection;

impl PipelineHooks for NoInjection {
    fn intercept(
        &mut self,
        _tick: u64,
        _fragment: Fragment<'_>,
        _rng: &mut RunRng,
        _budget: &mut TickBudget,
    ) -> Result<Delivery, Hang> {
        Ok(Delivery::Deliver)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PipelineFault {
    Crash { module: ModuleId },
    Hang { module: ModuleId },
}

/// Camera observation model: every ground-truth object becomes a detection
/// with optional Gaussian position noise, objects and lane samples inside
/// the occlusion interval are blanked, and the lane center line is sampled
/// in the rotated camera frame so the downstream fit can recover the ego's
/// lateral offset and heading.
pub fn sense(gt: &GroundTruth, noise: &SensorNoiseParams, rng: &mut RunRng) -> SensorFrame {
    let occluded_at = |d: f64| noise.occlusion.is_some_and(|(a, b)| d >= a && d <= b);
    let objects = gt
        .objects
        .iter()
        .map(|o| {
            let (mut ds, mut dlat) = (o.ds, o.dlat);
            if noise.sigma > 0.0 {
                let n = Normal::new(0.0, noise.sigma).expect("sigma >= 0");
                ds += n.sample(rng);
                dlat += n.sample(rng);
            }
            Detection {
                ds,
                dlat,
                class: o.class,
                length: o.length,
                width: o.width,
                occluded: occluded_at(o.ds),
            }
        })
        .collect();

    let (sin_h, cos_h) = gt.ego_heading.sin_cos();
    let lane_samples = (1..=LANE_SAMPLE_COUNT)
        .filter_map(|k| {
            let d = k as f64 * LANE_SAMPLE_SPACING;
            if occluded_at(d) {
                return None;
            }
            let x = d * cos_h - gt.ego_lateral * sin_h;
            let y = -d * sin_h - gt.ego_lateral * cos_h;
            Some((x, y))
        })
        .collect();

    SensorFrame {
        frame_id: gt.tick as i64,
        objects,
        lane_samples,
        ego_speed_reading: gt.ego_speed,
        lane_type: gt.lane_type,
    }
}

/// Pass-through detector: one output entry per non-occluded detection.
pub fn perceive_objects(frame: &SensorFrame) -> ObjectPerceptionOut {
    let visible: Vec<&Detection> = frame.objects.iter().filter(|d| !d.occluded).collect();
    ObjectPerceptionOut {
        num_detected_objects: visible.len() as i64,
        object_class: visible.iter().map(|d| d.class).collect(),
        object_coordinates: visible.iter().map(|d| (d.ds, d.dlat)).collect(),
        bounding_box: visible.iter().map(|d| (d.length, d.width)).collect(),
    }
}

/// Least-squares quadratic y = c0 + c1 x + c2 x^2 over the lane samples.
/// Returns None for fewer than three samples or a degenerate system.
pub fn fit_lane_quadratic(samples: &[(f64, f64)]) -> Option<(f64, f64, f64)> {
    if samples.len() < 3 {
        return None;
    }
    let mut s = [0.0f64; 5];
    let mut t = [0.0f64; 3];
    for &(x, y) in samples {
        let x2 = x * x;
        s[0] += 1.0;
        s[1] += x;
        s[2] += x2;
        s[3] += x2 * x;
        s[4] += x2 * x2;
        t[0] += y;
        t[1] += y * x;
        t[2] += y * x2;
    }
    let mut m = [
        [s[0], s[1], s[2], t[0]],
        [s[1], s[2], s[3], t[1]],
        [s[2], s[3], s[4], t[2]],
    ];
    for col in 0..3 {
        let pivot = (col..3).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[pivot][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, pivot);
        for row in (col + 1)..3 {
            let f = m[row][col] / m[col][col];
            #[allow(clippy::needless_range_loop)]
            for k in col..4 {
                m[row][k] -= f * m[col][k];
            }
        }
    }
    let c2 = m[2][3] / m[2][2];
    let c1 = (m[1][3] - m[1][2] * c2) / m[1][1];
    let c0 = (m[0][3] - m[0][1] * c1 - m[0][2] * c2) / m[0][0];
    Some((c0, c1, c2))
}

/// Quadratic lane fit with the lane type passed through from ground truth.
/// With fewer than three usable samples the previous output is held
/// (degraded mode, not a crash).
pub fn perceive_path(frame: &SensorFrame, prev: &PathPerceptionOut) -> PathPerceptionOut {
    match fit_lane_quadratic(&frame.lane_samples) {
        Some((c0, c1, c2)) => PathPerceptionOut {
            lane_type: frame.lane_type,
            c0,
            c1,
            c2,
        },
        None => *prev,
    }
}

/// Dead-reckoning localization off the speedometer and the lane fit.
pub fn localize(
    frame: &SensorFrame,
    path: &PathPerceptionOut,
    prev: &LocalizationOut,
    dt: f64,
) -> LocalizationOut {
    let est_speed = frame.ego_speed_reading;
    LocalizationOut {
        est_s: prev.est_s + est_speed * dt,
        est_lateral: -path.c0,
        est_heading: -path.c1,
        est_speed,
    }
}

/// Smallest bumper-to-bumper gap to a same-lane obstacle ahead. Signs are
/// not obstacles; anything else is. Returns [`GAP_SENTINEL`] when clear.
pub fn plan_lead_gap(objects: &ObjectPerceptionOut, params: &PipelineParams) -> f64 {
    let half_lane = params.lane_width / 2.0;
    let mut gap = GAP_SENTINEL;
    for i in 0..objects.object_coordinates.len() {
        let (ds, dlat) = objects.object_coordinates[i];
        let class = objects.object_class[i];
        if class == ObjectClass::Sign || !(ds > 0.0) || !(dlat.abs() < half_lane) {
            continue;
        }
        let length = objects.bounding_box[i].0;
        gap = gap.min(ds - (length + params.ego_length) / 2.0);
    }
    gap
}

/// Speed law: the speed limit, capped by the time-gap law and by a braking
/// envelope that keeps the commanded profile within a comfortable
/// deceleration of a stop at the standoff point.
pub fn plan_target_speed(lead_gap: f64, params: &PipelineParams) -> f64 {
    let margin = lead_gap - params.d_standoff;
    let time_gap_cap = margin / params.t_gap;
    let envelope_cap = (2.0 * params.b_plan * margin.max(0.0)).sqrt();
    params
        .speed_limit
        .min(time_gap_cap)
        .min(envelope_cap)
        .max(0.0)
}

pub struct Pipeline {
    pub params: PipelineParams,
    prev_objects: ObjectPerceptionOut,
    prev_path: PathPerceptionOut,
    prev_loc: LocalizationOut,
    pid: PidState,
}

impl Pipeline {
    pub fn new(params: PipelineParams) -> Self {
        Self {
            params,
            prev_objects: ObjectPerceptionOut::default(),
            prev_path: PathPerceptionOut::default(),
            prev_loc: LocalizationOut::default(),
            pid: PidState::default(),
        }
    }

    pub fn pid(&self) -> &PidState {
        &self.pid
    }

    /// Run one lockstep tick: sense -> perceive objects -> perceive path ->
    /// localize -> plan -> control, intercepting at every boundary and
    /// recording every monitored variable post-injection. Invariant
    /// violations and non-finite control state surface as crashes attributed
    /// to the module where they were detected; an exhausted tick budget
    /// surfaces as a hang.
    pub fn tick(
        &mut self,
        gt: &GroundTruth,
        hooks: &mut dyn PipelineHooks,
        rng: &mut RunRng,
        budget: &mut TickBudget,
        dt: f64,
    ) -> Result<(ActuationCommand, MonitoredRecord), PipelineFault> {
        let tick = gt.tick;
        let crash = |module| PipelineFault::Crash { module };
        let hang = |module| move |_: Hang| PipelineFault::Hang { module };

        // sense
        budget
            .charge(1 + gt.objects.len() as u64)
            .map_err(hang(ModuleId::Sense))?;
        let mut frame = sense(gt, &self.params.noise, rng);
        hooks
            .intercept(tick, Fragment::SensorFrame(&mut frame), rng, budget)
            .map_err(hang(ModuleId::Sense))?;

        // object perception
        budget
            .charge(1 + frame.objects.len() as u64)
            .map_err(hang(ModuleId::ObjectPerception))?;
        let mut objects = perceive_objects(&frame);
        let delivery = hooks
            .intercept(tick, Fragment::ObjectPerception(&mut objects), rng, budget)
            .map_err(hang(ModuleId::ObjectPerception))?;
        let objects = match delivery {
            Delivery::Deliver => objects,
            Delivery::Withhold => self.prev_objects.clone(),
        };
        if !objects.coherent() {
            return Err(crash(ModuleId::ObjectPerception));
        }
        self.prev_objects = objects.clone();

        // path perception
        budget.charge(1).map_err(hang(ModuleId::PathPerception))?;
        let mut path = perceive_path(&frame, &self.prev_path);
        let delivery = hooks
            .intercept(tick, Fragment::PathPerception(&mut path), rng, budget)
            .map_err(hang(ModuleId::PathPerception))?;
        let path = match delivery {
            Delivery::Deliver => path,
            Delivery::Withhold => self.prev_path,
        };
        if !path.finite() {
            return Err(crash(ModuleId::PathPerception));
        }
        self.prev_path = path;

        // localization
        budget.charge(1).map_err(hang(ModuleId::Localization))?;
        let mut loc = localize(&frame, &path, &self.prev_loc, dt);
        let delivery = hooks
            .intercept(tick, Fragment::Localization(&mut loc), rng, budget)
            .map_err(hang(ModuleId::Localization))?;
        let loc = match delivery {
            Delivery::Deliver => loc,
            Delivery::Withhold => self.prev_loc,
        };
        if !loc.finite() {
            return Err(crash(ModuleId::Localization));
        }
        self.prev_loc = loc;

        // planning
        budget
            .charge(1 + objects.object_coordinates.len() as u64)
            .map_err(hang(ModuleId::Planning))?;
        let mut lead_gap = plan_lead_gap(&objects, &self.params);
        hooks
            .intercept(tick, Fragment::LeadGap(&mut lead_gap), rng, budget)
            .map_err(hang(ModuleId::Planning))?;
        let mut plan = PlanOut {
            target_speed: plan_target_speed(lead_gap, &self.params),
            target_lateral: 0.0,
            lead_gap,
        };
        let delivery = hooks
            .intercept(tick, Fragment::Plan(&mut plan), rng, budget)
            .map_err(hang(ModuleId::Planning))?;
        let plan = match delivery {
            Delivery::Deliver => plan,
            Delivery::Withhold => PlanOut::zeroed(),
        };

        // control
        budget.charge(1).map_err(hang(ModuleId::Control))?;
        let mut measured = loc.est_speed;
        let mut target = plan.target_speed;
        hooks
            .intercept(
                tick,
                Fragment::PidInputs {
                    measured: &mut measured,
                    target: &mut target,
                },
                rng,
                budget,
            )
            .map_err(hang(ModuleId::Control))?;
        let error = target - measured;
        let integral = (self.pid.integral + error * dt).clamp(-self.params.i_max, self.params.i_max);
        let mut pid_raw = self.params.kp * error
            + self.params.ki * integral
            + self.params.kd * (error - self.pid.prev_error) / dt;
        let delivery = hooks
            .intercept(tick, Fragment::PidOutput(&mut pid_raw), rng, budget)
            .map_err(hang(ModuleId::Control))?;
        if !(measured.is_finite() && target.is_finite() && integral.is_finite() && pid_raw.is_finite())
        {
            return Err(crash(ModuleId::Control));
        }
        let (mut throttle, mut brake, mut steering);
        if delivery == Delivery::Withhold {
            pid_raw = 0.0;
            throttle = 0.0;
            brake = 0.0;
            steering = 0.0;
        } else {
            let pid_clamped = pid_raw.clamp(-1.0, 1.0);
            throttle = pid_clamped.max(0.0);
            brake = (-pid_clamped).max(0.0);
            steering = -self.params.ks1 * (loc.est_lateral - plan.target_lateral)
                - self.params.ks2 * loc.est_heading;
        }
        self.pid = PidState {
            pid_measured_value: measured,
            pid_target_value: target,
            pid_output: pid_raw,
            integral,
            prev_error: error,
        };

        // actuation (raw pre-clamp values are the injection targets)
        budget.charge(1).map_err(hang(ModuleId::Actuation))?;
        let delivery = hooks
            .intercept(
                tick,
                Fragment::Actuation {
                    throttle: &mut throttle,
                    brake: &mut brake,
                    steering: &mut steering,
                },
                rng,
                budget,
            )
            .map_err(hang(ModuleId::Actuation))?;
        if delivery == Delivery::Withhold {
            throttle = 0.0;
            brake = 0.0;
            steering = 0.0;
        }
        if !(throttle.is_finite() && brake.is_finite() && steering.is_finite()) {
            return Err(crash(ModuleId::Actuation));
        }

        let record = MonitoredRecord {
            frame_id: frame.frame_id,
            num_detected_objects: objects.num_detected_objects,
            object_class: objects.object_class.clone(),
            object_coordinates: objects.object_coordinates.clone(),
            bounding_box: objects.bounding_box.clone(),
            lane_type: path.lane_type,
            lane_c0: path.c0,
            lane_c1: path.c1,
            lane_c2: path.c2,
            est_s: loc.est_s,
            est_lateral: loc.est_lateral,
            est_heading: loc.est_heading,
            est_speed: loc.est_speed,
            target_speed: plan.target_speed,
            lead_gap: plan.lead_gap,
            pid_measured_value: self.pid.pid_measured_value,
            pid_target_value: self.pid.pid_target_value,
            pid_output: self.pid.pid_output,
            throttle,
            brake,
            steering,
            // Filled by the run loop from the world state the pipeline saw.
            ego_speed: 0.0,
            ego_lateral: 0.0,
            ego_s: 0.0,
        };
        let cmd = ActuationCommand::clamped(throttle, brake, steering);
        Ok((cmd, record))
    }
}
