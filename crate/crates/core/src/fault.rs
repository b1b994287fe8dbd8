//! Fault models and their application at pipeline boundaries.
//!
//! Hardware transients are emulated as bit flips on the 64-bit binary
//! representation of live numeric pipeline state; software-state corruption
//! uses the value-level models (random, fixed, scale, disappear); the sensor
//! gets Gaussian noise and occlusion. `Disappear` never corrupts a value —
//! it withholds delivery, and the pipeline applies the site's stale-or-zero
//! policy.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::pipeline::{
    Delivery, Fragment, LaneType, ModuleId, ObjectClass, PipelineHooks, SensorFrame,
};
use crate::rng::RunRng;
use crate::watchdog::{Hang, TickBudget};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum FaultModel {
    /// Uniform draw in [lower, upper] for numerics; uniform over declared
    /// variants for enums.
    Random { lower: f64, upper: f64 },
    Fixed { value: f64 },
    Scale { ratio: f64 },
    Disappear,
    #[serde(rename = "bitflip")]
    BitFlip { n_bits: u8 },
    GaussianNoise { sigma: f64 },
    Occlusion { from: f64, to: f64 },
}

impl FaultModel {
    pub fn tag(&self) -> &'static str {
        match self {
            FaultModel::Random { .. } => "random",
            FaultModel::Fixed { .. } => "fixed",
            FaultModel::Scale { .. } => "scale",
            FaultModel::Disappear => "disappear",
            FaultModel::BitFlip { .. } => "bitflip",
            FaultModel::GaussianNoise { .. } => "gaussian_noise",
            FaultModel::Occlusion { .. } => "occlusion",
        }
    }
}

/// When a fault fires.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Trigger {
    Transient { tick: u64 },
    Intermittent { ticks: Vec<u64> },
    Permanent { from_tick: u64 },
}

impl Trigger {
    pub fn fires_at(&self, tick: u64) -> bool {
        match self {
            Trigger::Transient { tick: t } => tick == *t,
            Trigger::Intermittent { ticks } => ticks.contains(&tick),
            Trigger::Permanent { from_tick } => tick >= *from_tick,
        }
    }

    /// Earliest tick the fault can fire; the causality boundary for
    /// golden-trace comparison.
    pub fn first_tick(&self) -> u64 {
        match self {
            Trigger::Transient { tick } => *tick,
            Trigger::Intermittent { ticks } => ticks.iter().copied().min().unwrap_or(u64::MAX),
            Trigger::Permanent { from_tick } => *from_tick,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FaultSite {
    pub module_id: ModuleId,
    pub variable_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element_index: Option<usize>,
}

impl FaultSite {
    pub fn scalar(module_id: ModuleId, variable_id: &str) -> Self {
        Self {
            module_id,
            variable_id: variable_id.to_string(),
            element_index: None,
        }
    }

    pub fn element(module_id: ModuleId, variable_id: &str, index: usize) -> Self {
        Self {
            module_id,
            variable_id: variable_id.to_string(),
            element_index: Some(index),
        }
    }

    /// Rendered as `variable` or `variable[index]`.
    pub fn variable_label(&self) -> String {
        match self.element_index {
            Some(i) => format!("{}[{i}]", self.variable_id),
            None => self.variable_id.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub site: FaultSite,
    pub model: FaultModel,
    pub trigger: Trigger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultPlan {
    pub run_id: String,
    pub seed: u64,
    pub faults: Vec<FaultSpec>,
}

/// Pre/post values around one applied corruption, kept in the trace for
/// propagation analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionRecord {
    pub tick: u64,
    pub module_id: ModuleId,
    pub variable_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element_index: Option<usize>,
    pub pre: serde_json::Value,
    pub post: serde_json::Value,
}

/// XOR the given bit positions into a real's binary representation.
pub fn flip_bits_f64(value: f64, positions: &[u32]) -> f64 {
    let bits = positions
        .iter()
        .fold(value.to_bits(), |b, &p| b ^ (1u64 << (p % 64)));
    f64::from_bits(bits)
}

pub fn flip_bits_i64(value: i64, positions: &[u32]) -> i64 {
    let bits = positions
        .iter()
        .fold(value as u64, |b, &p| b ^ (1u64 << (p % 64)));
    bits as i64
}

/// Draw `n_bits` distinct positions in [0, 64). Two flips always pick two
/// different bits; a repeated position would be a no-op masquerading as an
/// injection.
pub fn draw_bit_positions(n_bits: u8, rng: &mut RunRng) -> Vec<u32> {
    let first = rng.random_range(0..64u32);
    match n_bits {
        1 => vec![first],
        _ => {
            let mut second = rng.random_range(0..64u32);
            while second == first {
                second = rng.random_range(0..64u32);
            }
            vec![first, second]
        }
    }
}

/// Flip 1 or 2 random bits of a real's 64-bit pattern. NaN/Inf patterns are
/// returned as-is; they exercise the crash paths.
pub fn apply_bitflip_f64(value: f64, n_bits: u8, rng: &mut RunRng) -> f64 {
    flip_bits_f64(value, &draw_bit_positions(n_bits, rng))
}

pub fn apply_bitflip_i64(value: i64, n_bits: u8, rng: &mut RunRng) -> i64 {
    flip_bits_i64(value, &draw_bit_positions(n_bits, rng))
}

/// Value-level corruption of a real. `Disappear` is module-level and never
/// reaches here; frame models have their own path.
pub fn apply_sli_f64(value: f64, model: &FaultModel, rng: &mut RunRng) -> f64 {
    match model {
        FaultModel::Random { lower, upper } => {
            if upper > lower {
                rng.random_range(*lower..=*upper)
            } else {
                *lower
            }
        }
        FaultModel::Fixed { value } => *value,
        FaultModel::Scale { ratio } => value * ratio,
        FaultModel::BitFlip { n_bits } => apply_bitflip_f64(value, *n_bits, rng),
        _ => value,
    }
}

pub fn apply_sli_i64(value: i64, model: &FaultModel, rng: &mut RunRng) -> i64 {
    match model {
        FaultModel::Random { lower, upper } => {
            let x = if upper > lower {
                rng.random_range(*lower..=*upper)
            } else {
                *lower
            };
            x.round() as i64
        }
        FaultModel::Fixed { value } => value.round() as i64,
        FaultModel::Scale { ratio } => (value as f64 * ratio).round() as i64,
        FaultModel::BitFlip { n_bits } => apply_bitflip_i64(value, *n_bits, rng),
        _ => value,
    }
}

fn random_class(rng: &mut RunRng) -> ObjectClass {
    ObjectClass::VARIANTS[rng.random_range(0..ObjectClass::VARIANTS.len())]
}

fn random_lane_type(rng: &mut RunRng) -> LaneType {
    LaneType::VARIANTS[rng.random_range(0..LaneType::VARIANTS.len())]
}

/// The production [`PipelineHooks`] implementation: applies the plan's
/// active faults at the matching boundaries and logs pre/post values.
pub struct Injector<'p> {
    faults: &'p [FaultSpec],
    pub injections: Vec<InjectionRecord>,
}

impl<'p> Injector<'p> {
    pub fn new(plan: &'p FaultPlan) -> Self {
        Self {
            faults: &plan.faults,
            injections: Vec::new(),
        }
    }

    fn log(&mut self, tick: u64, site: &FaultSite, pre: serde_json::Value, post: serde_json::Value) {
        self.injections.push(InjectionRecord {
            tick,
            module_id: site.module_id,
            variable_id: site.variable_id.clone(),
            element_index: site.element_index,
            pre,
            post,
        });
    }

    fn corrupt_f64(&mut self, tick: u64, site: &FaultSite, model: &FaultModel, v: &mut f64, rng: &mut RunRng) {
        let pre = *v;
        *v = apply_sli_f64(pre, model, rng);
        self.log(tick, site, json_f64(pre), json_f64(*v));
    }

    fn corrupt_i64(&mut self, tick: u64, site: &FaultSite, model: &FaultModel, v: &mut i64, rng: &mut RunRng) {
        let pre = *v;
        *v = apply_sli_i64(pre, model, rng);
        self.log(tick, site, (pre).into(), (*v).into());
    }

    fn corrupt_frame(&mut self, tick: u64, site: &FaultSite, model: &FaultModel, frame: &mut SensorFrame, rng: &mut RunRng) {
        let visible_before = frame.objects.iter().filter(|o| !o.occluded).count();
        match model {
            FaultModel::GaussianNoise { sigma } if *sigma > 0.0 => {
                let n = Normal::new(0.0, *sigma).expect("sigma > 0");
                for o in &mut frame.objects {
                    o.ds += n.sample(rng);
                    o.dlat += n.sample(rng);
                }
            }
            FaultModel::Occlusion { from, to } => {
                for o in &mut frame.objects {
                    if o.ds >= *from && o.ds <= *to {
                        o.occluded = true;
                    }
                }
                frame.lane_samples.retain(|&(x, _)| !(x >= *from && x <= *to));
            }
            _ => {}
        }
        let visible_after = frame.objects.iter().filter(|o| !o.occluded).count();
        self.log(
            tick,
            site,
            (visible_before as u64).into(),
            (visible_after as u64).into(),
        );
    }

    fn list_slot(list: &mut [(f64, f64)], flat_index: usize) -> Option<&mut f64> {
        let pair = list.get_mut(flat_index / 2)?;
        Some(if flat_index.is_multiple_of(2) {
            &mut pair.0
        } else {
            &mut pair.1
        })
    }
}

fn json_f64(v: f64) -> serde_json::Value {
    if v.is_finite() {
        v.into()
    } else {
        // Mirrors the record encoding for non-finite reals.
        format!("{v}").into()
    }
}

impl PipelineHooks for Injector<'_> {
    fn intercept(
        &mut self,
        tick: u64,
        mut fragment: Fragment<'_>,
        rng: &mut RunRng,
        budget: &mut TickBudget,
    ) -> Result<Delivery, Hang> {
        let module = fragment.module();
        let mut delivery = Delivery::Deliver;
        let faults = self.faults;
        for spec in faults {
            if spec.site.module_id != module || !spec.trigger.fires_at(tick) {
                continue;
            }
            budget.charge(1)?;
            let site = spec.site.clone();
            let var = site.variable_id.as_str();
            let elem = site.element_index;
            match &mut fragment {
                Fragment::SensorFrame(frame) => match var {
                    "frame_id" => self.corrupt_i64(tick, &site, &spec.model, &mut frame.frame_id, rng),
                    "camera_frame" => self.corrupt_frame(tick, &site, &spec.model, frame, rng),
                    _ => {}
                },
                Fragment::ObjectPerception(out) => match (var, &spec.model) {
                    ("output", FaultModel::Disappear) => {
                        delivery = Delivery::Withhold;
                        self.log(tick, &site, serde_json::Value::Null, serde_json::Value::Null);
                    }
                    ("num_detected_objects", _) => {
                        self.corrupt_i64(tick, &site, &spec.model, &mut out.num_detected_objects, rng)
                    }
                    ("object_class", _) => {
                        if let Some(c) = elem.and_then(|i| out.object_class.get_mut(i)) {
                            let pre = *c;
                            if let FaultModel::Random { .. } = spec.model {
                                *c = random_class(rng);
                            }
                            self.log(tick, &site, pre.as_str().into(), c.as_str().into());
                        }
                    }
                    ("object_coordinates", _) => {
                        if let Some(v) = elem.and_then(|i| Self::list_slot(&mut out.object_coordinates, i)) {
                            let mut x = *v;
                            self.corrupt_f64(tick, &site, &spec.model, &mut x, rng);
                            *v = x;
                        }
                    }
                    ("bounding_box", _) => {
                        if let Some(v) = elem.and_then(|i| Self::list_slot(&mut out.bounding_box, i)) {
                            let mut x = *v;
                            self.corrupt_f64(tick, &site, &spec.model, &mut x, rng);
                            *v = x;
                        }
                    }
                    _ => {}
                },
                Fragment::PathPerception(out) => match (var, &spec.model) {
                    ("output", FaultModel::Disappear) => {
                        delivery = Delivery::Withhold;
                        self.log(tick, &site, serde_json::Value::Null, serde_json::Value::Null);
                    }
                    ("lane_type", _) => {
                        let pre = out.lane_type;
                        if let FaultModel::Random { .. } = spec.model {
                            out.lane_type = random_lane_type(rng);
                        }
                        self.log(tick, &site, pre.as_str().into(), out.lane_type.as_str().into());
                    }
                    ("lane_c0", _) => self.corrupt_f64(tick, &site, &spec.model, &mut out.c0, rng),
                    ("lane_c1", _) => self.corrupt_f64(tick, &site, &spec.model, &mut out.c1, rng),
                    ("lane_c2", _) => self.corrupt_f64(tick, &site, &spec.model, &mut out.c2, rng),
                    _ => {}
                },
                Fragment::Localization(out) => match (var, &spec.model) {
                    ("output", FaultModel::Disappear) => {
                        delivery = Delivery::Withhold;
                        self.log(tick, &site, serde_json::Value::Null, serde_json::Value::Null);
                    }
                    ("est_s", _) => self.corrupt_f64(tick, &site, &spec.model, &mut out.est_s, rng),
                    ("est_lateral", _) => self.corrupt_f64(tick, &site, &spec.model, &mut out.est_lateral, rng),
                    ("est_heading", _) => self.corrupt_f64(tick, &site, &spec.model, &mut out.est_heading, rng),
                    ("est_speed", _) => self.corrupt_f64(tick, &site, &spec.model, &mut out.est_speed, rng),
                    _ => {}
                },
                Fragment::LeadGap(gap) => {
                    if var == "lead_gap" {
                        self.corrupt_f64(tick, &site, &spec.model, gap, rng);
                    }
                }
                Fragment::Plan(out) => match (var, &spec.model) {
                    ("output", FaultModel::Disappear) => {
                        delivery = Delivery::Withhold;
                        self.log(tick, &site, serde_json::Value::Null, serde_json::Value::Null);
                    }
                    ("target_speed", _) => {
                        self.corrupt_f64(tick, &site, &spec.model, &mut out.target_speed, rng)
                    }
                    _ => {}
                },
                Fragment::PidInputs { measured, target } => match var {
                    "pid_measured_value" => self.corrupt_f64(tick, &site, &spec.model, measured, rng),
                    "pid_target_value" => self.corrupt_f64(tick, &site, &spec.model, target, rng),
                    _ => {}
                },
                Fragment::PidOutput(out) => match (var, &spec.model) {
                    ("output", FaultModel::Disappear) => {
                        delivery = Delivery::Withhold;
                        self.log(tick, &site, serde_json::Value::Null, serde_json::Value::Null);
                    }
                    ("pid_output", _) => self.corrupt_f64(tick, &site, &spec.model, out, rng),
                    _ => {}
                },
                Fragment::Actuation { throttle, brake, steering } => match (var, &spec.model) {
                    ("output", FaultModel::Disappear) => {
                        delivery = Delivery::Withhold;
                        self.log(tick, &site, serde_json::Value::Null, serde_json::Value::Null);
                    }
                    ("throttle", _) => self.corrupt_f64(tick, &site, &spec.model, throttle, rng),
                    ("brake", _) => self.corrupt_f64(tick, &site, &spec.model, brake, rng),
                    ("steering", _) => self.corrupt_f64(tick, &site, &spec.model, steering, rng),
                    _ => {}
                },
            }
        }
        Ok(delivery)
    }
}
