//! Golden envelopes, outcome classification, and safety metrics.
//!
//! Error labeling is scenario-specific: per-variable, per-tick IQR fences
//! widened by the observed golden range decide whether a monitored value is
//! erroneous. Runs then classify through the fault-manifestation ontology
//! (masked / DUE / SDC / actuation error / breaches / accident), and the
//! stopping-distance law `d_s = d_p + d_r + d_b` drives the safety-envelope
//! check.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::campaign::{RunTrace, Termination, WorldTick};
use crate::error::{Error, Result};
use crate::record::{Monitored, ACTUATION_VARIABLES};
use crate::scenario::LaneGeometry;
use crate::world::{VehicleState, GAP_SENTINEL};

/// Tukey fence multiplier.
pub const IQR_K: f64 = 1.5;
/// Constant-velocity trajectory extrapolation horizon (s).
pub const TRAJECTORY_HORIZON_S: f64 = 10.0;
/// Average perception time of an alert human driver (s).
pub const HUMAN_PERCEPTION_TIME_S: f64 = 1.75;
/// Human brake reaction time (s); the documented range is 0.75 to 1.0.
pub const HUMAN_REACTION_TIME_S: f64 = 1.0;
/// Braking deceleration calibrated to 64 m from 24.5872 m/s.
pub const BRAKE_DECEL: f64 = crate::world::B_MAX;
/// Lane-centering breach threshold (m).
pub const LANE_CENTER_THRESHOLD_M: f64 = 0.5;
/// Speed-limit slack before a traffic violation is flagged (m/s).
pub const SPEED_TOLERANCE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyParams {
    pub perception_time: f64,
    pub reaction_time: f64,
    pub brake_decel: f64,
    pub lane_center_threshold: f64,
}

impl SafetyParams {
    /// Machine driver: worst-case recognition takes one processed frame.
    pub fn ai(fps: f64) -> Self {
        Self {
            perception_time: 1.0 / fps,
            reaction_time: HUMAN_REACTION_TIME_S,
            brake_decel: BRAKE_DECEL,
            lane_center_threshold: LANE_CENTER_THRESHOLD_M,
        }
    }

    pub fn human() -> Self {
        Self {
            perception_time: HUMAN_PERCEPTION_TIME_S,
            reaction_time: HUMAN_REACTION_TIME_S,
            brake_decel: BRAKE_DECEL,
            lane_center_threshold: LANE_CENTER_THRESHOLD_M,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingDistance {
    pub d_p: f64,
    pub d_r: f64,
    pub d_b: f64,
    pub d_s: f64,
}

/// `d_s = d_p + d_r + d_b`: perception distance, recognition distance and
/// braking distance at speed `v`.
pub fn stopping_distance(v: f64, params: &SafetyParams) -> StoppingDistance {
    let d_p = v * params.perception_time;
    let d_r = v * params.reaction_time;
    let d_b = v * v / (2.0 * params.brake_decel);
    StoppingDistance {
        d_p,
        d_r,
        d_b,
        d_s: d_p + d_r + d_b,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeEntry {
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VarKey {
    pub variable: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element: Option<usize>,
}

/// Per-variable, per-tick fences plus observed variant sets for categorical
/// variables, built from completed golden traces only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenEnvelope {
    pub n_ticks: usize,
    pub numeric: BTreeMap<VarKey, Vec<Option<EnvelopeEntry>>>,
    pub categorical: BTreeMap<String, BTreeSet<String>>,
}

/// Linear-interpolation quantile: h = (n-1)p, value = x[⌊h⌋] + (h-⌊h⌋)(x[⌈h⌉]-x[⌊h⌋]).
pub fn interpolated_quantile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn build_envelope(golden: &[RunTrace]) -> Result<GoldenEnvelope> {
    if golden.len() < 2 {
        return Err(Error::MisalignedTraces(format!(
            "envelope needs at least 2 golden traces, got {}",
            golden.len()
        )));
    }
    let n_ticks = golden[0].records.len();
    for trace in golden {
        if trace.termination != Termination::Completed {
            return Err(Error::MisalignedTraces(format!(
                "golden trace {} did not complete",
                trace.run_id
            )));
        }
        if trace.records.len() != n_ticks {
            return Err(Error::MisalignedTraces(format!(
                "golden trace {} has {} ticks, expected {n_ticks}",
                trace.run_id,
                trace.records.len()
            )));
        }
    }

    let mut samples: BTreeMap<VarKey, Vec<Vec<f64>>> = BTreeMap::new();
    let mut categorical: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for trace in golden {
        for (tick, rec) in trace.records.iter().enumerate() {
            rec.visit_monitored(|variable, element, m| match m {
                Monitored::Num(v) => {
                    samples
                        .entry(VarKey {
                            variable: variable.to_string(),
                            element,
                        })
                        .or_insert_with(|| vec![Vec::new(); n_ticks])[tick]
                        .push(v);
                }
                Monitored::Cat(s) => {
                    categorical
                        .entry(variable.to_string())
                        .or_default()
                        .insert(s.to_string());
                }
            });
        }
    }

    let numeric = samples
        .into_iter()
        .map(|(key, per_tick)| {
            let entries = per_tick
                .into_iter()
                .map(|mut sample| {
                    if sample.is_empty() {
                        return None;
                    }
                    sample.sort_by(f64::total_cmp);
                    Some(EnvelopeEntry {
                        q1: interpolated_quantile(&sample, 0.25),
                        q3: interpolated_quantile(&sample, 0.75),
                        min: sample[0],
                        max: sample[sample.len() - 1],
                    })
                })
                .collect();
            (key, entries)
        })
        .collect();

    Ok(GoldenEnvelope {
        n_ticks,
        numeric,
        categorical,
    })
}

/// Tukey fence widened by the observed golden range; non-finite values are
/// always outliers, and a value seen in any golden run never is.
pub fn is_outlier(value: f64, entry: &EnvelopeEntry, k: f64) -> bool {
    if !value.is_finite() {
        return true;
    }
    let iqr = entry.q3 - entry.q1;
    let lower = (entry.q1 - k * iqr).min(entry.min);
    let upper = (entry.q3 + k * iqr).max(entry.max);
    value < lower || value > upper
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeLabel {
    Masked,
    DueHang,
    DueCrash,
    Sdc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstDeviation {
    pub variable_id: String,
    pub tick: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub run_id: String,
    pub activated: bool,
    pub label: OutcomeLabel,
    pub actuation_error: bool,
    pub safety_envelope_breach: bool,
    pub lane_centering_breach: bool,
    pub traffic_violation: bool,
    pub accident: bool,
    pub first_deviation: Option<FirstDeviation>,
    pub min_safety_margin: f64,
}

/// Ego distance traveled until its rectangle first overlaps the object's
/// under constant-velocity extrapolation of both states, or +inf when no
/// overlap happens within the horizon.
pub fn collision_distance(
    ego: &VehicleState,
    ego_dims: (f64, f64),
    obj: &VehicleState,
    obj_dims: (f64, f64),
    horizon: f64,
) -> f64 {
    let ds0 = obj.s - ego.s;
    let dlat0 = obj.lateral - ego.lateral;
    let rel_vs = obj.speed * obj.heading.cos() - ego.speed * ego.heading.cos();
    let rel_vl = obj.speed * obj.heading.sin() - ego.speed * ego.heading.sin();
    let half_len = (ego_dims.0 + obj_dims.0) / 2.0;
    let half_wid = (ego_dims.1 + obj_dims.1) / 2.0;

    // Times at which |offset + rate * t| < bound.
    let window = |offset: f64, rate: f64, bound: f64| -> Option<(f64, f64)> {
        if rate == 0.0 {
            if offset.abs() < bound {
                Some((f64::NEG_INFINITY, f64::INFINITY))
            } else {
                None
            }
        } else {
            let t1 = (-bound - offset) / rate;
            let t2 = (bound - offset) / rate;
            Some((t1.min(t2), t1.max(t2)))
        }
    };

    let Some((s_lo, s_hi)) = window(ds0, rel_vs, half_len) else {
        return f64::INFINITY;
    };
    let Some((l_lo, l_hi)) = window(dlat0, rel_vl, half_wid) else {
        return f64::INFINITY;
    };
    let t_start = s_lo.max(l_lo).max(0.0);
    let t_end = s_hi.min(l_hi).min(horizon);
    if t_start < t_end {
        ego.speed * t_start
    } else {
        f64::INFINITY
    }
}

fn ego_state(wt: &WorldTick) -> VehicleState {
    VehicleState {
        s: 0.0,
        lateral: 0.0,
        heading: wt.ego_heading,
        speed: wt.ego_speed,
        accel: 0.0,
    }
}

/// Breach iff the collision distance to any tracked object is below the
/// Eq.-1 stopping distance at the ego's current speed.
pub fn check_safety_envelope(wt: &WorldTick, ego_dims: (f64, f64), params: &SafetyParams) -> bool {
    let d_s = stopping_distance(wt.ego_speed, params).d_s;
    let ego = ego_state(wt);
    wt.actors.iter().any(|a| {
        let obj = VehicleState {
            s: a.ds,
            lateral: a.dlat,
            heading: 0.0,
            speed: a.speed,
            accel: 0.0,
        };
        collision_distance(&ego, ego_dims, &obj, (a.length, a.width), TRAJECTORY_HORIZON_S) < d_s
    })
}

/// True iff the ego ever strays strictly more than the threshold from the
/// lane center.
pub fn check_lane_centering(trace: &RunTrace, threshold: f64) -> bool {
    trace
        .world_summary
        .iter()
        .any(|wt| wt.ego_lateral.abs() > threshold)
}

/// Speeding past the limit (with tolerance) or crossing a lane boundary.
pub fn check_traffic_violation(trace: &RunTrace, lanes: &LaneGeometry) -> bool {
    trace.world_summary.iter().any(|wt| {
        wt.ego_speed > lanes.speed_limit + SPEED_TOLERANCE
            || wt.ego_lateral.abs() > lanes.lane_width / 2.0
    })
}

/// Classify a run through the fault-manifestation ontology.
///
/// Hang/crash terminations are DUE; otherwise any monitored outlier against
/// the envelope makes the run SDC, and none makes it masked. An SDC whose
/// deviation reaches throttle/brake/steering/pid_output is an actuation
/// error. Breach and accident flags are evaluated for actuation-error and
/// DUE runs (a crashed controller is a real hazard) and held false for
/// masked and non-actuation SDC runs so the ontology implications hold;
/// `min_safety_margin` stays unconditional as the raw hazard diagnostic.
pub fn classify_run(
    trace: &RunTrace,
    env: &GoldenEnvelope,
    params: &SafetyParams,
    lanes: &LaneGeometry,
) -> RunOutcome {
    let entries: HashMap<(&str, Option<usize>), &Vec<Option<EnvelopeEntry>>> = env
        .numeric
        .iter()
        .map(|(k, v)| ((k.variable.as_str(), k.element), v))
        .collect();

    let mut first_deviation: Option<FirstDeviation> = None;
    let mut any_outlier = false;
    let mut actuation_outlier = false;
    for (tick, rec) in trace.records.iter().enumerate() {
        rec.visit_monitored(|variable, element, m| {
            let deviates = match m {
                Monitored::Num(v) => match entries.get(&(variable, element)) {
                    Some(per_tick) => match per_tick.get(tick) {
                        Some(Some(entry)) => is_outlier(v, entry, IQR_K),
                        // Live value where no golden run ever had one.
                        _ => true,
                    },
                    None => true,
                },
                Monitored::Cat(s) => env
                    .categorical
                    .get(variable)
                    .is_none_or(|set| !set.contains(s)),
            };
            if deviates {
                any_outlier = true;
                if ACTUATION_VARIABLES.contains(&variable) {
                    actuation_outlier = true;
                }
                if first_deviation.is_none() {
                    let variable_id = match element {
                        Some(i) => format!("{variable}[{i}]"),
                        None => variable.to_string(),
                    };
                    first_deviation = Some(FirstDeviation {
                        variable_id,
                        tick: tick as u64,
                    });
                }
            }
        });
    }

    let label = match trace.termination {
        Termination::Hang { .. } => OutcomeLabel::DueHang,
        Termination::Crash { .. } => OutcomeLabel::DueCrash,
        Termination::Completed => {
            if any_outlier {
                OutcomeLabel::Sdc
            } else {
                OutcomeLabel::Masked
            }
        }
    };
    let activated = label != OutcomeLabel::Masked;
    let actuation_error = label == OutcomeLabel::Sdc && actuation_outlier;
    let hazard_gate =
        actuation_error || matches!(label, OutcomeLabel::DueHang | OutcomeLabel::DueCrash);

    let ego_dims = (trace.ego_length, trace.ego_width);
    let collided = trace.world_summary.iter().any(|wt| wt.collided);
    let envelope_breached = trace
        .world_summary
        .iter()
        .any(|wt| check_safety_envelope(wt, ego_dims, params));
    let mut min_safety_margin = GAP_SENTINEL;
    for wt in &trace.world_summary {
        let d_s = stopping_distance(wt.ego_speed, params).d_s;
        let ego = ego_state(wt);
        for a in &wt.actors {
            let obj = VehicleState {
                s: a.ds,
                lateral: a.dlat,
                heading: 0.0,
                speed: a.speed,
                accel: 0.0,
            };
            let cd = collision_distance(&ego, ego_dims, &obj, (a.length, a.width), TRAJECTORY_HORIZON_S);
            min_safety_margin = min_safety_margin.min((cd - d_s).min(GAP_SENTINEL));
        }
    }

    let accident = hazard_gate && collided;
    RunOutcome {
        run_id: trace.run_id.clone(),
        activated,
        label,
        actuation_error,
        // A collision is the envelope's ultimate breach even when the
        // stationary-ego geometry makes the distance test degenerate.
        safety_envelope_breach: hazard_gate && (envelope_breached || collided),
        lane_centering_breach: hazard_gate && check_lane_centering(trace, params.lane_center_threshold),
        traffic_violation: hazard_gate && check_traffic_violation(trace, lanes),
        accident,
        first_deviation,
        min_safety_margin,
    }
}
