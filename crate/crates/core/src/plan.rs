//! Workload profiling and fault-plan generation.
//!
//! A profiling run enumerates every (module, variable[, element]) the
//! pipeline exposes, with the ticks each site was live. Plans then draw
//! sites uniformly from the eligible set and trigger ticks uniformly from
//! the site's live ticks, so the campaign's marginal site distribution is
//! uniform by construction.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::fault::{FaultModel, FaultPlan, FaultSite, FaultSpec, Trigger};
use crate::pipeline::ModuleId;
use crate::record::MonitoredRecord;
use crate::rng::{derive_seed, rng_from_seed, stream, RunRng};

/// Offered scale ratios when the config does not pin one.
pub const SCALE_RATIOS: [f64; 3] = [0.5, 1.5, 10.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Real,
    Int,
    Enum,
    Frame,
    Output,
}

/// Static catalog of injectable variables: (value kind, is-list).
/// `output` is the module-level pseudo-variable targeted by `disappear`.
pub fn variable_kind(module: ModuleId, variable: &str) -> Option<(ValueKind, bool)> {
    use ModuleId::*;
    let decl = match (module, variable) {
        (Sense, "frame_id") => (ValueKind::Int, false),
        (Sense, "camera_frame") => (ValueKind::Frame, false),
        (ObjectPerception, "num_detected_objects") => (ValueKind::Int, false),
        (ObjectPerception, "object_class") => (ValueKind::Enum, true),
        (ObjectPerception, "object_coordinates" | "bounding_box") => (ValueKind::Real, true),
        (PathPerception, "lane_type") => (ValueKind::Enum, false),
        (PathPerception, "lane_c0" | "lane_c1" | "lane_c2") => (ValueKind::Real, false),
        (Localization, "est_s" | "est_lateral" | "est_heading" | "est_speed") => {
            (ValueKind::Real, false)
        }
        (Planning, "target_speed" | "lead_gap") => (ValueKind::Real, false),
        (Control, "pid_measured_value" | "pid_target_value" | "pid_output") => {
            (ValueKind::Real, false)
        }
        (Actuation, "throttle" | "brake" | "steering") => (ValueKind::Real, false),
        (m, "output") if m != Sense => (ValueKind::Output, false),
        _ => return None,
    };
    Some(decl)
}

pub fn model_compatible(model: &FaultModel, kind: ValueKind) -> bool {
    match model {
        FaultModel::Random { .. } => {
            matches!(kind, ValueKind::Real | ValueKind::Int | ValueKind::Enum)
        }
        FaultModel::Fixed { .. } | FaultModel::Scale { .. } | FaultModel::BitFlip { .. } => {
            matches!(kind, ValueKind::Real | ValueKind::Int)
        }
        FaultModel::Disappear => kind == ValueKind::Output,
        FaultModel::GaussianNoise { .. } | FaultModel::Occlusion { .. } => kind == ValueKind::Frame,
    }
}

/// Structural plan validation. Model/kind mismatches are rejected here, at
/// plan time, never at runtime.
pub fn validate_plan(plan: &FaultPlan) -> Result<()> {
    if plan.faults.is_empty() {
        return Err(Error::PlanInvalid(format!(
            "{}: injected plans carry at least one fault",
            plan.run_id
        )));
    }
    for fault in &plan.faults {
        let site = &fault.site;
        let label = format!("{}/{}", site.module_id, site.variable_label());
        let Some((kind, is_list)) = variable_kind(site.module_id, &site.variable_id) else {
            return Err(Error::PlanInvalid(format!("{label}: unknown fault site")));
        };
        if is_list != site.element_index.is_some() {
            return Err(Error::PlanInvalid(format!(
                "{label}: element_index is required for list variables and only for them"
            )));
        }
        if !model_compatible(&fault.model, kind) {
            return Err(Error::PlanInvalid(format!(
                "{label}: model {} not applicable to {kind:?}",
                fault.model.tag()
            )));
        }
        match &fault.model {
            FaultModel::BitFlip { n_bits } if !matches!(n_bits, 1 | 2) => {
                return Err(Error::PlanInvalid(format!("{label}: n_bits must be 1 or 2")));
            }
            FaultModel::Random { lower, upper } if !(lower.is_finite() && upper.is_finite() && lower <= upper) => {
                return Err(Error::PlanInvalid(format!("{label}: bad random bounds")));
            }
            FaultModel::Scale { ratio } if !ratio.is_finite() => {
                return Err(Error::PlanInvalid(format!("{label}: scale ratio must be finite")));
            }
            FaultModel::GaussianNoise { sigma } if !(sigma.is_finite() && *sigma >= 0.0) => {
                return Err(Error::PlanInvalid(format!("{label}: bad sigma")));
            }
            FaultModel::Occlusion { from, to } if !(from.is_finite() && to.is_finite() && from <= to) => {
                return Err(Error::PlanInvalid(format!("{label}: bad occlusion interval")));
            }
            _ => {}
        }
        if let Trigger::Intermittent { ticks } = &fault.trigger {
            if ticks.is_empty() {
                return Err(Error::PlanInvalid(format!("{label}: empty intermittent tick set")));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteProfile {
    pub site: FaultSite,
    pub kind: ValueKind,
    pub live_ticks: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadProfile {
    pub n_ticks: u64,
    pub sites: Vec<SiteProfile>,
}

/// Enumerate every observed site and its live ticks from a fault-free run's
/// records. Sites that were never live do not appear.
pub fn build_profile(records: &[MonitoredRecord]) -> WorkloadProfile {
    use ModuleId::*;
    let mut live: BTreeMap<FaultSite, Vec<u64>> = BTreeMap::new();
    for (tick, rec) in records.iter().enumerate() {
        let t = tick as u64;
        let mut add = |site: FaultSite| live.entry(site).or_default().push(t);
        add(FaultSite::scalar(Sense, "frame_id"));
        add(FaultSite::scalar(Sense, "camera_frame"));
        add(FaultSite::scalar(ObjectPerception, "num_detected_objects"));
        for i in 0..rec.object_class.len() {
            add(FaultSite::element(ObjectPerception, "object_class", i));
        }
        for i in 0..rec.object_coordinates.len() * 2 {
            add(FaultSite::element(ObjectPerception, "object_coordinates", i));
        }
        for i in 0..rec.bounding_box.len() * 2 {
            add(FaultSite::element(ObjectPerception, "bounding_box", i));
        }
        add(FaultSite::scalar(PathPerception, "lane_type"));
        add(FaultSite::scalar(PathPerception, "lane_c0"));
        add(FaultSite::scalar(PathPerception, "lane_c1"));
        add(FaultSite::scalar(PathPerception, "lane_c2"));
        add(FaultSite::scalar(Localization, "est_s"));
        add(FaultSite::scalar(Localization, "est_lateral"));
        add(FaultSite::scalar(Localization, "est_heading"));
        add(FaultSite::scalar(Localization, "est_speed"));
        add(FaultSite::scalar(Planning, "target_speed"));
        add(FaultSite::scalar(Planning, "lead_gap"));
        add(FaultSite::scalar(Control, "pid_measured_value"));
        add(FaultSite::scalar(Control, "pid_target_value"));
        add(FaultSite::scalar(Control, "pid_output"));
        add(FaultSite::scalar(Actuation, "throttle"));
        add(FaultSite::scalar(Actuation, "brake"));
        add(FaultSite::scalar(Actuation, "steering"));
        for m in [ObjectPerception, PathPerception, Localization, Planning, Control, Actuation] {
            add(FaultSite::scalar(m, "output"));
        }
    }
    let sites = live
        .into_iter()
        .map(|(site, live_ticks)| {
            let (kind, _) = variable_kind(site.module_id, &site.variable_id)
                .expect("profile only emits cataloged sites");
            SiteProfile {
                site,
                kind,
                live_ticks,
            }
        })
        .collect();
    WorkloadProfile {
        n_ticks: records.len() as u64,
        sites,
    }
}

/// Which fault model a campaign injects, with optional parameters that fall
/// back to the documented defaults at plan time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelSelector {
    Random {
        #[serde(default)]
        lower: Option<f64>,
        #[serde(default)]
        upper: Option<f64>,
    },
    Fixed {
        value: f64,
    },
    Scale {
        /// One of [`SCALE_RATIOS`] is drawn per fault when absent.
        #[serde(default)]
        ratio: Option<f64>,
    },
    Disappear,
    #[serde(rename = "bitflip")]
    BitFlip {
        #[serde(default)]
        n_bits: Option<u8>,
    },
    GaussianNoise {
        sigma: f64,
    },
    Occlusion {
        from: f64,
        to: f64,
    },
}

impl ModelSelector {
    /// Instantiate a concrete model. Random bounds default to
    /// [0, speed_limit] per the workload's road rules.
    pub fn instantiate(&self, speed_limit: f64, rng: &mut RunRng) -> FaultModel {
        match self {
            ModelSelector::Random { lower, upper } => FaultModel::Random {
                lower: lower.unwrap_or(0.0),
                upper: upper.unwrap_or(speed_limit),
            },
            ModelSelector::Fixed { value } => FaultModel::Fixed { value: *value },
            ModelSelector::Scale { ratio } => FaultModel::Scale {
                ratio: ratio.unwrap_or_else(|| SCALE_RATIOS[rng.random_range(0..SCALE_RATIOS.len())]),
            },
            ModelSelector::Disappear => FaultModel::Disappear,
            ModelSelector::BitFlip { n_bits } => FaultModel::BitFlip {
                n_bits: n_bits.unwrap_or(1),
            },
            ModelSelector::GaussianNoise { sigma } => FaultModel::GaussianNoise { sigma: *sigma },
            ModelSelector::Occlusion { from, to } => FaultModel::Occlusion {
                from: *from,
                to: *to,
            },
        }
    }

    fn probe(&self) -> FaultModel {
        // A representative instance for compatibility filtering; parameters
        // do not affect kind compatibility.
        match self {
            ModelSelector::Random { .. } => FaultModel::Random { lower: 0.0, upper: 1.0 },
            ModelSelector::Fixed { value } => FaultModel::Fixed { value: *value },
            ModelSelector::Scale { .. } => FaultModel::Scale { ratio: 1.0 },
            ModelSelector::Disappear => FaultModel::Disappear,
            ModelSelector::BitFlip { .. } => FaultModel::BitFlip { n_bits: 1 },
            ModelSelector::GaussianNoise { sigma } => FaultModel::GaussianNoise { sigma: *sigma },
            ModelSelector::Occlusion { from, to } => FaultModel::Occlusion { from: *from, to: *to },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let issue = match self {
            ModelSelector::Random { lower: Some(l), upper: Some(u) } if l > u => {
                Some("random: lower > upper".to_string())
            }
            ModelSelector::BitFlip { n_bits: Some(n) } if !matches!(n, 1 | 2) => {
                Some(format!("bitflip: n_bits must be 1 or 2, got {n}"))
            }
            ModelSelector::Scale { ratio: Some(r) } if !r.is_finite() => {
                Some("scale: ratio must be finite".to_string())
            }
            ModelSelector::GaussianNoise { sigma } if !(sigma.is_finite() && *sigma >= 0.0) => {
                Some("gaussian_noise: sigma must be >= 0".to_string())
            }
            ModelSelector::Occlusion { from, to } if from > to => {
                Some("occlusion: from > to".to_string())
            }
            _ => None,
        };
        match issue {
            Some(msg) => Err(Error::ConfigInvalid(msg)),
            None => Ok(()),
        }
    }
}

/// Trigger policy for generated plans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TriggerSelector {
    #[default]
    Transient,
    Intermittent {
        #[serde(default = "default_burst")]
        burst: u64,
    },
    Permanent,
}

fn default_burst() -> u64 {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SiteFilter {
    #[serde(default)]
    pub modules: Option<Vec<ModuleId>>,
    #[serde(default)]
    pub variables: Option<Vec<String>>,
}

impl SiteFilter {
    pub fn admits(&self, site: &FaultSite) -> bool {
        self.modules
            .as_ref()
            .is_none_or(|m| m.contains(&site.module_id))
            && self
                .variables
                .as_ref()
                .is_none_or(|v| v.contains(&site.variable_id))
    }
}

pub struct PlanRequest<'a> {
    pub num_runs: u32,
    pub faults_per_run: u32,
    pub model: &'a ModelSelector,
    pub trigger: &'a TriggerSelector,
    pub site_filter: Option<&'a SiteFilter>,
    pub master_seed: u64,
    pub speed_limit: f64,
}

/// Draw one fault plan per injected run. Deterministic given the profile and
/// the request; run seeds are derived from the master seed by index.
pub fn generate_fault_plan(profile: &WorkloadProfile, req: &PlanRequest) -> Result<Vec<FaultPlan>> {
    let probe = req.model.probe();
    let eligible: Vec<&SiteProfile> = profile
        .sites
        .iter()
        .filter(|sp| {
            !sp.live_ticks.is_empty()
                && model_compatible(&probe, sp.kind)
                && req.site_filter.is_none_or(|f| f.admits(&sp.site))
        })
        .collect();
    if eligible.is_empty() {
        return Err(Error::EmptyPlan);
    }

    let mut rng = rng_from_seed(derive_seed(req.master_seed, stream::PLAN));
    let mut plans = Vec::with_capacity(req.num_runs as usize);
    for i in 0..req.num_runs {
        let faults = (0..req.faults_per_run)
            .map(|_| {
                let sp = eligible[rng.random_range(0..eligible.len())];
                let at = rng.random_range(0..sp.live_ticks.len());
                let trigger = match req.trigger {
                    TriggerSelector::Transient => Trigger::Transient {
                        tick: sp.live_ticks[at],
                    },
                    TriggerSelector::Permanent => Trigger::Permanent {
                        from_tick: sp.live_ticks[at],
                    },
                    TriggerSelector::Intermittent { burst } => {
                        let end = (at + *burst as usize).min(sp.live_ticks.len());
                        Trigger::Intermittent {
                            ticks: sp.live_ticks[at..end].to_vec(),
                        }
                    }
                };
                FaultSpec {
                    site: sp.site.clone(),
                    model: req.model.instantiate(req.speed_limit, &mut rng),
                    trigger,
                }
            })
            .collect();
        let plan = FaultPlan {
            run_id: format!("i{i:05}"),
            seed: derive_seed(req.master_seed, stream::injected(i)),
            faults,
        };
        validate_plan(&plan)?;
        plans.push(plan);
    }
    Ok(plans)
}
