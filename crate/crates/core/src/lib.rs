//! Fault-injection campaign framework for a closed-loop driving pipeline.
//!
//! The pieces, bottom-up: a deterministic kinematic highway simulator
//! ([`world`]), a modular sense-to-actuation pipeline whose every
//! inter-module variable is an injectable, monitored site ([`pipeline`]),
//! fault models and boundary interception ([`fault`]), workload profiling
//! and plan generation ([`plan`]), lockstep campaign orchestration
//! ([`campaign`]), golden-envelope outcome classification and safety
//! metrics ([`oracle`]), and log analysis ([`report`]).

// Validation uses `!(x > 0.0)` on purpose: unlike `x <= 0.0` it also rejects
// NaN inputs.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod campaign;
pub mod error;
pub mod fault;
pub mod log;
pub mod oracle;
pub mod pipeline;
pub mod plan;
pub mod record;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod watchdog;
pub mod world;

pub use campaign::{
    execute_campaign, profile_workload, run_golden_set, run_single, CampaignConfig, CampaignMeta,
    CampaignResult, RunKind, RunSetup, RunTrace, Termination, WatchdogSelector, WorldTick,
};
pub use error::{Error, Result};
pub use fault::{FaultModel, FaultPlan, FaultSite, FaultSpec, InjectionRecord, Injector, Trigger};
pub use oracle::{
    build_envelope, classify_run, collision_distance, is_outlier, stopping_distance,
    GoldenEnvelope, OutcomeLabel, RunOutcome, SafetyParams, StoppingDistance,
};
pub use pipeline::{ModuleId, Pipeline, PipelineParams};
pub use plan::{
    build_profile, generate_fault_plan, ModelSelector, PlanRequest, SiteFilter, TriggerSelector,
    WorkloadProfile,
};
pub use record::MonitoredRecord;
pub use scenario::{
    ActorSpec, Behavior, LaneGeometry, ScenarioSpec, TruncNormalParam, SPEED_LIMIT_65MPH,
};
pub use world::{ActuationCommand, GroundTruth, VehicleState, World, WorldState};
