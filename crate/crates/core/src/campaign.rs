//! Campaign orchestration: golden runs, profiling, plan generation,
//! injected runs and persistence.
//!
//! A run is a lockstep loop between the world and the pipeline with a single
//! per-run random stream, so every run is a pure function of (scenario,
//! seed, plan). Campaign outcomes are therefore a pure function of the
//! config file; parallelism only changes wall-clock time.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::fault::{FaultPlan, InjectionRecord, Injector};
use crate::log::LogWriter;
use crate::oracle::{build_envelope, classify_run, RunOutcome, SafetyParams};
use crate::pipeline::{NoInjection, Pipeline, PipelineFault, PipelineParams};
use crate::plan::{
    build_profile, generate_fault_plan, validate_plan, ModelSelector, PlanRequest, SiteFilter,
    TriggerSelector, WorkloadProfile,
};
use crate::pipeline::ModuleId;
use crate::rng::{derive_seed, rng_from_seed, stream};
use crate::record::MonitoredRecord;
use crate::scenario::ScenarioSpec;
use crate::watchdog::{TickBudget, WatchdogMode, DEFAULT_MAX_OPS};
use crate::world::World;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WatchdogSelector {
    /// Counter-based; hang verdicts are machine-independent.
    #[default]
    Deterministic,
    /// Wall-clock budget of `hang_budget_ms` per tick.
    WallClock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub scenario_path: PathBuf,
    pub num_golden_runs: u32,
    pub num_injected_runs: u32,
    pub faults_per_run: u32,
    #[serde(default)]
    pub site_filter: Option<SiteFilter>,
    pub model: ModelSelector,
    #[serde(default)]
    pub trigger: TriggerSelector,
    pub master_seed: u64,
    /// Overrides the scenario file's dt_s when present.
    #[serde(default)]
    pub dt_s: Option<f64>,
    /// Overrides the scenario file's duration_s when present.
    #[serde(default)]
    pub duration_s: Option<f64>,
    /// Pipeline processing rate for the stopping-distance perception term;
    /// defaults to 1/dt_s.
    #[serde(default)]
    pub fps: Option<f64>,
    pub hang_budget_ms: u64,
    pub max_parallel_runs: u32,
    #[serde(default)]
    pub watchdog: WatchdogSelector,
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::ConfigInvalid(msg.to_string()));
        if self.num_golden_runs < 2 {
            return fail("num_golden_runs must be >= 2");
        }
        if self.num_injected_runs < 1 {
            return fail("num_injected_runs must be >= 1");
        }
        if self.faults_per_run < 1 {
            return fail("faults_per_run must be >= 1");
        }
        if self.max_parallel_runs < 1 {
            return fail("max_parallel_runs must be >= 1");
        }
        if self.hang_budget_ms == 0 {
            return fail("hang_budget_ms must be > 0");
        }
        if let Some(fps) = self.fps {
            if !(fps > 0.0) {
                return fail("fps must be > 0");
            }
        }
        if let Some(dt) = self.dt_s {
            if !(dt > 0.0) {
                return fail("dt_s must be > 0");
            }
        }
        if let Some(d) = self.duration_s {
            if !(d > 0.0) {
                return fail("duration_s must be > 0");
            }
        }
        self.model.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: CampaignConfig =
            serde_json::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::ConfigInvalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Effective per-run parameters after merging config overrides with the
/// scenario file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSetup {
    pub dt: f64,
    pub n_ticks: u64,
    pub sensor_range: f64,
    pub watchdog: WatchdogMode,
    pub params: PipelineParams,
}

impl RunSetup {
    pub fn for_scenario(scenario: &ScenarioSpec) -> Self {
        Self {
            dt: scenario.dt_s,
            n_ticks: scenario.n_ticks(),
            sensor_range: scenario.sensor_range_m,
            watchdog: WatchdogMode::default(),
            params: PipelineParams::for_scenario(scenario),
        }
    }

    pub fn from_config(config: &CampaignConfig, scenario: &ScenarioSpec) -> Result<Self> {
        let dt = config.dt_s.unwrap_or(scenario.dt_s);
        let duration = config.duration_s.unwrap_or(scenario.duration_s);
        let ticks = duration / dt;
        if (ticks - ticks.round()).abs() > 1e-9 {
            return Err(Error::ConfigInvalid(format!(
                "duration_s / dt_s must be integral, got {ticks}"
            )));
        }
        let watchdog = match config.watchdog {
            WatchdogSelector::Deterministic => WatchdogMode::Deterministic {
                max_ops: DEFAULT_MAX_OPS,
            },
            WatchdogSelector::WallClock => WatchdogMode::WallClock {
                budget_ms: config.hang_budget_ms,
            },
        };
        Ok(Self {
            dt,
            n_ticks: ticks.round() as u64,
            sensor_range: scenario.sensor_range_m,
            watchdog,
            params: PipelineParams::for_scenario(scenario),
        })
    }

    pub fn fps(&self, config: &CampaignConfig) -> f64 {
        config.fps.unwrap_or(1.0 / self.dt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Golden,
    Injected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Termination {
    Completed,
    Crash { module: ModuleId, tick: u64 },
    Hang { module: ModuleId, tick: u64 },
}

impl Termination {
    pub fn detail(&self) -> String {
        match self {
            Termination::Completed => "completed".into(),
            Termination::Crash { module, tick } => format!("crash in {module} at tick {tick}"),
            Termination::Hang { module, tick } => format!("hang in {module} at tick {tick}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryActor {
    pub ds: f64,
    pub dlat: f64,
    pub speed: f64,
    pub length: f64,
    pub width: f64,
}

/// Post-step world state for one tick: the vehicle-dynamics side of the
/// trace, aligned with the pipeline record of the same tick index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldTick {
    pub tick: u64,
    pub time_s: f64,
    pub ego_s: f64,
    pub ego_speed: f64,
    pub ego_lateral: f64,
    pub ego_heading: f64,
    pub min_gap: f64,
    pub collided: bool,
    pub actors: Vec<SummaryActor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub run_id: String,
    pub kind: RunKind,
    pub plan: Option<FaultPlan>,
    pub seed: u64,
    pub records: Vec<MonitoredRecord>,
    pub termination: Termination,
    pub world_summary: Vec<WorldTick>,
    pub injections: Vec<InjectionRecord>,
    pub ego_length: f64,
    pub ego_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignMeta {
    pub config: CampaignConfig,
    pub effective_dt_s: f64,
    pub effective_duration_s: f64,
    pub fps: f64,
    pub golden_run_ids: Vec<String>,
    pub injected_run_ids: Vec<String>,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignResult {
    pub meta: CampaignMeta,
    pub outcomes: Vec<RunOutcome>,
}

fn summarize_world(world: &World, tick: u64) -> WorldTick {
    let ego_abs = world.ego_abs_lateral();
    let ego = &world.state.ego;
    WorldTick {
        tick,
        time_s: world.state.time,
        ego_s: ego.s,
        ego_speed: ego.speed,
        ego_lateral: ego.lateral,
        ego_heading: ego.heading,
        min_gap: world.min_forward_gap(),
        collided: world.state.collided,
        actors: world
            .actors()
            .map(|(spec, st)| SummaryActor {
                ds: st.s - ego.s,
                dlat: world.lanes().lane_center(spec.lane_index) + st.lateral - ego_abs,
                speed: st.speed,
                length: spec.length,
                width: spec.width,
            })
            .collect(),
    }
}

/// Execute one lockstep run: ground truth out, pipeline tick (with the
/// injector's hooks iff a plan is present), actuation back into the world.
/// Crash and hang land in the trace's termination, never in Err; the
/// returned trace is byte-identical across repeated calls.
pub fn run_single(
    scenario: &ScenarioSpec,
    setup: &RunSetup,
    plan: Option<&FaultPlan>,
    run_id: &str,
    seed: u64,
) -> Result<RunTrace> {
    if let Some(p) = plan {
        validate_plan(p)?;
    }
    let mut rng = rng_from_seed(seed);
    let mut world = World::instantiate(scenario, &mut rng)?;
    let mut pipeline = Pipeline::new(setup.params.clone());
    let mut injector = plan.map(Injector::new);
    let mut no_injection = NoInjection;

    let mut records = Vec::with_capacity(setup.n_ticks as usize);
    let mut world_summary = Vec::with_capacity(setup.n_ticks as usize);
    let mut termination = Termination::Completed;

    for tick in 0..setup.n_ticks {
        let gt = world.ground_truth(setup.sensor_range);
        let mut budget = TickBudget::new(setup.watchdog);
        let result = match injector.as_mut() {
            Some(inj) => pipeline.tick(&gt, inj, &mut rng, &mut budget, setup.dt),
            None => pipeline.tick(&gt, &mut no_injection, &mut rng, &mut budget, setup.dt),
        };
        match result {
            Ok((cmd, mut record)) => {
                record.ego_speed = world.state.ego.speed;
                record.ego_lateral = world.state.ego.lateral;
                record.ego_s = world.state.ego.s;
                records.push(record);
                world.step(&cmd, setup.dt);
                world_summary.push(summarize_world(&world, tick));
            }
            Err(PipelineFault::Crash { module }) => {
                termination = Termination::Crash { module, tick };
                break;
            }
            Err(PipelineFault::Hang { module }) => {
                termination = Termination::Hang { module, tick };
                break;
            }
        }
    }

    Ok(RunTrace {
        run_id: run_id.to_string(),
        kind: if plan.is_some() {
            RunKind::Injected
        } else {
            RunKind::Golden
        },
        plan: plan.cloned(),
        seed,
        records,
        termination,
        world_summary,
        injections: injector.map(|i| i.injections).unwrap_or_default(),
        ego_length: scenario.ego.length,
        ego_width: scenario.ego.width,
    })
}

/// Run the golden set with per-run derived seeds; scenario parameters are
/// resampled per run. Any golden run that does not complete aborts the
/// campaign — envelopes may only be built from clean runs.
pub fn run_golden_set(
    scenario: &ScenarioSpec,
    setup: &RunSetup,
    num_golden_runs: u32,
    master_seed: u64,
) -> Result<Vec<RunTrace>> {
    let traces = (0..num_golden_runs)
        .into_par_iter()
        .map(|i| {
            run_single(
                scenario,
                setup,
                None,
                &format!("g{i:05}"),
                derive_seed(master_seed, stream::golden(i)),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    for trace in &traces {
        if trace.termination != Termination::Completed {
            return Err(Error::GoldenRunFailed {
                run_id: trace.run_id.clone(),
                detail: trace.termination.detail(),
            });
        }
    }
    Ok(traces)
}

/// Profile the workload with one non-injected run.
pub fn profile_workload(
    scenario: &ScenarioSpec,
    setup: &RunSetup,
    master_seed: u64,
) -> Result<WorkloadProfile> {
    let trace = run_single(
        scenario,
        setup,
        None,
        "profile",
        derive_seed(master_seed, stream::PROFILE),
    )?;
    if trace.termination != Termination::Completed {
        return Err(Error::ProfileRunFailed(trace.termination.detail()));
    }
    Ok(build_profile(&trace.records))
}

const RUN_CHUNK: usize = 64;

/// Golden set -> profile -> plans -> injected runs -> classification ->
/// persistence. Injected-run failures are data; I/O failures abort with
/// whatever was already flushed.
pub fn execute_campaign(config: &CampaignConfig, log_path: &Path) -> Result<CampaignResult> {
    config.validate()?;
    let scenario = ScenarioSpec::load(&config.scenario_path)?;
    let setup = RunSetup::from_config(config, &scenario)?;
    let started = Instant::now();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.max_parallel_runs as usize)
        .build()
        .map_err(|e| Error::ConfigInvalid(format!("cannot build worker pool: {e}")))?;

    let golden =
        pool.install(|| run_golden_set(&scenario, &setup, config.num_golden_runs, config.master_seed))?;
    let profile = profile_workload(&scenario, &setup, config.master_seed)?;
    let request = PlanRequest {
        num_runs: config.num_injected_runs,
        faults_per_run: config.faults_per_run,
        model: &config.model,
        trigger: &config.trigger,
        site_filter: config.site_filter.as_ref(),
        master_seed: config.master_seed,
        speed_limit: scenario.lanes.speed_limit,
    };
    let plans = generate_fault_plan(&profile, &request)?;
    let envelope = build_envelope(&golden)?;
    let safety = SafetyParams::ai(setup.fps(config));

    let mut writer = LogWriter::create(log_path)?;
    for trace in &golden {
        writer.golden_trace(trace)?;
    }

    let mut outcomes: Vec<RunOutcome> = Vec::with_capacity(plans.len());
    for chunk in plans.chunks(RUN_CHUNK) {
        let results: Vec<Result<(RunTrace, RunOutcome)>> = pool.install(|| {
            chunk
                .par_iter()
                .map(|plan| {
                    let trace = run_single(&scenario, &setup, Some(plan), &plan.run_id, plan.seed)?;
                    let outcome = classify_run(&trace, &envelope, &safety, &scenario.lanes);
                    Ok((trace, outcome))
                })
                .collect()
        });
        for result in results {
            let (trace, outcome) = result?;
            writer.injected_trace(&trace)?;
            outcomes.push(outcome);
        }
    }
    for outcome in &outcomes {
        writer.outcome(outcome)?;
    }

    let meta = CampaignMeta {
        config: config.clone(),
        effective_dt_s: setup.dt,
        effective_duration_s: setup.dt * setup.n_ticks as f64,
        fps: setup.fps(config),
        golden_run_ids: golden.iter().map(|t| t.run_id.clone()).collect(),
        injected_run_ids: plans.iter().map(|p| p.run_id.clone()).collect(),
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    writer.campaign_meta(&meta)?;
    writer.finish()?;

    Ok(CampaignResult { meta, outcomes })
}
