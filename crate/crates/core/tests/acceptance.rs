//! Acceptance suite: one test per criterion, each printing a pass/fail line
//! (run with `--nocapture` to see them on success).

use rand::Rng;
use std::fmt::Display;
use std::time::Instant;

use faultlab::campaign::{
    execute_campaign, profile_workload, run_golden_set, run_single, CampaignConfig, RunSetup,
    WatchdogSelector,
};
use faultlab::fault::{flip_bits_f64, FaultModel, FaultPlan, FaultSite, FaultSpec, Trigger};
use faultlab::log::read_outcome_view;
use faultlab::oracle::{
    build_envelope, check_lane_centering, classify_run, collision_distance, interpolated_quantile,
    stopping_distance, OutcomeLabel, SafetyParams, LANE_CENTER_THRESHOLD_M,
};
use faultlab::pipeline::ModuleId;
use faultlab::plan::{generate_fault_plan, ModelSelector, PlanRequest, SiteFilter, TriggerSelector};
use faultlab::rng::rng_from_seed;
use faultlab::scenario::{
    ActorSpec, Behavior, LaneGeometry, ScenarioSpec, TruncNormalParam, SPEED_LIMIT_65MPH,
};
use faultlab::world::VehicleState;

fn criterion<T: Display>(n: u32, title: &str, f: impl FnOnce() -> Result<T, String>) {
    match f() {
        Ok(detail) => println!("acceptance {n:02} PASS — {title}: {detail}"),
        Err(msg) => {
            println!("acceptance {n:02} FAIL — {title}: {msg}");
            panic!("acceptance criterion {n} failed: {msg}");
        }
    }
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn actor(
    id: &str,
    initial_s: TruncNormalParam,
    lane: u32,
    speed: TruncNormalParam,
    accel: TruncNormalParam,
    behavior: Behavior,
) -> ActorSpec {
    ActorSpec {
        actor_id: id.into(),
        initial_s,
        lane_index: lane,
        speed,
        accel,
        behavior,
        length: 4.5,
        width: 2.0,
    }
}

fn lead_follow_scenario() -> ScenarioSpec {
    ScenarioSpec {
        lanes: LaneGeometry {
            lane_count: 3,
            lane_width: 3.7,
            road_length: 3000.0,
            speed_limit: SPEED_LIMIT_65MPH,
        },
        ego: actor(
            "ego",
            TruncNormalParam::fixed(0.0),
            1,
            TruncNormalParam {
                mean: 24.5872,
                std_dev: 1.0,
                lower: 22.0,
                upper: 27.0,
            },
            TruncNormalParam::fixed(0.0),
            Behavior::Constant,
        ),
        actors: vec![
            actor(
                "lead",
                TruncNormalParam {
                    mean: 120.0,
                    std_dev: 10.0,
                    lower: 100.0,
                    upper: 140.0,
                },
                1,
                TruncNormalParam {
                    mean: 20.0,
                    std_dev: 2.0,
                    lower: 16.0,
                    upper: 24.0,
                },
                TruncNormalParam {
                    mean: 1.5,
                    std_dev: 0.3,
                    lower: 1.0,
                    upper: 2.0,
                },
                Behavior::DecelerateToStop,
            ),
            actor(
                "neighbor",
                TruncNormalParam {
                    mean: 40.0,
                    std_dev: 5.0,
                    lower: 30.0,
                    upper: 50.0,
                },
                0,
                TruncNormalParam {
                    mean: 24.0,
                    std_dev: 1.0,
                    lower: 22.0,
                    upper: 26.0,
                },
                TruncNormalParam::fixed(0.0),
                Behavior::Constant,
            ),
        ],
        duration_s: 30.0,
        dt_s: 0.05,
        sensor_range_m: 150.0,
    }
}

fn stationary_hazard_scenario() -> ScenarioSpec {
    ScenarioSpec {
        lanes: LaneGeometry {
            lane_count: 2,
            lane_width: 3.7,
            road_length: 3000.0,
            speed_limit: 24.5872,
        },
        ego: actor(
            "ego",
            TruncNormalParam::fixed(0.0),
            0,
            TruncNormalParam::fixed(24.5872),
            TruncNormalParam::fixed(0.0),
            Behavior::Constant,
        ),
        actors: vec![actor(
            "stalled",
            TruncNormalParam::fixed(150.0),
            0,
            TruncNormalParam::fixed(0.0),
            TruncNormalParam::fixed(0.0),
            Behavior::Stationary,
        )],
        duration_s: 20.0,
        dt_s: 0.05,
        sensor_range_m: 200.0,
    }
}

fn empty_road_scenario() -> ScenarioSpec {
    ScenarioSpec {
        lanes: LaneGeometry {
            lane_count: 2,
            lane_width: 3.7,
            road_length: 3000.0,
            speed_limit: SPEED_LIMIT_65MPH,
        },
        ego: actor(
            "ego",
            TruncNormalParam::fixed(0.0),
            0,
            TruncNormalParam::fixed(20.0),
            TruncNormalParam::fixed(0.0),
            Behavior::Constant,
        ),
        actors: vec![],
        duration_s: 15.0,
        dt_s: 0.05,
        sensor_range_m: 100.0,
    }
}

fn campaign_config(
    scenario: &ScenarioSpec,
    dir: &std::path::Path,
    num_golden: u32,
    num_injected: u32,
    model: ModelSelector,
    seed: u64,
) -> CampaignConfig {
    let scenario_path = dir.join("scenario.json");
    std::fs::write(&scenario_path, serde_json::to_string_pretty(scenario).unwrap()).unwrap();
    CampaignConfig {
        scenario_path,
        num_golden_runs: num_golden,
        num_injected_runs: num_injected,
        faults_per_run: 1,
        site_filter: None,
        model,
        trigger: TriggerSelector::Transient,
        master_seed: seed,
        dt_s: None,
        duration_s: None,
        fps: None,
        hang_budget_ms: 1000,
        max_parallel_runs: 8,
        watchdog: WatchdogSelector::Deterministic,
    }
}

#[test]
fn acceptance_01_stopping_distance_constants() {
    criterion(1, "Eq. 1 reproduction", || {
        let params = SafetyParams {
            perception_time: 1.75,
            reaction_time: 1.0,
            brake_decel: faultlab::world::B_MAX,
            lane_center_threshold: LANE_CENTER_THRESHOLD_M,
        };
        let d = stopping_distance(24.5872, &params);
        ensure(
            (d.d_b - 64.0).abs() <= 0.1,
            format!("d_b {} not within 0.1 of 64.0", d.d_b),
        )?;
        ensure(
            (d.d_s - 131.615).abs() <= 0.01,
            format!("d_s {} not within 0.01 of 131.615", d.d_s),
        )?;
        Ok(format!("d_b = {:.4} m, d_s = {:.4} m", d.d_b, d.d_s))
    });
}

#[test]
fn acceptance_02_lane_centering_threshold() {
    criterion(2, "lane-centering threshold", || {
        let scenario = empty_road_scenario();
        let setup = RunSetup::for_scenario(&scenario);
        let mut base = run_single(&scenario, &setup, None, "g", 5).map_err(|e| e.to_string())?;
        let peak = base.world_summary.len() / 2;

        base.world_summary[peak].ego_lateral = 0.49;
        ensure(
            !check_lane_centering(&base, LANE_CENTER_THRESHOLD_M),
            "0.49 m flagged as a breach",
        )?;
        base.world_summary[peak].ego_lateral = 0.51;
        ensure(
            check_lane_centering(&base, LANE_CENTER_THRESHOLD_M),
            "0.51 m not flagged as a breach",
        )?;
        base.world_summary[peak].ego_lateral = 0.5;
        ensure(
            !check_lane_centering(&base, LANE_CENTER_THRESHOLD_M),
            "exactly 0.5 m must not breach (strict inequality)",
        )?;
        Ok("0.49 m -> no breach, 0.51 m -> breach, 0.50 m -> no breach")
    });
}

#[test]
fn acceptance_03_ontology_partition_over_mixed_campaign() {
    criterion(3, "ontology partition, 500-run campaign", || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let config = campaign_config(
            &lead_follow_scenario(),
            dir.path(),
            20,
            500,
            ModelSelector::BitFlip { n_bits: Some(1) },
            20260808,
        );
        let log_path = dir.path().join("campaign.jsonl");
        let started = Instant::now();
        let result = execute_campaign(&config, &log_path).map_err(|e| e.to_string())?;
        let elapsed = started.elapsed().as_secs_f64();

        ensure(
            result.outcomes.len() == 500,
            format!("expected 500 outcomes, got {}", result.outcomes.len()),
        )?;
        let persisted = read_outcome_view(&log_path).map_err(|e| e.to_string())?;
        ensure(
            persisted.n_outcomes() == 500,
            format!("persisted {} outcomes, expected 500", persisted.n_outcomes()),
        )?;

        let mut masked = 0;
        let mut sdc = 0;
        let mut due = 0;
        for o in &result.outcomes {
            // The label enum is the partition; check every flag implication.
            let is_due = matches!(o.label, OutcomeLabel::DueCrash | OutcomeLabel::DueHang);
            let breach_any =
                o.safety_envelope_breach || o.lane_centering_breach || o.traffic_violation;
            match o.label {
                OutcomeLabel::Masked => {
                    masked += 1;
                    ensure(
                        !o.activated && !o.actuation_error && !breach_any && !o.accident,
                        format!("{}: masked run carries downstream flags", o.run_id),
                    )?;
                }
                OutcomeLabel::Sdc => {
                    sdc += 1;
                    ensure(o.activated, format!("{}: sdc not activated", o.run_id))?;
                }
                _ => {
                    due += 1;
                    ensure(o.activated, format!("{}: due not activated", o.run_id))?;
                    ensure(
                        !o.actuation_error,
                        format!("{}: actuation_error on a DUE run", o.run_id),
                    )?;
                }
            }
            if o.actuation_error {
                ensure(
                    o.label == OutcomeLabel::Sdc,
                    format!("{}: actuation_error requires sdc", o.run_id),
                )?;
            }
            if o.accident {
                ensure(
                    o.safety_envelope_breach,
                    format!("{}: accident without safety_envelope_breach", o.run_id),
                )?;
            }
            if breach_any {
                ensure(
                    o.actuation_error || is_due,
                    format!("{}: breach flags without actuation_error or DUE", o.run_id),
                )?;
            }
        }
        ensure(
            masked + sdc + due == 500,
            "labels do not partition the outcome set",
        )?;
        ensure(
            elapsed < 60.0,
            format!("campaign took {elapsed:.1} s, target < 60 s"),
        )?;
        Ok(format!(
            "500 outcomes in {elapsed:.1} s: {masked} masked, {sdc} sdc, {due} due"
        ))
    });
}

#[test]
fn acceptance_04_golden_self_consistency() {
    criterion(4, "golden self-consistency", || {
        let scenario = lead_follow_scenario();
        let setup = RunSetup::for_scenario(&scenario);
        let golden = run_golden_set(&scenario, &setup, 20, 4242).map_err(|e| e.to_string())?;
        let envelope = build_envelope(&golden).map_err(|e| e.to_string())?;
        let safety = SafetyParams::ai(20.0);
        for trace in &golden {
            let outcome = classify_run(trace, &envelope, &safety, &scenario.lanes);
            ensure(
                outcome.label == OutcomeLabel::Masked && !outcome.activated,
                format!(
                    "{} classified {:?} (first deviation {:?})",
                    trace.run_id, outcome.label, outcome.first_deviation
                ),
            )?;
        }
        Ok("all 20 golden runs classify masked against their own envelope")
    });
}

#[test]
fn acceptance_05_campaign_determinism() {
    criterion(5, "byte-identical outcome records", || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let config = campaign_config(
            &lead_follow_scenario(),
            dir.path(),
            5,
            20,
            ModelSelector::BitFlip { n_bits: Some(1) },
            11,
        );
        let log_a = dir.path().join("a.jsonl");
        let log_b = dir.path().join("b.jsonl");
        execute_campaign(&config, &log_a).map_err(|e| e.to_string())?;
        execute_campaign(&config, &log_b).map_err(|e| e.to_string())?;
        let outcome_lines = |path: &std::path::Path| -> Result<Vec<String>, String> {
            Ok(std::fs::read_to_string(path)
                .map_err(|e| e.to_string())?
                .lines()
                .filter(|l| l.starts_with("{\"type\":\"outcome\""))
                .map(str::to_string)
                .collect())
        };
        let a = outcome_lines(&log_a)?;
        let b = outcome_lines(&log_b)?;
        ensure(!a.is_empty(), "no outcome lines found")?;
        ensure(a == b, "outcome records differ between executions")?;
        Ok(format!("{} outcome records identical across executions", a.len()))
    });
}

#[test]
fn acceptance_06_injected_causality() {
    criterion(6, "no deviation before the trigger tick", || {
        let scenario = lead_follow_scenario();
        let setup = RunSetup::for_scenario(&scenario);
        let master_seed = 314159;
        let profile =
            profile_workload(&scenario, &setup, master_seed).map_err(|e| e.to_string())?;
        let model = ModelSelector::BitFlip { n_bits: Some(1) };
        let trigger = TriggerSelector::Transient;
        let request = PlanRequest {
            num_runs: 100,
            faults_per_run: 1,
            model: &model,
            trigger: &trigger,
            site_filter: None,
            master_seed,
            speed_limit: scenario.lanes.speed_limit,
        };
        let plans = generate_fault_plan(&profile, &request).map_err(|e| e.to_string())?;
        for plan in &plans {
            let injected = run_single(&scenario, &setup, Some(plan), &plan.run_id, plan.seed)
                .map_err(|e| e.to_string())?;
            let twin = run_single(&scenario, &setup, None, &plan.run_id, plan.seed)
                .map_err(|e| e.to_string())?;
            let trigger_tick = plan.faults[0].trigger.first_tick() as usize;
            let horizon = trigger_tick.min(injected.records.len()).min(twin.records.len());
            ensure(
                injected.records.len() >= horizon,
                format!("{}: run ended before its trigger", plan.run_id),
            )?;
            for tick in 0..horizon {
                let a = serde_json::to_string(&injected.records[tick]).unwrap();
                let b = serde_json::to_string(&twin.records[tick]).unwrap();
                ensure(
                    a == b,
                    format!(
                        "{}: tick {tick} deviates before trigger {trigger_tick} (site {}/{})",
                        plan.run_id,
                        plan.faults[0].site.module_id,
                        plan.faults[0].site.variable_label()
                    ),
                )?;
            }
        }
        Ok("100 single-transient runs match their matched-seed golden twin pre-trigger")
    });
}

#[test]
fn acceptance_07_oracle_equivalence() {
    criterion(7, "quantile and collision-distance oracles", || {
        let mut rng = rng_from_seed(2718);

        // Quantiles: exact match with a brute-force sort-and-interpolate
        // oracle on 1000 random samples.
        for _ in 0..1000 {
            let n = rng.random_range(2..=50);
            let mut sample: Vec<f64> = (0..n).map(|_| rng.random_range(-100.0..100.0)).collect();
            sample.sort_by(f64::total_cmp);
            for p in [0.25, 0.75] {
                let h = (n as f64 - 1.0) * p;
                let lo = h.floor() as usize;
                let hi = h.ceil() as usize;
                let expected = sample[lo] + (h - lo as f64) * (sample[hi] - sample[lo]);
                let got = interpolated_quantile(&sample, p);
                ensure(got == expected, format!("quantile mismatch: {got} vs {expected}"))?;
            }
        }

        // Collision distance: within 0.1 m of a dt = 1e-3 forward simulation
        // on 100 random same-lane cases.
        let dims = (4.5, 2.0);
        for case in 0..100 {
            let ego_v = rng.random_range(0.0..30.0);
            let obj_s = rng.random_range(6.0..100.0);
            let obj_v = rng.random_range(0.0..30.0);
            let ego = VehicleState {
                s: 0.0,
                lateral: 0.0,
                heading: 0.0,
                speed: ego_v,
                accel: 0.0,
            };
            let obj = VehicleState {
                s: obj_s,
                lateral: 0.0,
                heading: 0.0,
                speed: obj_v,
                accel: 0.0,
            };
            let analytic = collision_distance(&ego, dims, &obj, dims, 10.0);
            let dt = 1e-3;
            let mut simulated = f64::INFINITY;
            for k in 0..=10_000u64 {
                let t = k as f64 * dt;
                if ((obj_s + obj_v * t) - ego_v * t).abs() < dims.0 {
                    simulated = ego_v * t;
                    break;
                }
            }
            let agree = if analytic.is_finite() || simulated.is_finite() {
                (analytic - simulated).abs() < 0.1
            } else {
                true
            };
            ensure(
                agree,
                format!("case {case}: analytic {analytic} vs simulated {simulated}"),
            )?;
        }
        Ok("1000 quantile samples exact; 100 collision cases within 0.1 m")
    });
}

#[test]
fn acceptance_08_bitflip_properties() {
    criterion(8, "bit-flip involution, sign bit, site uniformity", || {
        ensure(
            flip_bits_f64(1.0, &[63]) == -1.0,
            "sign-bit flip of 1.0 must yield -1.0",
        )?;

        let mut rng = rng_from_seed(1618);
        for _ in 0..100_000 {
            let bits: u64 = rng.random();
            let value = f64::from_bits(bits);
            let positions: Vec<u32> = if rng.random_range(0..2) == 0 {
                vec![rng.random_range(0..64)]
            } else {
                vec![rng.random_range(0..64), rng.random_range(0..64)]
            };
            let twice = flip_bits_f64(flip_bits_f64(value, &positions), &positions);
            ensure(
                twice.to_bits() == bits,
                format!("involution broken for bits {bits:#x} positions {positions:?}"),
            )?;
        }

        // Plan-site uniformity over the four always-live localization
        // scalars: chi-square with dof = 3 must stay under the p = 0.001
        // critical value 16.266.
        let scenario = lead_follow_scenario();
        let setup = RunSetup::for_scenario(&scenario);
        let profile = profile_workload(&scenario, &setup, 555).map_err(|e| e.to_string())?;
        let model = ModelSelector::BitFlip { n_bits: Some(1) };
        let trigger = TriggerSelector::Transient;
        let filter = SiteFilter {
            modules: Some(vec![ModuleId::Localization]),
            variables: None,
        };
        let request = PlanRequest {
            num_runs: 10_000,
            faults_per_run: 1,
            model: &model,
            trigger: &trigger,
            site_filter: Some(&filter),
            master_seed: 555,
            speed_limit: scenario.lanes.speed_limit,
        };
        let plans = generate_fault_plan(&profile, &request).map_err(|e| e.to_string())?;
        let mut counts = std::collections::BTreeMap::new();
        for plan in &plans {
            *counts
                .entry(plan.faults[0].site.variable_id.clone())
                .or_insert(0u64) += 1;
        }
        ensure(counts.len() == 4, format!("expected 4 sites, got {}", counts.len()))?;
        let expected = 10_000.0 / 4.0;
        let chi2: f64 = counts
            .values()
            .map(|&o| (o as f64 - expected).powi(2) / expected)
            .sum();
        ensure(
            chi2 < 16.266,
            format!("chi-square {chi2:.3} exceeds 16.266 (p <= 0.001); counts {counts:?}"),
        )?;
        Ok(format!("involution on 1e5 values; chi-square {chi2:.3} < 16.266"))
    });
}

#[test]
fn acceptance_09_end_to_end_hazard_scenario() {
    criterion(9, "stationary-lead hazard, injected vs clean", || {
        let scenario = stationary_hazard_scenario();
        let setup = RunSetup::for_scenario(&scenario);
        let master_seed = 4460;
        let golden = run_golden_set(&scenario, &setup, 2, master_seed).map_err(|e| e.to_string())?;
        let envelope = build_envelope(&golden).map_err(|e| e.to_string())?;
        let safety = SafetyParams::ai(20.0);

        // Uninjected: masked, no breach, and the ego stops at least
        // D_STANDOFF short of the lead.
        for trace in &golden {
            let outcome = classify_run(trace, &envelope, &safety, &scenario.lanes);
            ensure(
                outcome.label == OutcomeLabel::Masked,
                format!("{} not masked: {:?}", trace.run_id, outcome.label),
            )?;
            ensure(
                !outcome.safety_envelope_breach && !outcome.accident,
                format!("{} breached uninjected", trace.run_id),
            )?;
            let min_gap = trace
                .world_summary
                .iter()
                .map(|wt| wt.min_gap)
                .fold(f64::INFINITY, f64::min);
            ensure(
                min_gap >= faultlab::pipeline::D_STANDOFF,
                format!("ego closed to {min_gap:.2} m, inside the {} m standoff", faultlab::pipeline::D_STANDOFF),
            )?;
            let final_speed = trace.world_summary.last().unwrap().ego_speed;
            ensure(
                final_speed < 0.5,
                format!("ego still moving at {final_speed:.2} m/s at run end"),
            )?;
        }

        // Permanent Disappear on object-perception output from tick 0: the
        // ego never sees the stalled car.
        let plan = FaultPlan {
            run_id: "i00000".into(),
            seed: faultlab::rng::derive_seed(master_seed, faultlab::rng::stream::injected(0)),
            faults: vec![FaultSpec {
                site: FaultSite::scalar(ModuleId::ObjectPerception, "output"),
                model: FaultModel::Disappear,
                trigger: Trigger::Permanent { from_tick: 0 },
            }],
        };
        let injected = run_single(&scenario, &setup, Some(&plan), &plan.run_id, plan.seed)
            .map_err(|e| e.to_string())?;
        let outcome = classify_run(&injected, &envelope, &safety, &scenario.lanes);
        ensure(
            outcome.actuation_error,
            format!("no actuation error (label {:?})", outcome.label),
        )?;
        ensure(outcome.safety_envelope_breach, "no safety envelope breach")?;
        ensure(outcome.accident, "no accident")?;
        Ok(format!(
            "injected: {:?} + actuation_error + breach + accident (margin {:.1} m); clean run stops short",
            outcome.label, outcome.min_safety_margin
        ))
    });
}

#[test]
fn acceptance_10_fixed_max_pid_injection() {
    criterion(10, "fixed-max pid_output on an empty road", || {
        let scenario = empty_road_scenario();
        let setup = RunSetup::for_scenario(&scenario);
        let master_seed = 8086;
        let golden = run_golden_set(&scenario, &setup, 2, master_seed).map_err(|e| e.to_string())?;
        let envelope = build_envelope(&golden).map_err(|e| e.to_string())?;
        let safety = SafetyParams::ai(20.0);

        let plan = FaultPlan {
            run_id: "i00000".into(),
            seed: faultlab::rng::derive_seed(master_seed, faultlab::rng::stream::injected(0)),
            faults: vec![FaultSpec {
                site: FaultSite::scalar(ModuleId::Control, "pid_output"),
                model: FaultModel::Fixed { value: 1.0 },
                trigger: Trigger::Permanent { from_tick: 0 },
            }],
        };
        let injected = run_single(&scenario, &setup, Some(&plan), &plan.run_id, plan.seed)
            .map_err(|e| e.to_string())?;
        let outcome = classify_run(&injected, &envelope, &safety, &scenario.lanes);
        ensure(
            outcome.label == OutcomeLabel::Sdc,
            format!("label {:?}, expected sdc", outcome.label),
        )?;
        ensure(outcome.actuation_error, "no actuation error")?;
        ensure(outcome.traffic_violation, "no traffic violation")?;
        let top_speed = injected
            .world_summary
            .iter()
            .map(|wt| wt.ego_speed)
            .fold(0.0, f64::max);
        ensure(
            top_speed > SPEED_LIMIT_65MPH,
            format!("top speed {top_speed:.2} never exceeded the limit"),
        )?;
        Ok(format!(
            "sdc + actuation_error + traffic_violation, top speed {top_speed:.2} m/s"
        ))
    });
}
