use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_faultlab"))
}

fn samples_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../samples")
}

fn write_scenario(dir: &Path) -> PathBuf {
    let path = dir.join("scenario.json");
    std::fs::write(
        &path,
        r#"{
  "lanes": { "lane_count": 2, "lane_width": 3.7, "road_length": 2000.0, "speed_limit": 29.0576 },
  "ego": {
    "actor_id": "ego",
    "initial_s": { "mean": 0.0, "std_dev": 0.0, "lower": 0.0, "upper": 0.0 },
    "lane_index": 0,
    "speed": { "mean": 22.0, "std_dev": 1.0, "lower": 20.0, "upper": 24.0 },
    "accel": { "mean": 0.0, "std_dev": 0.0, "lower": 0.0, "upper": 0.0 },
    "behavior": "constant",
    "length": 4.5,
    "width": 2.0
  },
  "actors": [
    {
      "actor_id": "lead",
      "initial_s": { "mean": 90.0, "std_dev": 5.0, "lower": 80.0, "upper": 100.0 },
      "lane_index": 0,
      "speed": { "mean": 18.0, "std_dev": 1.0, "lower": 16.0, "upper": 20.0 },
      "accel": { "mean": 0.0, "std_dev": 0.0, "lower": 0.0, "upper": 0.0 },
      "behavior": "constant",
      "length": 4.5,
      "width": 2.0
    }
  ],
  "duration_s": 10.0,
  "dt_s": 0.05,
  "sensor_range_m": 120.0
}"#,
    )
    .unwrap();
    path
}

fn write_config(dir: &Path, scenario: &Path) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(
        &path,
        format!(
            r#"{{
  "scenario_path": {},
  "num_golden_runs": 3,
  "num_injected_runs": 5,
  "faults_per_run": 1,
  "model": {{ "model": "bitflip", "n_bits": 1 }},
  "master_seed": 12345,
  "hang_budget_ms": 1000,
  "max_parallel_runs": 2
}}"#,
            serde_json::to_string(scenario.to_str().unwrap()).unwrap()
        ),
    )
    .unwrap();
    path
}

fn run_campaign(dir: &Path) -> PathBuf {
    let scenario = write_scenario(dir);
    let config = write_config(dir, &scenario);
    let log = dir.join("campaign.jsonl");
    let out = bin()
        .args(["run", "--config"])
        .arg(&config)
        .arg("--log")
        .arg(&log)
        .output()
        .unwrap();
    assert_success(&out);
    log
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn run_executes_and_writes_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = run_campaign(dir.path());
    assert!(log.exists());
    let text = std::fs::read_to_string(&log).unwrap();
    assert_eq!(text.lines().filter(|l| l.contains("\"golden_trace\"")).count(), 3);
    assert_eq!(text.lines().filter(|l| l.contains("\"injected_trace\"")).count(), 5);
    assert_eq!(text.lines().filter(|l| l.contains("\"outcome\"")).count(), 5);
    assert_eq!(text.lines().filter(|l| l.contains("\"campaign_meta\"")).count(), 1);
}

#[test]
fn malformed_config_exits_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    std::fs::write(&config, r#"{ "scenario_path": "x.json" }"#).unwrap();
    let out = bin()
        .args(["run", "--config"])
        .arg(&config)
        .arg("--log")
        .arg(dir.path().join("log.jsonl"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("num_golden_runs"), "stderr: {stderr}");
}

#[test]
fn missing_scenario_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &dir.path().join("nope.json"));
    let out = bin()
        .args(["run", "--config"])
        .arg(&config)
        .arg("--log")
        .arg(dir.path().join("log.jsonl"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn summarize_emits_csv_with_partitioned_rates() {
    let dir = tempfile::tempdir().unwrap();
    let log = run_campaign(dir.path());
    let out = bin()
        .args(["summarize", "--log"])
        .arg(&log)
        .args(["--group-by", "module"])
        .output()
        .unwrap();
    assert_success(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let mut lines = stdout.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("group,n_runs,masked_rate,masked_ci_lo,masked_ci_hi,sdc_rate"));
    let mut total_runs = 0u64;
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        let n: u64 = fields[1].parse().unwrap();
        total_runs += n;
        let masked: f64 = fields[2].parse().unwrap();
        let sdc: f64 = fields[5].parse().unwrap();
        let due: f64 = fields[8].parse().unwrap();
        assert!(
            (masked + sdc + due - 1.0).abs() < 1e-9,
            "rates must partition: {line}"
        );
    }
    assert_eq!(total_runs, 5);
}

#[test]
fn summarize_rejects_unknown_group_key() {
    let dir = tempfile::tempdir().unwrap();
    let log = run_campaign(dir.path());
    let out = bin()
        .args(["summarize", "--log"])
        .arg(&log)
        .args(["--group-by", "color"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn compare_identical_logs_is_null_result() {
    let dir = tempfile::tempdir().unwrap();
    let log = run_campaign(dir.path());
    let out = bin()
        .args(["compare", "--log"])
        .arg(&log)
        .arg("--log")
        .arg(&log)
        .args(["--metric", "sdc"])
        .output()
        .unwrap();
    assert_success(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let row = stdout.lines().nth(1).unwrap();
    let fields: Vec<&str> = row.split(',').collect();
    assert_eq!(fields[5].parse::<f64>().unwrap(), 0.0, "z");
    assert_eq!(fields[6].parse::<f64>().unwrap(), 1.0, "p");
}

#[test]
fn export_behavior_rows_cover_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let log = run_campaign(dir.path());
    let out_dir = dir.path().join("export");
    let out = bin()
        .args(["export", "--log"])
        .arg(&log)
        .args(["--what", "behavior", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_success(&out);
    // Golden runs always complete: duration/dt rows plus the header.
    let golden = std::fs::read_to_string(out_dir.join("behavior_g00000.csv")).unwrap();
    assert_eq!(golden.lines().count(), 201);
    assert!(golden.lines().next().unwrap().starts_with("tick,time_s,ego_speed"));
    // Values re-parse to the logged numbers.
    let row: Vec<&str> = golden.lines().nth(1).unwrap().split(',').collect();
    assert!(row[2].parse::<f64>().is_ok());
}

#[test]
fn export_outcomes_and_traces() {
    let dir = tempfile::tempdir().unwrap();
    let log = run_campaign(dir.path());
    let out_dir = dir.path().join("export");
    let out = bin()
        .args(["export", "--log"])
        .arg(&log)
        .args(["--what", "outcomes", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_success(&out);
    let outcomes = std::fs::read_to_string(out_dir.join("outcomes.csv")).unwrap();
    assert_eq!(outcomes.lines().count(), 6, "header + 5 outcomes");

    let out = bin()
        .args(["export", "--log"])
        .arg(&log)
        .args(["--what", "traces", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_success(&out);
    let trace = std::fs::read_to_string(out_dir.join("trace_g00001.csv")).unwrap();
    assert!(trace.lines().next().unwrap().contains("pid_output"));
    assert_eq!(trace.lines().count(), 201);
}

#[test]
fn shipped_sample_files_are_valid() {
    let samples = samples_dir();
    for scenario in [
        "scenario_lead_follow.json",
        "scenario_stationary_hazard.json",
        "scenario_empty_road.json",
    ] {
        let text = std::fs::read_to_string(samples.join(scenario)).unwrap();
        faultlab::ScenarioSpec::from_json(&text)
            .unwrap_or_else(|e| panic!("{scenario}: {e}"));
    }
    for config in [
        "campaign_bitflip.json",
        "campaign_pid_fixed_max.json",
        "campaign_disappear_hazard.json",
    ] {
        let text = std::fs::read_to_string(samples.join(config)).unwrap();
        faultlab::CampaignConfig::from_json(&text)
            .unwrap_or_else(|e| panic!("{config}: {e}"));
    }
}

#[test]
fn failed_golden_set_exits_3() {
    // An absurd ego speed overflows the PID derivative on tick 0, so every
    // golden run crashes and the campaign aborts.
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.json");
    let text = std::fs::read_to_string(write_scenario(dir.path())).unwrap();
    std::fs::write(&scenario, text.replace("\"mean\": 22.0", "\"mean\": 1e308")
        .replace("\"lower\": 20.0", "\"lower\": 1e308")
        .replace("\"upper\": 24.0", "\"upper\": 1e308")
        .replace("\"std_dev\": 1.0", "\"std_dev\": 0.0"))
        .unwrap();
    let config = write_config(dir.path(), &scenario);
    let out = bin()
        .args(["run", "--config"])
        .arg(&config)
        .arg("--log")
        .arg(dir.path().join("log.jsonl"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn rerun_reproduces_outcome_lines() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path());
    let config = write_config(dir.path(), &scenario);
    let (log_a, log_b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    for log in [&log_a, &log_b] {
        let out = bin()
            .args(["run", "--config"])
            .arg(&config)
            .arg("--log")
            .arg(log)
            .output()
            .unwrap();
        assert_success(&out);
    }
    let outcomes = |p: &Path| -> Vec<String> {
        std::fs::read_to_string(p)
            .unwrap()
            .lines()
            .filter(|l| l.contains("\"type\":\"outcome\""))
            .map(str::to_string)
            .collect()
    };
    assert_eq!(outcomes(&log_a), outcomes(&log_b));
}
