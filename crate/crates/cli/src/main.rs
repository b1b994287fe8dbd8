//! Campaign front end: run campaigns, summarize outcomes, compare logs,
//! export plot-ready CSV.
//!
//! Exit status: 0 on success, 2 for an invalid config or scenario, 3 when
//! the golden set failed, 1 for anything else.

use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use faultlab::error::Error;
use faultlab::log::{for_each_line, read_outcome_view, LogLine};
use faultlab::report::{self, GroupBy, Metric, SummaryRow};
use faultlab::{execute_campaign, CampaignConfig, RunTrace};

#[derive(Parser)]
#[command(name = "faultlab")]
#[command(about = "Fault-injection campaigns against a simulated driving pipeline")]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// Execute a campaign from a JSON config file
    Run {
        /// Campaign config path
        #[arg(long)]
        config: PathBuf,

        /// Output JSON-Lines log path
        #[arg(long, default_value = "campaign.jsonl")]
        log: PathBuf,
    },

    /// Per-group outcome rates with 95% Wilson intervals, as CSV on stdout
    Summarize {
        /// Campaign log path
        #[arg(long)]
        log: PathBuf,

        /// Group key: module | variable | fault_model | scenario
        #[arg(long, default_value = "module")]
        group_by: String,
    },

    /// Two-proportion z-test of one metric between two logs
    Compare {
        /// Two campaign log paths: A then B
        #[arg(long, num_args = 1, required = true)]
        log: Vec<PathBuf>,

        /// Metric: masked | sdc | due | actuation_error | breach | accident
        #[arg(long)]
        metric: String,
    },

    /// Export traces, outcomes or behavior time series as CSV files
    Export {
        /// Campaign log path
        #[arg(long)]
        log: PathBuf,

        /// What to export: traces | outcomes | behavior
        #[arg(long)]
        what: String,

        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Commands::Run { config, log } => cmd_run(&config, &log),
        Commands::Summarize { log, group_by } => cmd_summarize(&log, &group_by),
        Commands::Compare { log, metric } => cmd_compare(&log, &metric),
        Commands::Export { log, what, out } => cmd_export(&log, &what, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_status(&err))
        }
    }
}

fn exit_status(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::ConfigInvalid(_) | Error::ScenarioInvalid(_) | Error::EmptyPlan) => 2,
        Some(Error::GoldenRunFailed { .. } | Error::ProfileRunFailed(_)) => 3,
        _ => 1,
    }
}

fn cmd_run(config_path: &Path, log_path: &Path) -> anyhow::Result<()> {
    let config = CampaignConfig::load(config_path)?;
    let result = execute_campaign(&config, log_path)?;
    let meta = &result.meta;
    println!(
        "campaign complete: {} golden runs, {} injected runs, {:.2}s wall clock",
        meta.golden_run_ids.len(),
        meta.injected_run_ids.len(),
        meta.wall_clock_s
    );
    println!("log: {}", log_path.display());
    let activated = result.outcomes.iter().filter(|o| o.activated).count();
    println!(
        "outcomes: {} total, {} activated",
        result.outcomes.len(),
        activated
    );
    Ok(())
}

fn rate_fields(name: &str) -> [String; 3] {
    [
        format!("{name}_rate"),
        format!("{name}_ci_lo"),
        format!("{name}_ci_hi"),
    ]
}

fn cmd_summarize(log_path: &Path, group_by: &str) -> anyhow::Result<()> {
    let group_by: GroupBy = group_by.parse()?;
    let view = read_outcome_view(log_path)?;
    if view.n_outcomes() == 0 {
        return Err(Error::EmptyLog(format!("{} has no outcome lines", log_path.display())).into());
    }
    let rows = report::summarize(&view, group_by);
    let mut w = csv::Writer::from_writer(std::io::stdout());
    let mut header = vec!["group".to_string(), "n_runs".to_string()];
    for metric in ["masked", "sdc", "due", "actuation_error", "breach", "accident"] {
        header.extend(rate_fields(metric));
    }
    w.write_record(&header)?;
    for row in &rows {
        w.write_record(summary_record(row))?;
    }
    w.flush()?;
    Ok(())
}

fn summary_record(row: &SummaryRow) -> Vec<String> {
    let mut rec = vec![row.group.clone(), row.n_runs.to_string()];
    for ci in [
        &row.masked,
        &row.sdc,
        &row.due,
        &row.actuation_error,
        &row.breach,
        &row.accident,
    ] {
        rec.push(ci.rate.to_string());
        rec.push(ci.lo.to_string());
        rec.push(ci.hi.to_string());
    }
    rec
}

fn cmd_compare(logs: &[PathBuf], metric: &str) -> anyhow::Result<()> {
    if logs.len() != 2 {
        return Err(Error::ConfigInvalid(format!(
            "compare needs exactly two --log paths, got {}",
            logs.len()
        ))
        .into());
    }
    let metric: Metric = metric.parse()?;
    let view_a = read_outcome_view(&logs[0])?;
    let view_b = read_outcome_view(&logs[1])?;
    let row = report::compare(
        &logs[0].display().to_string(),
        &view_a,
        &logs[1].display().to_string(),
        &view_b,
        metric,
    )?;
    let mut w = csv::Writer::from_writer(std::io::stdout());
    w.write_record(["group_a", "group_b", "metric", "rate_a", "rate_b", "z", "p_value"])?;
    w.write_record([
        row.group_a,
        row.group_b,
        row.metric,
        row.rate_a.to_string(),
        row.rate_b.to_string(),
        row.z.to_string(),
        row.p_value.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

fn cmd_export(log_path: &Path, what: &str, out_dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(out_dir)?;
    match what {
        "behavior" => export_behavior(log_path, out_dir),
        "traces" => export_traces(log_path, out_dir),
        "outcomes" => export_outcomes(log_path, out_dir),
        other => Err(Error::ConfigInvalid(format!(
            "unknown export kind {other:?} (expected traces|outcomes|behavior)"
        ))
        .into()),
    }
}

fn export_behavior(log_path: &Path, out_dir: &Path) -> anyhow::Result<()> {
    let mut exported = 0usize;
    for_each_line(log_path, |line| {
        let trace = match &line {
            LogLine::GoldenTrace { trace } | LogLine::InjectedTrace { trace } => trace,
            _ => return Ok(()),
        };
        let path = out_dir.join(format!("behavior_{}.csv", trace.run_id));
        write_behavior_csv(trace, &path)?;
        exported += 1;
        Ok(())
    })?;
    println!("exported {exported} behavior series to {}", out_dir.display());
    Ok(())
}

fn write_behavior_csv(trace: &RunTrace, path: &Path) -> faultlab::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    w.write_record([
        "tick", "time_s", "ego_speed", "ego_lateral", "min_gap", "throttle", "brake", "steering",
    ])
    .map_err(csv_io)?;
    for row in report::behavior_rows(trace) {
        w.write_record([
            row.tick.to_string(),
            row.time_s.to_string(),
            row.ego_speed.to_string(),
            row.ego_lateral.to_string(),
            row.min_gap.to_string(),
            row.throttle.to_string(),
            row.brake.to_string(),
            row.steering.to_string(),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(err: csv::Error) -> faultlab::Error {
    faultlab::Error::Io(std::io::Error::other(err))
}

fn export_outcomes(log_path: &Path, out_dir: &Path) -> anyhow::Result<()> {
    let path = out_dir.join("outcomes.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "run_id",
        "activated",
        "label",
        "actuation_error",
        "safety_envelope_breach",
        "lane_centering_breach",
        "traffic_violation",
        "accident",
        "first_deviation_variable",
        "first_deviation_tick",
        "min_safety_margin",
    ])?;
    let mut n = 0usize;
    for_each_line(log_path, |line| {
        if let LogLine::Outcome { outcome } = &line {
            let label = serde_json::to_value(outcome.label)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            let (dev_var, dev_tick) = outcome
                .first_deviation
                .as_ref()
                .map(|d| (d.variable_id.clone(), d.tick.to_string()))
                .unwrap_or_default();
            w.write_record([
                outcome.run_id.clone(),
                outcome.activated.to_string(),
                label,
                outcome.actuation_error.to_string(),
                outcome.safety_envelope_breach.to_string(),
                outcome.lane_centering_breach.to_string(),
                outcome.traffic_violation.to_string(),
                outcome.accident.to_string(),
                dev_var,
                dev_tick,
                outcome.min_safety_margin.to_string(),
            ])
            .map_err(csv_io)?;
            n += 1;
        }
        Ok(())
    })?;
    w.flush()?;
    println!("exported {n} outcomes to {}", path.display());
    Ok(())
}

fn export_traces(log_path: &Path, out_dir: &Path) -> anyhow::Result<()> {
    let mut exported = 0usize;
    for_each_line(log_path, |line| {
        let trace = match &line {
            LogLine::GoldenTrace { trace } | LogLine::InjectedTrace { trace } => trace,
            _ => return Ok(()),
        };
        let path = out_dir.join(format!("trace_{}.csv", trace.run_id));
        write_trace_csv(trace, &path)?;
        exported += 1;
        Ok(())
    })?;
    println!("exported {exported} traces to {}", out_dir.display());
    Ok(())
}

fn write_trace_csv(trace: &RunTrace, path: &Path) -> faultlab::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    w.write_record([
        "tick",
        "frame_id",
        "num_detected_objects",
        "object_class",
        "object_coordinates",
        "bounding_box",
        "lane_type",
        "lane_c0",
        "lane_c1",
        "lane_c2",
        "est_s",
        "est_lateral",
        "est_heading",
        "est_speed",
        "target_speed",
        "lead_gap",
        "pid_measured_value",
        "pid_target_value",
        "pid_output",
        "throttle",
        "brake",
        "steering",
        "ego_speed",
        "ego_lateral",
        "ego_s",
    ])
    .map_err(csv_io)?;
    for (tick, rec) in trace.records.iter().enumerate() {
        let classes = serde_json::to_string(&rec.object_class)?;
        let coords = serde_json::to_string(&rec.object_coordinates)?;
        let boxes = serde_json::to_string(&rec.bounding_box)?;
        let lane_type = serde_json::to_value(rec.lane_type)?
            .as_str()
            .unwrap_or_default()
            .to_string();
        w.write_record([
            tick.to_string(),
            rec.frame_id.to_string(),
            rec.num_detected_objects.to_string(),
            classes,
            coords,
            boxes,
            lane_type,
            rec.lane_c0.to_string(),
            rec.lane_c1.to_string(),
            rec.lane_c2.to_string(),
            rec.est_s.to_string(),
            rec.est_lateral.to_string(),
            rec.est_heading.to_string(),
            rec.est_speed.to_string(),
            rec.target_speed.to_string(),
            rec.lead_gap.to_string(),
            rec.pid_measured_value.to_string(),
            rec.pid_target_value.to_string(),
            rec.pid_output.to_string(),
            rec.throttle.to_string(),
            rec.brake.to_string(),
            rec.steering.to_string(),
            rec.ego_speed.to_string(),
            rec.ego_lateral.to_string(),
            rec.ego_s.to_string(),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}
