//! Aggregate statistics over campaign logs: per-group outcome rates with
//! Wilson score intervals, two-proportion comparisons, and plot-ready
//! export rows.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::campaign::RunTrace;
use crate::error::{Error, Result};
use crate::log::OutcomeView;
use crate::oracle::{OutcomeLabel, RunOutcome};

/// Two-sided 97.5% standard normal quantile, for 95% intervals.
pub const Z_95: f64 = 1.959963984540054;

/// Standard normal CDF, double-precision rational approximation
/// (Hart-style, as published by West).
pub fn normal_cdf(x: f64) -> f64 {
    let z = x.abs();
    let cumulative = if z > 37.0 {
        0.0
    } else {
        let e = (-z * z / 2.0).exp();
        if z < 7.071_067_811_865_47 {
            let mut n = 3.52624965998911e-2 * z + 0.700383064443688;
            n = n * z + 6.37396220353165;
            n = n * z + 33.912866078383;
            n = n * z + 112.079291497871;
            n = n * z + 221.213596169931;
            n = n * z + 220.206867912376;
            let mut d = 8.83883476483184e-2 * z + 1.75566716318264;
            d = d * z + 16.064177579207;
            d = d * z + 86.7807322029461;
            d = d * z + 296.564248779674;
            d = d * z + 637.333633378831;
            d = d * z + 793.826512519948;
            d = d * z + 440.413735824752;
            e * n / d
        } else {
            let mut b = z + 0.65;
            b = z + 4.0 / b;
            b = z + 3.0 / b;
            b = z + 2.0 / b;
            b = z + 1.0 / b;
            e / (b * 2.506628274631)
        }
    };
    if x > 0.0 {
        1.0 - cumulative
    } else {
        cumulative
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateCi {
    pub rate: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Wilson score interval at 95% confidence. Chosen over Wald for the small
/// run counts typical of desk-scale campaigns.
pub fn wilson_interval(successes: u64, n: u64) -> RateCi {
    if n == 0 {
        return RateCi {
            rate: 0.0,
            lo: 0.0,
            hi: 0.0,
        };
    }
    let n_f = n as f64;
    let p = successes as f64 / n_f;
    let z2 = Z_95 * Z_95;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = Z_95 * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    RateCi {
        rate: p,
        lo: (center - half).max(0.0),
        hi: (center + half).min(1.0),
    }
}

/// Pooled two-proportion z statistic and two-sided p-value:
/// z = (pA - pB) / sqrt(p(1-p)(1/nA + 1/nB)).
pub fn two_proportion_z(successes_a: u64, n_a: u64, successes_b: u64, n_b: u64) -> (f64, f64) {
    let (na, nb) = (n_a as f64, n_b as f64);
    let pa = successes_a as f64 / na;
    let pb = successes_b as f64 / nb;
    if pa == pb {
        return (0.0, 1.0);
    }
    let pooled = (successes_a + successes_b) as f64 / (na + nb);
    let se = (pooled * (1.0 - pooled) * (1.0 / na + 1.0 / nb)).sqrt();
    if se == 0.0 {
        return (f64::INFINITY * (pa - pb).signum(), 0.0);
    }
    let z = (pa - pb) / se;
    let p = 2.0 * (1.0 - normal_cdf(z.abs()));
    (z, p.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    Module,
    Variable,
    FaultModel,
    Scenario,
}

impl std::str::FromStr for GroupBy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "module" => Ok(GroupBy::Module),
            "variable" => Ok(GroupBy::Variable),
            "fault_model" => Ok(GroupBy::FaultModel),
            "scenario" => Ok(GroupBy::Scenario),
            other => Err(Error::ConfigInvalid(format!(
                "unknown group key {other:?} (expected module|variable|fault_model|scenario)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub group: String,
    pub n_runs: u64,
    pub masked: RateCi,
    pub sdc: RateCi,
    pub due: RateCi,
    pub actuation_error: RateCi,
    pub breach: RateCi,
    pub accident: RateCi,
}

/// The outcome metrics a comparison can test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Masked,
    Sdc,
    Due,
    ActuationError,
    Breach,
    Accident,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Masked => "masked",
            Metric::Sdc => "sdc",
            Metric::Due => "due",
            Metric::ActuationError => "actuation_error",
            Metric::Breach => "breach",
            Metric::Accident => "accident",
        }
    }

    pub fn holds(self, outcome: &RunOutcome) -> bool {
        match self {
            Metric::Masked => outcome.label == OutcomeLabel::Masked,
            Metric::Sdc => outcome.label == OutcomeLabel::Sdc,
            Metric::Due => matches!(outcome.label, OutcomeLabel::DueHang | OutcomeLabel::DueCrash),
            Metric::ActuationError => outcome.actuation_error,
            Metric::Breach => outcome.safety_envelope_breach,
            Metric::Accident => outcome.accident,
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "masked" => Ok(Metric::Masked),
            "sdc" => Ok(Metric::Sdc),
            "due" => Ok(Metric::Due),
            "actuation_error" => Ok(Metric::ActuationError),
            "breach" => Ok(Metric::Breach),
            "accident" => Ok(Metric::Accident),
            other => Err(Error::ConfigInvalid(format!(
                "unknown metric {other:?} (expected masked|sdc|due|actuation_error|breach|accident)"
            ))),
        }
    }
}

fn group_key(view_slice_scenario: &str, plan_site: Option<(&str, &str, &str)>, group_by: GroupBy) -> String {
    match (group_by, plan_site) {
        (GroupBy::Scenario, _) => view_slice_scenario.to_string(),
        (GroupBy::Module, Some((module, _, _))) => module.to_string(),
        (GroupBy::Variable, Some((_, variable, _))) => variable.to_string(),
        (GroupBy::FaultModel, Some((_, _, model))) => model.to_string(),
        _ => "unknown".to_string(),
    }
}

/// Group outcomes by the injected site attribute and compute rates with
/// Wilson intervals. Groups with no runs are not emitted.
pub fn summarize(view: &OutcomeView, group_by: GroupBy) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<String, Vec<&RunOutcome>> = BTreeMap::new();
    for slice in &view.slices {
        let scenario = slice
            .meta
            .as_ref()
            .map(|m| m.config.scenario_path.display().to_string())
            .unwrap_or_else(|| "unknown".to_string());
        for outcome in &slice.outcomes {
            let plan_site = slice.plans.get(&outcome.run_id).and_then(|plan| {
                plan.faults.first().map(|f| {
                    (
                        f.site.module_id.as_str(),
                        f.site.variable_id.as_str(),
                        f.model.tag(),
                    )
                })
            });
            let key = group_key(&scenario, plan_site, group_by);
            groups.entry(key).or_default().push(outcome);
        }
    }
    groups
        .into_iter()
        .map(|(group, outcomes)| {
            let n = outcomes.len() as u64;
            let count = |metric: Metric| outcomes.iter().filter(|o| metric.holds(o)).count() as u64;
            SummaryRow {
                group,
                n_runs: n,
                masked: wilson_interval(count(Metric::Masked), n),
                sdc: wilson_interval(count(Metric::Sdc), n),
                due: wilson_interval(count(Metric::Due), n),
                actuation_error: wilson_interval(count(Metric::ActuationError), n),
                breach: wilson_interval(count(Metric::Breach), n),
                accident: wilson_interval(count(Metric::Accident), n),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub group_a: String,
    pub group_b: String,
    pub metric: String,
    pub rate_a: f64,
    pub rate_b: f64,
    pub z: f64,
    pub p_value: f64,
}

pub fn compare(
    label_a: &str,
    view_a: &OutcomeView,
    label_b: &str,
    view_b: &OutcomeView,
    metric: Metric,
) -> Result<ComparisonRow> {
    let n_a = view_a.n_outcomes() as u64;
    let n_b = view_b.n_outcomes() as u64;
    if n_a == 0 || n_b == 0 {
        return Err(Error::EmptyLog(format!(
            "comparison needs outcomes on both sides (A: {n_a}, B: {n_b})"
        )));
    }
    let x_a = view_a.outcomes().filter(|o| metric.holds(o)).count() as u64;
    let x_b = view_b.outcomes().filter(|o| metric.holds(o)).count() as u64;
    let (z, p_value) = two_proportion_z(x_a, n_a, x_b, n_b);
    Ok(ComparisonRow {
        group_a: label_a.to_string(),
        group_b: label_b.to_string(),
        metric: metric.as_str().to_string(),
        rate_a: x_a as f64 / n_a as f64,
        rate_b: x_b as f64 / n_b as f64,
        z,
        p_value,
    })
}

/// One plot-ready row of the vehicle-behavior time series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorRow {
    pub tick: u64,
    pub time_s: f64,
    pub ego_speed: f64,
    pub ego_lateral: f64,
    pub min_gap: f64,
    pub throttle: f64,
    pub brake: f64,
    pub steering: f64,
}

/// Join the world summary with the actuation series. Rows stop where the
/// run stopped.
pub fn behavior_rows(trace: &RunTrace) -> Vec<BehaviorRow> {
    trace
        .world_summary
        .iter()
        .zip(trace.records.iter())
        .map(|(wt, rec)| BehaviorRow {
            tick: wt.tick,
            time_s: wt.time_s,
            ego_speed: wt.ego_speed,
            ego_lateral: wt.ego_lateral,
            min_gap: wt.min_gap,
            throttle: rec.throttle,
            brake: rec.brake,
            steering: rec.steering,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::log::CampaignSlice;

    fn outcome(run_id: &str, label: OutcomeLabel) -> RunOutcome {
        RunOutcome {
            run_id: run_id.into(),
            activated: label != OutcomeLabel::Masked,
            label,
            actuation_error: false,
            safety_envelope_breach: false,
            lane_centering_breach: false,
            traffic_violation: false,
            accident: false,
            first_deviation: None,
            min_safety_margin: 1.0e9,
        }
    }

    fn view(labels: &[OutcomeLabel]) -> OutcomeView {
        OutcomeView {
            slices: vec![CampaignSlice {
                meta: None,
                outcomes: labels
                    .iter()
                    .enumerate()
                    .map(|(i, &l)| outcome(&format!("i{i:05}"), l))
                    .collect(),
                plans: Default::default(),
            }],
        }
    }

    #[test]
    fn normal_cdf_matches_reference_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.0) - 0.841344746068543).abs() < 1e-12);
        assert!((normal_cdf(2.0) - 0.977249868051821).abs() < 1e-12);
        assert!((normal_cdf(3.0) - 0.998650101968370).abs() < 1e-12);
        assert!((normal_cdf(-1.0) - 0.158655253931457).abs() < 1e-12);
        assert!((normal_cdf(Z_95) - 0.975).abs() < 1e-12);
    }

    #[test]
    fn wilson_interval_for_ten_of_ten() {
        let ci = wilson_interval(10, 10);
        assert_eq!(ci.rate, 1.0);
        assert!((ci.lo - 0.7225).abs() < 1e-3, "lo {}", ci.lo);
        assert!((ci.hi - 1.0).abs() < 1e-12, "hi {}", ci.hi);
    }

    #[test]
    fn wilson_interval_stays_in_unit_range() {
        for n in [1u64, 3, 10, 100, 1000] {
            for x in 0..=n {
                let ci = wilson_interval(x, n);
                assert!(0.0 <= ci.lo && ci.lo <= ci.rate + 1e-12);
                assert!(ci.rate <= ci.hi + 1e-12 && ci.hi <= 1.0);
            }
        }
    }

    #[test]
    fn z_test_hand_evaluated_case() {
        // 50/100 vs 10/100, pooled p = 0.3:
        // z = 0.4 / sqrt(0.21 * 0.02) = 6.1721...
        let (z, p) = two_proportion_z(50, 100, 10, 100);
        assert!((z - 6.1721).abs() < 1e-3, "z {z}");
        assert!(p < 1e-8, "p {p}");
    }

    #[test]
    fn z_test_identical_rates() {
        let (z, p) = two_proportion_z(30, 100, 30, 100);
        assert_eq!(z, 0.0);
        assert_eq!(p, 1.0);
    }

    #[test]
    fn compare_requires_outcomes_on_both_sides() {
        let a = view(&[OutcomeLabel::Masked]);
        let empty = OutcomeView::default();
        assert!(compare("a", &a, "b", &empty, Metric::Masked).is_err());
    }

    #[test]
    fn summary_rates_partition_to_one() {
        let v = view(&[
            OutcomeLabel::Masked,
            OutcomeLabel::Masked,
            OutcomeLabel::Sdc,
            OutcomeLabel::DueCrash,
            OutcomeLabel::DueHang,
        ]);
        let rows = summarize(&v, GroupBy::Scenario);
        assert_eq!(rows.len(), 1);
        let row = &rows[0];
        assert_eq!(row.n_runs, 5);
        let total = row.masked.rate + row.sdc.rate + row.due.rate;
        assert!((total - 1.0).abs() < 1e-9);
        assert_eq!(row.masked.rate, 0.4);
        assert_eq!(row.due.rate, 0.4);
    }

    #[test]
    fn all_masked_group_matches_wilson_example() {
        let v = view(&[OutcomeLabel::Masked; 10]);
        let rows = summarize(&v, GroupBy::Scenario);
        assert_eq!(rows[0].masked.rate, 1.0);
        assert!((rows[0].masked.lo - 0.7225).abs() < 1e-3);
    }
}
