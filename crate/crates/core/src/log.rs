//! JSON-Lines campaign logs.
//!
//! One file per campaign: golden_trace lines, injected_trace lines, outcome
//! lines (sorted by run_id), then a campaign_meta line once the wall clock
//! is known. Concatenating log files keeps every record attributable — an
//! outcome belongs to the next campaign_meta line after it.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::campaign::{CampaignMeta, RunTrace};
use crate::error::{Error, Result};
use crate::fault::FaultPlan;
use crate::oracle::RunOutcome;

/// An owned, parsed log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogLine {
    CampaignMeta(CampaignMeta),
    GoldenTrace { trace: RunTrace },
    InjectedTrace { trace: RunTrace },
    Outcome { outcome: RunOutcome },
}

pub struct LogWriter {
    out: BufWriter<File>,
}

#[derive(Serialize)]
struct TraceLine<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    trace: &'a RunTrace,
}

#[derive(Serialize)]
struct OutcomeLine<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    outcome: &'a RunOutcome,
}

#[derive(Serialize)]
struct MetaLine<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    #[serde(flatten)]
    meta: &'a CampaignMeta,
}

impl LogWriter {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        Ok(Self {
            out: BufWriter::new(File::create(path)?),
        })
    }

    fn line<T: Serialize>(&mut self, value: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, value)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn golden_trace(&mut self, trace: &RunTrace) -> Result<()> {
        self.line(&TraceLine {
            kind: "golden_trace",
            trace,
        })
    }

    pub fn injected_trace(&mut self, trace: &RunTrace) -> Result<()> {
        self.line(&TraceLine {
            kind: "injected_trace",
            trace,
        })
    }

    pub fn outcome(&mut self, outcome: &RunOutcome) -> Result<()> {
        self.line(&OutcomeLine {
            kind: "outcome",
            outcome,
        })
    }

    pub fn campaign_meta(&mut self, meta: &CampaignMeta) -> Result<()> {
        self.line(&MetaLine {
            kind: "campaign_meta",
            meta,
        })
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Stream every line through `f`, fully parsed. Traces are large; this
/// never holds more than one in memory.
pub fn for_each_line(path: &Path, mut f: impl FnMut(LogLine) -> Result<()>) -> Result<()> {
    let reader = BufReader::new(File::open(path)?);
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LogLine =
            serde_json::from_str(&line).map_err(|source| Error::LogParse { line: idx + 1, source })?;
        f(parsed)?;
    }
    Ok(())
}

/// One campaign's analysis slice: its outcomes joined with the fault plans
/// that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignSlice {
    pub meta: Option<CampaignMeta>,
    pub outcomes: Vec<RunOutcome>,
    pub plans: HashMap<String, FaultPlan>,
}

/// Everything the summary statistics need, skipping the per-tick records.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutcomeView {
    pub slices: Vec<CampaignSlice>,
}

impl OutcomeView {
    pub fn outcomes(&self) -> impl Iterator<Item = &RunOutcome> {
        self.slices.iter().flat_map(|s| s.outcomes.iter())
    }

    pub fn n_outcomes(&self) -> usize {
        self.slices.iter().map(|s| s.outcomes.len()).sum()
    }
}

#[derive(Deserialize)]
struct TypeProbe {
    #[serde(rename = "type")]
    kind: String,
}

#[derive(Deserialize)]
struct OutcomeProbe {
    outcome: RunOutcome,
}

#[derive(Deserialize)]
struct TraceHeader {
    run_id: String,
    #[serde(default)]
    plan: Option<FaultPlan>,
}

#[derive(Deserialize)]
struct TraceHeaderLine {
    trace: TraceHeader,
}

/// Lightweight scan for analysis commands: parses outcomes, plan headers and
/// metas, skipping trace records entirely.
pub fn read_outcome_view(path: &Path) -> Result<OutcomeView> {
    let reader = BufReader::new(File::open(path)?);
    let mut view = OutcomeView::default();
    let mut current = CampaignSlice {
        meta: None,
        outcomes: Vec::new(),
        plans: HashMap::new(),
    };
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let wrap = |source| Error::LogParse { line: idx + 1, source };
        let probe: TypeProbe = serde_json::from_str(&line).map_err(wrap)?;
        match probe.kind.as_str() {
            "outcome" => {
                let parsed: OutcomeProbe = serde_json::from_str(&line).map_err(wrap)?;
                current.outcomes.push(parsed.outcome);
            }
            "injected_trace" => {
                let parsed: TraceHeaderLine = serde_json::from_str(&line).map_err(wrap)?;
                if let Some(plan) = parsed.trace.plan {
                    current.plans.insert(parsed.trace.run_id, plan);
                }
            }
            "campaign_meta" => {
                let meta: CampaignMeta = serde_json::from_str(&line).map_err(wrap)?;
                current.meta = Some(meta);
                view.slices.push(std::mem::replace(
                    &mut current,
                    CampaignSlice {
                        meta: None,
                        outcomes: Vec::new(),
                        plans: HashMap::new(),
                    },
                ));
            }
            _ => {}
        }
    }
    if !current.outcomes.is_empty() || !current.plans.is_empty() {
        view.slices.push(current);
    }
    Ok(view)
}
