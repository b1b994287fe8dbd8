//! Per-tick hang detection.
//!
//! In deterministic mode the budget counts abstract pipeline operations, so
//! hang verdicts are machine-independent; wall-clock mode trades that for
//! real-time protection against genuinely runaway code.

use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Operation budget per tick in deterministic mode.
pub const DEFAULT_MAX_OPS: u64 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum WatchdogMode {
    Deterministic {
        #[serde(default = "default_max_ops")]
        max_ops: u64,
    },
    WallClock {
        budget_ms: u64,
    },
}

fn default_max_ops() -> u64 {
    DEFAULT_MAX_OPS
}

impl Default for WatchdogMode {
    fn default() -> Self {
        WatchdogMode::Deterministic {
            max_ops: DEFAULT_MAX_OPS,
        }
    }
}

/// Raised when a tick exhausts its budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hang;

/// One tick's budget. Recreated every tick.
pub struct TickBudget {
    mode: WatchdogMode,
    ops: u64,
    started: Instant,
}

impl TickBudget {
    pub fn new(mode: WatchdogMode) -> Self {
        Self {
            mode,
            ops: 0,
            started: Instant::now(),
        }
    }

    /// Account for `n` operations; errors once the tick is over budget.
    pub fn charge(&mut self, n: u64) -> Result<(), Hang> {
        self.ops = self.ops.saturating_add(n);
        match self.mode {
            WatchdogMode::Deterministic { max_ops } => {
                if self.ops > max_ops {
                    Err(Hang)
                } else {
                    Ok(())
                }
            }
            WatchdogMode::WallClock { budget_ms } => {
                if self.started.elapsed().as_millis() as u64 > budget_ms {
                    Err(Hang)
                } else {
                    Ok(())
                }
            }
        }
    }
}
