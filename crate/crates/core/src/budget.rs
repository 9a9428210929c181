//! Hard accounting of optimizer and response calls.
//!
//! Optimizer and response calls are capped; reward and heuristic scoring
//! calls are counted but never refused. A ledger may be shared by reference
//! across threads: every charge is a single atomic compare-and-swap, so a
//! refused charge leaves the counters untouched.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ChargeKind {
    Optimizer,
    Response,
    Reward,
    Heuristic,
}

impl fmt::Display for ChargeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChargeKind::Optimizer => "OPTIMIZER",
            ChargeKind::Response => "RESPONSE",
            ChargeKind::Reward => "REWARD",
            ChargeKind::Heuristic => "HEURISTIC",
        })
    }
}

#[derive(Debug)]
pub struct BudgetLedger {
    optimizer_cap: u64,
    response_cap: u64,
    optimizer_used: AtomicU64,
    response_used: AtomicU64,
    reward_calls: AtomicU64,
    heuristic_calls: AtomicU64,
}

/// Point-in-time copy of a ledger; this is what episode records persist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub optimizer_cap: u64,
    pub response_cap: u64,
    pub optimizer_used: u64,
    pub response_used: u64,
    pub reward_calls: u64,
    pub heuristic_calls: u64,
}

impl LedgerSnapshot {
    pub fn within_caps(&self) -> bool {
        self.optimizer_used <= self.optimizer_cap && self.response_used <= self.response_cap
    }
}

impl BudgetLedger {
    pub fn new(optimizer_cap: u64, response_cap: u64) -> Self {
        Self {
            optimizer_cap,
            response_cap,
            optimizer_used: AtomicU64::new(0),
            response_used: AtomicU64::new(0),
            reward_calls: AtomicU64::new(0),
            heuristic_calls: AtomicU64::new(0),
        }
    }

    /// Adds `count` to the counter for `kind` and returns the ledger state
    /// right after the charge.
    pub fn charge(&self, kind: ChargeKind, count: u64) -> Result<LedgerSnapshot> {
        if count == 0 {
            return Err(Error::InvalidCount(0));
        }
        let (counter, cap) = match kind {
            ChargeKind::Optimizer => (&self.optimizer_used, Some(self.optimizer_cap)),
            ChargeKind::Response => (&self.response_used, Some(self.response_cap)),
            ChargeKind::Reward => (&self.reward_calls, None),
            ChargeKind::Heuristic => (&self.heuristic_calls, None),
        };
        match cap {
            Some(cap) => {
                counter
                    .fetch_update(Ordering::AcqRel, Ordering::Acquire, |used| {
                        used.checked_add(count).filter(|next| *next <= cap)
                    })
                    .map_err(|used| Error::BudgetExceeded {
                        kind,
                        cap,
                        attempted: used.saturating_add(count),
                    })?;
            }
            None => {
                counter.fetch_add(count, Ordering::AcqRel);
            }
        }
        Ok(self.snapshot())
    }

    pub fn remaining(&self, kind: ChargeKind) -> Option<u64> {
        match kind {
            ChargeKind::Optimizer => Some(self.optimizer_cap - self.optimizer_used.load(Ordering::Acquire)),
            ChargeKind::Response => Some(self.response_cap - self.response_used.load(Ordering::Acquire)),
            _ => None,
        }
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        LedgerSnapshot {
            optimizer_cap: self.optimizer_cap,
            response_cap: self.response_cap,
            optimizer_used: self.optimizer_used.load(Ordering::Acquire),
            response_used: self.response_used.load(Ordering::Acquire),
            reward_calls: self.reward_calls.load(Ordering::Acquire),
            heuristic_calls: self.heuristic_calls.load(Ordering::Acquire),
        }
    }
}
