//! NFE accounting.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

/// Counts denoiser forward passes against a budget.
///
/// Counters are atomic so a ledger can be shared between threads, but the
/// search loop itself only ever touches it from one thread.
#[derive(Debug)]
pub struct NfeLedger {
    budget: u64,
    consumed: AtomicU64,
    cache_hits: AtomicU64,
    rollouts_total: AtomicU64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub budget: u64,
    pub consumed: u64,
    pub cache_hits: u64,
    pub rollouts_total: u64,
}

impl LedgerSnapshot {
    pub fn cache_hit_rate(&self) -> f64 {
        if self.rollouts_total == 0 {
            0.0
        } else {
            self.cache_hits as f64 / self.rollouts_total as f64
        }
    }
}

impl NfeLedger {
    pub fn new(budget: u64) -> Self {
        Self {
            budget,
            consumed: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
            rollouts_total: AtomicU64::new(0),
        }
    }

    /// A ledger for work that is not budgeted (analysis, tests).
    pub fn unbounded() -> Self {
        Self::new(u64::MAX)
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn consumed(&self) -> u64 {
        self.consumed.load(Ordering::SeqCst)
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::SeqCst)
    }

    pub fn rollouts_total(&self) -> u64 {
        self.rollouts_total.load(Ordering::SeqCst)
    }

    pub fn has_headroom(&self) -> bool {
        self.consumed() < self.budget
    }

    pub fn record_forward(&self) {
        self.consumed.fetch_add(1, Ordering::SeqCst);
    }

    /// Records one rollout; `cached` rollouts cost nothing.
    pub fn record_rollout(&self, cached: bool) {
        self.rollouts_total.fetch_add(1, Ordering::SeqCst);
        if cached {
            self.cache_hits.fetch_add(1, Ordering::SeqCst);
        }
    }

    pub fn cache_hit_rate(&self) -> f64 {
        self.snapshot().cache_hit_rate()
    }

    /// Folds another ledger's counters into this one.
    pub fn absorb(&self, other: &NfeLedger) {
        self.consumed.fetch_add(other.consumed(), Ordering::SeqCst);
        self.cache_hits.fetch_add(other.cache_hits(), Ordering::SeqCst);
        self.rollouts_total.fetch_add(other.rollouts_total(), Ordering::SeqCst);
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        LedgerSnapshot {
            budget: self.budget,
            consumed: self.consumed(),
            cache_hits: self.cache_hits(),
            rollouts_total: self.rollouts_total(),
        }
    }
}
