//! Transition, trajectory, and score caches.
//!
//! Deterministic actions make `(state, action)` a complete description of
//! what happens next, so three stores are kept:
//!
//! - atomic steps: `(state, action) -> successor`
//! - trajectories: `(state, action, seed) -> next level state + terminal`
//! - scores: `(terminal, action) -> reward`
//!
//! A disabled cache misses on every lookup and drops every write, which is
//! how cache-off runs are produced without touching the search code.

use std::collections::HashMap;

use crate::state::{MaskedState, StateDigest};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RolloutKey {
    pub state: StateDigest,
    pub action: String,
    /// Present for stochastic actions; entries never match across seeds.
    pub seed: Option<u64>,
}

impl RolloutKey {
    pub fn new(state: StateDigest, action: &str, seed: Option<u64>) -> Self {
        Self { state, action: action.to_string(), seed }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CachedRollout {
    /// State at the next scheduled ratio.
    pub next: MaskedState,
    /// Fully unmasked end of the trajectory.
    pub terminal: StateDigest,
}

#[derive(Clone, Debug)]
pub struct RolloutCache {
    enabled: bool,
    steps: HashMap<(StateDigest, String), MaskedState>,
    trajectories: HashMap<RolloutKey, CachedRollout>,
    terminals: HashMap<StateDigest, MaskedState>,
    scores: HashMap<(StateDigest, String), f64>,
}

impl Default for RolloutCache {
    fn default() -> Self {
        Self::new(true)
    }
}

impl RolloutCache {
    pub fn new(enabled: bool) -> Self {
        Self {
            enabled,
            steps: HashMap::new(),
            trajectories: HashMap::new(),
            terminals: HashMap::new(),
            scores: HashMap::new(),
        }
    }

    pub fn disabled() -> Self {
        Self::new(false)
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn step(&self, state: StateDigest, action: &str) -> Option<&MaskedState> {
        if !self.enabled {
            return None;
        }
        self.steps.get(&(state, action.to_string()))
    }

    pub fn set_step(&mut self, state: StateDigest, action: &str, next: MaskedState) {
        if self.enabled {
            self.steps.insert((state, action.to_string()), next);
        }
    }

    pub fn rollout(&self, key: &RolloutKey) -> Option<&CachedRollout> {
        if !self.enabled {
            return None;
        }
        self.trajectories.get(key)
    }

    pub fn set_rollout(&mut self, key: RolloutKey, entry: CachedRollout) {
        if self.enabled {
            self.trajectories.insert(key, entry);
        }
    }

    pub fn terminal(&self, digest: StateDigest) -> Option<&MaskedState> {
        if !self.enabled {
            return None;
        }
        self.terminals.get(&digest)
    }

    pub fn set_terminal(&mut self, terminal: MaskedState) {
        if self.enabled {
            self.terminals.insert(terminal.digest(), terminal);
        }
    }

    pub fn score(&self, terminal: StateDigest, action: &str) -> Option<f64> {
        if !self.enabled {
            return None;
        }
        self.scores.get(&(terminal, action.to_string())).copied()
    }

    pub fn set_score(&mut self, terminal: StateDigest, action: &str, reward: f64) {
        if self.enabled {
            self.scores.insert((terminal, action.to_string()), reward);
        }
    }

    /// Number of stored entries across all stores.
    pub fn len(&self) -> usize {
        self.steps.len() + self.trajectories.len() + self.terminals.len() + self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
