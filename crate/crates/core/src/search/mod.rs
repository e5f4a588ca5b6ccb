//! UnMaskFork: MCTS over deterministic partial-unmasking actions.
//!
//! Tree levels are the scheduled mask ratios. Expanding a node under an
//! action unmasks to the next ratio, then keeps going under the same action
//! to a fully unmasked terminal whose reward is backed up. Every state on
//! the way is cached, so a later expansion that lands on a known
//! `(state, action)` pair costs nothing.

pub mod tree;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::cache::{CachedRollout, RolloutCache, RolloutKey};
use crate::denoiser::DenoiserRegistry;
use crate::error::{Error, Result};
use crate::ledger::{LedgerSnapshot, NfeLedger};
use crate::reward::{RewardOutcome, RewardProvider};
use crate::schedule::{Level, RatioSchedule};
use crate::state::MaskedState;
use crate::tokmap::CodecRegistry;
use crate::transition::unmask_to_count;
use crate::util::{mix_seed, str_seed};
use crate::vocab::VocabTag;

pub use tree::{uct_score, DumpNode, Node, NodeId, SearchTree, Selection, TreeDump, ROOT};

/// What a method needs to touch the outside world.
#[derive(Clone, Copy)]
pub struct SearchEnv<'a> {
    pub registry: &'a DenoiserRegistry,
    pub reward: &'a dyn RewardProvider,
    /// Needed only when actions span several vocabularies.
    pub codecs: Option<&'a CodecRegistry>,
}

impl<'a> SearchEnv<'a> {
    pub fn new(registry: &'a DenoiserRegistry, reward: &'a dyn RewardProvider) -> Self {
        Self { registry, reward, codecs: None }
    }

    pub fn with_codecs(mut self, codecs: &'a CodecRegistry) -> Self {
        self.codecs = Some(codecs);
        self
    }

    /// `state` in the vocabulary of the action's denoiser.
    pub fn state_for(&self, state: &MaskedState, action: &Action) -> Result<MaskedState> {
        let tag = &self.registry.vocab(&action.denoiser_id)?.tag;
        if state.vocab() == tag {
            return Ok(state.clone());
        }
        let codecs = self.codecs.ok_or_else(|| Error::MissingCodec(tag.to_string()))?;
        codecs.map(state, tag)
    }

    /// Scores a terminal in the reward's vocabulary, mapping back if the
    /// terminal came from a different one.
    pub fn score_terminal(&self, terminal: &MaskedState, home: &VocabTag) -> Result<RewardOutcome> {
        if terminal.vocab() == home {
            return self.reward.score(terminal);
        }
        let codecs = self.codecs.ok_or_else(|| Error::MissingCodec(home.to_string()))?;
        self.reward.score(&codecs.map(terminal, home)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub c_exp: f64,
    pub schedule: RatioSchedule,
    pub cache: bool,
    pub seed: u64,
    /// Stop after this many iterations even with NFE left. Lets cached and
    /// uncached runs be compared iteration for iteration.
    #[serde(default)]
    pub max_iterations: Option<u64>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { c_exp: 1.0, schedule: RatioSchedule::default(), cache: true, seed: 0, max_iterations: None }
    }
}

/// One line of the iteration trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: u64,
    pub action_path: Vec<String>,
    pub nfe_before: u64,
    /// Cumulative NFE after the iteration.
    pub nfe_consumed: u64,
    pub reward: f64,
    pub cache_hit: bool,
    pub best_so_far: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub skipped_exhausted: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
}

fn is_zero(n: &u64) -> bool {
    *n == 0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Budget,
    TreeExhausted,
    IterationLimit,
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    /// The submitted terminal, in the root's vocabulary.
    pub best: MaskedState,
    pub best_reward: f64,
    /// Node whose expansion produced `best`.
    pub best_node: NodeId,
    pub trace: Vec<TraceRecord>,
    pub stop_reason: StopReason,
    pub ledger: LedgerSnapshot,
    /// NFE spent past the budget by the last expansion.
    pub overshoot: u64,
    pub tree: SearchTree,
}

impl SearchOutcome {
    pub fn dump(&self, actions: &[Action]) -> TreeDump {
        let ids: Vec<String> = actions.iter().map(|a| a.id.clone()).collect();
        self.tree.dump(&ids, Some(self.best_node))
    }
}

/// Result of one expansion.
#[derive(Clone, Debug)]
pub struct Expansion {
    pub child: NodeId,
    pub terminal: MaskedState,
    pub reward: f64,
    pub cache_hit: bool,
    pub flag: Option<String>,
}

/// The search loop and its mutable state.
pub struct UnMaskFork<'a> {
    env: SearchEnv<'a>,
    actions: &'a [Action],
    config: SearchConfig,
    levels: Vec<Level>,
    pub tree: SearchTree,
    pub cache: RolloutCache,
}

impl<'a> UnMaskFork<'a> {
    pub fn new(env: SearchEnv<'a>, actions: &'a [Action], root: MaskedState, config: SearchConfig) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::InvalidArgument("action set is empty".into()));
        }
        for a in actions {
            a.validate()?;
            env.registry.get(&a.denoiser_id)?;
        }
        if root.masked_count() != root.gen_len() {
            return Err(Error::InvalidState("search root must be fully masked".into()));
        }
        let levels = config.schedule.levels(root.gen_len());
        let tree = SearchTree::new(root, actions.len(), levels.len().max(1));
        let cache = RolloutCache::new(config.cache);
        Ok(Self { env, actions, config, levels, tree, cache })
    }

    /// Masked count a node at `depth` expands to; 0 past the schedule.
    fn target_masked(&self, depth: usize) -> usize {
        self.levels.get(depth).map_or(0, |l| l.masked)
    }

    fn rollout_seed(&self, state: &MaskedState, action: &Action) -> Option<u64> {
        if action.is_deterministic() {
            return None;
        }
        let d = state.digest().0;
        Some(mix_seed(&[self.config.seed, (d >> 64) as u64, d as u64, str_seed(&action.id)]))
    }

    /// Expands the next untried action of `node`.
    pub fn expand(&mut self, node: NodeId, ledger: &NfeLedger) -> Result<Expansion> {
        let action_idx = self.tree.node_mut(node).untried.pop_front().ok_or(Error::NoUntriedActions)?;
        let action = &self.actions[action_idx];
        let parent_state = self.tree.node(node).state.clone();
        let depth = self.tree.node(node).depth;
        let home = self.tree.node(ROOT).state.vocab().clone();
        let seed = self.rollout_seed(&parent_state, action);
        let key = RolloutKey::new(parent_state.digest(), &action.id, seed);
        let before = ledger.consumed();

        let cached = self.cache.rollout(&key).and_then(|c| {
            let terminal = self.cache.terminal(c.terminal)?;
            let reward = self.cache.score(c.terminal, &action.id)?;
            Some((c.next.clone(), terminal.clone(), reward))
        });
        let (next, terminal, reward, flag) = match cached {
            Some((next, terminal, reward)) => (next, terminal, reward, None),
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(0));
                let start = self.env.state_for(&parent_state, action)?;
                let registry = self.env.registry;
                let mut chain = vec![parent_state.clone()];
                let mut cur = unmask_to_count(&start, action, self.target_masked(depth), registry, ledger, &mut self.cache, &mut rng)?;
                chain.push(cur.clone());
                for d in depth + 1..self.levels.len() {
                    cur = unmask_to_count(&cur, action, self.target_masked(d), registry, ledger, &mut self.cache, &mut rng)?;
                    chain.push(cur.clone());
                }
                let terminal = unmask_to_count(&cur, action, 0, registry, ledger, &mut self.cache, &mut rng)?;
                let (reward, flag) = match self.cache.score(terminal.digest(), &action.id) {
                    Some(r) => (r, None),
                    None => {
                        let out = self.env.score_terminal(&terminal, &home)?;
                        (out.reward, out.flag)
                    }
                };
                let t = terminal.digest();
                if action.is_deterministic() {
                    for w in chain.windows(2) {
                        let k = RolloutKey::new(w[0].digest(), &action.id, None);
                        self.cache.set_rollout(k, CachedRollout { next: w[1].clone(), terminal: t });
                    }
                } else {
                    self.cache.set_rollout(key, CachedRollout { next: chain[1].clone(), terminal: t });
                }
                self.cache.set_terminal(terminal.clone());
                self.cache.set_score(t, &action.id, reward);
                (chain[1].clone(), terminal, reward, flag)
            }
        };
        let cache_hit = self.cache.is_enabled() && ledger.consumed() == before;
        ledger.record_rollout(cache_hit);
        let child = self.tree.push(next, Some(node), Some(action_idx), self.actions.len(), seed);
        Ok(Expansion { child, terminal, reward, cache_hit, flag })
    }

    fn action_path(&self, node: NodeId) -> Vec<String> {
        self.tree
            .path(node)
            .into_iter()
            .filter_map(|id| self.tree.node(id).action)
            .map(|a| self.actions[a].id.clone())
            .collect()
    }

    /// Select/Expand/Backup until the ledger reaches its budget or the tree
    /// runs out of untried actions.
    pub fn run(mut self, ledger: &NfeLedger) -> Result<SearchOutcome> {
        let n_g = self.tree.node(ROOT).state.gen_len() as u64;
        if ledger.budget() < n_g {
            return Err(Error::BudgetTooSmall { budget: ledger.budget(), needed: n_g });
        }
        let home = self.tree.node(ROOT).state.vocab().clone();
        let mut trace = Vec::new();
        let mut best: Option<(MaskedState, f64, NodeId)> = None;
        let mut stop_reason = StopReason::Budget;
        let mut iteration = 0;
        while ledger.has_headroom() {
            if self.config.max_iterations.is_some_and(|m| iteration >= m) {
                stop_reason = StopReason::IterationLimit;
                break;
            }
            let sel = match self.tree.select(self.config.c_exp) {
                Ok(s) => s,
                Err(Error::TreeExhausted) => {
                    stop_reason = StopReason::TreeExhausted;
                    break;
                }
                Err(e) => return Err(e),
            };
            let nfe_before = ledger.consumed();
            let exp = self.expand(sel.node, ledger)?;
            self.tree.backup(exp.child, exp.reward);
            debug_assert!(self.tree.check_consistency().is_ok());
            if best.as_ref().is_none_or(|(_, r, _)| exp.reward > *r) {
                best = Some((exp.terminal.clone(), exp.reward, exp.child));
            }
            trace.push(TraceRecord {
                iteration,
                action_path: self.action_path(exp.child),
                nfe_before,
                nfe_consumed: ledger.consumed(),
                reward: exp.reward,
                cache_hit: exp.cache_hit,
                best_so_far: best.as_ref().map_or(exp.reward, |b| b.1),
                skipped_exhausted: sel.skipped_exhausted,
                seed: self.tree.node(exp.child).seed,
                flag: exp.flag,
            });
            iteration += 1;
        }
        let (best, best_reward, best_node) = best.ok_or(Error::TreeExhausted)?;
        let best = match &self.env.codecs {
            Some(c) if best.vocab() != &home => c.map(&best, &home)?,
            _ => best,
        };
        Ok(SearchOutcome {
            best,
            best_reward,
            best_node,
            trace,
            stop_reason,
            overshoot: ledger.consumed().saturating_sub(ledger.budget()),
            ledger: ledger.snapshot(),
            tree: self.tree,
        })
    }
}

/// Runs UnMaskFork from `root` with the ledger's budget.
pub fn run(
    env: SearchEnv<'_>,
    actions: &[Action],
    root: MaskedState,
    config: SearchConfig,
    ledger: &NfeLedger,
) -> Result<SearchOutcome> {
    UnMaskFork::new(env, actions, root, config)?.run(ledger)
}
