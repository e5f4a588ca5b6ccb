//! Matched-budget comparison methods: Best-of-N, a DTS-like stochastic
//! trajectory tree, and Pair.
//!
//! All three draw from the same [`NfeLedger`] contract as the search and
//! emit the same [`TraceRecord`]s, one per completed trajectory.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::error::{Error, Result};
use crate::ledger::{LedgerSnapshot, NfeLedger};
use crate::search::{uct_score, SearchEnv, StopReason, TraceRecord};
use crate::state::MaskedState;
use crate::transition::{decode, unmask_step};
use crate::util::mix_seed;

#[derive(Clone, Debug)]
pub struct BaselineOutcome {
    pub best: MaskedState,
    pub best_reward: f64,
    pub trace: Vec<TraceRecord>,
    pub ledger: LedgerSnapshot,
    pub stop_reason: StopReason,
}

fn check_budget(ledger: &NfeLedger, root: &MaskedState) -> Result<u64> {
    let n_g = root.gen_len() as u64;
    if ledger.budget() < n_g {
        return Err(Error::BudgetTooSmall { budget: ledger.budget(), needed: n_g });
    }
    Ok(n_g)
}

/// Tracks the best candidate and writes trace lines.
struct Tally {
    best: Option<(MaskedState, f64)>,
    trace: Vec<TraceRecord>,
}

impl Tally {
    fn new() -> Self {
        Self { best: None, trace: Vec::new() }
    }

    fn record(&mut self, path: Vec<String>, nfe_before: u64, ledger: &NfeLedger, terminal: MaskedState, reward: f64, seed: Option<u64>, flag: Option<String>) {
        if self.best.as_ref().is_none_or(|(_, r)| reward > *r) {
            self.best = Some((terminal, reward));
        }
        self.trace.push(TraceRecord {
            iteration: self.trace.len() as u64,
            action_path: path,
            nfe_before,
            nfe_consumed: ledger.consumed(),
            reward,
            cache_hit: false,
            best_so_far: self.best.as_ref().map_or(reward, |b| b.1),
            skipped_exhausted: 0,
            seed,
            flag,
        });
    }

    fn finish(self, ledger: &NfeLedger, stop_reason: StopReason) -> Result<BaselineOutcome> {
        let (best, best_reward) = self.best.ok_or(Error::TreeExhausted)?;
        Ok(BaselineOutcome { best, best_reward, trace: self.trace, ledger: ledger.snapshot(), stop_reason })
    }
}

/// `floor(budget / n_g)` independent full decodes under one action; the
/// highest reward wins, earliest first on ties. Deterministic actions
/// produce identical candidates and are deliberately not deduplicated.
pub fn best_of_n(env: SearchEnv<'_>, action: &Action, root: &MaskedState, seed: u64, ledger: &NfeLedger) -> Result<BaselineOutcome> {
    let n_g = check_budget(ledger, root)?;
    action.validate()?;
    let start = env.state_for(root, action)?;
    let n = ledger.budget() / n_g;
    let mut tally = Tally::new();
    for i in 0..n {
        let cand_seed = (!action.is_deterministic()).then(|| mix_seed(&[seed, i]));
        let mut rng = ChaCha8Rng::seed_from_u64(cand_seed.unwrap_or(0));
        let before = ledger.consumed();
        let terminal = decode(&start, action, env.registry, ledger, &mut rng)?;
        ledger.record_rollout(false);
        let out = env.score_terminal(&terminal, root.vocab())?;
        tally.record(vec![action.id.clone()], before, ledger, terminal, out.reward, cand_seed, out.flag);
    }
    tally.finish(ledger, StopReason::Budget)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DtsConfig {
    /// Children per node before selection descends instead of branching.
    pub width: usize,
    pub c_exp: f64,
    pub seed: u64,
}

impl Default for DtsConfig {
    fn default() -> Self {
        Self { width: 2, c_exp: 1.0, seed: 0 }
    }
}

struct DtsNode {
    state: MaskedState,
    parent: Option<usize>,
    children: Vec<usize>,
    visits: u64,
    value_sum: f64,
    closed: bool,
}

/// DTS-style search: every intermediate rollout state becomes a node,
/// branching is stochastic, and a node's value is the mean terminal reward
/// of the rollouts through it. New children cycle through the action set.
pub fn dts_like(env: SearchEnv<'_>, actions: &[Action], root: &MaskedState, config: &DtsConfig, ledger: &NfeLedger) -> Result<BaselineOutcome> {
    check_budget(ledger, root)?;
    if config.width == 0 {
        return Err(Error::InvalidArgument("DTS-like width must be at least 1".into()));
    }
    if actions.is_empty() || actions.iter().all(Action::is_deterministic) {
        return Err(Error::InvalidArgument("DTS-like search needs at least one stochastic action".into()));
    }
    for a in actions {
        a.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut nodes = vec![DtsNode { state: root.clone(), parent: None, children: Vec::new(), visits: 0, value_sum: 0.0, closed: false }];
    let mut tally = Tally::new();
    let mut stop_reason = StopReason::Budget;
    'search: while ledger.has_headroom() {
        let mut id = 0;
        loop {
            let node = &nodes[id];
            if node.children.len() < config.width && !node.state.is_terminal() {
                break;
            }
            let live = node.children.iter().filter(|&&c| !nodes[c].closed).map(|&c| {
                (c, uct_score(nodes[c].value_sum, nodes[c].visits, node.visits, config.c_exp))
            });
            let pick = live.fold(None, |best: Option<(usize, f64)>, (c, s)| match best {
                Some((_, bs)) if bs >= s => best,
                _ => Some((c, s)),
            });
            match pick {
                Some((c, _)) => id = c,
                None => {
                    nodes[id].closed = true;
                    if id == 0 {
                        stop_reason = StopReason::TreeExhausted;
                        break 'search;
                    }
                    id = 0;
                }
            }
        }
        let action = &actions[nodes[id].children.len() % actions.len()];
        let seed = rng.next_u64();
        let mut step_rng = ChaCha8Rng::seed_from_u64(seed);
        let before = ledger.consumed();
        let mut cur = env.state_for(&nodes[id].state, action)?;
        let mut parent = id;
        loop {
            cur = unmask_step(&cur, action, env.registry, ledger, &mut step_rng)?;
            let nid = nodes.len();
            nodes.push(DtsNode { state: cur.clone(), parent: Some(parent), children: Vec::new(), visits: 0, value_sum: 0.0, closed: false });
            nodes[parent].children.push(nid);
            parent = nid;
            if cur.is_terminal() {
                nodes[nid].closed = true;
                break;
            }
        }
        ledger.record_rollout(false);
        let out = env.score_terminal(&cur, root.vocab())?;
        let mut up = Some(parent);
        while let Some(n) = up {
            nodes[n].visits += 1;
            nodes[n].value_sum += out.reward;
            up = nodes[n].parent;
        }
        tally.record(vec![action.id.clone()], before, ledger, cur, out.reward, Some(seed), out.flag);
    }
    tally.finish(ledger, stop_reason)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairArm {
    A,
    B,
}

#[derive(Clone, Debug)]
pub struct PairOutcome {
    pub best: MaskedState,
    pub best_reward: f64,
    pub winner: PairArm,
    pub a: BaselineOutcome,
    pub b: BaselineOutcome,
    /// Both arms' traces, B offset by A's spend.
    pub trace: Vec<TraceRecord>,
    pub ledger: LedgerSnapshot,
}

/// Best-of-N for each arm at half the budget; the higher reward wins, A on
/// ties. Both arms' spend is folded into `ledger`.
pub fn pair(env: SearchEnv<'_>, arm_a: &Action, arm_b: &Action, root: &MaskedState, seed: u64, ledger: &NfeLedger) -> Result<PairOutcome> {
    let half = ledger.budget() / 2;
    let n_g = root.gen_len() as u64;
    if half < n_g {
        return Err(Error::BudgetTooSmall { budget: ledger.budget(), needed: 2 * n_g });
    }
    if ledger.budget() % 2 != 0 {
        return Err(Error::InvalidArgument(format!("Pair needs an even budget, got {}", ledger.budget())));
    }
    let (la, lb) = (NfeLedger::new(half), NfeLedger::new(half));
    let a = best_of_n(env, arm_a, root, mix_seed(&[seed, 0]), &la)?;
    let b = best_of_n(env, arm_b, root, mix_seed(&[seed, 1]), &lb)?;
    ledger.absorb(&la);
    ledger.absorb(&lb);

    let offset = la.consumed();
    let mut trace = a.trace.clone();
    let mut running = a.best_reward;
    for t in &b.trace {
        running = running.max(t.reward);
        trace.push(TraceRecord {
            iteration: trace.len() as u64,
            nfe_before: t.nfe_before + offset,
            nfe_consumed: t.nfe_consumed + offset,
            best_so_far: running,
            ..t.clone()
        });
    }
    let (best, best_reward, winner) = if b.best_reward > a.best_reward {
        (b.best.clone(), b.best_reward, PairArm::B)
    } else {
        (a.best.clone(), a.best_reward, PairArm::A)
    };
    Ok(PairOutcome { best, best_reward, winner, a, b, trace, ledger: ledger.snapshot() })
}
