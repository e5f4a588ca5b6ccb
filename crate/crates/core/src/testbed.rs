//! Desk-scale instances with enumerable ground truth.
//!
//! The planted two-denoiser task: denoiser `A` only knows the target while
//! more than half the sequence is masked, `B` only afterwards. A single
//! action gets about half the tokens right; the best trajectory switches
//! from `A` to `B` partway down the schedule.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::action::{Action, RemaskStrategy};
use crate::cache::RolloutCache;
use crate::denoiser::{Denoiser, DenoiserRegistry, PlantedSkillDenoiser, SkillBand};
use crate::error::Result;
use crate::ledger::NfeLedger;
use crate::reward::ExactMatchReward;
use crate::schedule::RatioSchedule;
use crate::search::SearchEnv;
use crate::state::MaskedState;
use crate::transition::unmask_to_count;
use crate::util::mix_seed;
use crate::vocab::{TokenId, Vocabulary};

pub struct PlantedTask {
    pub vocab: Vocabulary,
    pub target: Vec<TokenId>,
    pub registry: DenoiserRegistry,
    pub actions: Vec<Action>,
    pub reward: ExactMatchReward,
    pub root: MaskedState,
}

impl PlantedTask {
    /// Two planted denoisers split at mask ratio `split`, one greedy
    /// entropy action each (`A` registered first).
    pub fn new(seed: u64, gen_len: usize, vocab_size: usize, split: f64) -> Result<Self> {
        let vocab = Vocabulary::toy("planted", vocab_size);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target: Vec<TokenId> = (0..gen_len).map(|_| rng.gen_range(2..vocab_size as TokenId)).collect();
        let a = PlantedSkillDenoiser::new(vocab.clone(), target.clone(), SkillBand::new(split, 1.0), mix_seed(&[seed, 1]))?;
        let b = PlantedSkillDenoiser::new(vocab.clone(), target.clone(), SkillBand::new(0.0, split), mix_seed(&[seed, 2]))?;
        Ok(Self::from_denoisers(vocab, target, Arc::new(a), Arc::new(b)))
    }

    pub fn from_denoisers(vocab: Vocabulary, target: Vec<TokenId>, a: Arc<dyn Denoiser>, b: Arc<dyn Denoiser>) -> Self {
        let registry = DenoiserRegistry::new().with("A", a).with("B", b);
        let actions = vec![
            Action::new("A", "A", 0.0, RemaskStrategy::Entropy),
            Action::new("B", "B", 0.0, RemaskStrategy::Entropy),
        ];
        let root = MaskedState::fully_masked(&vocab, vec![], target.len()).expect("non-empty target");
        let reward = ExactMatchReward::fraction(target.clone());
        Self { vocab, target, registry, actions, reward, root }
    }

    /// `actions` planted denoisers (at most 3 get distinct remask rules)
    /// whose skill bands partition `[0, 1]` at random cut points, each
    /// with a deterministic action. Small enough to enumerate.
    pub fn random(seed: u64, actions: usize, gen_len: usize, vocab_size: usize) -> Result<Self> {
        let vocab = Vocabulary::toy("planted", vocab_size);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target: Vec<TokenId> = (0..gen_len).map(|_| rng.gen_range(2..vocab_size as TokenId)).collect();
        let mut cuts: Vec<f64> = (1..actions).map(|_| rng.gen_range(0.1..0.9)).collect();
        cuts.sort_by(f64::total_cmp);
        cuts.insert(0, 0.0);
        cuts.push(1.0);
        let mut registry = DenoiserRegistry::new();
        let mut list = Vec::with_capacity(actions);
        for i in 0..actions {
            let id = ((b'A' + i as u8) as char).to_string();
            // bands are listed high-ratio first, so the first action opens the schedule
            let band = SkillBand::new(cuts[actions - 1 - i], cuts[actions - i]);
            let d = PlantedSkillDenoiser::new(vocab.clone(), target.clone(), band, mix_seed(&[seed, i as u64 + 1]))?;
            registry.register(&id, Arc::new(d));
            let remask = if i % 2 == 0 { RemaskStrategy::Entropy } else { RemaskStrategy::LowConfidence };
            list.push(Action::new(&id, &id, 0.0, remask));
        }
        let root = MaskedState::fully_masked(&vocab, vec![], gen_len)?;
        let reward = ExactMatchReward::fraction(target.clone());
        Ok(Self { vocab, target, registry, actions: list, reward, root })
    }

    pub fn env(&self) -> SearchEnv<'_> {
        SearchEnv::new(&self.registry, &self.reward)
    }
}

/// Outcome of enumerating every action sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct BruteForce {
    pub max_reward: f64,
    /// Action indices of the first sequence reaching the maximum.
    pub argmax: Vec<usize>,
    /// Reward of every sequence, in lexicographic order of indices.
    pub rewards: Vec<(Vec<usize>, f64)>,
}

impl BruteForce {
    pub fn reward_of(&self, seq: &[usize]) -> Option<f64> {
        self.rewards.iter().find(|(s, _)| s == seq).map(|(_, r)| *r)
    }
}

/// Tree depth for a sequence of length `gen_len` under `schedule`.
pub fn tree_depth(schedule: &RatioSchedule, gen_len: usize) -> usize {
    schedule.levels(gen_len).len().max(1)
}

/// Scores all `|A|^depth` action sequences: action `d` unmasks to schedule
/// level `d`, and the last one also finishes the rollout.
pub fn brute_force(env: SearchEnv<'_>, actions: &[Action], root: &MaskedState, schedule: &RatioSchedule) -> Result<BruteForce> {
    let levels = schedule.levels(root.gen_len());
    let depth = levels.len().max(1);
    let target = |d: usize| levels.get(d).map_or(0, |l| l.masked);
    let ledger = NfeLedger::unbounded();
    let mut cache = RolloutCache::new(true);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut memo: HashMap<Vec<usize>, MaskedState> = HashMap::new();
    let mut rewards = Vec::new();
    let total = actions.len().pow(depth as u32);
    for code in 0..total {
        let mut seq = vec![0; depth];
        let mut c = code;
        for slot in seq.iter_mut().rev() {
            *slot = c % actions.len();
            c /= actions.len();
        }
        let mut state = root.clone();
        for d in 0..depth {
            if let Some(s) = memo.get(&seq[..=d]) {
                state = s.clone();
                continue;
            }
            let a = &actions[seq[d]];
            let start = env.state_for(&state, a)?;
            state = unmask_to_count(&start, a, target(d), env.registry, &ledger, &mut cache, &mut rng)?;
            memo.insert(seq[..=d].to_vec(), state.clone());
        }
        let last = &actions[seq[depth - 1]];
        let terminal = unmask_to_count(&state, last, 0, env.registry, &ledger, &mut cache, &mut rng)?;
        rewards.push((seq, env.score_terminal(&terminal, root.vocab())?.reward));
    }
    let (argmax, max_reward) = rewards
        .iter()
        .fold(None, |best: Option<(&Vec<usize>, f64)>, (s, r)| match best {
            Some((_, b)) if b >= *r => best,
            _ => Some((s, *r)),
        })
        .map(|(s, r)| (s.clone(), r))
        .expect("at least one sequence");
    Ok(BruteForce { max_reward, argmax, rewards })
}
