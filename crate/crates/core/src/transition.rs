//! Unmasking transitions under a fixed action.
//!
//! One atomic step costs one NFE and commits exactly one token. Token
//! proposals are greedy at `T = 0` and sampled from `softmax(ℓ/T)`
//! otherwise. The distribution used for confidence scores is the tempered
//! one for `T > 0` and the plain `softmax(ℓ)` for `T = 0`.

use rand::distributions::{Distribution, WeightedIndex};
use rand_chacha::ChaCha8Rng;

use crate::action::{Action, RemaskStrategy};
use crate::cache::RolloutCache;
use crate::denoiser::{argmax, tempered_distribution, DenoiserRegistry};
use crate::error::{Error, Result};
use crate::ledger::NfeLedger;
use crate::remask::{self, Block, RemaskDecision};
use crate::schedule::masked_count_at;
use crate::state::MaskedState;
use crate::vocab::{TokenId, Vocabulary};

/// Multiplies the EoS and pad entries of `probs` by the action's penalty
/// when the action uses the probability-penalty rule. The result is left
/// unnormalized.
pub fn apply_eos_suppression(action: &Action, vocab: &Vocabulary, probs: &mut [f64]) {
    if !(action.eos_suppression && action.remask.uses_probability_penalty()) {
        return;
    }
    for id in [vocab.eos_id, vocab.pad_id] {
        if let Some(p) = probs.get_mut(id as usize) {
            *p *= action.eos_penalty;
        }
    }
}

/// Token whose proposers get zero confidence under the confidence rule, if
/// the action applies it.
pub fn eos_confidence_rule(action: &Action, vocab: &Vocabulary) -> Option<TokenId> {
    (action.eos_suppression && !action.remask.uses_probability_penalty()).then_some(vocab.eos_id)
}

/// Zeroes the scores of positions proposing EoS when the action uses the
/// confidence rule.
pub fn zero_eos_confidence(
    action: &Action,
    vocab: &Vocabulary,
    scores: &mut [(usize, f64)],
    proposed: &[(usize, TokenId)],
) {
    let Some(eos) = eos_confidence_rule(action, vocab) else { return };
    for (pos, score) in scores.iter_mut() {
        if proposed.iter().any(|&(p, t)| p == *pos && t == eos) {
            *score = 0.0;
        }
    }
}

fn normalize(p: &mut [f64]) {
    let z: f64 = p.iter().sum();
    if z > 0.0 {
        p.iter_mut().for_each(|x| *x /= z);
    }
}

fn penalized_logits(action: &Action, vocab: &Vocabulary, row: &[f64]) -> Vec<f64> {
    let mut row = row.to_vec();
    if action.eos_suppression && action.remask.uses_probability_penalty() {
        let shift = if action.eos_penalty > 0.0 { action.eos_penalty.ln() } else { f64::NEG_INFINITY };
        for id in [vocab.eos_id, vocab.pad_id] {
            if let Some(l) = row.get_mut(id as usize) {
                *l = (*l + shift).max(f64::MIN);
            }
        }
    }
    row
}

/// Proposals and scoring distributions for every masked position.
struct Proposals {
    proposed: Vec<(usize, TokenId)>,
    scoring: Vec<(usize, Vec<f64>)>,
}

fn propose(
    action: &Action,
    vocab: &Vocabulary,
    output: &crate::denoiser::DenoiserOutput,
    rng: &mut ChaCha8Rng,
) -> Result<Proposals> {
    let mut proposed = Vec::with_capacity(output.positions().len());
    let mut scoring = Vec::with_capacity(output.positions().len());
    for (pos, row) in output.rows() {
        if action.temperature == 0.0 {
            let mut dist = tempered_distribution(row, 1.0);
            apply_eos_suppression(action, vocab, &mut dist);
            normalize(&mut dist);
            proposed.push((pos, argmax(&penalized_logits(action, vocab, row)) as TokenId));
            scoring.push((pos, dist));
        } else {
            let mut dist = tempered_distribution(row, action.temperature);
            apply_eos_suppression(action, vocab, &mut dist);
            normalize(&mut dist);
            let token = WeightedIndex::new(&dist)
                .map_err(|e| Error::MalformedOutput(format!("cannot sample position {pos}: {e}")))?
                .sample(rng);
            proposed.push((pos, token as TokenId));
            scoring.push((pos, dist));
        }
    }
    Ok(Proposals { proposed, scoring })
}

fn select_commit(
    action: &Action,
    vocab: &Vocabulary,
    state: &MaskedState,
    props: &Proposals,
    rng: &mut ChaCha8Rng,
) -> Result<RemaskDecision> {
    match action.remask {
        RemaskStrategy::Entropy => remask::entropy_topk(state, &props.scoring, 1, Block::Full),
        RemaskStrategy::LowConfidence => remask::low_confidence_topk(
            state,
            &props.scoring,
            &props.proposed,
            1,
            Block::Full,
            eos_confidence_rule(action, vocab),
        ),
        RemaskStrategy::Random => remask::random_topk(state, 1, rng, Block::Full),
        RemaskStrategy::Origin => {
            let n = state.gen_len() as f64;
            let masked = state.masked_count() as f64;
            let drawn = remask::origin_bernoulli(state, masked / n, (masked - 1.0) / n, rng, Block::Full)?;
            // one token per NFE: the most confident of the drawn set, or of
            // every masked position when the draw came up empty
            let pool: Vec<(usize, Vec<f64>)> = if drawn.commit_set.is_empty() {
                props.scoring.clone()
            } else {
                props.scoring.iter().filter(|(p, _)| drawn.commit_set.contains(p)).cloned().collect()
            };
            let pick = remask::entropy_topk(state, &pool, 1, Block::Full)?;
            Ok(RemaskDecision { commit_set: pick.commit_set, scores: drawn.scores })
        }
    }
}

/// One atomic unmasking step: one forward pass, one committed token.
pub fn unmask_step(
    state: &MaskedState,
    action: &Action,
    registry: &DenoiserRegistry,
    ledger: &NfeLedger,
    rng: &mut ChaCha8Rng,
) -> Result<MaskedState> {
    if state.is_terminal() {
        return Err(Error::FullyUnmasked);
    }
    let output = registry.evaluate(&action.denoiser_id, state, ledger)?;
    let vocab = registry.vocab(&action.denoiser_id)?;
    let props = propose(action, vocab, &output, rng)?;
    let decision = select_commit(action, vocab, state, &props, rng)?;
    let mut next = state.clone();
    for pos in decision.commit_set {
        let token = props.proposed.iter().find(|(p, _)| *p == pos).map(|&(_, t)| t).expect("proposal per position");
        next.commit(pos, token)?;
    }
    Ok(next)
}

/// Applies atomic steps until at most `target_masked` positions remain.
/// Deterministic steps are read from and written to the step cache.
pub fn unmask_to_count(
    state: &MaskedState,
    action: &Action,
    target_masked: usize,
    registry: &DenoiserRegistry,
    ledger: &NfeLedger,
    cache: &mut RolloutCache,
    rng: &mut ChaCha8Rng,
) -> Result<MaskedState> {
    let deterministic = action.is_deterministic();
    let mut current = state.clone();
    while current.masked_count() > target_masked {
        let digest = current.digest();
        if deterministic {
            if let Some(next) = cache.step(digest, &action.id) {
                current = next.clone();
                continue;
            }
        }
        let next = unmask_step(&current, action, registry, ledger, rng)?;
        if deterministic {
            cache.set_step(digest, &action.id, next.clone());
        }
        current = next;
    }
    Ok(current)
}

/// Unmasks under `action` until `ρ(state) <= target_ratio`.
pub fn unmask_to_next_ratio(
    state: &MaskedState,
    action: &Action,
    target_ratio: f64,
    registry: &DenoiserRegistry,
    ledger: &NfeLedger,
    cache: &mut RolloutCache,
    rng: &mut ChaCha8Rng,
) -> Result<MaskedState> {
    let target = masked_count_at(state.gen_len(), target_ratio);
    if target >= state.masked_count() {
        return Err(Error::TargetRatioReached { current: state.residual_mask_ratio(), target: target_ratio });
    }
    unmask_to_count(state, action, target, registry, ledger, cache, rng)
}

/// Plain single-action decode to a fully unmasked state, without caching.
pub fn decode(
    state: &MaskedState,
    action: &Action,
    registry: &DenoiserRegistry,
    ledger: &NfeLedger,
    rng: &mut ChaCha8Rng,
) -> Result<MaskedState> {
    unmask_to_count(state, action, 0, registry, ledger, &mut RolloutCache::disabled(), rng)
}
