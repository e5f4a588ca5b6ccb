//! Commit-set selection.
//!
//! Each strategy picks `S_t ⊆ M(z_t)`, the masked positions to commit in
//! this step. TopK selections break ties toward the lowest position, and a
//! request for more positions than remain is clamped.

use rand::Rng;

use crate::error::{Error, Result};
use crate::state::MaskedState;
use crate::vocab::TokenId;

/// Probability rows keyed by absolute position.
pub type ProbRows = [(usize, Vec<f64>)];

/// Active region for block-scoped strategies. Block diffusion is not used,
/// so callers pass [`Block::Full`] unless testing the block formulation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Block {
    #[default]
    Full,
    /// Absolute positions `start..end`.
    Range(usize, usize),
}

impl Block {
    pub fn contains(self, pos: usize) -> bool {
        match self {
            Block::Full => true,
            Block::Range(s, e) => (s..e).contains(&pos),
        }
    }

    pub fn masked_positions(self, state: &MaskedState) -> Vec<usize> {
        state.masked_positions().into_iter().filter(|&p| self.contains(p)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RemaskDecision {
    /// Positions to commit, ascending.
    pub commit_set: Vec<usize>,
    /// Per-position score the selection was based on (confidence, `-H`,
    /// uniform draw, or Bernoulli outcome), in position order.
    pub scores: Vec<(usize, f64)>,
}

/// Shannon entropy in nats; zero-probability entries contribute nothing.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// The `k` highest-scoring positions, ties to the lowest position. Returned
/// ascending.
pub fn top_k(scores: &[(usize, f64)], k: usize) -> Vec<usize> {
    let mut order: Vec<&(usize, f64)> = scores.iter().collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut picked: Vec<usize> = order.into_iter().take(k).map(|&(p, _)| p).collect();
    picked.sort_unstable();
    picked
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    Ok(())
}

fn rows_in_block<'a>(state: &MaskedState, rows: &'a ProbRows, block: Block) -> Result<Vec<&'a (usize, Vec<f64>)>> {
    let rows: Vec<_> = rows.iter().filter(|(p, _)| block.contains(*p)).collect();
    if rows.iter().any(|(p, _)| !state.is_masked(*p)) {
        return Err(Error::InvalidArgument("probability row for a committed position".into()));
    }
    if rows.is_empty() {
        return Err(Error::NoMaskedPositions);
    }
    Ok(rows)
}

/// Commits the `k` lowest-entropy masked positions (confidence `-H`).
pub fn entropy_topk(state: &MaskedState, probs: &ProbRows, k: usize, block: Block) -> Result<RemaskDecision> {
    check_k(k)?;
    let scores: Vec<(usize, f64)> =
        rows_in_block(state, probs, block)?.into_iter().map(|(p, row)| (*p, -entropy(row))).collect();
    Ok(RemaskDecision { commit_set: top_k(&scores, k), scores })
}

/// Commits the `k` positions whose proposed token is most probable.
/// `eos_zero` zeroes the confidence of positions proposing that token.
pub fn low_confidence_topk(
    state: &MaskedState,
    probs: &ProbRows,
    proposed: &[(usize, TokenId)],
    k: usize,
    block: Block,
    eos_zero: Option<TokenId>,
) -> Result<RemaskDecision> {
    check_k(k)?;
    let rows = rows_in_block(state, probs, block)?;
    let scores = rows
        .into_iter()
        .map(|(p, row)| {
            let token = proposed
                .iter()
                .find(|(q, _)| q == p)
                .map(|&(_, t)| t)
                .ok_or_else(|| Error::InvalidArgument(format!("no proposed token for position {p}")))?;
            let c = if eos_zero == Some(token) { 0.0 } else { row[token as usize] };
            Ok((*p, c))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RemaskDecision { commit_set: top_k(&scores, k), scores })
}

/// Bernoulli transition probability `1 - alpha_prev / alpha_t`.
pub fn origin_probability(alpha_t: f64, alpha_prev: f64) -> Result<f64> {
    if !(alpha_prev >= 0.0 && alpha_prev < alpha_t && alpha_t <= 1.0) {
        return Err(Error::InvalidRatioPair { alpha_t, alpha_prev });
    }
    Ok(1.0 - alpha_prev / alpha_t)
}

/// Commits each masked position independently with probability
/// `1 - alpha_prev / alpha_t`. May return an empty set.
pub fn origin_bernoulli<R: Rng + ?Sized>(
    state: &MaskedState,
    alpha_t: f64,
    alpha_prev: f64,
    rng: &mut R,
    block: Block,
) -> Result<RemaskDecision> {
    let p = origin_probability(alpha_t, alpha_prev)?;
    let scores: Vec<(usize, f64)> = block
        .masked_positions(state)
        .into_iter()
        .map(|pos| (pos, if rng.gen::<f64>() < p { 1.0 } else { 0.0 }))
        .collect();
    let commit_set = scores.iter().filter(|(_, b)| *b == 1.0).map(|(p, _)| *p).collect();
    Ok(RemaskDecision { commit_set, scores })
}

/// Commits the `k` masked positions with the largest `Uniform(0,1)` draws.
pub fn random_topk<R: Rng + ?Sized>(state: &MaskedState, k: usize, rng: &mut R, block: Block) -> Result<RemaskDecision> {
    check_k(k)?;
    let positions = block.masked_positions(state);
    if positions.is_empty() {
        return Err(Error::NoMaskedPositions);
    }
    let scores: Vec<(usize, f64)> = positions.into_iter().map(|p| (p, rng.gen::<f64>())).collect();
    Ok(RemaskDecision { commit_set: top_k(&scores, k), scores })
}
