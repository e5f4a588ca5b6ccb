use bitvec::prelude::*;

use super::{Denoiser, DenoiserOutput};
use crate::error::{Error, Result};
use crate::state::MaskedState;
use crate::vocab::{TokenId, Vocabulary};

/// Logit used for tokens with zero posterior mass. Its softmax weight
/// underflows to exactly zero at `T <= 1`.
pub const ZERO_MASS_LOGIT: f64 = -1.0e4;

/// The true posterior of a finite distribution over generation segments.
///
/// For a state `z`, position `i` gets `p_i(v | z) ∝ Σ P(x)` over support
/// sequences `x` that agree with every committed position of `z` and have
/// `x_i = v`. States consistent with no support sequence get the uniform
/// distribution over `V`.
pub struct ExactPosteriorDenoiser {
    vocab: Vocabulary,
    gen_len: usize,
    support: Vec<(Vec<TokenId>, f64)>,
    // index[pos][token] marks the support sequences with that token there
    index: Vec<Vec<BitVec>>,
}

impl ExactPosteriorDenoiser {
    pub fn new(vocab: Vocabulary, support: Vec<(Vec<TokenId>, f64)>) -> Result<Self> {
        let gen_len = support.first().map(|(x, _)| x.len()).unwrap_or(0);
        if gen_len == 0 {
            return Err(Error::InvalidArgument("support is empty".into()));
        }
        let total: f64 = support.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-9 || support.iter().any(|(_, p)| !(*p >= 0.0)) {
            return Err(Error::InvalidArgument(format!("support probabilities sum to {total}")));
        }
        for (x, _) in &support {
            if x.len() != gen_len {
                return Err(Error::InvalidArgument("support sequences differ in length".into()));
            }
            if let Some(t) = x.iter().find(|&&t| !vocab.contains(t)) {
                return Err(Error::InvalidArgument(format!("support token {t} is not in the vocabulary")));
            }
        }
        let mut index = vec![vec![bitvec![0; support.len()]; vocab.size]; gen_len];
        for (k, (x, _)) in support.iter().enumerate() {
            for (pos, &t) in x.iter().enumerate() {
                index[pos][t as usize].set(k, true);
            }
        }
        Ok(Self { vocab, gen_len, support, index })
    }

    /// Point-mass support on a single sequence.
    pub fn point(vocab: Vocabulary, target: Vec<TokenId>) -> Result<Self> {
        Self::new(vocab, vec![(target, 1.0)])
    }

    pub fn support(&self) -> &[(Vec<TokenId>, f64)] {
        &self.support
    }

    fn consistent(&self, state: &MaskedState) -> BitVec {
        let mut mask = bitvec![1; self.support.len()];
        for (pos, &t) in state.gen().iter().enumerate() {
            if t != state.mask_id() {
                mask &= self.index[pos][t as usize].as_bitslice();
            }
        }
        mask
    }

    /// Posterior rows for the masked positions of `state`.
    pub fn posterior(&self, state: &MaskedState) -> Result<Vec<(usize, Vec<f64>)>> {
        if state.gen_len() != self.gen_len {
            return Err(Error::InvalidState(format!(
                "generation length {} does not match support length {}",
                state.gen_len(),
                self.gen_len
            )));
        }
        let consistent = self.consistent(state);
        let mass: f64 = consistent.iter_ones().map(|k| self.support[k].1).sum();
        let np = state.prompt_len();
        let rows = state
            .masked_positions()
            .into_iter()
            .map(|abs| {
                let row = if mass > 0.0 {
                    (0..self.vocab.size)
                        .map(|v| {
                            let mut hit = consistent.clone();
                            hit &= self.index[abs - np][v].as_bitslice();
                            hit.iter_ones().map(|k| self.support[k].1).sum::<f64>() / mass
                        })
                        .collect()
                } else {
                    self.uniform_row()
                };
                (abs, row)
            })
            .collect();
        Ok(rows)
    }

    fn uniform_row(&self) -> Vec<f64> {
        let p = 1.0 / self.vocab.token_count() as f64;
        (0..self.vocab.size)
            .map(|v| if self.vocab.contains(v as TokenId) { p } else { 0.0 })
            .collect()
    }
}

impl Denoiser for ExactPosteriorDenoiser {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn forward(&self, state: &MaskedState) -> Result<DenoiserOutput> {
        let (positions, logits) = self
            .posterior(state)?
            .into_iter()
            .map(|(pos, row)| {
                let logits = row.into_iter().map(|p| if p > 0.0 { p.ln() } else { ZERO_MASS_LOGIT }).collect();
                (pos, logits)
            })
            .unzip();
        DenoiserOutput::new(positions, logits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::DenoiserRegistry;
    use crate::ledger::NfeLedger;
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    // tokens: A=2, B=3, C=4
    fn ab_ac() -> (Vocabulary, ExactPosteriorDenoiser) {
        let v = Vocabulary::toy("t", 5);
        let d = ExactPosteriorDenoiser::new(v.clone(), vec![(vec![2, 3], 0.5), (vec![2, 4], 0.5)]).unwrap();
        (v, d)
    }

    #[test]
    fn second_position_splits() {
        let (v, d) = ab_ac();
        let s = MaskedState::new(&v, vec![], vec![2, v.mask_id]).unwrap();
        let rows = d.posterior(&s).unwrap();
        assert_eq!(rows.len(), 1);
        let (pos, row) = &rows[0];
        assert_eq!(*pos, 1);
        assert_abs_diff_eq!(row[3], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(row[4], 0.5, epsilon = 1e-15);
        assert_eq!(row[2], 0.0);
    }

    #[test]
    fn first_position_is_certain() {
        let (v, d) = ab_ac();
        let s = MaskedState::fully_masked(&v, vec![], 2).unwrap();
        let rows = d.posterior(&s).unwrap();
        assert_eq!(rows[0].1[2], 1.0);
        let out = d.forward(&s).unwrap();
        assert_eq!(out.tempered(0, 1.0).unwrap()[2], 1.0);
    }

    #[test]
    fn off_support_is_uniform() {
        let (v, d) = ab_ac();
        let s = MaskedState::new(&v, vec![], vec![0, v.mask_id]).unwrap();
        let row = &d.posterior(&s).unwrap()[0].1;
        for p in row {
            assert_abs_diff_eq!(*p, 0.2, epsilon = 1e-15);
        }
    }

    #[test]
    fn evaluate_costs_one_nfe() {
        let (v, d) = ab_ac();
        let reg = DenoiserRegistry::new().with("exact", Arc::new(d));
        let ledger = NfeLedger::unbounded();
        let s = MaskedState::fully_masked(&v, vec![1], 2).unwrap();
        reg.evaluate("exact", &s, &ledger).unwrap();
        assert_eq!(ledger.consumed(), 1);
        let done = MaskedState::new(&v, vec![1], vec![2, 3]).unwrap();
        assert!(matches!(reg.evaluate("exact", &done, &ledger), Err(Error::NoMaskedPositions)));
        assert_eq!(ledger.consumed(), 1);
    }

    #[test]
    fn rejects_bad_support() {
        let v = Vocabulary::toy("t", 5);
        assert!(ExactPosteriorDenoiser::new(v.clone(), vec![]).is_err());
        assert!(ExactPosteriorDenoiser::new(v.clone(), vec![(vec![1], 0.4)]).is_err());
        assert!(ExactPosteriorDenoiser::new(v.clone(), vec![(vec![1], 0.5), (vec![1, 2], 0.5)]).is_err());
        assert!(ExactPosteriorDenoiser::new(v, vec![(vec![5], 1.0)]).is_err());
    }
}
