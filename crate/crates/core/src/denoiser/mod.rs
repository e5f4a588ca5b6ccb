//! Denoiser forward passes.
//!
//! A denoiser maps a masked state to one logit row over `V` per masked
//! position. Every successful call made through [`DenoiserRegistry::evaluate`]
//! costs exactly one NFE on the caller's ledger; failed calls cost nothing.

mod counting;
mod exact;
mod planted;
pub mod remote;

use std::sync::Arc;

use indexmap::IndexMap;

pub use counting::CountingDenoiser;
pub use exact::ExactPosteriorDenoiser;
pub use planted::{PlantedSkillDenoiser, SkillBand};
pub use remote::RemoteDenoiser;

use crate::error::{Error, Result};
use crate::ledger::NfeLedger;
use crate::state::MaskedState;
use crate::vocab::{TokenId, Vocabulary};

pub trait Denoiser: Send + Sync {
    fn vocab(&self) -> &Vocabulary;

    /// One forward pass. Must return a row for exactly the masked
    /// positions of `state`, in ascending order.
    fn forward(&self, state: &MaskedState) -> Result<DenoiserOutput>;
}

/// Logits for the masked positions of one state.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserOutput {
    positions: Vec<usize>,
    logits: Vec<Vec<f64>>,
}

impl DenoiserOutput {
    pub fn new(positions: Vec<usize>, logits: Vec<Vec<f64>>) -> Result<Self> {
        if positions.len() != logits.len() {
            return Err(Error::MalformedOutput(format!(
                "{} positions but {} logit rows",
                positions.len(),
                logits.len()
            )));
        }
        if positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::MalformedOutput("positions are not strictly ascending".into()));
        }
        if logits.iter().flatten().any(|l| !l.is_finite()) {
            return Err(Error::MalformedOutput("non-finite logit".into()));
        }
        Ok(Self { positions, logits })
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn rows(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.positions.iter().copied().zip(self.logits.iter().map(Vec::as_slice))
    }

    pub fn logits(&self, position: usize) -> Option<&[f64]> {
        self.positions.binary_search(&position).ok().map(|k| self.logits[k].as_slice())
    }

    /// Greedy proposal at `position` (lowest id on ties).
    pub fn proposed(&self, position: usize) -> Option<TokenId> {
        self.logits(position).map(|row| argmax(row) as TokenId)
    }

    pub fn tempered(&self, position: usize, temperature: f64) -> Option<Vec<f64>> {
        self.logits(position).map(|row| tempered_distribution(row, temperature))
    }

    fn check_against(&self, state: &MaskedState, vocab: &Vocabulary) -> Result<()> {
        if self.positions != state.masked_positions() {
            return Err(Error::MalformedOutput(format!(
                "rows for positions {:?} but the state masks {:?}",
                self.positions,
                state.masked_positions()
            )));
        }
        if let Some(row) = self.logits.iter().find(|r| r.len() != vocab.size) {
            return Err(Error::MalformedOutput(format!(
                "logit row has width {} but the vocabulary has {} columns",
                row.len(),
                vocab.size
            )));
        }
        Ok(())
    }

    /// Pushes the mask column (if inside the logit range) far below every
    /// other logit so it is never proposed.
    fn suppress_column(&mut self, column: usize) {
        for row in &mut self.logits {
            row[column] = f64::MIN;
        }
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `softmax(logits / T)` for `T > 0`; the point mass on the argmax for
/// `T = 0`.
pub fn tempered_distribution(logits: &[f64], temperature: f64) -> Vec<f64> {
    if temperature == 0.0 {
        let mut p = vec![0.0; logits.len()];
        p[argmax(logits)] = 1.0;
        return p;
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|&l| ((l - max) / temperature).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= z);
    p
}

/// Named denoisers. Registration order is preserved.
#[derive(Clone, Default)]
pub struct DenoiserRegistry {
    entries: IndexMap<String, Arc<dyn Denoiser>>,
}

impl DenoiserRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, id: &str, denoiser: Arc<dyn Denoiser>) -> &mut Self {
        self.entries.insert(id.to_string(), denoiser);
        self
    }

    pub fn with(mut self, id: &str, denoiser: Arc<dyn Denoiser>) -> Self {
        self.register(id, denoiser);
        self
    }

    pub fn get(&self, id: &str) -> Result<&Arc<dyn Denoiser>> {
        self.entries.get(id).ok_or_else(|| Error::UnknownDenoiser(id.to_string()))
    }

    pub fn vocab(&self, id: &str) -> Result<&Vocabulary> {
        Ok(self.get(id)?.vocab())
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// One forward pass of denoiser `id` on `state`, charged to `ledger`.
    pub fn evaluate(&self, id: &str, state: &MaskedState, ledger: &NfeLedger) -> Result<DenoiserOutput> {
        let denoiser = self.get(id)?;
        let vocab = denoiser.vocab();
        if state.vocab() != &vocab.tag {
            return Err(Error::InvalidState(format!(
                "state is in vocabulary `{}` but denoiser `{id}` uses `{}`",
                state.vocab(),
                vocab.tag
            )));
        }
        if state.is_terminal() {
            return Err(Error::NoMaskedPositions);
        }
        let mut out = denoiser.forward(state)?;
        ledger.record_forward();
        out.check_against(state, vocab)?;
        if let Some(c) = vocab.masked_column() {
            out.suppress_column(c);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn tempered_examples() {
        assert_eq!(tempered_distribution(&[0.0, 0.0], 1.0), vec![0.5, 0.5]);
        assert_eq!(tempered_distribution(&[3.2, -1.0], 0.0), vec![1.0, 0.0]);
        let p = tempered_distribution(&[2f64.ln(), 0.0], 1.0);
        assert_abs_diff_eq!(p[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn greedy_tie_breaks_to_lowest_id() {
        assert_eq!(tempered_distribution(&[1.0, 5.0, 5.0], 0.0), vec![0.0, 1.0, 0.0]);
        assert_eq!(argmax(&[2.0, 2.0]), 0);
    }

    #[test]
    fn small_temperature_approaches_greedy() {
        let p = tempered_distribution(&[3.2, -1.0], 1e-3);
        assert_eq!(p[0], 1.0);
        assert_eq!(p[1], 0.0);
    }

    #[test]
    fn suppressed_column_gets_zero_mass() {
        let mut out = DenoiserOutput::new(vec![0], vec![vec![1.0, 9.0, 0.5]]).unwrap();
        out.suppress_column(1);
        assert_eq!(out.proposed(0), Some(0));
        for t in [0.1, 1.0, 10.0] {
            assert_eq!(out.tempered(0, t).unwrap()[1], 0.0);
        }
    }

    #[test]
    fn output_shape_checks() {
        assert!(DenoiserOutput::new(vec![1, 2], vec![vec![0.0]]).is_err());
        assert!(DenoiserOutput::new(vec![2, 1], vec![vec![0.0], vec![0.0]]).is_err());
        assert!(DenoiserOutput::new(vec![1], vec![vec![f64::NAN]]).is_err());
    }

    #[test]
    fn unknown_denoiser_costs_nothing() {
        let reg = DenoiserRegistry::new();
        let v = Vocabulary::toy("t", 3);
        let s = MaskedState::fully_masked(&v, vec![], 2).unwrap();
        let ledger = NfeLedger::unbounded();
        assert!(matches!(reg.evaluate("nope", &s, &ledger), Err(Error::UnknownDenoiser(_))));
        assert_eq!(ledger.consumed(), 0);
    }
}
