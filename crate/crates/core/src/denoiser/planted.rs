use serde::{Deserialize, Serialize};

use super::{Denoiser, DenoiserOutput};
use crate::error::{Error, Result};
use crate::state::MaskedState;
use crate::util::{mix_seed, unit_interval};
use crate::vocab::{TokenId, Vocabulary};

/// Mask-ratio interval `(lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkillBand {
    pub lo: f64,
    pub hi: f64,
}

impl SkillBand {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, ratio: f64) -> bool {
        ratio > self.lo && ratio <= self.hi
    }
}

/// A deterministic denoiser that knows a target sequence, but only while
/// the residual mask ratio lies inside its skill band.
///
/// In band, the target token gets a logit `margin` above a small hash
/// perturbation; out of band every logit is hash noise of amplitude
/// `noise_scale`. The noise is keyed by (salt, state digest, position,
/// token), so equal states always produce bit-identical rows.
pub struct PlantedSkillDenoiser {
    vocab: Vocabulary,
    target: Vec<TokenId>,
    band: SkillBand,
    margin: f64,
    in_band_noise: f64,
    noise_scale: f64,
    salt: u64,
}

impl PlantedSkillDenoiser {
    pub fn new(vocab: Vocabulary, target: Vec<TokenId>, band: SkillBand, salt: u64) -> Result<Self> {
        if target.is_empty() {
            return Err(Error::InvalidArgument("planted target is empty".into()));
        }
        if let Some(t) = target.iter().find(|&&t| !vocab.contains(t)) {
            return Err(Error::InvalidArgument(format!("target token {t} is not in the vocabulary")));
        }
        Ok(Self { vocab, target, band, margin: 6.0, in_band_noise: 0.5, noise_scale: 3.0, salt })
    }

    pub fn with_margin(mut self, margin: f64) -> Self {
        self.margin = margin;
        self
    }

    pub fn with_noise(mut self, in_band: f64, off_band: f64) -> Self {
        self.in_band_noise = in_band;
        self.noise_scale = off_band;
        self
    }

    pub fn band(&self) -> SkillBand {
        self.band
    }

    pub fn target(&self) -> &[TokenId] {
        &self.target
    }
}

impl Denoiser for PlantedSkillDenoiser {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn forward(&self, state: &MaskedState) -> Result<DenoiserOutput> {
        if state.gen_len() != self.target.len() {
            return Err(Error::InvalidState(format!(
                "generation length {} does not match target length {}",
                state.gen_len(),
                self.target.len()
            )));
        }
        let in_band = self.band.contains(state.residual_mask_ratio());
        let digest = state.digest().0;
        let (lo, hi) = ((digest >> 64) as u64, digest as u64);
        let np = state.prompt_len();
        let positions = state.masked_positions();
        let logits = positions
            .iter()
            .map(|&pos| {
                let target = self.target[pos - np] as usize;
                (0..self.vocab.size)
                    .map(|v| {
                        let u = unit_interval(mix_seed(&[self.salt, lo, hi, pos as u64, v as u64]));
                        if in_band {
                            u * self.in_band_noise + if v == target { self.margin } else { 0.0 }
                        } else {
                            u * self.noise_scale
                        }
                    })
                    .collect()
            })
            .collect();
        DenoiserOutput::new(positions, logits)
    }
}
