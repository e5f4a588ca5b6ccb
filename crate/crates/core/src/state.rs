//! Partially masked sequences.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_128;

use crate::error::{Error, Result};
use crate::vocab::{TokenId, VocabTag, Vocabulary};

/// Hash used for state digests. Written into experiment manifests.
pub const DIGEST_ALGORITHM: &str = "xxh3-128";

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateDigest(pub u128);

impl fmt::Debug for StateDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

impl fmt::Display for StateDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

/// A prompt followed by a generation segment over `V ∪ {mask}`.
///
/// The prompt never contains the mask token and is shared between all
/// states derived from it. Positions are absolute indices into the full
/// `prompt ++ gen` sequence.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MaskedState {
    vocab: VocabTag,
    mask_id: TokenId,
    prompt: Arc<[TokenId]>,
    gen: Vec<TokenId>,
}

impl fmt::Debug for MaskedState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MaskedState[{}](", self.vocab)?;
        for (i, t) in self.prompt.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{t}")?;
        }
        f.write_str(" |")?;
        for t in &self.gen {
            if *t == self.mask_id {
                f.write_str(" ?")?;
            } else {
                write!(f, " {t}")?;
            }
        }
        f.write_str(")")
    }
}

impl MaskedState {
    pub fn new(vocab: &Vocabulary, prompt: Vec<TokenId>, gen: Vec<TokenId>) -> Result<Self> {
        if gen.is_empty() {
            return Err(Error::InvalidState("generation segment is empty".into()));
        }
        if let Some(t) = prompt.iter().find(|&&t| !vocab.contains(t)) {
            return Err(Error::InvalidState(format!("prompt token {t} is not in vocabulary {}", vocab.tag)));
        }
        if let Some(t) = gen.iter().find(|&&t| t != vocab.mask_id && !vocab.contains(t)) {
            return Err(Error::InvalidState(format!("token {t} is outside vocabulary {}", vocab.tag)));
        }
        Ok(Self { vocab: vocab.tag.clone(), mask_id: vocab.mask_id, prompt: prompt.into(), gen })
    }

    /// The initial state `z_T`: prompt followed by `gen_len` masks.
    pub fn fully_masked(vocab: &Vocabulary, prompt: Vec<TokenId>, gen_len: usize) -> Result<Self> {
        Self::new(vocab, prompt, vec![vocab.mask_id; gen_len])
    }

    pub fn vocab(&self) -> &VocabTag {
        &self.vocab
    }

    pub fn mask_id(&self) -> TokenId {
        self.mask_id
    }

    pub fn prompt(&self) -> &[TokenId] {
        &self.prompt
    }

    pub fn gen(&self) -> &[TokenId] {
        &self.gen
    }

    pub fn prompt_len(&self) -> usize {
        self.prompt.len()
    }

    pub fn gen_len(&self) -> usize {
        self.gen.len()
    }

    pub fn len(&self) -> usize {
        self.prompt.len() + self.gen.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Token at absolute position `i`.
    pub fn token(&self, i: usize) -> TokenId {
        if i < self.prompt.len() {
            self.prompt[i]
        } else {
            self.gen[i - self.prompt.len()]
        }
    }

    /// The full `prompt ++ gen` sequence.
    pub fn tokens(&self) -> Vec<TokenId> {
        let mut out = Vec::with_capacity(self.len());
        out.extend_from_slice(&self.prompt);
        out.extend_from_slice(&self.gen);
        out
    }

    pub fn is_masked(&self, i: usize) -> bool {
        i >= self.prompt.len() && self.gen[i - self.prompt.len()] == self.mask_id
    }

    /// Masked absolute positions in ascending order.
    pub fn masked_positions(&self) -> Vec<usize> {
        let np = self.prompt.len();
        self.gen
            .iter()
            .enumerate()
            .filter(|(_, &t)| t == self.mask_id)
            .map(|(i, _)| np + i)
            .collect()
    }

    pub fn masked_count(&self) -> usize {
        self.gen.iter().filter(|&&t| t == self.mask_id).count()
    }

    /// Residual mask ratio `|M(z)| / n_g`.
    pub fn residual_mask_ratio(&self) -> f64 {
        self.masked_count() as f64 / self.gen.len() as f64
    }

    pub fn is_terminal(&self) -> bool {
        self.masked_count() == 0
    }

    /// Commits `token` at masked absolute position `pos`.
    pub fn commit(&mut self, pos: usize, token: TokenId) -> Result<()> {
        if !self.is_masked(pos) {
            return Err(Error::InvalidState(format!("position {pos} is not a masked generation position")));
        }
        if token == self.mask_id {
            return Err(Error::InvalidState("cannot commit the mask token".into()));
        }
        let np = self.prompt.len();
        self.gen[pos - np] = token;
        Ok(())
    }

    /// 128-bit digest over the canonical little-endian encoding of the
    /// vocabulary tag, mask id, prompt, and generation segment. Stable
    /// across processes.
    pub fn digest(&self) -> StateDigest {
        let tag = self.vocab.as_str().as_bytes();
        let mut buf = Vec::with_capacity(24 + tag.len() + 4 * self.len());
        buf.extend_from_slice(&(tag.len() as u64).to_le_bytes());
        buf.extend_from_slice(tag);
        buf.extend_from_slice(&self.mask_id.to_le_bytes());
        buf.extend_from_slice(&(self.prompt.len() as u64).to_le_bytes());
        for t in self.prompt.iter() {
            buf.extend_from_slice(&t.to_le_bytes());
        }
        buf.extend_from_slice(&(self.gen.len() as u64).to_le_bytes());
        for t in &self.gen {
            buf.extend_from_slice(&t.to_le_bytes());
        }
        StateDigest(xxh3_128(&buf))
    }
}
