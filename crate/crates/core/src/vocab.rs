//! Token vocabularies with a mask sentinel.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Name of a vocabulary. States carry it so ids are never interpreted
/// against the wrong tokenizer.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VocabTag(Arc<str>);

impl VocabTag {
    pub fn new(name: &str) -> Self {
        Self(Arc::from(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for VocabTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for VocabTag {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

/// A vocabulary `V` plus the mask token `m`.
///
/// `size` is the number of logit columns a denoiser emits. The mask id is
/// either `size` (an appended sentinel, the usual desk-scale layout) or an
/// id inside `0..size` whose column is never proposed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub tag: VocabTag,
    pub size: usize,
    pub mask_id: TokenId,
    pub eos_id: TokenId,
    pub pad_id: TokenId,
}

impl Vocabulary {
    pub fn new(tag: impl Into<VocabTag>, size: usize, mask_id: TokenId, eos_id: TokenId, pad_id: TokenId) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidVocabulary("vocabulary is empty".into()));
        }
        if mask_id as usize > size {
            return Err(Error::InvalidVocabulary(format!(
                "mask id {mask_id} leaves a gap after {size} tokens"
            )));
        }
        for (name, id) in [("eos", eos_id), ("pad", pad_id)] {
            if id as usize >= size || id == mask_id {
                return Err(Error::InvalidVocabulary(format!("{name} id {id} is not a vocabulary token")));
            }
        }
        Ok(Self { tag: tag.into(), size, mask_id, eos_id, pad_id })
    }

    /// Desk-scale layout: tokens `0..size`, mask appended at `size`,
    /// eos at 0 and pad at 1.
    pub fn toy(tag: &str, size: usize) -> Self {
        Self::new(tag, size, size as TokenId, 0, 1.min(size as TokenId - 1)).expect("toy vocabulary")
    }

    /// `|U|`, the extended vocabulary size.
    pub fn extended_size(&self) -> usize {
        if (self.mask_id as usize) == self.size {
            self.size + 1
        } else {
            self.size
        }
    }

    /// Number of real tokens, `|V|`.
    pub fn token_count(&self) -> usize {
        self.extended_size() - 1
    }

    pub fn contains(&self, id: TokenId) -> bool {
        (id as usize) < self.size && id != self.mask_id
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        id == self.mask_id || id == self.eos_id || id == self.pad_id
    }

    /// Logit column that must never be proposed, if the mask lives inside
    /// the logit range.
    pub fn masked_column(&self) -> Option<usize> {
        ((self.mask_id as usize) < self.size).then_some(self.mask_id as usize)
    }
}
