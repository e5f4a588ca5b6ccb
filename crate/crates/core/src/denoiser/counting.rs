use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::{Denoiser, DenoiserOutput};
use crate::error::Result;
use crate::state::MaskedState;
use crate::vocab::Vocabulary;

/// Counts successful forward passes of an inner denoiser, independently of
/// any ledger.
pub struct CountingDenoiser {
    inner: Arc<dyn Denoiser>,
    calls: AtomicU64,
}

impl CountingDenoiser {
    pub fn new(inner: Arc<dyn Denoiser>) -> Self {
        Self { inner, calls: AtomicU64::new(0) }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }
}

impl Denoiser for CountingDenoiser {
    fn vocab(&self) -> &Vocabulary {
        self.inner.vocab()
    }

    fn forward(&self, state: &MaskedState) -> Result<DenoiserOutput> {
        let out = self.inner.forward(state)?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(out)
    }
}
