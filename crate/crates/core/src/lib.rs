//! Budgeted Monte Carlo tree search over masked-diffusion unmasking
//! trajectories.
//!
//! Search branches are inference configurations ([`Action`]s): a denoiser,
//! a temperature, and a commit-set rule. Deterministic actions make every
//! `(state, action)` pair replayable, so rollouts are cached and re-visits
//! cost zero forward passes. Compute is measured in NFE (denoiser forward
//! passes) through an [`NfeLedger`].

pub mod action;
pub mod analysis;
pub mod baselines;
pub mod cache;
pub mod conformance;
pub mod denoiser;
pub mod error;
pub mod http;
pub mod ledger;
pub mod remask;
pub mod reward;
pub mod schedule;
pub mod search;
pub mod state;
pub mod testbed;
pub mod tokmap;
pub mod transition;
pub mod util;
pub mod vocab;

pub use action::{Action, RemaskStrategy};
pub use cache::RolloutCache;
pub use denoiser::{Denoiser, DenoiserOutput, DenoiserRegistry};
pub use error::{Error, Result};
pub use ledger::NfeLedger;
pub use reward::{RewardOutcome, RewardProvider};
pub use schedule::RatioSchedule;
pub use search::{SearchConfig, SearchEnv, SearchOutcome, TraceRecord};
pub use state::{MaskedState, StateDigest};
pub use vocab::{TokenId, VocabTag, Vocabulary};
