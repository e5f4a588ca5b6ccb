//! Actions: inference configurations used as search branches.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Commit-set selection rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemaskStrategy {
    /// Lowest-entropy positions first.
    Entropy,
    /// Highest probability of the proposed token first.
    LowConfidence,
    /// Independent Bernoulli draws.
    Origin,
    /// Uniform random scores.
    Random,
}

impl RemaskStrategy {
    pub const ALL: [RemaskStrategy; 4] = [Self::Entropy, Self::LowConfidence, Self::Origin, Self::Random];

    pub fn is_deterministic(self) -> bool {
        matches!(self, Self::Entropy | Self::LowConfidence)
    }

    /// Entropy and origin come from the Dream family and use the EoS
    /// probability penalty; the other two zero EoS confidence instead.
    pub fn uses_probability_penalty(self) -> bool {
        matches!(self, Self::Entropy | Self::Origin)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Entropy => "entropy",
            Self::LowConfidence => "low_confidence",
            Self::Origin => "origin",
            Self::Random => "random",
        }
    }
}

impl fmt::Display for RemaskStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RemaskStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "entropy" => Ok(Self::Entropy),
            "low_confidence" => Ok(Self::LowConfidence),
            "origin" => Ok(Self::Origin),
            "random" => Ok(Self::Random),
            other => Err(Error::InvalidArgument(format!("unknown remask strategy `{other}`"))),
        }
    }
}

pub const DEFAULT_EOS_PENALTY: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub id: String,
    pub denoiser_id: String,
    pub temperature: f64,
    pub remask: RemaskStrategy,
    /// Base seed for stochastic actions; the run seed is used when absent.
    #[serde(default)]
    pub rng_seed: Option<u64>,
    #[serde(default)]
    pub eos_suppression: bool,
    #[serde(default = "default_penalty")]
    pub eos_penalty: f64,
}

fn default_penalty() -> f64 {
    DEFAULT_EOS_PENALTY
}

impl Action {
    pub fn new(id: &str, denoiser_id: &str, temperature: f64, remask: RemaskStrategy) -> Self {
        Self {
            id: id.to_string(),
            denoiser_id: denoiser_id.to_string(),
            temperature,
            remask,
            rng_seed: None,
            eos_suppression: false,
            eos_penalty: DEFAULT_EOS_PENALTY,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = Some(seed);
        self
    }

    pub fn with_eos_suppression(mut self, on: bool) -> Self {
        self.eos_suppression = on;
        self
    }

    /// Greedy proposals with a confidence-ordered commit rule: the
    /// transition is a pure function of the state.
    pub fn is_deterministic(&self) -> bool {
        self.temperature == 0.0 && self.remask.is_deterministic()
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "action `{}` has invalid temperature {}",
                self.id, self.temperature
            )));
        }
        if !(self.eos_penalty >= 0.0 && self.eos_penalty.is_finite()) {
            return Err(Error::InvalidArgument(format!("action `{}` has invalid eos penalty", self.id)));
        }
        Ok(())
    }
}
