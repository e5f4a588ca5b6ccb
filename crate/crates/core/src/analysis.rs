//! The kernel-switching bound and the rollout variance law, measured.
//!
//! `KernelErrorProfile` holds per-step local errors `ε[t][a]` of each
//! kernel. Switching to the best kernel at every step can never do worse
//! than the best single kernel: `Σ_t min_a ε ≤ min_a Σ_t ε`.

use std::io::Write;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::denoiser::{tempered_distribution, Denoiser, ExactPosteriorDenoiser};
use crate::error::{Error, Result};
use crate::ledger::NfeLedger;
use crate::search::SearchEnv;
use crate::state::MaskedState;
use crate::transition::decode;
use crate::util::mix_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelErrorProfile {
    pub actions: Vec<String>,
    /// Step labels (masked count before the step).
    pub steps: Vec<usize>,
    /// `epsilon[t][a]`.
    pub epsilon: Vec<Vec<f64>>,
}

impl KernelErrorProfile {
    pub fn new(actions: Vec<String>, steps: Vec<usize>, epsilon: Vec<Vec<f64>>) -> Result<Self> {
        if actions.is_empty() || steps.is_empty() {
            return Err(Error::InvalidArgument("error profile is empty".into()));
        }
        if epsilon.len() != steps.len() || epsilon.iter().any(|row| row.len() != actions.len()) {
            return Err(Error::InvalidArgument("error profile is not steps × actions".into()));
        }
        if let Some(e) = epsilon.iter().flatten().find(|e| !e.is_finite() || **e < 0.0) {
            return Err(Error::InvalidArgument(format!("error profile entry {e} is not a finite non-negative number")));
        }
        Ok(Self { actions, steps, epsilon })
    }

    /// Per step, the index of the kernel with least error (lowest index on
    /// ties).
    pub fn policy(&self) -> Vec<usize> {
        self.epsilon
            .iter()
            .map(|row| (0..row.len()).fold(0, |b, a| if row[a] < row[b] { a } else { b }))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchingBound {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

pub fn switching_bound_check(profile: &KernelErrorProfile) -> SwitchingBound {
    let lhs: f64 = profile.epsilon.iter().map(|row| row.iter().copied().fold(f64::INFINITY, f64::min)).sum();
    let rhs = (0..profile.actions.len())
        .map(|a| profile.epsilon.iter().map(|row| row[a]).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    SwitchingBound { lhs, rhs, holds: lhs <= rhs }
}

/// `KL(p ‖ q) = Σ p ln(p/q)`, with `0 ln 0 = 0`; infinite when `q` misses
/// mass that `p` has.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| match (pi > 0.0, qi > 0.0) {
            (false, _) => 0.0,
            (true, false) => f64::INFINITY,
            (true, true) => pi * (pi / qi).ln(),
        })
        .sum()
}

/// A kernel under measurement.
pub struct Candidate<'a> {
    pub id: String,
    pub denoiser: &'a dyn Denoiser,
    pub temperature: f64,
}

/// A state from the forward masking process: a support sequence drawn by
/// its probability with `masked` uniformly chosen positions masked.
pub fn sample_forward_state(exact: &ExactPosteriorDenoiser, prompt: &[u32], masked: usize, rng: &mut ChaCha8Rng) -> Result<MaskedState> {
    let support = exact.support();
    let pick = WeightedIndex::new(support.iter().map(|(_, p)| *p))
        .map_err(|e| Error::InvalidArgument(format!("support weights: {e}")))?
        .sample(rng);
    let vocab = exact.vocab();
    let mut gen = support[pick].0.clone();
    if masked > gen.len() {
        return Err(Error::InvalidArgument(format!("cannot mask {masked} of {} positions", gen.len())));
    }
    for i in sample(rng, gen.len(), masked) {
        gen[i] = vocab.mask_id;
    }
    MaskedState::new(vocab, prompt.to_vec(), gen)
}

/// `ε[t][a]` = KL from the exact posterior to the candidate's tempered
/// prediction, averaged over masked positions and over `samples` forward
/// states with `steps[t]` masked positions.
pub fn measure_kl_profile(
    exact: &ExactPosteriorDenoiser,
    candidates: &[Candidate<'_>],
    steps: &[usize],
    samples: usize,
    seed: u64,
) -> Result<KernelErrorProfile> {
    if samples == 0 || steps.contains(&0) {
        return Err(Error::InvalidArgument("need at least one sample and one masked position per step".into()));
    }
    let mut epsilon = Vec::with_capacity(steps.len());
    for &m in steps {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, m as u64]));
        let states = (0..samples).map(|_| sample_forward_state(exact, &[], m, &mut rng)).collect::<Result<Vec<_>>>()?;
        let mut row = Vec::with_capacity(candidates.len());
        for c in candidates {
            let mut total = 0.0;
            for s in &states {
                let q = exact.posterior(s)?;
                let out = c.denoiser.forward(s)?;
                for (pos, qrow) in &q {
                    let logits = out
                        .logits(*pos)
                        .ok_or_else(|| Error::MalformedOutput(format!("`{}` has no row for position {pos}", c.id)))?;
                    total += kl_divergence(qrow, &tempered_distribution(logits, c.temperature));
                }
            }
            row.push(total / (samples * m) as f64);
        }
        epsilon.push(row);
    }
    KernelErrorProfile::new(candidates.iter().map(|c| c.id.clone()).collect(), steps.to_vec(), epsilon)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemRow {
    pub m: usize,
    pub sem: f64,
    pub mean: f64,
}

/// Sample standard deviation (n − 1); exactly 0 when all values agree.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 || values.iter().all(|&v| v == values[0]) {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// For each `m`, the spread over `trials` of the mean reward of `m`
/// rollouts from `state` — the standard error of an `m`-rollout estimate.
pub fn rollout_variance_study(
    env: SearchEnv<'_>,
    action: &Action,
    state: &MaskedState,
    ms: &[usize],
    trials: usize,
    seed: u64,
) -> Result<Vec<SemRow>> {
    let start = env.state_for(state, action)?;
    let ledger = NfeLedger::unbounded();
    let mut rows = Vec::with_capacity(ms.len());
    for &m in ms {
        if m == 0 {
            return Err(Error::InvalidArgument("rollout count m must be positive".into()));
        }
        let mut means = Vec::with_capacity(trials);
        for trial in 0..trials {
            let mut sum = 0.0;
            for j in 0..m {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, m as u64, trial as u64, j as u64]));
                let terminal = decode(&start, action, env.registry, &ledger, &mut rng)?;
                sum += env.score_terminal(&terminal, state.vocab())?.reward;
            }
            means.push(sum / m as f64);
        }
        let mean = means.iter().sum::<f64>() / means.len().max(1) as f64;
        rows.push(SemRow { m, sem: sample_std(&means), mean });
    }
    Ok(rows)
}

pub fn write_epsilon_csv<W: Write>(profile: &KernelErrorProfile, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "action", "epsilon"])?;
    for (t, row) in profile.steps.iter().zip(&profile.epsilon) {
        for (a, e) in profile.actions.iter().zip(row) {
            w.write_record([t.to_string(), a.clone(), e.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_sem_csv<W: Write>(rows: &[SemRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["m", "sem"])?;
    for r in rows {
        w.write_record([r.m.to_string(), r.sem.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
