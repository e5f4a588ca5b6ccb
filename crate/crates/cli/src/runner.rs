//! Builds problems from a config and runs every (problem, method, budget,
//! seed) cell.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use umf_core::baselines::{best_of_n, dts_like, pair, DtsConfig};
use umf_core::denoiser::{ExactPosteriorDenoiser, PlantedSkillDenoiser, RemoteDenoiser, SkillBand};
use umf_core::reward::{ConcurrencyLimit, ExactMatchReward, RemoteReward, TestCommandReward};
use umf_core::search::{self, StopReason, TreeDump};
use umf_core::tokmap::{Codec, CodecRegistry, RemoteCodec, ToyCodec};
use umf_core::util::{mix_seed, str_seed};
use umf_core::{
    Action, Denoiser, DenoiserRegistry, MaskedState, NfeLedger, RewardProvider, SearchConfig, SearchEnv, TokenId, TraceRecord,
    Vocabulary,
};

use crate::config::{Config, DenoiserConfig, Method, MethodKind, ProblemConfig, RewardConfig, TokensConfig, VocabConfig};
use crate::CliError;

/// Shared, problem-independent pieces: vocabularies, codecs, remote models.
pub struct Resources {
    pub vocabs: IndexMap<String, Vocabulary>,
    pub codecs: CodecRegistry,
    remote: HashMap<String, Arc<dyn Denoiser>>,
    limit: Option<Arc<ConcurrencyLimit>>,
}

fn config_err(path: impl std::fmt::Display, e: impl std::fmt::Display) -> CliError {
    CliError::Config(vec![format!("{path}: {e}")])
}

impl Resources {
    pub fn build(config: &Config, base_dir: &Path) -> Result<Self, CliError> {
        let mut vocabs = IndexMap::new();
        let mut codecs = CodecRegistry::new();
        for (i, v) in config.vocabularies.iter().enumerate() {
            let path = format!("vocabularies[{i}]");
            let codec: Option<Arc<dyn Codec>> = match v {
                VocabConfig::Toy { tag, size } => {
                    vocabs.insert(tag.clone(), Vocabulary::toy(tag, *size));
                    None
                }
                VocabConfig::Chars { tag, alphabet } => Some(Arc::new(ToyCodec::chars(tag, alphabet).map_err(|e| config_err(&path, e))?)),
                VocabConfig::CodecFile { path: file } => {
                    Some(Arc::new(ToyCodec::load(&base_dir.join(file)).map_err(|e| config_err(&path, e))?))
                }
                VocabConfig::Remote { endpoint, model, timeout_ms } => Some(Arc::new(
                    RemoteCodec::connect(endpoint, model, Duration::from_millis(*timeout_ms)).map_err(|e| config_err(&path, e))?,
                )),
            };
            if let Some(c) = codec {
                let tag = c.vocab().tag.to_string();
                if vocabs.insert(tag.clone(), c.vocab().clone()).is_some() {
                    return Err(config_err("vocabularies", format!("duplicate tag `{tag}`")));
                }
                codecs.register(c);
            }
        }
        let mut remote: HashMap<String, Arc<dyn Denoiser>> = HashMap::new();
        for (i, d) in config.denoisers.iter().enumerate() {
            if let DenoiserConfig::Remote { id, endpoint, model, timeout_ms } = d {
                let r = RemoteDenoiser::connect_with_timeout(endpoint, model, Duration::from_millis(*timeout_ms))
                    .map_err(|e| config_err(format!("denoisers[{i}]"), e))?;
                vocabs.entry(r.vocab().tag.to_string()).or_insert_with(|| r.vocab().clone());
                remote.insert(id.clone(), Arc::new(r));
            }
        }
        for (i, d) in config.denoisers.iter().enumerate() {
            match d {
                DenoiserConfig::Planted { vocab, .. } | DenoiserConfig::Exact { vocab, .. } if !vocabs.contains_key(vocab) => {
                    return Err(config_err(format!("denoisers[{i}].vocab"), format!("unknown vocabulary `{vocab}`")));
                }
                _ => {}
            }
        }
        for (i, p) in config.problems.iter().enumerate() {
            if !vocabs.contains_key(&p.vocab) {
                return Err(config_err(format!("problems[{i}].vocab"), format!("unknown vocabulary `{}`", p.vocab)));
            }
        }
        let limit = match &config.reward {
            RewardConfig::TestCommand { concurrency, .. } => Some(ConcurrencyLimit::new(*concurrency)),
            _ => None,
        };
        Ok(Self { vocabs, codecs, remote, limit })
    }
}

pub fn build_actions(config: &Config) -> Vec<Action> {
    config
        .actions
        .iter()
        .map(|a| {
            let mut action = Action::new(&a.id, &a.denoiser, a.temperature, a.remask).with_eos_suppression(a.eos_suppression);
            action.eos_penalty = a.eos_penalty;
            action
        })
        .collect()
}

/// One benchmark item with its own denoisers and reward.
pub struct Problem {
    pub id: String,
    pub root: MaskedState,
    pub target: Option<Vec<TokenId>>,
    pub registry: DenoiserRegistry,
    pub reward: Box<dyn RewardProvider>,
    pub heldout: Option<Box<dyn RewardProvider>>,
}

fn tokens(given: &TokensConfig, vocab: &Vocabulary, codecs: &CodecRegistry, path: &str) -> Result<Vec<TokenId>, CliError> {
    let ids = match given {
        TokensConfig::Ids(ids) => ids.clone(),
        TokensConfig::Text { text } => codecs.get(&vocab.tag).and_then(|c| c.encode(text)).map_err(|e| config_err(path, e))?,
        TokensConfig::Random { random } => {
            let ordinary: Vec<TokenId> = (0..vocab.size as TokenId).filter(|&t| !vocab.is_special(t)).collect();
            if ordinary.is_empty() {
                return Err(config_err(path, "vocabulary has no ordinary tokens"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(random.seed);
            (0..random.len).map(|_| ordinary[rng.gen_range(0..ordinary.len())]).collect()
        }
    };
    if let Some(t) = ids.iter().find(|&&t| !vocab.contains(t) || t == vocab.mask_id) {
        return Err(config_err(path, format!("token {t} is not an ordinary token of `{}`", vocab.tag)));
    }
    Ok(ids)
}

fn reward_provider(
    reward: &RewardConfig,
    problem: &ProblemConfig,
    target: Option<&Vec<TokenId>>,
    resources: &Resources,
    path: &str,
) -> Result<Box<dyn RewardProvider>, CliError> {
    Ok(match reward {
        RewardConfig::ExactMatch { mode } => {
            let target = target.ok_or_else(|| config_err(path, "exact_match needs a problem target"))?;
            Box::new(ExactMatchReward::new(target.clone(), *mode))
        }
        RewardConfig::TestCommand { command, concurrency } => {
            let limit = resources.limit.clone().unwrap_or_else(|| ConcurrencyLimit::new(*concurrency));
            Box::new(TestCommandReward::new(command.clone(), &problem.id, resources.codecs.clone(), limit).map_err(|e| config_err(path, e))?)
        }
        RewardConfig::Remote { endpoint, timeout_ms, retries } => Box::new(RemoteReward::new(
            endpoint,
            &problem.id,
            resources.codecs.clone(),
            Duration::from_millis(*timeout_ms),
            *retries,
        )),
    })
}

/// `target` re-expressed in `to`, keeping its length.
fn target_in(target: &[TokenId], from: &Vocabulary, to: &Vocabulary, codecs: &CodecRegistry, path: &str) -> Result<Vec<TokenId>, CliError> {
    if from.tag == to.tag {
        return Ok(target.to_vec());
    }
    let state = MaskedState::new(from, vec![], target.to_vec()).map_err(|e| config_err(path, e))?;
    let mapped = codecs.map(&state, &to.tag).map_err(|e| config_err(path, e))?;
    if mapped.masked_count() > 0 {
        return Err(config_err(path, format!("target does not fill the same length in `{}`", to.tag)));
    }
    Ok(mapped.gen().to_vec())
}

pub fn build_problems(config: &Config, resources: &Resources) -> Result<Vec<Problem>, CliError> {
    let mut out = Vec::new();
    for (i, p) in config.problems.iter().enumerate() {
        let path = format!("problems[{i}]");
        let vocab = &resources.vocabs[&p.vocab];
        let prompt = match &p.prompt {
            Some(t) => tokens(t, vocab, &resources.codecs, &format!("{path}.prompt"))?,
            None => Vec::new(),
        };
        let target = p.target.as_ref().map(|t| tokens(t, vocab, &resources.codecs, &format!("{path}.target"))).transpose()?;
        let gen_len = match (&target, p.gen_len) {
            (Some(t), Some(n)) if t.len() != n => {
                return Err(config_err(format!("{path}.gen_len"), format!("{n} does not match the target length {}", t.len())))
            }
            (Some(t), _) => t.len(),
            (None, Some(n)) => n,
            (None, None) => unreachable!("validated"),
        };
        if gen_len == 0 {
            return Err(config_err(format!("{path}.target"), "must not be empty"));
        }
        let root = MaskedState::fully_masked(vocab, prompt, gen_len).map_err(|e| config_err(&path, e))?;

        let mut registry = DenoiserRegistry::new();
        for (j, d) in config.denoisers.iter().enumerate() {
            let dpath = format!("denoisers[{j}] for {path}");
            let needs = || target.as_ref().ok_or_else(|| config_err(&dpath, "needs a problem target"));
            let den: Arc<dyn Denoiser> = match d {
                DenoiserConfig::Planted { id, vocab: dv, band, salt } => {
                    let dv = &resources.vocabs[dv];
                    let t = target_in(needs()?, vocab, dv, &resources.codecs, &dpath)?;
                    let salt = salt.unwrap_or_else(|| mix_seed(&[str_seed(id), str_seed(&p.id)]));
                    Arc::new(PlantedSkillDenoiser::new(dv.clone(), t, SkillBand::new(band.0, band.1), salt).map_err(|e| config_err(&dpath, e))?)
                }
                DenoiserConfig::Exact { vocab: dv, support, .. } => {
                    let dv = &resources.vocabs[dv];
                    let support = match support {
                        Some(s) => s.clone(),
                        None => vec![(target_in(needs()?, vocab, dv, &resources.codecs, &dpath)?, 1.0)],
                    };
                    Arc::new(ExactPosteriorDenoiser::new(dv.clone(), support).map_err(|e| config_err(&dpath, e))?)
                }
                DenoiserConfig::Remote { id, .. } => resources.remote[id].clone(),
            };
            registry.register(d.id(), den);
        }
        let reward = reward_provider(&config.reward, p, target.as_ref(), resources, &format!("reward for {path}"))?;
        let heldout = config
            .heldout
            .as_ref()
            .map(|h| reward_provider(h, p, target.as_ref(), resources, &format!("heldout for {path}")))
            .transpose()?;
        out.push(Problem { id: p.id.clone(), root, target, registry, reward, heldout });
    }
    Ok(out)
}

/// One row of `summary.csv`. Field order is the column order.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct SummaryRow {
    pub problem: String,
    pub method: String,
    pub seed: u64,
    pub budget: u64,
    pub best_reward: Option<f64>,
    pub heldout_reward: Option<f64>,
    pub nfe_consumed: u64,
    pub rollouts: u64,
    pub cache_hits: u64,
    pub cache_hit_rate: f64,
    pub overshoot: u64,
    pub stop_reason: String,
    pub status: String,
    pub error: String,
}

pub const SUMMARY_COLUMNS: [&str; 14] = [
    "problem",
    "method",
    "seed",
    "budget",
    "best_reward",
    "heldout_reward",
    "nfe_consumed",
    "rollouts",
    "cache_hits",
    "cache_hit_rate",
    "overshoot",
    "stop_reason",
    "status",
    "error",
];

#[derive(Clone, Debug, Serialize)]
pub struct BestRecord {
    pub problem: String,
    pub method: String,
    pub seed: u64,
    pub budget: u64,
    pub best_reward: f64,
    pub heldout_reward: Option<f64>,
    pub prompt: Vec<TokenId>,
    pub generation: Vec<TokenId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pair_winner: Option<String>,
}

#[derive(Clone, Copy, Debug)]
pub struct Cell {
    pub problem: usize,
    pub method: usize,
    pub budget: u64,
    pub seed: u64,
}

impl Cell {
    pub fn name(&self, problems: &[Problem], methods: &[Method]) -> String {
        format!("{}__{}__b{}__s{}", problems[self.problem].id, methods[self.method].label, self.budget, self.seed)
    }
}

pub struct CellResult {
    pub name: String,
    pub row: SummaryRow,
    pub trace: Vec<TraceRecord>,
    pub tree: Option<TreeDump>,
    pub best: Option<BestRecord>,
    pub wall_time: f64,
}

/// Everything one method run yields.
struct MethodOutput {
    best: MaskedState,
    best_reward: f64,
    trace: Vec<TraceRecord>,
    stop: StopReason,
    overshoot: u64,
    tree: Option<TreeDump>,
    pair_winner: Option<String>,
}

fn run_method(
    problem: &Problem,
    method: &Method,
    actions: &[Action],
    ctx: &RunContext<'_>,
    cell: &Cell,
    ledger: &NfeLedger,
) -> umf_core::Result<MethodOutput> {
    let env = SearchEnv::new(&problem.registry, problem.reward.as_ref()).with_codecs(&ctx.resources.codecs);
    let acts: Vec<Action> = method.actions.iter().map(|&i| actions[i].clone()).collect();
    // each cell gets its own stream, shared by every method at that seed
    let seed = mix_seed(&[cell.seed, str_seed(&problem.id)]);
    Ok(match method.kind {
        MethodKind::Umf => {
            let config = SearchConfig { c_exp: method.c_exp, schedule: ctx.config.schedule(), cache: method.cache, seed, max_iterations: None };
            let out = search::run(env, &acts, problem.root.clone(), config, ledger)?;
            let tree = out.dump(&acts);
            MethodOutput {
                best: out.best,
                best_reward: out.best_reward,
                trace: out.trace,
                stop: out.stop_reason,
                overshoot: out.overshoot,
                tree: Some(tree),
                pair_winner: None,
            }
        }
        MethodKind::Bon => {
            let out = best_of_n(env, &acts[0], &problem.root, seed, ledger)?;
            let overshoot = out.ledger.consumed.saturating_sub(out.ledger.budget);
            MethodOutput { best: out.best, best_reward: out.best_reward, trace: out.trace, stop: out.stop_reason, overshoot, tree: None, pair_winner: None }
        }
        MethodKind::Pair => {
            let out = pair(env, &acts[0], &acts[1], &problem.root, seed, ledger)?;
            let winner = match out.winner {
                umf_core::baselines::PairArm::A => &acts[0].id,
                umf_core::baselines::PairArm::B => &acts[1].id,
            };
            MethodOutput {
                best: out.best,
                best_reward: out.best_reward,
                trace: out.trace,
                stop: StopReason::Budget,
                overshoot: 0,
                tree: None,
                pair_winner: Some(winner.clone()),
            }
        }
        MethodKind::DtsLike => {
            let config = DtsConfig { seed, ..method.dts.clone() };
            let out = dts_like(env, &acts, &problem.root, &config, ledger)?;
            let overshoot = out.ledger.consumed.saturating_sub(out.ledger.budget);
            MethodOutput { best: out.best, best_reward: out.best_reward, trace: out.trace, stop: out.stop_reason, overshoot, tree: None, pair_winner: None }
        }
    })
}

fn stop_label(stop: StopReason) -> &'static str {
    match stop {
        StopReason::Budget => "budget",
        StopReason::TreeExhausted => "tree_exhausted",
        StopReason::IterationLimit => "iteration_limit",
    }
}

pub struct RunContext<'a> {
    pub config: &'a Config,
    pub resources: &'a Resources,
    pub problems: &'a [Problem],
    pub methods: &'a [Method],
    pub actions: &'a [Action],
}

impl RunContext<'_> {
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for problem in 0..self.problems.len() {
            for method in 0..self.methods.len() {
                for &budget in &self.config.budgets {
                    for &seed in &self.config.seeds {
                        cells.push(Cell { problem, method, budget, seed });
                    }
                }
            }
        }
        cells
    }

    pub fn run_cell(&self, cell: &Cell) -> CellResult {
        let problem = &self.problems[cell.problem];
        let method = &self.methods[cell.method];
        let ledger = NfeLedger::new(cell.budget);
        let start = Instant::now();
        let outcome = run_method(problem, method, self.actions, self, cell, &ledger).and_then(|mut out| {
            // baselines hand back terminals in the action's vocabulary
            if out.best.vocab() != problem.root.vocab() {
                out.best = self.resources.codecs.map(&out.best, problem.root.vocab())?;
            }
            let heldout = match &problem.heldout {
                Some(h) => Some(h.score(&out.best)?.reward),
                None => None,
            };
            Ok((out, heldout))
        });
        let wall_time = start.elapsed().as_secs_f64();
        let snap = ledger.snapshot();
        let mut row = SummaryRow {
            problem: problem.id.clone(),
            method: method.label.clone(),
            seed: cell.seed,
            budget: cell.budget,
            best_reward: None,
            heldout_reward: None,
            nfe_consumed: snap.consumed,
            rollouts: snap.rollouts_total,
            cache_hits: snap.cache_hits,
            cache_hit_rate: snap.cache_hit_rate(),
            overshoot: 0,
            stop_reason: String::new(),
            status: "ok".into(),
            error: String::new(),
        };
        let name = cell.name(self.problems, self.methods);
        match outcome {
            Ok((out, heldout)) => {
                row.best_reward = Some(out.best_reward);
                row.heldout_reward = heldout;
                row.overshoot = out.overshoot;
                row.stop_reason = stop_label(out.stop).into();
                let text = self.resources.codecs.decode_generation(&out.best).ok();
                let best = BestRecord {
                    problem: row.problem.clone(),
                    method: row.method.clone(),
                    seed: cell.seed,
                    budget: cell.budget,
                    best_reward: out.best_reward,
                    heldout_reward: heldout,
                    prompt: out.best.prompt().to_vec(),
                    generation: out.best.gen().to_vec(),
                    text,
                    pair_winner: out.pair_winner,
                };
                CellResult { name, row, trace: out.trace, tree: out.tree, best: Some(best), wall_time }
            }
            Err(e) => {
                row.status = "error".into();
                row.error = e.to_string();
                CellResult { name, row, trace: Vec::new(), tree: None, best: None, wall_time }
            }
        }
    }

    /// Runs every cell on `workers` threads. Results come back in cell order
    /// whatever the interleaving.
    pub fn run_all(&self, workers: usize) -> Vec<CellResult> {
        let cells = self.cells();
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<CellResult>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
        std::thread::scope(|scope| {
            for _ in 0..workers.max(1).min(cells.len().max(1)) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(cell) = cells.get(i) else { break };
                    let r = self.run_cell(cell);
                    results.lock().expect("no worker panics while holding the lock")[i] = Some(r);
                });
            }
        });
        results.into_inner().expect("workers joined").into_iter().map(|r| r.expect("every cell ran")).collect()
    }
}
