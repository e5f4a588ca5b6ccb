//! Experiment runner for UnMaskFork and its baselines.

pub mod config;
pub mod output;
pub mod report;
pub mod runner;
pub mod verify;

use std::path::Path;

use umf_core::state::DIGEST_ALGORITHM;

use crate::config::Config;
use crate::output::{write_results, Manifest};
use crate::runner::{build_actions, build_problems, Resources, RunContext};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("{0}")]
    Runtime(String),
    #[error("missing results: {0}")]
    MissingResults(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) | CliError::MissingResults(_) => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub cells: usize,
    pub failed: usize,
}

/// Parses `UMF_SEED`; a present but unparsable value is a config error.
pub fn seed_override(value: Option<&str>) -> Result<Option<u64>, CliError> {
    value
        .map(|v| v.trim().parse::<u64>().map_err(|e| CliError::Config(vec![format!("UMF_SEED: `{v}`: {e}")])))
        .transpose()
}

/// Runs every cell of `config_path` and writes the result directory.
/// Failed cells are recorded in the summary rather than aborting the run.
pub fn run_experiment(config_path: &Path, out: &Path, workers: usize, seed: Option<u64>) -> Result<RunSummary, CliError> {
    let (mut config, text) = Config::load(config_path)?;
    let seed_source = match seed {
        Some(s) => {
            config.seeds = vec![s];
            "UMF_SEED"
        }
        None => "config",
    };
    let base = config_path.parent().unwrap_or(Path::new("."));
    let resources = Resources::build(&config, base)?;
    let problems = build_problems(&config, &resources)?;
    let methods = config.methods();
    let actions = build_actions(&config);
    let ctx = RunContext { config: &config, resources: &resources, problems: &problems, methods: &methods, actions: &actions };
    let results = ctx.run_all(workers);
    let failed = results.iter().filter(|r| r.row.status != "ok").count();
    let manifest = Manifest {
        name: config.name.clone(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        digest_algorithm: DIGEST_ALGORITHM.into(),
        seeds: config.seeds.clone(),
        seed_source: seed_source.into(),
        problems: problems.iter().map(|p| p.id.clone()).collect(),
        methods: methods.iter().map(|m| m.label.clone()).collect(),
        budgets: config.budgets.clone(),
        cells: results.len(),
        failed_cells: failed,
    };
    write_results(out, &text, &manifest, &results)?;
    Ok(RunSummary { cells: results.len(), failed })
}
