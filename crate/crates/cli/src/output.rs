//! Result-directory layout.
//!
//! ```text
//! config.json            the config, verbatim
//! manifest.json          seeds, digest algorithm, cell counts
//! summary.csv            one row per cell, deterministic
//! timing.csv             wall time per cell (not deterministic)
//! scaling_<method>.csv   budgets as rows, aggregated over problems and seeds
//! traces/<cell>.jsonl    one line per rollout
//! trees/<cell>.json      UMF search trees, best path starred
//! best/<cell>.json       selected candidate
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::runner::{CellResult, SummaryRow};
use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: Option<String>,
    pub tool_version: String,
    pub digest_algorithm: String,
    pub seeds: Vec<u64>,
    /// `config` or `UMF_SEED`.
    pub seed_source: String,
    pub problems: Vec<String>,
    pub methods: Vec<String>,
    pub budgets: Vec<u64>,
    pub cells: usize,
    pub failed_cells: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub budget: u64,
    pub cells: usize,
    pub mean_best_reward: f64,
    pub min_best_reward: f64,
    pub max_best_reward: f64,
    pub mean_nfe_consumed: f64,
    pub mean_cache_hit_rate: f64,
}

#[derive(Serialize)]
struct TimingRow<'a> {
    problem: &'a str,
    method: &'a str,
    seed: u64,
    budget: u64,
    wall_time_s: f64,
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(path, text + "\n").map_err(io(path))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Mean over the cells that finished, per budget.
pub fn scaling_rows(rows: &[SummaryRow], method: &str, budgets: &[u64]) -> Vec<ScalingRow> {
    budgets
        .iter()
        .map(|&budget| {
            let ok: Vec<&SummaryRow> = rows.iter().filter(|r| r.method == method && r.budget == budget && r.best_reward.is_some()).collect();
            let n = ok.len();
            let rewards: Vec<f64> = ok.iter().filter_map(|r| r.best_reward).collect();
            let mean = |xs: Vec<f64>| if n == 0 { f64::NAN } else { xs.iter().sum::<f64>() / n as f64 };
            ScalingRow {
                budget,
                cells: n,
                mean_best_reward: mean(rewards.clone()),
                min_best_reward: rewards.iter().copied().fold(f64::NAN, f64::min),
                max_best_reward: rewards.iter().copied().fold(f64::NAN, f64::max),
                mean_nfe_consumed: mean(ok.iter().map(|r| r.nfe_consumed as f64).collect()),
                mean_cache_hit_rate: mean(ok.iter().map(|r| r.cache_hit_rate).collect()),
            }
        })
        .collect()
}

pub fn write_results(out: &Path, config_text: &str, manifest: &Manifest, results: &[CellResult]) -> Result<(), CliError> {
    for sub in ["traces", "trees", "best"] {
        fs::create_dir_all(out.join(sub)).map_err(io(out))?;
    }
    fs::write(out.join("config.json"), config_text).map_err(io(out))?;
    write_json(&out.join("manifest.json"), manifest)?;

    let mut summary = csv_writer(&out.join("summary.csv"))?;
    let mut timing = csv_writer(&out.join("timing.csv"))?;
    for r in results {
        summary.serialize(&r.row).map_err(csv_err)?;
        timing
            .serialize(TimingRow { problem: &r.row.problem, method: &r.row.method, seed: r.row.seed, budget: r.row.budget, wall_time_s: r.wall_time })
            .map_err(csv_err)?;
        let path = out.join("traces").join(format!("{}.jsonl", r.name));
        let mut f = std::io::BufWriter::new(fs::File::create(&path).map_err(io(&path))?);
        for t in &r.trace {
            let line = serde_json::to_string(t).map_err(|e| CliError::Runtime(e.to_string()))?;
            writeln!(f, "{line}").map_err(io(&path))?;
        }
        f.flush().map_err(io(&path))?;
        if let Some(tree) = &r.tree {
            write_json(&out.join("trees").join(format!("{}.json", r.name)), tree)?;
        }
        if let Some(best) = &r.best {
            write_json(&out.join("best").join(format!("{}.json", r.name)), best)?;
        }
    }
    summary.flush().map_err(io(out))?;
    timing.flush().map_err(io(out))?;

    let rows: Vec<SummaryRow> = results.iter().map(|r| r.row.clone()).collect();
    for method in &manifest.methods {
        let mut w = csv_writer(&out.join(format!("scaling_{method}.csv")))?;
        for row in scaling_rows(&rows, method, &manifest.budgets) {
            w.serialize(row).map_err(csv_err)?;
        }
        w.flush().map_err(io(out))?;
    }
    Ok(())
}

pub fn read_summary(dir: &Path) -> Result<Vec<SummaryRow>, CliError> {
    let path = dir.join("summary.csv");
    if !path.exists() {
        return Err(CliError::MissingResults(path.display().to_string()));
    }
    let mut r = csv::Reader::from_path(&path).map_err(csv_err)?;
    r.deserialize().collect::<Result<Vec<SummaryRow>, _>>().map_err(csv_err)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, CliError> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|_| CliError::MissingResults(path.display().to_string()))?;
    serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Trace files keyed by cell name, in name order.
pub fn read_traces(dir: &Path) -> Result<IndexMap<String, Vec<umf_core::TraceRecord>>, CliError> {
    let traces = dir.join("traces");
    let mut names: Vec<_> = fs::read_dir(&traces)
        .map_err(|_| CliError::MissingResults(traces.display().to_string()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    names.sort();
    let mut out = IndexMap::new();
    for path in names {
        let text = fs::read_to_string(&path).map_err(io(&path))?;
        let records = text
            .lines()
            .enumerate()
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| CliError::Runtime(format!("{}:{}: {e}", path.display(), i + 1))))
            .collect::<Result<Vec<_>, _>>()?;
        let name = path.file_stem().expect("file name").to_string_lossy().into_owned();
        out.insert(name, records);
    }
    Ok(out)
}
