//! Human-readable views of a result directory.

use std::fmt::Write;
use std::fs;
use std::path::Path;

use umf_core::search::TreeDump;
use umf_core::TraceRecord;

use crate::output::{read_manifest, read_summary, read_traces, scaling_rows};
use crate::CliError;

/// The points where best-so-far improves, plus the last record.
pub fn best_so_far_steps(trace: &[TraceRecord]) -> Vec<(u64, f64)> {
    let mut steps: Vec<(u64, f64)> = Vec::new();
    for (i, t) in trace.iter().enumerate() {
        let improved = steps.last().is_none_or(|&(_, b)| t.best_so_far > b);
        if improved || i + 1 == trace.len() {
            steps.push((t.nfe_consumed, t.best_so_far));
        }
    }
    steps
}

fn fmt_reward(r: f64) -> String {
    if r.is_nan() {
        "-".into()
    } else {
        format!("{r:.4}")
    }
}

pub fn render_report(dir: &Path) -> Result<String, CliError> {
    let manifest = read_manifest(dir)?;
    let rows = read_summary(dir)?;
    let traces = read_traces(dir)?;
    let mut out = String::new();
    let name = manifest.name.as_deref().unwrap_or("experiment");
    writeln!(out, "# {name}: {} cells, {} failed", manifest.cells, manifest.failed_cells).unwrap();

    writeln!(out, "\n## scaling (mean best reward over problems and seeds)").unwrap();
    write!(out, "{:>10}", "budget").unwrap();
    for m in &manifest.methods {
        write!(out, " {m:>14}").unwrap();
    }
    writeln!(out).unwrap();
    let per_method: Vec<_> = manifest.methods.iter().map(|m| scaling_rows(&rows, m, &manifest.budgets)).collect();
    for (i, b) in manifest.budgets.iter().enumerate() {
        write!(out, "{b:>10}").unwrap();
        for rows in &per_method {
            write!(out, " {:>14}", fmt_reward(rows[i].mean_best_reward)).unwrap();
        }
        writeln!(out).unwrap();
    }
    for r in rows.iter().filter(|r| r.status != "ok") {
        writeln!(out, "failed: {} {} b={} s={}: {}", r.problem, r.method, r.budget, r.seed, r.error).unwrap();
    }

    for m in &manifest.methods {
        writeln!(out, "\n## best-so-far vs NFE: {m}").unwrap();
        for r in rows.iter().filter(|r| &r.method == m) {
            let cell = format!("{}__{}__b{}__s{}", r.problem, r.method, r.budget, r.seed);
            let Some(trace) = traces.get(&cell) else { continue };
            writeln!(out, "{cell}").unwrap();
            writeln!(out, "{:>10} {:>12}", "nfe", "best_so_far").unwrap();
            for (nfe, best) in best_so_far_steps(trace) {
                writeln!(out, "{nfe:>10} {:>12}", fmt_reward(best)).unwrap();
            }
        }
    }

    let trees = dir.join("trees");
    if let Ok(entries) = fs::read_dir(&trees) {
        let mut paths: Vec<_> = entries.filter_map(|e| e.ok()).map(|e| e.path()).collect();
        paths.sort();
        for path in paths {
            let text = fs::read_to_string(&path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            let tree: TreeDump = serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            let stem = path.file_stem().expect("file name").to_string_lossy();
            writeln!(out, "\n## tree {stem} (* = path to the selected candidate)").unwrap();
            out.push_str(&tree.render());
        }
    }
    Ok(out)
}
