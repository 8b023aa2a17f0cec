//! Experiment grids for `mixbo`: expansion, checkpointed execution,
//! aggregation across seeds and the theory harness.

pub mod aggregate;
pub mod grid;
pub mod runner;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::Value;

pub use aggregate::aggregate;
pub use grid::{expand, Cell};
pub use runner::{run_cell, run_cells, CellStatus, RunOptions};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "MIXBO_OUT";

pub fn load_doc(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// Directory relative table paths in `config` resolve against.
pub fn config_dir(config: &Path) -> Option<PathBuf> {
    config.parent().map(Path::to_path_buf)
}

/// Tally of a grid execution; fails if any cell failed.
pub fn summarize(cells: &[Cell], results: Vec<Result<CellStatus>>) -> Result<String> {
    let (mut done, mut skipped, mut resumed, mut failed) = (0, 0, 0, Vec::new());
    for (c, r) in cells.iter().zip(results) {
        match r {
            Ok(CellStatus::Skipped) => skipped += 1,
            Ok(CellStatus::Completed { .. }) => done += 1,
            Ok(CellStatus::Resumed { .. }) => resumed += 1,
            Err(e) => failed.push(format!("{}: {e:#}", c.rel_dir.display())),
        }
    }
    let line = format!("{done} completed, {resumed} resumed, {skipped} skipped, {} failed", failed.len());
    if !failed.is_empty() {
        bail!("{line}\n{}", failed.join("\n"));
    }
    Ok(line)
}
