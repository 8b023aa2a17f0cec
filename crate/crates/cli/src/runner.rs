use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mixbo::acquire::LoopState;
use mixbo::eval::{lipschitz_sweep, write_metric_csvs, LipschitzSweep, TheoryReport};
use mixbo::experiment::Experiment;
use mixbo::oracle::SimulatedDm;
use mixbo::{save_run, OracleKind};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::Cell;

pub const CONFIG_FILE: &str = "config.json";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const THEORY_SUMMARY_FILE: &str = "theory_summary.txt";
const CACHE_DIR: &str = ".cache";

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    pub force: bool,
    pub workers: usize,
    /// Directory that relative table paths resolve against.
    pub base_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellStatus {
    /// Already complete with the same config; nothing was touched.
    Skipped,
    Completed { rounds: usize },
    /// Continued from a checkpoint written `from` rounds in.
    Resumed { from: usize, rounds: usize },
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    state: LoopState,
    dm: SimulatedDm,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming onto {}", path.display()))
}

fn config_text(cell: &Cell) -> Result<String> {
    Ok(serde_json::to_string_pretty(&cell.config)? + "\n")
}

/// Run one cell under `out`, resuming from a checkpoint when one matches.
pub fn run_cell(cell: &Cell, opts: &RunOptions) -> Result<CellStatus> {
    let dir = opts.out.join(&cell.rel_dir);
    let cfg_text = config_text(cell)?;
    if opts.force && dir.exists() {
        fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    if dir.join(RECORDS_FILE).exists() {
        let previous = fs::read_to_string(dir.join(CONFIG_FILE)).unwrap_or_default();
        if previous == cfg_text {
            return Ok(CellStatus::Skipped);
        }
        bail!(
            "{} holds a finished run with a different config; pass --force to replace it",
            dir.display()
        );
    }
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write_atomic(&dir.join(CONFIG_FILE), cfg_text.as_bytes())?;

    let exp = Experiment::new(
        cell.config.clone(),
        opts.base_dir.as_deref(),
        Some(&opts.out.join(CACHE_DIR)),
    )?;
    let ckpt_path = dir.join(CHECKPOINT_FILE);
    let resumed = fs::read(&ckpt_path)
        .ok()
        .and_then(|b| serde_json::from_slice::<Checkpoint>(&b).ok())
        .filter(|c| c.state.config == exp.config && c.state.pending.is_none());
    let from = resumed.as_ref().map(|c| c.state.records.len());
    let (mut state, mut dm) = match resumed {
        Some(c) => {
            log::info!("{}: resuming after round {}", cell.rel_dir.display(), c.state.records.len());
            (c.state, c.dm)
        }
        None => {
            let (state, dm) = exp.start()?;
            (state, dm.context("cells need a simulated decision maker")?)
        }
    };
    let records = exp.run(&mut state, &mut dm, |s, d| {
        let bytes = serde_json::to_vec(&Checkpoint {
            state: s.clone(),
            dm: d.clone(),
        })
        .map_err(|e| mixbo::Error::invalid("checkpoint", e.to_string()))?;
        write_atomic(&ckpt_path, &bytes).map_err(|e| mixbo::Error::invalid("checkpoint", e.to_string()))
    })?;

    write_metric_csvs(&dir, &records, exp.truth.as_ref())?;
    if cell.config.theory {
        let report = TheoryReport::from_records(&records)?;
        write_atomic(&dir.join(THEORY_SUMMARY_FILE), report.summary_text().as_bytes())?;
    }
    save_run(&records, &dir.join(RECORDS_FILE))?;
    let _ = fs::remove_file(&ckpt_path);
    Ok(match from {
        Some(from) => CellStatus::Resumed {
            from,
            rounds: records.len(),
        },
        None => CellStatus::Completed { rounds: records.len() },
    })
}

/// Run every cell on a pool of `opts.workers` threads; per-cell results come
/// back in grid order.
pub fn run_cells(cells: &[Cell], opts: &RunOptions) -> Result<Vec<Result<CellStatus>>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .context("building the worker pool")?;
    Ok(pool.install(|| {
        cells
            .par_iter()
            .map(|c| {
                let r = run_cell(c, opts).with_context(|| format!("cell {}", c.rel_dir.display()));
                match &r {
                    Ok(s) => log::info!("{}: {s:?}", c.rel_dir.display()),
                    Err(e) => log::error!("{e:#}"),
                }
                r
            })
            .collect()
    }))
}

/// Prepare cells for the theory harness: refuse cells without ground truth
/// and nest outputs under `theory/`.
pub fn theory_cells(cells: Vec<Cell>) -> Result<Vec<Cell>> {
    let mut out = Vec::with_capacity(cells.len());
    for mut cell in cells {
        let cfg = &cell.config;
        if cfg.problem.id == "tabular" {
            bail!("theory checks need a closed-form benchmark; {} is a tabular config", cell.rel_dir.display());
        }
        if cfg.oracle == OracleKind::Human {
            bail!("theory checks need ground truth; {} is a human-session config", cell.rel_dir.display());
        }
        cell.config.theory = true;
        cell.rel_dir = Path::new("theory").join(&cell.rel_dir);
        out.push(cell);
    }
    Ok(out)
}

/// Lipschitz sweep for the objective count and weight floor of `cell`,
/// written to `<out>/theory/lipschitz.txt`.
pub fn lipschitz_report(cell: &Cell, out: &Path, tuples: usize) -> Result<LipschitzSweep> {
    let cfg = &cell.config;
    let sweep = lipschitz_sweep(tuples, cfg.problem.objectives, cfg.model.c_w, cfg.seed)?;
    let dir = out.join("theory");
    fs::create_dir_all(&dir)?;
    let text = format!(
        "tuples: {}\nobjectives: {}\nc_w: {}\nviolations: {}\nmax lhs/rhs (outcome): {:.6}\nmax lhs/rhs (weights): {:.6}\n",
        sweep.tuples, cfg.problem.objectives, cfg.model.c_w, sweep.violations, sweep.max_ratio_y, sweep.max_ratio_w
    );
    write_atomic(&dir.join("lipschitz.txt"), text.as_bytes())?;
    Ok(sweep)
}
