use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mixbo::record::CsvTable;

use crate::runner::RECORDS_FILE;

pub const AGGREGATE_DIR: &str = "aggregate";

/// A finished cell found under the output root.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct FoundCell {
    pub group: String,
    pub policy: String,
    pub seed: u64,
    pub dir: PathBuf,
}

fn subdirs(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let e = e?;
        let name = e.file_name().to_string_lossy().into_owned();
        if e.file_type()?.is_dir() && !name.starts_with('.') {
            out.push((name, e.path()));
        }
    }
    out.sort();
    Ok(out)
}

/// Every `<group>/<policy>/<seed>/` under `root` holding a finished run.
pub fn find_cells(root: &Path) -> Result<Vec<FoundCell>> {
    let mut cells = Vec::new();
    for (group, gdir) in subdirs(root)? {
        if group == AGGREGATE_DIR {
            continue;
        }
        for (policy, pdir) in subdirs(&gdir)? {
            for (seed, sdir) in subdirs(&pdir)? {
                let Ok(seed) = seed.parse::<u64>() else { continue };
                if sdir.join(RECORDS_FILE).exists() {
                    cells.push(FoundCell {
                        group: group.clone(),
                        policy: policy.clone(),
                        seed,
                        dir: sdir,
                    });
                }
            }
        }
    }
    cells.sort();
    Ok(cells)
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn parse_cell(s: &str) -> Option<f64> {
    match s {
        "true" => Some(1.0),
        "false" => Some(0.0),
        _ => s.parse().ok(),
    }
}

/// Per (group, policy, metric, key) mean and sample std across seeds, one
/// tidy CSV per metric file, written to `<root>/aggregate/`.
///
/// Seeds whose tables differ in length are truncated to the common prefix,
/// with a warning.
pub fn aggregate(root: &Path) -> Result<Vec<PathBuf>> {
    let cells = if root.is_dir() { find_cells(root)? } else { Vec::new() };
    if cells.is_empty() {
        bail!(
            "no finished runs under {}; expected <out>/<problem>-<regime>/<policy>/<seed>/{RECORDS_FILE} with metric CSVs beside it",
            root.display()
        );
    }
    let mut groups: BTreeMap<(String, String), Vec<&FoundCell>> = BTreeMap::new();
    for c in &cells {
        groups.entry((c.group.clone(), c.policy.clone())).or_default().push(c);
    }
    let mut files: BTreeMap<String, Vec<Vec<String>>> = BTreeMap::new();
    let mut key_names: BTreeMap<String, String> = BTreeMap::new();
    for ((group, policy), members) in &groups {
        let mut names: Vec<String> = Vec::new();
        for m in members {
            for e in fs::read_dir(&m.dir)? {
                let name = e?.file_name().to_string_lossy().into_owned();
                if name.ends_with(".csv") && !names.contains(&name) {
                    names.push(name);
                }
            }
        }
        names.sort();
        for name in names {
            let tables: Vec<CsvTable> = members
                .iter()
                .filter(|m| m.dir.join(&name).exists())
                .map(|m| CsvTable::read(&m.dir.join(&name)))
                .collect::<mixbo::Result<_>>()?;
            let rows = tables.iter().map(|t| t.rows.len()).min().unwrap_or(0);
            if tables.iter().any(|t| t.rows.len() != rows) {
                log::warn!(
                    "{group}/{policy}/{name}: seeds have {:?} rows; truncating to the common {rows}",
                    tables.iter().map(|t| t.rows.len()).collect::<Vec<_>>()
                );
            }
            let header = &tables[0].header;
            key_names.entry(name.clone()).or_insert_with(|| header[0].clone());
            let out = files.entry(name.clone()).or_default();
            for (col, metric) in header.iter().enumerate().skip(1) {
                if tables.iter().any(|t| t.column(metric) != Some(col)) {
                    log::warn!("{group}/{policy}/{name}: column {metric} differs across seeds; skipped");
                    continue;
                }
                for r in 0..rows {
                    let key = &tables[0].rows[r][0];
                    let vals: Option<Vec<f64>> = tables.iter().map(|t| parse_cell(&t.rows[r][col])).collect();
                    let Some(vals) = vals else { continue };
                    let (mean, std) = mean_std(&vals);
                    out.push(vec![
                        group.clone(),
                        policy.clone(),
                        metric.clone(),
                        key.clone(),
                        vals.len().to_string(),
                        format!("{mean}"),
                        format!("{std}"),
                    ]);
                }
            }
        }
    }
    let dir = root.join(AGGREGATE_DIR);
    let mut written = Vec::new();
    for (name, rows) in files {
        let key = key_names.get(&name).cloned().unwrap_or_else(|| "iteration".into());
        let mut t = CsvTable::new(["group", "policy", "metric", key.as_str(), "n_seeds", "mean", "std"]);
        for r in rows {
            t.push(r);
        }
        let p = dir.join(&name);
        t.write(&p)?;
        written.push(p);
    }
    Ok(written)
}
