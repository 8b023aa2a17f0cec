//! Per-iteration run records and their JSON-lines persistence.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const RUN_FORMAT: &str = "mixbo-run-records";
const RUN_FORMAT_VERSION: u32 = 1;

/// Regret-decomposition terms measured at one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryTerms {
    /// `|f(x_t) - mu_{t-1}(x_t)|_inf`
    pub gp_deviation: f64,
    /// `|sigma_{t-1}(x_t)|_inf`
    pub sigma_sup: f64,
    pub beta_t: f64,
    /// Whether every objective satisfied `|f - mu| <= sqrt(beta_t) sigma` at `x_t`.
    pub confidence_holds: bool,
    pub delta_w: f64,
    pub delta_eta: f64,
    /// Spread of the acquisition restarts; stands in for the unobservable
    /// surrogate-optimisation error.
    pub eps_proxy: f64,
    pub b_y: f64,
    pub c_w: f64,
    pub mismatch_lhs_xt: f64,
    pub mismatch_rhs_xt: f64,
    pub mismatch_lhs_ref: f64,
    pub mismatch_rhs_ref: f64,
    pub per_round_lhs: f64,
    pub per_round_rhs: f64,
}

/// Snapshot of one outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// 1-based outer iteration.
    pub iteration: usize,
    pub design: Vec<f64>,
    /// Pool row for tabular problems.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design_row: Option<usize>,
    pub outcome: Vec<f64>,
    /// Indices into the observed-outcome pool.
    pub query: (usize, usize),
    pub winner_is_first: bool,
    /// Simulator's active mode (1-based); absent for human answers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode_used: Option<usize>,
    pub eta_mean: Vec<f64>,
    pub archetype_means: Vec<Vec<f64>>,
    /// Hungarian-aligned L1 error per true archetype.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aligned_errors: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simple_regret: Option<f64>,
    pub acquisition_value: f64,
    pub restart_spread: f64,
    pub elbo: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theory: Option<TheoryTerms>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_s: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

/// The on-disk run format in memory: a header line, then one record per line.
pub fn run_bytes(records: &[RunRecord]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    let header = Header {
        format: RUN_FORMAT.into(),
        version: RUN_FORMAT_VERSION,
    };
    serde_json::to_writer(&mut buf, &header).expect("header serialises");
    buf.push(b'\n');
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(|e| Error::invalid("run record", e.to_string()))?;
        buf.push(b'\n');
    }
    Ok(buf)
}

/// Write records as JSON lines behind a one-line header.
///
/// Floats are written in shortest round-trip form, so loading reproduces
/// every value bit for bit.
pub fn save_run(records: &[RunRecord], path: &Path) -> Result<()> {
    let buf = run_bytes(records)?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_run(path: &Path) -> Result<Vec<RunRecord>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_run(BufReader::new(f), &path.display().to_string())
}

/// Parse the JSON-lines format from any reader; `source` names it in errors.
pub fn parse_run<R: BufRead>(reader: R, source: &str) -> Result<Vec<RunRecord>> {
    let malformed = |line: usize, reason: String| Error::Malformed {
        path: source.to_owned(),
        line,
        reason,
    };
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| malformed(1, "missing header line".into()))?
        .map_err(|e| malformed(1, e.to_string()))?;
    let header: Header = serde_json::from_str(&header).map_err(|e| malformed(1, format!("bad header: {e}")))?;
    if header.format != RUN_FORMAT || header.version != RUN_FORMAT_VERSION {
        return Err(malformed(
            1,
            format!("unsupported format {}/{}", header.format, header.version),
        ));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|e| malformed(lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RunRecord = serde_json::from_str(&line)
            .map_err(|e| malformed(lineno, format!("record {}: {e}", out.len())))?;
        if let Some(prev) = out.last().map(|r: &RunRecord| r.iteration) {
            if rec.iteration <= prev {
                return Err(malformed(
                    lineno,
                    format!("iteration {} does not follow {prev}", rec.iteration),
                ));
            }
        }
        out.push(rec);
    }
    Ok(out)
}

/// Minimal CSV table: header row plus rows of preformatted cells.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push<S: ToString>(&mut self, row: impl IntoIterator<Item = S>) {
        self.rows.push(row.into_iter().map(|c| c.to_string()).collect());
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
        }
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)
            .map_err(|e| Error::Table(format!("{}: {e}", path.display())))?;
        w.write_record(&self.header)
            .map_err(|e| Error::Table(e.to_string()))?;
        for r in &self.rows {
            w.write_record(r).map_err(|e| Error::Table(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::Table(format!("{}: {e}", path.display())))?;
        let header = r
            .headers()
            .map_err(|e| Error::Table(e.to_string()))?
            .iter()
            .map(str::to_owned)
            .collect();
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::Malformed {
                path: path.display().to_string(),
                line: i + 2,
                reason: e.to_string(),
            })?;
            rows.push(rec.iter().map(str::to_owned).collect());
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}
