use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use mixbo::acquire::LoopState;
use mixbo::bench::Problem;
use mixbo::RunRecord;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Computing,
    AwaitingAnswer,
    Finished,
    Failed,
}

/// What is persisted for one session; the problem is rebuilt from the config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub status: Status,
    /// Token the next answer must quote; cleared once it is used.
    pub nonce: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub state: LoopState,
}

impl Session {
    pub fn path(dir: &Path, id: &str) -> PathBuf {
        dir.join(format!("{id}.json"))
    }

    pub fn persist(&self, dir: &Path) -> std::io::Result<()> {
        let path = Self::path(dir, &self.id);
        let tmp = path.with_extension("json.tmp");
        let mut f = fs::File::create(&tmp)?;
        serde_json::to_writer(&mut f, self)?;
        f.write_all(b"\n")?;
        f.sync_all()?;
        fs::rename(&tmp, &path)
    }

    pub fn snapshot(&self, problem: &Problem) -> Snapshot {
        let st = &self.state;
        let (lo, hi) = bounds(&st.outcomes);
        let outcome = |idx: usize| Outcome {
            index: idx,
            raw: st.outcomes[idx].clone(),
            normalized: st.outcomes[idx]
                .iter()
                .enumerate()
                .map(|(m, v)| if hi[m] > lo[m] { (v - lo[m]) / (hi[m] - lo[m]) } else { 0.5 })
                .collect(),
        };
        let pending = match (&st.pending, &self.nonce) {
            (Some(p), Some(nonce)) if self.status == Status::AwaitingAnswer => Some(PendingPair {
                nonce: nonce.clone(),
                iteration: p.iteration,
                first: outcome(p.pair.i),
                second: outcome(p.pair.j),
            }),
            _ => None,
        };
        let posterior = match (&st.pending, st.records.last()) {
            (Some(p), _) => Some(PosteriorView {
                eta_mean: p.eta_mean.clone(),
                archetype_means: p.archetype_means.clone(),
            }),
            (None, Some(r)) => Some(PosteriorView {
                eta_mean: r.eta_mean.clone(),
                archetype_means: r.archetype_means.clone(),
            }),
            (None, None) => None,
        };
        let best = posterior.as_ref().and_then(|post| {
            let s = st.config.model.scalarization;
            st.outcomes
                .iter()
                .enumerate()
                .map(|(i, y)| {
                    let u: f64 = post
                        .eta_mean
                        .iter()
                        .zip(&post.archetype_means)
                        .map(|(e, w)| e * s.utility(y, w))
                        .sum();
                    (i, u)
                })
                .fold(None, |acc: Option<(usize, f64)>, (i, u)| match acc {
                    Some((_, bu)) if bu >= u => acc,
                    _ => Some((i, u)),
                })
                .map(|(i, u)| Best {
                    outcome: outcome(i),
                    design: st.designs[i].clone(),
                    utility: u,
                })
        });
        Snapshot {
            id: self.id.clone(),
            status: self.status,
            iteration: st.iteration().min(st.config.budgets.outer_iterations),
            answered: st.records.len(),
            total_iterations: st.config.budgets.outer_iterations,
            problem: st.config.problem.id.clone(),
            policy: st.config.policy_id().to_owned(),
            objective_names: problem.objective_names(),
            pending,
            posterior,
            best,
            history: st.records.clone(),
            error: self.error.clone(),
        }
    }
}

fn bounds(ys: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let l = ys.first().map_or(0, Vec::len);
    let mut lo = vec![f64::INFINITY; l];
    let mut hi = vec![f64::NEG_INFINITY; l];
    for y in ys {
        for (m, v) in y.iter().enumerate() {
            lo[m] = lo[m].min(*v);
            hi[m] = hi[m].max(*v);
        }
    }
    (lo, hi)
}

/// An observed outcome, raw and min-max scaled over everything observed so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub index: usize,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingPair {
    pub nonce: String,
    pub iteration: usize,
    pub first: Outcome,
    pub second: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorView {
    pub eta_mean: Vec<f64>,
    pub archetype_means: Vec<Vec<f64>>,
}

/// Best observed outcome under the current posterior-mean utility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Best {
    pub outcome: Outcome,
    pub design: Vec<f64>,
    pub utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub id: String,
    pub status: Status,
    pub iteration: usize,
    pub answered: usize,
    pub total_iterations: usize,
    pub problem: String,
    pub policy: String,
    pub objective_names: Vec<String>,
    pub pending: Option<PendingPair>,
    pub posterior: Option<PosteriorView>,
    pub best: Option<Best>,
    pub history: Vec<RunRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}
