//! One configured run: the problem, the simulated decision maker and the
//! ground truth the metrics are scored against.

use std::path::{Path, PathBuf};

use crate::acquire::{run_loop, LoopState};
use crate::bench::Problem;
use crate::config::{OracleKind, RunConfig};
use crate::error::{Error, Result};
use crate::eval::GroundTruth;
use crate::oracle::SimulatedDm;
use crate::record::RunRecord;

/// Load the problem named by `cfg`, resolving a relative table path against
/// `base_dir`. Tabular configs take their shape from the table.
pub fn load_problem(cfg: &mut RunConfig, base_dir: Option<&Path>) -> Result<Problem> {
    let table: Option<PathBuf> = cfg.problem.table.as_ref().map(|t| match base_dir {
        Some(b) if Path::new(t).is_relative() => b.join(t),
        _ => PathBuf::from(t),
    });
    let problem = Problem::by_id(&cfg.problem.id, table.as_deref())?;
    if problem.is_tabular() {
        let l = problem.objectives();
        cfg.problem.objectives = l;
        cfg.problem.dims = problem.dims();
        let beta = &cfg.model.beta_dir;
        if beta.len() != l && beta.windows(2).all(|w| w[0] == w[1]) {
            let v = beta.first().copied().unwrap_or(1.0);
            cfg.model.beta_dir = vec![v; l];
        }
    }
    Ok(problem)
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: RunConfig,
    pub problem: Problem,
    /// Present for simulated decision makers only.
    pub truth: Option<GroundTruth>,
}

impl Experiment {
    pub fn new(mut config: RunConfig, base_dir: Option<&Path>, cache_dir: Option<&Path>) -> Result<Self> {
        let problem = load_problem(&mut config, base_dir)?;
        config.validate()?;
        let truth = match config.oracle {
            OracleKind::Simulated => {
                let theta = SimulatedDm::from_config(&config)?.state.truth();
                Some(GroundTruth::build(
                    &problem,
                    theta,
                    config.budgets.reference_samples,
                    config.seed,
                    cache_dir,
                )?)
            }
            OracleKind::Human => None,
        };
        Ok(Self { config, problem, truth })
    }

    /// Fresh loop state, plus the simulated decision maker when there is one.
    pub fn start(&self) -> Result<(LoopState, Option<SimulatedDm>)> {
        let state = LoopState::new(self.config.clone(), &self.problem)?;
        let dm = match self.config.oracle {
            OracleKind::Simulated => Some(SimulatedDm::from_config(&self.config)?),
            OracleKind::Human => None,
        };
        Ok((state, dm))
    }

    /// Drive `state` to completion with the simulated decision maker.
    pub fn run<F>(&self, state: &mut LoopState, dm: &mut SimulatedDm, on_round: F) -> Result<Vec<RunRecord>>
    where
        F: FnMut(&LoopState, &SimulatedDm) -> Result<()>,
    {
        run_loop(state, &self.problem, dm, self.truth.as_ref(), on_round)
    }

    /// Fresh run from the first round to the last.
    pub fn run_fresh(&self) -> Result<Vec<RunRecord>> {
        let (mut state, dm) = self.start()?;
        let mut dm = dm.ok_or_else(|| Error::invalid("oracle", "human sessions cannot run unattended"))?;
        self.run(&mut state, &mut dm, |_, _| Ok(()))
    }
}
