use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{propose_design, u_best_from_samples, AcquisitionConfig, EiNoise, SearchSpace};
use crate::bench::Problem;
use crate::config::{PreferenceSource, RunConfig, Scalarization};
use crate::error::{Error, Result};
use crate::eval::{estimation_errors, simple_regret, theory_terms, GroundTruth, TheoryInputs};
use crate::gp::{fit, GpBounds, GpHyperparams, GpModel, MeanFunction};
use crate::oracle::SimulatedDm;
use crate::policy::{select_pair, CandidatePair, QueryPolicy};
use crate::prefmix::{fit_svi, posterior_summary_n, sample_theta, MixturePosterior, MixturePrior, PosteriorSummary, SviOptions};
use crate::record::{RunRecord, TheoryTerms};
use crate::rng::{rng_stream, RngStream};
use crate::types::{OutcomeVector, PreferenceDatum};
use crate::MixtureParams;

const THEORY_DELTA: f64 = 0.1;
const ELBO_TAIL: usize = 50;

/// A design that has been evaluated and a comparison awaiting an answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingQuery {
    pub iteration: usize,
    pub design: Vec<f64>,
    pub row: Option<usize>,
    pub outcome: Vec<f64>,
    pub pair: CandidatePair,
    pub acquisition_value: f64,
    pub restart_spread: f64,
    pub elbo: f64,
    pub eta_mean: Vec<f64>,
    pub archetype_means: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theory: Option<TheoryTerms>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compute_seconds: Option<f64>,
}

/// The full state of one optimisation run between rounds.
///
/// Each round is `advance` (fit, propose, evaluate, choose a comparison)
/// followed by `answer`. The state serialises, so a run can be suspended at
/// either point and resumed bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopState {
    pub config: RunConfig,
    pub designs: Vec<Vec<f64>>,
    pub design_rows: Vec<Option<usize>>,
    pub outcomes: Vec<Vec<f64>>,
    pub preferences: Vec<PreferenceDatum>,
    pub posterior: MixturePosterior,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gp_hyperparams: Option<Vec<GpHyperparams>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pending: Option<PendingQuery>,
    pub records: Vec<RunRecord>,
}

fn stream(cfg: &RunConfig, label: &str) -> RngStream {
    rng_stream(cfg.seed, label)
}

fn observe(problem: &Problem, cfg: &RunConfig, x: &[f64], label: &str) -> Result<Vec<f64>> {
    let mut y = problem.evaluate(x)?.as_slice().to_vec();
    let sd = cfg.problem.observation_noise;
    if sd > 0.0 {
        let mut s = stream(cfg, label);
        for v in &mut y {
            *v += sd * s.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(y)
}

/// `n` points in `[0,1]^d`, one per stratum along every axis.
pub fn latin_hypercube(n: usize, d: usize, stream: &mut RngStream) -> Vec<Vec<f64>> {
    let mut x = vec![vec![0.0; d]; n];
    for j in 0..d {
        let perm = sample_indices(stream, n, n).into_vec();
        for (i, p) in perm.into_iter().enumerate() {
            x[i][j] = (p as f64 + stream.random::<f64>()) / n as f64;
        }
    }
    x
}

impl LoopState {
    /// Evaluate the initial design and set the preference posterior to the prior.
    pub fn new(config: RunConfig, problem: &Problem) -> Result<Self> {
        config.validate()?;
        if problem.objectives() != config.problem.objectives || problem.dims() != config.problem.dims {
            return Err(Error::invalid(
                "problem",
                format!(
                    "config declares {} objectives / {} dims, problem has {} / {}",
                    config.problem.objectives,
                    config.problem.dims,
                    problem.objectives(),
                    problem.dims()
                ),
            ));
        }
        let n0 = config.budgets.n_init;
        let (designs, design_rows): (Vec<Vec<f64>>, Vec<Option<usize>>) = match problem.pool() {
            Some(t) => {
                if t.len() < n0 + config.budgets.outer_iterations {
                    return Err(Error::invalid(
                        "budgets",
                        format!("pool of {} rows cannot supply {n0} initial + {} designs", t.len(), config.budgets.outer_iterations),
                    ));
                }
                let mut rows = sample_indices(&mut stream(&config, "init/pool"), t.len(), n0).into_vec();
                rows.sort_unstable();
                rows.iter().map(|&r| (t.designs[r].clone(), Some(r))).unzip()
            }
            None => latin_hypercube(n0, problem.dims(), &mut stream(&config, "init/lhs"))
                .into_iter()
                .map(|x| (x, None))
                .unzip(),
        };
        let outcomes = designs
            .iter()
            .enumerate()
            .map(|(i, x)| observe(problem, &config, x, &format!("noise/init/{i}")))
            .collect::<Result<_>>()?;
        let prior = MixturePrior::from_config(&config)?;
        let posterior = MixturePosterior::prior_matched(&prior, &mut stream(&config, "svi/init"));
        Ok(Self {
            config,
            designs,
            design_rows,
            outcomes,
            preferences: Vec::new(),
            posterior,
            gp_hyperparams: None,
            pending: None,
            records: Vec::new(),
        })
    }

    /// Index of the round in progress or about to start (1-based).
    pub fn iteration(&self) -> usize {
        self.records.len() + 1
    }

    pub fn is_finished(&self) -> bool {
        self.records.len() >= self.config.budgets.outer_iterations
    }

    fn fit_gps(&mut self, t: usize) -> Result<Vec<GpModel>> {
        let cfg = &self.config;
        let l = cfg.problem.objectives;
        let d = cfg.problem.dims;
        let refit = self.gp_hyperparams.is_none() || (t - 1) % cfg.budgets.gp_refit_period == 0;
        let prev = self.gp_hyperparams.clone();
        let models: Vec<GpModel> = (0..l)
            .into_par_iter()
            .map(|obj| {
                let y: Vec<f64> = self.outcomes.iter().map(|o| o[obj]).collect();
                let warm = prev.as_ref().map(|h| h[obj]);
                let refit_now = |warm: Option<&GpHyperparams>| {
                    let bounds = GpBounds::data_adaptive(d, &y);
                    let warm = warm.filter(|h| {
                        bounds.signal_variance.contains(h.signal_variance)
                            && bounds.lengthscale.contains(h.lengthscale)
                            && bounds.noise_variance.contains(h.noise_variance)
                    });
                    fit(
                        self.designs.clone(),
                        y.clone(),
                        &bounds,
                        MeanFunction::Empirical,
                        cfg.budgets.gp_restarts,
                        warm,
                        &mut stream(cfg, &format!("gp/{t}/{obj}")),
                    )
                };
                match (refit, warm) {
                    (false, Some(h)) => GpModel::with_hyperparams(self.designs.clone(), y.clone(), h, MeanFunction::Empirical)
                        .or_else(|_| refit_now(Some(&h))),
                    _ => refit_now(warm.as_ref()),
                }
            })
            .collect::<Result<_>>()?;
        self.gp_hyperparams = Some(models.iter().map(|m| *m.hyperparams()).collect());
        Ok(models)
    }

    fn preference_samples(&self, n: usize, label: &str, truth: Option<&GroundTruth>) -> Result<Vec<MixtureParams>> {
        match self.config.model.preference {
            PreferenceSource::Learned => Ok(sample_theta(&self.posterior, n, &mut stream(&self.config, label))),
            PreferenceSource::FixedTruth => {
                let t = truth.ok_or_else(|| Error::invalid("model.preference", "fixed_truth needs a simulated decision maker"))?;
                Ok(vec![t.theta.clone(); n])
            }
        }
    }

    /// Fit the models, choose and evaluate the next design, and pick the
    /// comparison to ask about. `truth` is only used for diagnostics and by
    /// the fixed-preference baseline.
    pub fn advance(&mut self, problem: &Problem, truth: Option<&GroundTruth>) -> Result<&PendingQuery> {
        if self.pending.is_some() {
            return Err(Error::invalid("loop", "a comparison is still awaiting an answer"));
        }
        if self.is_finished() {
            return Err(Error::invalid("loop", "iteration budget exhausted"));
        }
        let started = Instant::now();
        let t = self.iteration();
        let cfg = self.config.clone();
        let gps = self.fit_gps(t)?;

        let prior = MixturePrior::from_config(&cfg)?;
        if !self.preferences.is_empty() {
            self.posterior = fit_svi(
                &self.preferences,
                &prior,
                Some(&self.posterior),
                SviOptions::from_config(&cfg),
                &mut stream(&cfg, &format!("svi/{t}")),
            )?;
        }
        let trace = &self.posterior.elbo_trace;
        let tail = &trace[trace.len().saturating_sub(ELBO_TAIL)..];
        let elbo = if tail.is_empty() { 0.0 } else { tail.iter().sum::<f64>() / tail.len() as f64 };
        let summary = posterior_summary_n(&self.posterior, cfg.budgets.summary_samples);

        let acq = AcquisitionConfig::from_config(&cfg);
        let ub_samples = self.preference_samples(cfg.budgets.u_best_samples, &format!("ubest/{t}"), truth)?;
        let u_best = u_best_from_samples(&self.outcomes, &ub_samples, acq.scalarization)?;
        let ei_theta = self.preference_samples(acq.mc_samples, &format!("ei/{t}/theta"), truth)?;
        let noise = EiNoise::with_theta(ei_theta, cfg.problem.objectives, &mut stream(&cfg, &format!("ei/{t}/eps")));
        let evaluated: Vec<bool>;
        let space = match problem.pool() {
            Some(pool) => {
                let mut flags = vec![false; pool.len()];
                for r in self.design_rows.iter().flatten() {
                    flags[*r] = true;
                }
                evaluated = flags;
                SearchSpace::Pool { candidates: &pool.designs, evaluated: &evaluated }
            }
            None => SearchSpace::Continuous { dims: cfg.problem.dims },
        };
        let proposal = propose_design(&gps, &noise, u_best, space, &acq, &mut stream(&cfg, &format!("propose/{t}")))?;
        let outcome = observe(problem, &cfg, &proposal.x, &format!("noise/{t}"))?;

        let theory = match truth {
            Some(tr) if cfg.theory && cfg.model.scalarization == Scalarization::Chebyshev => {
                let (mu_t, sd_t): (Vec<f64>, Vec<f64>) = gps.iter().map(|g| g.predict_unchecked(&proposal.x)).unzip();
                let mu_ref: Vec<f64> = gps.iter().map(|g| g.predict_unchecked(&tr.reference.x_ref).0).collect();
                let f_t = problem.evaluate(&proposal.x)?;
                Some(theory_terms(TheoryInputs {
                    truth: tr,
                    summary: &summary,
                    c_w: cfg.model.c_w,
                    iteration: t,
                    delta: THEORY_DELTA,
                    f_t: f_t.as_slice(),
                    mu_t: &mu_t,
                    sd_t: &sd_t,
                    mu_ref: &mu_ref,
                    eps_proxy: proposal.restart_spread,
                })?)
            }
            _ => None,
        };

        self.designs.push(proposal.x.clone());
        self.design_rows.push(proposal.row);
        self.outcomes.push(outcome.clone());
        let pair = select_pair(
            &self.outcomes,
            &QueryPolicy::from_config(&cfg),
            &self.posterior,
            &mut stream(&cfg, &format!("query/{t}")),
        )?;
        log::debug!("t={t} acquisition {:.4e} spread {:.2e} pair ({}, {})", proposal.value, proposal.restart_spread, pair.i, pair.j);
        self.pending = Some(PendingQuery {
            iteration: t,
            design: proposal.x,
            row: proposal.row,
            outcome,
            pair,
            acquisition_value: proposal.value,
            restart_spread: proposal.restart_spread,
            elbo,
            eta_mean: summary.eta_mean.as_slice().to_vec(),
            archetype_means: summary.archetype_means.iter().map(|w| w.as_slice().to_vec()).collect(),
            theory,
            compute_seconds: cfg.record_timing.then(|| started.elapsed().as_secs_f64()),
        });
        Ok(self.pending.as_ref().expect("just set"))
    }

    /// The two outcomes of the pending comparison, first then second.
    pub fn pending_pair(&self) -> Option<(&[f64], &[f64])> {
        self.pending
            .as_ref()
            .map(|p| (self.outcomes[p.pair.i].as_slice(), self.outcomes[p.pair.j].as_slice()))
    }

    /// Record the answer to the pending comparison and close the round.
    pub fn answer(&mut self, first_wins: bool, mode_used: Option<usize>, truth: Option<&GroundTruth>) -> Result<&RunRecord> {
        let p = self
            .pending
            .take()
            .ok_or_else(|| Error::invalid("loop", "no comparison is awaiting an answer"))?;
        let a = OutcomeVector::new(self.outcomes[p.pair.i].clone())?;
        let b = OutcomeVector::new(self.outcomes[p.pair.j].clone())?;
        let (winner, loser) = if first_wins { (a, b) } else { (b, a) };
        let mut datum = PreferenceDatum::new(winner, loser, p.iteration)?;
        if let (Some(m), Some(tr)) = (mode_used, truth) {
            datum = datum.with_truth(m, tr.k_star())?;
        }
        self.preferences.push(datum);

        let (aligned_errors, regret) = match truth {
            Some(tr) => {
                let summary = PosteriorSummary {
                    eta_mean: crate::SimplexVector::from_raw(p.eta_mean.clone(), None)?,
                    archetype_means: p
                        .archetype_means
                        .iter()
                        .map(|w| crate::SimplexVector::from_raw(w.clone(), None))
                        .collect::<Result<_>>()?,
                };
                let (_, _, al) = estimation_errors(&summary, tr)?;
                let hist: Vec<OutcomeVector> = self.outcomes.iter().cloned().map(OutcomeVector::new).collect::<Result<_>>()?;
                (Some(al.costs), Some(simple_regret(&hist, tr)?))
            }
            None => (None, None),
        };
        let rec = RunRecord {
            iteration: p.iteration,
            design: p.design,
            design_row: p.row,
            outcome: p.outcome,
            query: (p.pair.i, p.pair.j),
            winner_is_first: first_wins,
            mode_used,
            eta_mean: p.eta_mean,
            archetype_means: p.archetype_means,
            aligned_errors,
            simple_regret: regret,
            acquisition_value: p.acquisition_value,
            restart_spread: p.restart_spread,
            elbo: p.elbo,
            theory: p.theory,
            wall_clock_s: p.compute_seconds,
        };
        log::info!(
            "t={} ei={:.4e} regret={} eta={:?}",
            rec.iteration,
            rec.acquisition_value,
            rec.simple_regret.map_or("n/a".into(), |r| format!("{r:.4}")),
            rec.eta_mean.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>()
        );
        self.records.push(rec);
        Ok(self.records.last().expect("just pushed"))
    }

    /// One full round against a simulated decision maker.
    pub fn step(&mut self, problem: &Problem, dm: &mut SimulatedDm, truth: Option<&GroundTruth>) -> Result<&RunRecord> {
        self.advance(problem, truth)?;
        let (a, b) = self.pending_pair().expect("advance leaves a pending comparison");
        let (a, b) = (a.to_vec(), b.to_vec());
        let (first_wins, mode) = dm.answer(&a, &b);
        self.answer(first_wins, Some(mode), truth)
    }
}

/// Run the whole loop against a simulated decision maker.
///
/// `on_round` is called after every completed round, e.g. to checkpoint; an
/// error from it stops the loop.
pub fn run_loop<F>(
    state: &mut LoopState,
    problem: &Problem,
    dm: &mut SimulatedDm,
    truth: Option<&GroundTruth>,
    mut on_round: F,
) -> Result<Vec<RunRecord>>
where
    F: FnMut(&LoopState, &SimulatedDm) -> Result<()>,
{
    if state.pending.is_some() {
        return Err(Error::invalid("loop", "cannot resume with an unanswered comparison"));
    }
    if dm.queries_answered != state.records.len() {
        return Err(Error::invalid(
            "loop",
            format!("decision maker answered {} queries but the run has {} rounds", dm.queries_answered, state.records.len()),
        ));
    }
    while !state.is_finished() {
        state.step(problem, dm, truth)?;
        on_round(state, dm)?;
    }
    Ok(state.records.clone())
}
