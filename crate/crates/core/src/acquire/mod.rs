//! Mixture expected improvement and the outer optimisation loop.
//!
//! The acquisition is a Monte-Carlo estimate of
//! `E[max(U_mix(f(x); theta) - u_best, 0)]`, with `f(x)` drawn from the
//! independent objective GPs and `theta` from the preference posterior. For
//! the inner search all randomness is drawn once ([`EiNoise`]), which turns
//! the estimate into a fixed, continuous function of `x`.

mod run;

pub use run::{run_loop, LoopState, PendingQuery};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Scalarization};
use crate::error::{Error, Result};
use crate::gp::GpModel;
use crate::optim::compass_maximize;
use crate::prefmix::{sample_theta, MixturePosterior};
use crate::rng::RngStream;
use crate::scalarize::mixture_utility_with;
use crate::MixtureParams;

/// Uniform screening points per restart in the continuous search.
const SCREEN_PER_RESTART: usize = 20;
const COMPASS_STEP: f64 = 0.1;
const COMPASS_MIN_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionConfig {
    pub mc_samples: usize,
    pub restarts: usize,
    /// Objective evaluations per restart of the inner search.
    pub max_evals: usize,
    pub scalarization: Scalarization,
}

impl AcquisitionConfig {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            mc_samples: cfg.budgets.ei_mc_samples,
            restarts: cfg.budgets.ei_restarts,
            max_evals: cfg.budgets.ei_max_evals,
            scalarization: cfg.model.scalarization,
        }
    }
}

fn expected_utility(y: &[f64], samples: &[MixtureParams], s: Scalarization) -> f64 {
    samples
        .iter()
        .map(|th| mixture_utility_with(s, y, th.eta.as_slice(), &th.archetypes))
        .sum::<f64>()
        / samples.len() as f64
}

/// `max_i mean_s U_mix(y_i; theta_s)` with the same samples for every outcome.
pub fn u_best_from_samples<Y: AsRef<[f64]>>(history: &[Y], samples: &[MixtureParams], s: Scalarization) -> Result<f64> {
    if history.is_empty() {
        return Err(Error::Empty("u_best needs a nonempty history"));
    }
    if samples.is_empty() {
        return Err(Error::Empty("u_best needs at least one preference sample"));
    }
    Ok(history
        .iter()
        .map(|y| expected_utility(y.as_ref(), samples, s))
        .fold(f64::NEG_INFINITY, f64::max))
}

pub fn u_best<Y: AsRef<[f64]>>(
    history: &[Y],
    post: &MixturePosterior,
    samples: usize,
    s: Scalarization,
    stream: &mut RngStream,
) -> Result<f64> {
    u_best_from_samples(history, &sample_theta(post, samples.max(1), stream), s)
}

/// Pre-drawn randomness for one acquisition: a preference sample and a
/// standard-normal vector per Monte-Carlo draw.
#[derive(Debug, Clone, PartialEq)]
pub struct EiNoise {
    pub theta: Vec<MixtureParams>,
    pub eps: Vec<Vec<f64>>,
}

impl EiNoise {
    pub fn draw(post: &MixturePosterior, mc_samples: usize, stream: &mut RngStream) -> Self {
        let theta = sample_theta(post, mc_samples.max(1), stream);
        Self::with_theta(theta, post.objectives(), stream)
    }

    /// Use the given preference samples, one Monte-Carlo draw each.
    pub fn with_theta(theta: Vec<MixtureParams>, objectives: usize, stream: &mut RngStream) -> Self {
        let eps = theta
            .iter()
            .map(|_| (0..objectives).map(|_| stream.sample(StandardNormal)).collect())
            .collect();
        Self { theta, eps }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }
}

/// Mixture EI at `x` with fixed noise. With `u_best = -inf` this is the
/// untruncated expected mixture utility.
pub fn ei_mix_crn(x: &[f64], gps: &[GpModel], noise: &EiNoise, u_best: f64, s: Scalarization) -> f64 {
    let pred: Vec<(f64, f64)> = gps.iter().map(|g| g.predict_unchecked(x)).collect();
    let mut y = vec![0.0; gps.len()];
    let mut total = 0.0;
    for (th, eps) in noise.theta.iter().zip(&noise.eps) {
        for (l, (m, sd)) in pred.iter().enumerate() {
            y[l] = m + sd * eps[l];
        }
        let u = mixture_utility_with(s, &y, th.eta.as_slice(), &th.archetypes);
        total += if u_best == f64::NEG_INFINITY { u } else { (u - u_best).max(0.0) };
    }
    total / noise.len() as f64
}

/// Mixture EI at `x` with freshly drawn noise.
pub fn ei_mix(
    x: &[f64],
    gps: &[GpModel],
    post: &MixturePosterior,
    u_best: f64,
    cfg: &AcquisitionConfig,
    stream: &mut RngStream,
) -> f64 {
    let noise = EiNoise::draw(post, cfg.mc_samples, stream);
    ei_mix_crn(x, gps, &noise, u_best, cfg.scalarization)
}

/// Where the next design may come from.
#[derive(Debug, Clone, Copy)]
pub enum SearchSpace<'a> {
    /// The unit cube `[0,1]^d`.
    Continuous { dims: usize },
    /// Rows of a finite pool; rows flagged in `evaluated` are skipped.
    Pool { candidates: &'a [Vec<f64>], evaluated: &'a [bool] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub x: Vec<f64>,
    pub row: Option<usize>,
    pub value: f64,
    /// Max minus min of the restart optima; zero for exact pool search.
    pub restart_spread: f64,
}

fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Maximise the fixed-noise mixture EI.
///
/// In the cube, `20 * restarts` uniform points are screened and the best
/// `restarts` of them start a bounded compass search. In a pool the argmax
/// over unevaluated rows is exact.
pub fn propose_design(
    gps: &[GpModel],
    noise: &EiNoise,
    u_best: f64,
    space: SearchSpace<'_>,
    cfg: &AcquisitionConfig,
    stream: &mut RngStream,
) -> Result<Proposal> {
    if gps.is_empty() {
        return Err(Error::Empty("propose_design needs at least one GP"));
    }
    let acq = |x: &[f64]| ei_mix_crn(x, gps, noise, u_best, cfg.scalarization);
    match space {
        SearchSpace::Pool { candidates, evaluated } => {
            let open: Vec<usize> = (0..candidates.len()).filter(|&r| !evaluated.get(r).copied().unwrap_or(false)).collect();
            if open.is_empty() {
                return Err(Error::Empty("candidate pool exhausted"));
            }
            let values: Vec<f64> = open.par_iter().map(|&r| acq(&candidates[r])).collect();
            let b = argmax_first(&values);
            Ok(Proposal {
                x: candidates[open[b]].clone(),
                row: Some(open[b]),
                value: values[b],
                restart_spread: 0.0,
            })
        }
        SearchSpace::Continuous { dims } => {
            let restarts = cfg.restarts.max(1);
            let screen: Vec<Vec<f64>> = (0..SCREEN_PER_RESTART * restarts)
                .map(|_| (0..dims).map(|_| stream.random::<f64>()).collect())
                .collect();
            let scores: Vec<f64> = screen.par_iter().map(|x| acq(x)).collect();
            let mut order: Vec<usize> = (0..screen.len()).collect();
            order.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b)));
            let starts: Vec<&Vec<f64>> = order[..restarts].iter().map(|&i| &screen[i]).collect();
            let results: Vec<(Vec<f64>, f64)> = starts
                .par_iter()
                .map(|x0| compass_maximize(acq, x0, COMPASS_STEP, COMPASS_MIN_STEP, cfg.max_evals.max(1)))
                .collect();
            let values: Vec<f64> = results.iter().map(|r| r.1).collect();
            let b = argmax_first(&values);
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            Ok(Proposal {
                x: results[b].0.clone(),
                row: None,
                value: values[b],
                restart_spread: values[b] - lo,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{GpHyperparams, MeanFunction};
    use crate::numeric::{normal_cdf, normal_pdf};
    use crate::rng::rng_stream;
    use crate::simplex::Simplex;

    fn point_theta(w: &[f64]) -> MixtureParams {
        MixtureParams::new(Simplex::uniform(1), vec![Simplex::from_raw(w.to_vec(), None).unwrap()]).unwrap()
    }

    fn gp_1d(xs: &[f64], ys: &[f64], noise: f64) -> GpModel {
        let hyp = GpHyperparams::fixed(1.0, 0.3, noise).unwrap();
        GpModel::with_hyperparams(xs.iter().map(|x| vec![*x]).collect(), ys.to_vec(), hyp, MeanFunction::Zero).unwrap()
    }

    fn cfg(mc: usize) -> AcquisitionConfig {
        AcquisitionConfig {
            mc_samples: mc,
            restarts: 4,
            max_evals: 300,
            scalarization: Scalarization::Chebyshev,
        }
    }

    #[test]
    fn u_best_cases() {
        let th = vec![point_theta(&[0.5, 0.5])];
        let y = [vec![0.2, 0.4]];
        assert!((u_best_from_samples(&y, &th, Scalarization::Chebyshev).unwrap() + 0.4).abs() < 1e-15);
        let dup = [vec![0.2, 0.4], vec![0.9, 0.1], vec![0.2, 0.4]];
        let dedup = [vec![0.2, 0.4], vec![0.9, 0.1]];
        assert_eq!(
            u_best_from_samples(&dup, &th, Scalarization::Chebyshev).unwrap(),
            u_best_from_samples(&dedup, &th, Scalarization::Chebyshev).unwrap()
        );
        assert!(u_best_from_samples::<Vec<f64>>(&[], &th, Scalarization::Chebyshev).is_err());
    }

    #[test]
    fn u_best_matches_exhaustive_loop() {
        let mut s = rng_stream(1, "t");
        let th: Vec<MixtureParams> = (0..7)
            .map(|_| {
                let eta = Simplex::from_raw(vec![s.random::<f64>() + 0.1, s.random::<f64>() + 0.1], None).unwrap();
                let ws = (0..2)
                    .map(|_| Simplex::from_raw((0..3).map(|_| s.random::<f64>() + 0.05).collect(), None).unwrap())
                    .collect();
                MixtureParams::new(eta, ws).unwrap()
            })
            .collect();
        let hist: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| s.random::<f64>()).collect()).collect();
        let mut best = f64::NEG_INFINITY;
        for y in &hist {
            let mut acc = 0.0;
            for t in &th {
                for k in 0..2 {
                    let w = t.archetypes[k].as_slice();
                    let mut m = f64::INFINITY;
                    for l in 0..3 {
                        m = m.min(y[l] / w[l]);
                    }
                    acc += t.eta[k] * -m;
                }
            }
            best = best.max(acc / th.len() as f64);
        }
        assert!((u_best_from_samples(&hist, &th, Scalarization::Chebyshev).unwrap() - best).abs() < 1e-10);
    }

    #[test]
    fn deterministic_improvement_is_exact() {
        // zero-variance GPs at training inputs, collapsed theta
        let g1 = gp_1d(&[0.2, 0.7], &[0.4, 0.1], 1e-12);
        let g2 = gp_1d(&[0.2, 0.7], &[0.6, 0.3], 1e-12);
        let th = point_theta(&[0.5, 0.5]);
        let noise = EiNoise::with_theta(vec![th; 16], 2, &mut rng_stream(2, "n"));
        let x = [0.2];
        let u = -(0.4f64 / 0.5).min(0.6 / 0.5);
        let gps = [g1, g2];
        let ei = ei_mix_crn(&x, &gps, &noise, u - 1.0, Scalarization::Chebyshev);
        assert!((ei - 1.0).abs() < 1e-5, "{ei}");
        assert_eq!(ei_mix_crn(&x, &gps, &noise, u + 5.0, Scalarization::Chebyshev), 0.0);
        let mean_u = ei_mix_crn(&x, &gps, &noise, f64::NEG_INFINITY, Scalarization::Chebyshev);
        assert!((mean_u - u).abs() < 1e-5);
    }

    #[test]
    fn single_gaussian_case_matches_closed_form() {
        let g = gp_1d(&[0.1, 0.9], &[0.3, -0.2], 0.05);
        let x = [0.5];
        let (m, sd) = g.predict(&x).unwrap();
        // U = -y / 1 is Gaussian with mean -m, std sd
        let u_best = -m - 0.2 * sd;
        let z = (-m - u_best) / sd;
        let exact = (-m - u_best) * normal_cdf(z) + sd * normal_pdf(z);
        let n = 10_000;
        let noise = EiNoise::with_theta(vec![point_theta(&[1.0]); n], 1, &mut rng_stream(3, "n"));
        let gps = [g];
        let est = ei_mix_crn(&x, &gps, &noise, u_best, Scalarization::Chebyshev);
        let draws: Vec<f64> = noise.eps.iter().map(|e| (-(m + sd * e[0]) - u_best).max(0.0)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let se = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64 / n as f64).sqrt();
        assert!((est - exact).abs() < 3.0 * se, "{est} vs {exact} (se {se})");
    }

    #[test]
    fn ei_is_nonnegative_and_continuous() {
        let g1 = gp_1d(&[0.1, 0.5, 0.8], &[0.3, 0.1, 0.5], 1e-4);
        let g2 = gp_1d(&[0.1, 0.5, 0.8], &[0.2, 0.6, 0.1], 1e-4);
        let th = point_theta(&[0.3, 0.7]);
        let noise = EiNoise::with_theta(vec![th; 12], 2, &mut rng_stream(4, "n"));
        let gps = [g1, g2];
        let mut s = rng_stream(4, "x");
        for _ in 0..200 {
            let x = [s.random::<f64>() * (1.0 - 1e-6)];
            let a = ei_mix_crn(&x, &gps, &noise, -0.4, Scalarization::Chebyshev);
            let b = ei_mix_crn(&[x[0] + 1e-6], &gps, &noise, -0.4, Scalarization::Chebyshev);
            assert!(a >= 0.0);
            assert!((a - b).abs() <= 1e-3);
        }
    }

    #[test]
    fn pool_search_is_exhaustive() {
        let g1 = gp_1d(&[0.1, 0.9], &[0.3, 0.5], 1e-3);
        let g2 = gp_1d(&[0.1, 0.9], &[0.6, 0.2], 1e-3);
        let th = point_theta(&[0.5, 0.5]);
        let noise = EiNoise::with_theta(vec![th; 8], 2, &mut rng_stream(5, "n"));
        let gps = [g1, g2];
        let pool = vec![vec![0.2], vec![0.55], vec![0.95]];
        let evaluated = [false, false, true];
        let p = propose_design(
            &gps,
            &noise,
            -0.9,
            SearchSpace::Pool { candidates: &pool, evaluated: &evaluated },
            &cfg(8),
            &mut rng_stream(5, "p"),
        )
        .unwrap();
        let vals: Vec<f64> = pool[..2].iter().map(|x| ei_mix_crn(x, &gps, &noise, -0.9, Scalarization::Chebyshev)).collect();
        let want = if vals[1] > vals[0] { 1 } else { 0 };
        assert_eq!(p.row, Some(want));
        assert!((p.value - vals[want]).abs() < 1e-10);
        assert_eq!(p.restart_spread, 0.0);
        let all = [true; 3];
        assert!(propose_design(&gps, &noise, -0.9, SearchSpace::Pool { candidates: &pool, evaluated: &all }, &cfg(8), &mut rng_stream(5, "p")).is_err());
    }

    #[test]
    fn continuous_search_finds_quadratic_optimum() {
        let xs: Vec<f64> = (0..9).map(|i| i as f64 / 8.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (x - 0.3) * (x - 0.3)).collect();
        let g = gp_1d(&xs, &ys, 1e-6);
        let noise = EiNoise::with_theta(vec![point_theta(&[1.0]); 4], 1, &mut rng_stream(6, "n"));
        let gps = [g];
        let p = propose_design(
            &gps,
            &noise,
            f64::NEG_INFINITY,
            SearchSpace::Continuous { dims: 1 },
            &cfg(4),
            &mut rng_stream(6, "p"),
        )
        .unwrap();
        let grid_best = (0..=1000)
            .map(|i| i as f64 / 1000.0)
            .max_by(|a, b| {
                let fa = ei_mix_crn(&[*a], &gps, &noise, f64::NEG_INFINITY, Scalarization::Chebyshev);
                let fb = ei_mix_crn(&[*b], &gps, &noise, f64::NEG_INFINITY, Scalarization::Chebyshev);
                fa.total_cmp(&fb)
            })
            .unwrap();
        assert!((p.x[0] - grid_best).abs() < 0.05, "{} vs {grid_best}", p.x[0]);
        assert!(p.restart_spread >= 0.0);
    }

    #[test]
    fn proposal_beats_every_start() {
        let g1 = gp_1d(&[0.1, 0.4, 0.8], &[0.3, 0.1, 0.5], 1e-4);
        let g2 = gp_1d(&[0.1, 0.4, 0.8], &[0.2, 0.6, 0.1], 1e-4);
        let noise = EiNoise::with_theta(vec![point_theta(&[0.4, 0.6]); 12], 2, &mut rng_stream(7, "n"));
        let gps = [g1, g2];
        let c = cfg(12);
        let p = propose_design(&gps, &noise, -0.6, SearchSpace::Continuous { dims: 1 }, &c, &mut rng_stream(7, "p")).unwrap();
        let mut s = rng_stream(7, "p");
        for _ in 0..SCREEN_PER_RESTART * c.restarts {
            let x = [s.random::<f64>()];
            assert!(p.value >= ei_mix_crn(&x, &gps, &noise, -0.6, Scalarization::Chebyshev));
        }
    }
}
