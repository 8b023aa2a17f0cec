//! Pairwise query selection.
//!
//! Scores are mutual informations (in nats) between the DM's answer and
//! some part of the preference posterior:
//!
//! - *clusterless*: predictive entropy under the single mixture-mean weight;
//! - *inter*: information about which mode answers,
//!   `H(p_mix) - sum_k eta_k H(p_k)`;
//! - *intra*: information about the weights of one mode `c`,
//!   `H(mean_w p_w) - mean_w H(p_w)`;
//! - *hybrid*: `lambda * inter + (1 - lambda) * intra` on shared samples.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{QueryMode, RunConfig, Scalarization};
use crate::error::{Error, Result};
use crate::numeric::bernoulli_entropy;
use crate::prefmix::{posterior_summary_n, probit_choice_prob_with, sample_theta, MixturePosterior, PosteriorSummary};
use crate::rng::RngStream;
use crate::MixtureParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub i: usize,
    pub j: usize,
    pub score: f64,
}

/// Everything `select_pair` needs besides the pool and the posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryPolicy {
    pub mode: QueryMode,
    pub lambda: f64,
    pub samples: usize,
    pub n_pairs: usize,
    pub intra_mode: Option<usize>,
    pub sigma_u: f64,
    pub scalarization: Scalarization,
    pub summary_samples: usize,
}

impl QueryPolicy {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            mode: cfg.query.mode,
            lambda: cfg.query.lambda,
            samples: cfg.query.samples,
            n_pairs: cfg.query.n_pairs,
            intra_mode: cfg.query.intra_mode,
            sigma_u: cfg.model.sigma_u,
            scalarization: cfg.model.scalarization,
            summary_samples: cfg.budgets.summary_samples,
        }
    }
}

/// Entropy of the choice under the mixture-mean weight `sum_k eta_k w_k`.
pub fn score_clusterless(y_i: &[f64], y_j: &[f64], summary: &PosteriorSummary, sigma_u: f64) -> f64 {
    score_clusterless_with(Scalarization::Chebyshev, y_i, y_j, summary, sigma_u)
}

pub fn score_clusterless_with(
    s: Scalarization,
    y_i: &[f64],
    y_j: &[f64],
    summary: &PosteriorSummary,
    sigma_u: f64,
) -> f64 {
    let w = summary.mixture_mean_weight();
    bernoulli_entropy(probit_choice_prob_with(s, y_i, y_j, &w, sigma_u))
}

/// Per-component choice probabilities averaged over samples, and the mean `eta`.
fn component_probabilities(
    s: Scalarization,
    y_i: &[f64],
    y_j: &[f64],
    samples: &[MixtureParams],
    sigma_u: f64,
) -> (Vec<f64>, Vec<f64>) {
    let k = samples[0].components();
    let mut p = vec![0.0; k];
    let mut eta = vec![0.0; k];
    for th in samples {
        for c in 0..k {
            p[c] += probit_choice_prob_with(s, y_i, y_j, th.archetypes[c].as_slice(), sigma_u);
            eta[c] += th.eta[c];
        }
    }
    let inv = 1.0 / samples.len() as f64;
    p.iter_mut().for_each(|v| *v *= inv);
    eta.iter_mut().for_each(|v| *v *= inv);
    (p, eta)
}

/// Plug-in inter-mode mutual information from pre-drawn samples.
pub fn score_inter_samples(s: Scalarization, y_i: &[f64], y_j: &[f64], samples: &[MixtureParams], sigma_u: f64) -> f64 {
    let (p, eta) = component_probabilities(s, y_i, y_j, samples, sigma_u);
    inter_from_probabilities(&p, &eta)
}

/// `H(sum_k eta_k p_k) - sum_k eta_k H(p_k)`, clamped at zero.
pub fn inter_from_probabilities(p: &[f64], eta: &[f64]) -> f64 {
    let p_mix: f64 = p.iter().zip(eta).map(|(a, b)| a * b).sum();
    let conditional: f64 = p.iter().zip(eta).map(|(a, b)| b * bernoulli_entropy(*a)).sum();
    (bernoulli_entropy(p_mix) - conditional).max(0.0)
}

/// `H(mean p) - mean H(p)` over per-sample choice probabilities, clamped at zero.
pub fn bald_from_probabilities(p: &[f64]) -> f64 {
    let n = p.len() as f64;
    let mean = p.iter().sum::<f64>() / n;
    let expected = p.iter().map(|v| bernoulli_entropy(*v)).sum::<f64>() / n;
    (bernoulli_entropy(mean) - expected).max(0.0)
}

/// Plug-in intra-mode BALD score for component `c` from pre-drawn samples.
pub fn score_intra_samples(
    s: Scalarization,
    y_i: &[f64],
    y_j: &[f64],
    samples: &[MixtureParams],
    c: usize,
    sigma_u: f64,
) -> f64 {
    let p: Vec<f64> = samples
        .iter()
        .map(|th| probit_choice_prob_with(s, y_i, y_j, th.archetypes[c].as_slice(), sigma_u))
        .collect();
    bald_from_probabilities(&p)
}

pub fn score_inter(
    y_i: &[f64],
    y_j: &[f64],
    post: &MixturePosterior,
    sigma_u: f64,
    samples: usize,
    stream: &mut RngStream,
) -> f64 {
    let draws = sample_theta(post, samples.max(1), stream);
    score_inter_samples(Scalarization::Chebyshev, y_i, y_j, &draws, sigma_u)
}

pub fn score_intra(
    y_i: &[f64],
    y_j: &[f64],
    post: &MixturePosterior,
    c: usize,
    sigma_u: f64,
    samples: usize,
    stream: &mut RngStream,
) -> f64 {
    let draws = sample_theta(post, samples.max(1), stream);
    score_intra_samples(Scalarization::Chebyshev, y_i, y_j, &draws, c, sigma_u)
}

/// Component targeted by intra-mode queries: the override if set, otherwise
/// the largest posterior-mean weight (lowest index on ties).
pub fn intra_target(policy: &QueryPolicy, summary: &PosteriorSummary) -> usize {
    policy.intra_mode.unwrap_or_else(|| summary.eta_mean.argmax())
}

/// Score one pair under `policy` with shared samples.
pub fn score_pair(
    policy: &QueryPolicy,
    y_i: &[f64],
    y_j: &[f64],
    samples: &[MixtureParams],
    summary: &PosteriorSummary,
    c: usize,
) -> f64 {
    let s = policy.scalarization;
    match policy.mode {
        QueryMode::Random => 0.0,
        QueryMode::Clusterless => score_clusterless_with(s, y_i, y_j, summary, policy.sigma_u),
        QueryMode::Inter => score_inter_samples(s, y_i, y_j, samples, policy.sigma_u),
        QueryMode::Intra => score_intra_samples(s, y_i, y_j, samples, c, policy.sigma_u),
        QueryMode::Hybrid => {
            let inter = score_inter_samples(s, y_i, y_j, samples, policy.sigma_u);
            let intra = score_intra_samples(s, y_i, y_j, samples, c, policy.sigma_u);
            policy.lambda * inter + (1.0 - policy.lambda) * intra
        }
    }
}

/// The candidate pairs considered this round, in lexicographic order.
///
/// All `n (n - 1) / 2` pairs when that is at most `n_pairs`, otherwise a
/// uniform subsample without replacement.
pub fn candidate_pairs(n: usize, n_pairs: usize, stream: &mut RngStream) -> Vec<(usize, usize)> {
    let total = n * (n - 1) / 2;
    let pair_at = |mut idx: usize| {
        let mut i = 0;
        while idx >= n - 1 - i {
            idx -= n - 1 - i;
            i += 1;
        }
        (i, i + 1 + idx)
    };
    if total <= n_pairs {
        return (0..total).map(pair_at).collect();
    }
    let mut chosen = sample_indices(stream, total, n_pairs).into_vec();
    chosen.sort_unstable();
    chosen.into_iter().map(pair_at).collect()
}

/// Pick the next comparison from the observed outcomes.
///
/// Ties go to the lexicographically smallest `(i, j)`.
pub fn select_pair(
    pool: &[Vec<f64>],
    policy: &QueryPolicy,
    post: &MixturePosterior,
    stream: &mut RngStream,
) -> Result<CandidatePair> {
    if pool.len() < 2 {
        return Err(Error::invalid("query pool", format!("{} outcomes, need at least 2", pool.len())));
    }
    let pairs = candidate_pairs(pool.len(), policy.n_pairs.max(1), stream);
    if policy.mode == QueryMode::Random {
        let (i, j) = pairs[stream.random_range(0..pairs.len())];
        return Ok(CandidatePair { i, j, score: 0.0 });
    }
    let samples = sample_theta(post, policy.samples.max(1), stream);
    let summary = posterior_summary_n(post, policy.summary_samples);
    let c = intra_target(policy, &summary);
    if c >= post.components() {
        return Err(Error::invalid("query.intra_mode", format!("component {c} out of range")));
    }
    Ok(select_from_samples(pool, &pairs, policy, &samples, &summary, c))
}

/// Argmax over `pairs` with all randomness already drawn.
pub fn select_from_samples(
    pool: &[Vec<f64>],
    pairs: &[(usize, usize)],
    policy: &QueryPolicy,
    samples: &[MixtureParams],
    summary: &PosteriorSummary,
    c: usize,
) -> CandidatePair {
    let scores: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| score_pair(policy, &pool[i], &pool[j], samples, summary, c))
        .collect();
    let mut best = 0;
    for (idx, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = idx;
        }
    }
    let (i, j) = pairs[best];
    CandidatePair { i, j, score: scores[best] }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::normal_cdf;
    use crate::prefmix::MixturePrior;
    use crate::rng::rng_stream;
    use crate::simplex::Simplex;

    fn policy(mode: QueryMode, lambda: f64) -> QueryPolicy {
        QueryPolicy {
            mode,
            lambda,
            samples: 32,
            n_pairs: 200,
            intra_mode: None,
            sigma_u: 0.1,
            scalarization: Scalarization::Chebyshev,
            summary_samples: 200,
        }
    }

    fn posterior(seed: u64) -> MixturePosterior {
        let prior = MixturePrior::new(3, 1.0, vec![1.0; 3], 0.1, 0.01).unwrap();
        let mut p = MixturePosterior::prior_matched(&prior, &mut rng_stream(seed, "init"));
        p.s_w.iter_mut().flatten().for_each(|s| *s = 0.5);
        p
    }

    fn pool(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut s = rng_stream(seed, "pool");
        (0..n).map(|_| (0..3).map(|_| s.random::<f64>()).collect()).collect()
    }

    #[test]
    fn clusterless_cases() {
        let summary = PosteriorSummary {
            eta_mean: Simplex::new(vec![1.0], None).unwrap(),
            archetype_means: vec![Simplex::new(vec![0.5, 0.5], None).unwrap()],
        };
        let y = [0.3, 0.4];
        assert!((score_clusterless(&y, &y, &summary, 0.1) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(score_clusterless(&[0.0, 0.0], &[1.0, 1.0], &summary, 0.01) < 1e-12);
        let p = normal_cdf(1.0);
        let direct = -(p * p.ln() + (1.0 - p) * (1.0 - p).ln());
        assert!((bernoulli_entropy(p) - direct).abs() < 1e-15);
        assert!((bernoulli_entropy(p) - 0.437_43).abs() < 5e-6);
    }

    #[test]
    fn inter_hand_cases() {
        let p1 = normal_cdf(1.0);
        let v = inter_from_probabilities(&[p1, 1.0 - p1], &[0.5, 0.5]);
        assert!((v - (std::f64::consts::LN_2 - bernoulli_entropy(p1))).abs() < 1e-15, "{v}");
        assert!((v - 0.255_71).abs() < 5e-6, "{v}");
        assert_eq!(inter_from_probabilities(&[0.3], &[1.0]), 0.0);
    }

    #[test]
    fn intra_hand_cases() {
        let v = bald_from_probabilities(&[0.1, 0.9]);
        assert!((v - 0.368_06).abs() < 5e-6, "{v}");
        assert!(bald_from_probabilities(&[0.7, 0.7, 0.7]) < 1e-15);
    }

    #[test]
    fn scores_within_information_bounds() {
        let post = posterior(1);
        let draws = sample_theta(&post, 64, &mut rng_stream(1, "draws"));
        for pair in pool(8, 1).windows(2) {
            for v in [
                score_inter_samples(Scalarization::Chebyshev, &pair[0], &pair[1], &draws, 0.1),
                score_intra_samples(Scalarization::Chebyshev, &pair[0], &pair[1], &draws, 0, 0.1),
            ] {
                assert!((0.0..=std::f64::consts::LN_2 + 1e-12).contains(&v));
            }
        }
    }

    #[test]
    fn pool_of_two_forces_the_pair() {
        let post = posterior(2);
        for mode in QueryMode::ALL {
            let p = select_pair(&pool(2, 2), &policy(mode, 0.5), &post, &mut rng_stream(2, "q")).unwrap();
            assert_eq!((p.i, p.j), (0, 1));
        }
        assert!(select_pair(&pool(1, 2), &policy(QueryMode::Inter, 0.5), &post, &mut rng_stream(2, "q")).is_err());
    }

    #[test]
    fn hybrid_endpoints_match_pure_modes() {
        let post = posterior(3);
        let pl = pool(9, 3);
        let pick = |mode, lambda| select_pair(&pl, &policy(mode, lambda), &post, &mut rng_stream(3, "q")).unwrap();
        let h1 = pick(QueryMode::Hybrid, 1.0);
        let inter = pick(QueryMode::Inter, 0.5);
        assert_eq!((h1.i, h1.j, h1.score), (inter.i, inter.j, inter.score));
        let h0 = pick(QueryMode::Hybrid, 0.0);
        let intra = pick(QueryMode::Intra, 0.5);
        assert_eq!((h0.i, h0.j, h0.score), (intra.i, intra.j, intra.score));
    }

    #[test]
    fn hybrid_is_affine_in_lambda() {
        let post = posterior(4);
        let draws = sample_theta(&post, 64, &mut rng_stream(4, "draws"));
        let summary = posterior_summary_n(&post, 100);
        let pl = pool(2, 4);
        let at = |l: f64| score_pair(&policy(QueryMode::Hybrid, l), &pl[0], &pl[1], &draws, &summary, 0);
        assert!((at(0.3) - (0.3 * at(1.0) + 0.7 * at(0.0))).abs() < 1e-14);
    }

    #[test]
    fn argmax_matches_exhaustive_scoring() {
        let post = posterior(5);
        let pl = pool(5, 5);
        let pol = policy(QueryMode::Hybrid, 0.4);
        let chosen = select_pair(&pl, &pol, &post, &mut rng_stream(5, "q")).unwrap();
        // replay the same draws
        let mut s = rng_stream(5, "q");
        let pairs = candidate_pairs(5, 200, &mut s);
        assert_eq!(pairs.len(), 10);
        let draws = sample_theta(&post, pol.samples, &mut s);
        let summary = posterior_summary_n(&post, pol.summary_samples);
        let c = summary.eta_mean.argmax();
        let mut best = (f64::NEG_INFINITY, 0, 0);
        for i in 0..5 {
            for j in i + 1..5 {
                let v = score_pair(&pol, &pl[i], &pl[j], &draws, &summary, c);
                if v > best.0 {
                    best = (v, i, j);
                }
            }
        }
        assert_eq!((chosen.i, chosen.j), (best.1, best.2));
        assert!((chosen.score - best.0).abs() < 1e-12);
    }

    #[test]
    fn subsampling_is_deterministic_and_distinct() {
        let a = candidate_pairs(40, 50, &mut rng_stream(6, "q"));
        let b = candidate_pairs(40, 50, &mut rng_stream(6, "q"));
        assert_eq!(a, b);
        assert_eq!(a.len(), 50);
        let mut sorted = a.clone();
        sorted.dedup();
        assert_eq!(sorted.len(), 50);
        assert!(a.iter().all(|(i, j)| i < j && *j < 40));
        assert_eq!(candidate_pairs(4, 200, &mut rng_stream(6, "q")).len(), 6);
    }

    #[test]
    fn negative_plugin_mass_shrinks_with_samples() {
        let post = posterior(7);
        let pl = pool(6, 7);
        let raw_gap = |n: usize| {
            let draws = sample_theta(&post, n, &mut rng_stream(7, "mc"));
            let mut worst: f64 = 0.0;
            for i in 0..6 {
                for j in i + 1..6 {
                    let p: Vec<f64> = draws
                        .iter()
                        .map(|th| probit_choice_prob_with(Scalarization::Chebyshev, &pl[i], &pl[j], th.archetypes[0].as_slice(), 0.1))
                        .collect();
                    let mean = p.iter().sum::<f64>() / p.len() as f64;
                    let exp = p.iter().map(|v| bernoulli_entropy(*v)).sum::<f64>() / p.len() as f64;
                    worst = worst.min(bernoulli_entropy(mean) - exp);
                }
            }
            worst
        };
        // BALD's plug-in estimate is a concave-minus-mean gap: never negative
        assert!(raw_gap(16) >= -1e-12 && raw_gap(256) >= -1e-12);
    }
}
