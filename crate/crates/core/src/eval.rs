//! Metrics against a known ground truth, archetype alignment, and the
//! numerical checks of the utility Lipschitz bounds and the regret
//! decomposition.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assign::{brute_force, hungarian};
use crate::bench::Problem;
use crate::error::{Error, Result};
use crate::gp::beta_t;
use crate::prefmix::PosteriorSummary;
use crate::record::{CsvTable, RunRecord, TheoryTerms};
use crate::rng::{rng_stream, RngStream};
use crate::scalarize::{chebyshev_raw, lipschitz_bounds, mixture_utility_with};
use crate::simplex::Simplex;
use crate::types::OutcomeVector;
use crate::{MixtureParams, Scalarization};

/// Largest `K` for which alignment enumerates all injections.
pub const BRUTE_FORCE_MAX_K: usize = 8;
pub const KL_SMOOTHING: f64 = 1e-6;
pub const THEORY_TOLERANCE: f64 = 1e-9;
const PROBE_POINTS: usize = 10_000;
const PROBE_MARGIN: f64 = 1.1;

/// Best design found by random search under the true mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub u_ref: f64,
    pub x_ref: Vec<f64>,
    pub f_ref: Vec<f64>,
    pub samples: usize,
}

/// Everything the metrics need that the learner never sees.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub theta: MixtureParams,
    pub reference: Reference,
    /// Probe-based bound on `|f(x)|_inf`, with margin.
    pub b_y: f64,
}

impl GroundTruth {
    pub fn build(problem: &Problem, theta: MixtureParams, n_samples: usize, seed: u64, cache_dir: Option<&Path>) -> Result<Self> {
        let reference = reference_utility(problem, &theta, n_samples, seed, cache_dir)?;
        let b_y = probe_bound(problem, seed)?;
        Ok(Self { theta, reference, b_y })
    }

    pub fn true_utility(&self, y: &[f64]) -> f64 {
        mixture_utility_with(Scalarization::Chebyshev, y, self.theta.eta.as_slice(), &self.theta.archetypes)
    }

    /// Archetype of the heaviest true mode, the single reference preference.
    pub fn dominant_archetype(&self) -> &[f64] {
        self.theta.archetypes[self.theta.eta.argmax()].as_slice()
    }

    pub fn k_star(&self) -> usize {
        self.theta.components()
    }
}

fn uniform_point(d: usize, stream: &mut RngStream) -> Vec<f64> {
    (0..d).map(|_| stream.random::<f64>()).collect()
}

fn cache_key(problem: &Problem, theta: &MixtureParams, n: usize, seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(problem.id().as_bytes());
    if let Some(t) = problem.pool() {
        h.update(serde_json::to_vec(&t.outcomes).expect("outcomes serialise"));
    }
    h.update(serde_json::to_vec(theta).expect("theta serialises"));
    h.update(n.to_le_bytes());
    h.update(seed.to_le_bytes());
    h.finalize().iter().take(12).map(|b| format!("{b:02x}")).collect()
}

/// `max U_mix(f(x); theta*)` over `n` uniform designs, or over the whole pool
/// for tabular problems.
///
/// The designs come from one stream in order, so a larger `n` searches a
/// superset. With `cache_dir` the result is stored and reused.
pub fn reference_utility(
    problem: &Problem,
    theta: &MixtureParams,
    n: usize,
    seed: u64,
    cache_dir: Option<&Path>,
) -> Result<Reference> {
    if n == 0 {
        return Err(Error::invalid("reference_samples", "must be >= 1"));
    }
    let cache_path: Option<PathBuf> =
        cache_dir.map(|d| d.join(format!("reference-{}-{}.json", problem.id(), cache_key(problem, theta, n, seed))));
    if let Some(p) = &cache_path {
        if let Ok(text) = fs::read_to_string(p) {
            if let Ok(r) = serde_json::from_str::<Reference>(&text) {
                return Ok(r);
            }
            log::warn!("ignoring unreadable reference cache {}", p.display());
        }
    }
    let utility = |y: &[f64]| mixture_utility_with(Scalarization::Chebyshev, y, theta.eta.as_slice(), &theta.archetypes);
    let mut best: Option<Reference> = None;
    let mut consider = |x: Vec<f64>, y: Vec<f64>, samples: usize| {
        let u = utility(&y);
        if best.as_ref().is_none_or(|b| u > b.u_ref) {
            best = Some(Reference { u_ref: u, x_ref: x, f_ref: y, samples });
        }
    };
    match problem.pool() {
        Some(t) => {
            for (x, y) in t.designs.iter().zip(&t.outcomes) {
                consider(x.clone(), y.clone(), t.len());
            }
        }
        None => {
            let mut s = rng_stream(seed, "eval/reference");
            for _ in 0..n {
                let x = uniform_point(problem.dims(), &mut s);
                let y = problem.evaluate(&x)?;
                consider(x, y.as_slice().to_vec(), n);
            }
        }
    }
    let r = best.expect("at least one candidate");
    if let Some(p) = &cache_path {
        fs::create_dir_all(p.parent().expect("cache file has a parent")).map_err(|e| Error::io(p, e))?;
        let text = serde_json::to_string_pretty(&r).expect("reference serialises");
        fs::write(p, text).map_err(|e| Error::io(p, e))?;
    }
    Ok(r)
}

/// `1.1 * max |f(x)|_inf` over a fixed uniform probe (or the pool).
pub fn probe_bound(problem: &Problem, seed: u64) -> Result<f64> {
    let m = match problem.pool() {
        Some(t) => t.outcomes.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())),
        None => {
            let mut s = rng_stream(seed, "eval/probe");
            let mut m = 0.0f64;
            for _ in 0..PROBE_POINTS {
                m = m.max(problem.evaluate(&uniform_point(problem.dims(), &mut s))?.sup_norm());
            }
            m
        }
    };
    Ok(PROBE_MARGIN * m)
}

/// `u_ref - max_i U_mix(y_i; theta*)`; negative when the run beats the reference.
pub fn simple_regret(history: &[OutcomeVector], truth: &GroundTruth) -> Result<f64> {
    let best = history
        .iter()
        .map(|y| truth.true_utility(y))
        .fold(None, |m: Option<f64>, u| Some(m.map_or(u, |m| m.max(u))))
        .ok_or(Error::Empty("simple regret needs a nonempty history"))?;
    Ok(truth.reference.u_ref - best)
}

/// Matching of true archetypes to estimated components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    /// `perm[k]` is the estimated component matched to true archetype `k`.
    pub perm: Vec<usize>,
    /// L1 cost of each matched pair, indexed by true archetype.
    pub costs: Vec<f64>,
    pub total: f64,
    /// More estimated components than true ones.
    pub padded: bool,
}

/// Minimum total L1 matching of every true archetype to a distinct estimate.
pub fn align<A: AsRef<[f64]>, B: AsRef<[f64]>>(estimated: &[A], truth: &[B]) -> Result<Alignment> {
    if estimated.is_empty() || truth.is_empty() {
        return Err(Error::Empty("alignment needs nonempty archetype lists"));
    }
    if estimated.len() < truth.len() {
        return Err(Error::invalid(
            "alignment",
            format!("{} estimated components for {} true archetypes", estimated.len(), truth.len()),
        ));
    }
    let cost: Vec<Vec<f64>> = truth
        .iter()
        .map(|t| {
            estimated
                .iter()
                .map(|e| e.as_ref().iter().zip(t.as_ref()).map(|(a, b)| (a - b).abs()).sum())
                .collect()
        })
        .collect();
    let a = if estimated.len() <= BRUTE_FORCE_MAX_K {
        brute_force(&cost)?
    } else {
        hungarian(&cost)?
    };
    let costs = a.columns.iter().enumerate().map(|(k, &j)| cost[k][j]).collect();
    Ok(Alignment {
        perm: a.columns,
        costs,
        total: a.total,
        padded: estimated.len() > truth.len(),
    })
}

/// True mixture weights moved to the estimated components they align with; zero elsewhere.
pub fn project_eta_star(eta_star: &[f64], alignment: &Alignment, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; k];
    for (true_k, &j) in alignment.perm.iter().enumerate() {
        out[j] = eta_star[true_k];
    }
    out
}

fn archetypes_of(summary: &PosteriorSummary) -> Vec<&[f64]> {
    summary.archetype_means.iter().map(Simplex::as_slice).collect()
}

/// `Delta^w`, `Delta^eta` and the alignment they are computed under.
pub fn estimation_errors(summary: &PosteriorSummary, truth: &GroundTruth) -> Result<(f64, f64, Alignment)> {
    let star: Vec<&[f64]> = truth.theta.archetypes.iter().map(Simplex::as_slice).collect();
    let al = align(&archetypes_of(summary), &star)?;
    let delta_w = truth.theta.eta.as_slice().iter().zip(&al.costs).map(|(e, c)| e * c).sum();
    let projected = project_eta_star(truth.theta.eta.as_slice(), &al, summary.eta_mean.len());
    let delta_eta = summary.eta_mean.as_slice().iter().zip(&projected).map(|(a, b)| (a - b).abs()).sum();
    Ok((delta_w, delta_eta, al))
}

/// `KL(p || q)` in nats after adding `eps` to every entry and renormalising.
/// Terms with `p_i = 0` contribute nothing.
pub fn kl_divergence(p: &[f64], q: &[f64], eps: f64) -> f64 {
    let sp: f64 = p.iter().sum::<f64>() + eps * p.len() as f64;
    let sq: f64 = q.iter().sum::<f64>() + eps * q.len() as f64;
    p.iter()
        .zip(q)
        .map(|(a, b)| {
            let a = (a + eps) / sp;
            let b = (b + eps) / sq;
            if a > 0.0 {
                a * (a / b).ln()
            } else {
                0.0
            }
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBar {
    pub component: usize,
    pub inferred: f64,
    pub projected_true: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub kl: f64,
    pub bars: Vec<CalibrationBar>,
}

/// `KL(eta* || eta_hat)` with `eta*` projected onto the estimated components.
///
/// Bars with `projected_true = 0` show spurious inferred mass; bars with a
/// small `inferred` under a large `projected_true` show missed modes.
pub fn mixture_calibration(eta_hat: &[f64], eta_star: &[f64], alignment: &Alignment) -> Calibration {
    let projected = project_eta_star(eta_star, alignment, eta_hat.len());
    let bars = eta_hat
        .iter()
        .zip(&projected)
        .enumerate()
        .map(|(component, (i, p))| CalibrationBar {
            component,
            inferred: *i,
            projected_true: *p,
        })
        .collect();
    Calibration {
        kl: kl_divergence(&projected, eta_hat, KL_SMOOTHING),
        bars,
    }
}

/// Errors of three single-vector summaries of the posterior against one
/// reference weight vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferenceErrors {
    /// `|w_ref - sum_k eta_k w_k|_1`
    pub mixture_mean: f64,
    /// `|w_ref - w_{argmax eta}|_1`, lowest index on ties.
    pub map: f64,
    /// `sum_k eta_k |w_ref - w_k|_1`
    pub expected: f64,
}

pub fn preference_error_triplet(summary: &PosteriorSummary, w_ref: &[f64]) -> PreferenceErrors {
    let l1 = |a: &[f64]| a.iter().zip(w_ref).map(|(x, y)| (x - y).abs()).sum::<f64>();
    let eta = summary.eta_mean.as_slice();
    PreferenceErrors {
        mixture_mean: l1(&summary.mixture_mean_weight()),
        map: l1(summary.archetype_means[summary.eta_mean.argmax()].as_slice()),
        expected: eta.iter().zip(&summary.archetype_means).map(|(e, w)| e * l1(w.as_slice())).sum(),
    }
}

/// Empirical frequency of each true mode (1-based `mode_used`) among the
/// records, or `None` when any record lacks the diagnostic.
pub fn gating_frequency(records: &[RunRecord], k_star: usize) -> Option<Vec<f64>> {
    if records.is_empty() {
        return None;
    }
    let mut counts = vec![0usize; k_star];
    for r in records {
        let m = r.mode_used?;
        if m == 0 || m > k_star {
            return None;
        }
        counts[m - 1] += 1;
    }
    Some(counts.iter().map(|c| *c as f64 / records.len() as f64).collect())
}

/// Posterior summary as stored in a record.
pub fn summary_of(record: &RunRecord) -> Result<PosteriorSummary> {
    Ok(PosteriorSummary {
        eta_mean: Simplex::from_raw(record.eta_mean.clone(), None)?,
        archetype_means: record
            .archetype_means
            .iter()
            .map(|w| Simplex::from_raw(w.clone(), None))
            .collect::<Result<_>>()?,
    })
}

/// Per-iteration archetype errors.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchetypeErrorRow {
    pub iteration: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// `|w_k - w_ref|_1` for every inferred component, unaligned.
    pub per_component: Vec<f64>,
}

/// Alignment is recomputed at every iteration, so label switches between
/// iterations do not show up as error spikes.
pub fn archetype_error_curves(records: &[RunRecord], truth: &GroundTruth) -> Result<Vec<ArchetypeErrorRow>> {
    let star: Vec<&[f64]> = truth.theta.archetypes.iter().map(Simplex::as_slice).collect();
    let w_ref = truth.dominant_archetype();
    records
        .iter()
        .map(|r| {
            let al = align(&r.archetype_means, &star)?;
            let n = al.costs.len() as f64;
            Ok(ArchetypeErrorRow {
                iteration: r.iteration,
                mean: al.costs.iter().sum::<f64>() / n,
                min: al.costs.iter().copied().fold(f64::INFINITY, f64::min),
                max: al.costs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                per_component: r
                    .archetype_means
                    .iter()
                    .map(|w| w.iter().zip(w_ref).map(|(a, b)| (a - b).abs()).sum())
                    .collect(),
            })
        })
        .collect()
}

/// Quantities the regret-decomposition check needs at one iteration.
#[derive(Debug, Clone, Copy)]
pub struct TheoryInputs<'a> {
    pub truth: &'a GroundTruth,
    pub summary: &'a PosteriorSummary,
    pub c_w: f64,
    pub iteration: usize,
    pub delta: f64,
    /// `f(x_t)`, and the GP posterior mean and std at `x_t` before it was observed.
    pub f_t: &'a [f64],
    pub mu_t: &'a [f64],
    pub sd_t: &'a [f64],
    /// GP posterior mean at the reference design.
    pub mu_ref: &'a [f64],
    pub eps_proxy: f64,
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

fn sup_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Both sides of the surrogate-mismatch bound and the per-round regret bound.
///
/// The surrogate is `sum_k eta_hat_k U(mu(x), w_hat_k)` with the posterior
/// means. The bound constant at `x` is `max(B_y, |mu(x)|_inf)`, because the
/// Lipschitz step in `w` is taken at `mu(x)`, which may leave `[-B_y, B_y]`.
pub fn theory_terms(inp: TheoryInputs<'_>) -> Result<TheoryTerms> {
    let (delta_w, delta_eta, _) = estimation_errors(inp.summary, inp.truth)?;
    let eta_hat = inp.summary.eta_mean.as_slice();
    let surrogate = |mu: &[f64]| {
        eta_hat
            .iter()
            .zip(&inp.summary.archetype_means)
            .map(|(e, w)| e * chebyshev_raw(mu, w.as_slice()).0)
            .sum::<f64>()
    };
    let c = inp.c_w;
    let f_ref = &inp.truth.reference.f_ref;
    let dev_t = sup_diff(inp.f_t, inp.mu_t);
    let dev_ref = sup_diff(f_ref, inp.mu_ref);
    let b_t = inp.truth.b_y.max(sup_norm(inp.mu_t));
    let b_ref = inp.truth.b_y.max(sup_norm(inp.mu_ref));
    let rhs = |dev: f64, b: f64| dev / c + b / (c * c) * delta_w + b / c * delta_eta;

    let u_t = inp.truth.true_utility(inp.f_t);
    let u_ref = inp.truth.true_utility(f_ref);
    let l = inp.f_t.len();
    let beta = beta_t(l, inp.iteration, inp.delta);
    let confidence_holds = inp
        .f_t
        .iter()
        .zip(inp.mu_t)
        .zip(inp.sd_t)
        .all(|((f, m), s)| (f - m).abs() <= beta.sqrt() * s);
    let b = b_t.max(b_ref);
    Ok(TheoryTerms {
        gp_deviation: dev_t,
        sigma_sup: sup_norm(inp.sd_t),
        beta_t: beta,
        confidence_holds,
        delta_w,
        delta_eta,
        eps_proxy: inp.eps_proxy,
        b_y: b,
        c_w: c,
        mismatch_lhs_xt: (u_t - surrogate(inp.mu_t)).abs(),
        mismatch_rhs_xt: rhs(dev_t, b_t),
        mismatch_lhs_ref: (u_ref - surrogate(inp.mu_ref)).abs(),
        mismatch_rhs_ref: rhs(dev_ref, b_ref),
        per_round_lhs: u_ref - u_t,
        per_round_rhs: (dev_ref + dev_t) / c + 2.0 * b / (c * c) * delta_w + 2.0 * b / c * delta_eta + inp.eps_proxy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub iteration: usize,
    /// `mismatch_xt`, `mismatch_ref` or `per_round`.
    pub check: String,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub iterations: usize,
    pub mismatch_violations: Vec<Violation>,
    /// Only meaningful when the restart spread bounds the true suboptimality.
    pub per_round_violations: Vec<Violation>,
    pub max_mismatch_ratio: f64,
    pub confidence_coverage: f64,
    /// `sum_t |sigma_{t-1}(x_t)|_inf^2`, reported without a bound.
    pub variance_sum: f64,
}

impl TheoryReport {
    pub fn from_records(records: &[RunRecord]) -> Result<Self> {
        let mut rep = TheoryReport {
            iterations: 0,
            mismatch_violations: Vec::new(),
            per_round_violations: Vec::new(),
            max_mismatch_ratio: 0.0,
            confidence_coverage: 0.0,
            variance_sum: 0.0,
        };
        let mut covered = 0;
        for r in records {
            let th = r
                .theory
                .as_ref()
                .ok_or_else(|| Error::invalid("theory report", format!("record {} has no theory terms", r.iteration)))?;
            rep.iterations += 1;
            for (check, lhs, rhs) in [
                ("mismatch_xt", th.mismatch_lhs_xt, th.mismatch_rhs_xt),
                ("mismatch_ref", th.mismatch_lhs_ref, th.mismatch_rhs_ref),
            ] {
                if rhs > 0.0 {
                    rep.max_mismatch_ratio = rep.max_mismatch_ratio.max(lhs / rhs);
                }
                if lhs > rhs + THEORY_TOLERANCE {
                    rep.mismatch_violations.push(Violation {
                        iteration: r.iteration,
                        check: check.into(),
                        lhs,
                        rhs,
                    });
                }
            }
            if th.per_round_lhs > th.per_round_rhs + THEORY_TOLERANCE {
                rep.per_round_violations.push(Violation {
                    iteration: r.iteration,
                    check: "per_round".into(),
                    lhs: th.per_round_lhs,
                    rhs: th.per_round_rhs,
                });
            }
            covered += th.confidence_holds as usize;
            rep.variance_sum += th.sigma_sup * th.sigma_sup;
        }
        if rep.iterations > 0 {
            rep.confidence_coverage = covered as f64 / rep.iterations as f64;
        }
        Ok(rep)
    }

    pub fn summary_text(&self) -> String {
        let mut s = format!(
            "iterations checked: {}\nmismatch-bound violations: {} (tolerance {:e})\nmax mismatch lhs/rhs: {:.6}\n\
             per-round violations (restart spread as suboptimality proxy): {}\n\
             GP confidence coverage: {:.3}\nsum of squared max posterior std: {:.6}\n",
            self.iterations,
            self.mismatch_violations.len(),
            THEORY_TOLERANCE,
            self.max_mismatch_ratio,
            self.per_round_violations.len(),
            self.confidence_coverage,
            self.variance_sum,
        );
        for v in self.mismatch_violations.iter().chain(&self.per_round_violations) {
            s.push_str(&format!("  t={} {}: lhs {} > rhs {}\n", v.iteration, v.check, v.lhs, v.rhs));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzSweep {
    pub tuples: usize,
    pub violations: usize,
    pub max_ratio_y: f64,
    pub max_ratio_w: f64,
}

/// Random tuples `y, y' in [-1,1]^L` and weights floored at `c_w`, checked
/// against both Lipschitz inequalities with tolerance `1e-12`.
pub fn lipschitz_sweep(n: usize, l: usize, c_w: f64, seed: u64) -> Result<LipschitzSweep> {
    let mut s = rng_stream(seed, "eval/lipschitz");
    let mut out = LipschitzSweep {
        tuples: n,
        violations: 0,
        max_ratio_y: 0.0,
        max_ratio_w: 0.0,
    };
    let vec_in = |s: &mut RngStream, lo: f64| -> Vec<f64> { (0..l).map(|_| lo + (1.0 - lo) * s.random::<f64>()).collect() };
    for _ in 0..n {
        let y = vec_in(&mut s, -1.0);
        let yp = vec_in(&mut s, -1.0);
        let w = Simplex::floored(&vec_in(&mut s, 0.0), c_w)?;
        let wp = Simplex::floored(&vec_in(&mut s, 0.0), c_w)?;
        let t = lipschitz_bounds(&y, &yp, w.as_slice(), wp.as_slice(), c_w)?;
        if !t.holds(1e-12) {
            out.violations += 1;
        }
        if t.rhs_y > 0.0 {
            out.max_ratio_y = out.max_ratio_y.max(t.lhs_y / t.rhs_y);
        }
        if t.rhs_w > 0.0 {
            out.max_ratio_w = out.max_ratio_w.max(t.lhs_w / t.rhs_w);
        }
    }
    Ok(out)
}

fn f(v: f64) -> String {
    format!("{v}")
}

/// Write the metric CSVs for one run into `dir`.
///
/// Truth-dependent files are only written when `truth` is given; `gating.csv`
/// additionally needs the oracle's mode diagnostics in every record.
pub fn write_metric_csvs(dir: &Path, records: &[RunRecord], truth: Option<&GroundTruth>) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let Some(truth) = truth else {
        return Ok(written);
    };
    let star = truth.theta.eta.as_slice();
    let star_w: Vec<&[f64]> = truth.theta.archetypes.iter().map(Simplex::as_slice).collect();

    let mut regret = CsvTable::new(["iteration", "simple_regret"]);
    let mut kl = CsvTable::new(["iteration", "kl_eta_star_eta_hat"]);
    let mut pref = CsvTable::new(["iteration", "mixture_mean_err", "map_err", "expected_err"]);
    for r in records {
        if let Some(v) = r.simple_regret {
            regret.push([r.iteration.to_string(), f(v)]);
        }
        let summary = summary_of(r)?;
        let al = align(&r.archetype_means, &star_w)?;
        kl.push([r.iteration.to_string(), f(mixture_calibration(&r.eta_mean, star, &al).kl)]);
        let e = preference_error_triplet(&summary, truth.dominant_archetype());
        pref.push([r.iteration.to_string(), f(e.mixture_mean), f(e.map), f(e.expected)]);
    }

    let k = records.first().map_or(0, |r| r.archetype_means.len());
    let mut header = vec!["iteration".to_string(), "mean_aligned_l1".into(), "min_aligned_l1".into(), "max_aligned_l1".into()];
    header.extend((1..=k).map(|c| format!("component_{c}_l1_to_ref")));
    let mut arch = CsvTable::new(header);
    for row in archetype_error_curves(records, truth)? {
        let mut cells = vec![row.iteration.to_string(), f(row.mean), f(row.min), f(row.max)];
        cells.extend(row.per_component.into_iter().map(f));
        arch.push(cells);
    }

    for (name, table) in [
        ("regret.csv", &regret),
        ("archetype_error.csv", &arch),
        ("eta_kl.csv", &kl),
        ("pref_errors.csv", &pref),
    ] {
        let p = dir.join(name);
        table.write(&p)?;
        written.push(p);
    }

    if let Some(freq) = gating_frequency(records, truth.k_star()) {
        let mut g = CsvTable::new(["mode", "empirical_frequency", "eta_star"]);
        for (m, (e, s)) in freq.iter().zip(star).enumerate() {
            g.push([(m + 1).to_string(), f(*e), f(*s)]);
        }
        let p = dir.join("gating.csv");
        g.write(&p)?;
        written.push(p);
    }

    if records.iter().all(|r| r.theory.is_some()) && !records.is_empty() {
        let mut t = CsvTable::new([
            "iteration",
            "gp_deviation",
            "sigma_sup",
            "beta_t",
            "confidence_holds",
            "delta_w",
            "delta_eta",
            "eps_proxy",
            "b_y",
            "c_w",
            "mismatch_lhs_xt",
            "mismatch_rhs_xt",
            "mismatch_lhs_ref",
            "mismatch_rhs_ref",
            "per_round_lhs",
            "per_round_rhs",
        ]);
        for r in records {
            let th = r.theory.as_ref().expect("checked above");
            t.push([
                r.iteration.to_string(),
                f(th.gp_deviation),
                f(th.sigma_sup),
                f(th.beta_t),
                th.confidence_holds.to_string(),
                f(th.delta_w),
                f(th.delta_eta),
                f(th.eps_proxy),
                f(th.b_y),
                f(th.c_w),
                f(th.mismatch_lhs_xt),
                f(th.mismatch_rhs_xt),
                f(th.mismatch_lhs_ref),
                f(th.mismatch_rhs_ref),
                f(th.per_round_lhs),
                f(th.per_round_rhs),
            ]);
        }
        let p = dir.join("theory.csv");
        t.write(&p)?;
        written.push(p);
    }
    Ok(written)
}
