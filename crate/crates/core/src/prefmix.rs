//! Truncated stick-breaking mixture of archetypes learned from pairwise comparisons.
//!
//! Generative model, with `K` the truncation level:
//!
//! ```text
//! v_k ~ Beta(1, alpha)            k < K,   v_K = 1
//! eta_k = v_k prod_{j<k} (1 - v_j)
//! w_k ~ Dir(beta)
//! P(winner > loser) = sum_k eta_k Phi((U(winner; w_k) - U(loser; w_k)) / (sqrt 2 sigma_u))
//! ```
//!
//! The latent mode of each comparison is summed out. Inference is
//! mean-field Gaussian in unconstrained coordinates: `v_k = sigmoid(psi_k)`
//! and `w_k = softmax(phi_k, 0)`. The ELBO gradient is computed analytically
//! by the reparameterisation trick.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Scalarization};
use crate::error::{Error, Result};
use crate::numeric::{digamma, dlog_normal_cdf, ln_gamma, log_normal_cdf, normal_cdf, softplus, trigamma};
use crate::rng::{rng_stream, RngStream};
use crate::simplex::Simplex;
use crate::types::PreferenceDatum;
use crate::{MixtureParams, SimplexVector};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const LOG_SCALE_RANGE: (f64, f64) = (-18.0, 4.0);
/// Seed of the stream behind [`posterior_summary`]; fixed so summaries are
/// a pure function of the posterior.
const SUMMARY_SEED: u64 = 0x5eed_5a11;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePrior {
    pub k: usize,
    pub alpha: f64,
    pub beta_dir: Vec<f64>,
    pub sigma_u: f64,
    /// Floor applied to sampled archetypes.
    pub c_w: f64,
    pub scalarization: Scalarization,
}

impl MixturePrior {
    pub fn new(k: usize, alpha: f64, beta_dir: Vec<f64>, sigma_u: f64, c_w: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("truncation", "K must be >= 1"));
        }
        if !(alpha > 0.0) {
            return Err(Error::invalid("alpha", "must be > 0"));
        }
        if beta_dir.len() < 2 || beta_dir.iter().any(|b| !(*b > 0.0)) {
            return Err(Error::invalid("beta_dir", "needs >= 2 positive entries"));
        }
        if !(sigma_u > 0.0) {
            return Err(Error::invalid("sigma_u", "must be > 0"));
        }
        if !(c_w > 0.0 && c_w * beta_dir.len() as f64 <= 1.0) {
            return Err(Error::invalid("c_w", "must lie in (0, 1/L]"));
        }
        Ok(Self {
            k,
            alpha,
            beta_dir,
            sigma_u,
            c_w,
            scalarization: Scalarization::Chebyshev,
        })
    }

    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let m = &cfg.model;
        let mut p = Self::new(m.truncation, m.alpha, m.beta_dir.clone(), m.sigma_u, m.c_w)?;
        p.scalarization = m.scalarization;
        Ok(p)
    }

    pub fn objectives(&self) -> usize {
        self.beta_dir.len()
    }

    pub fn latent_dim(&self) -> usize {
        (self.k - 1) + self.k * (self.objectives() - 1)
    }
}

/// Mean-field Gaussian posterior over `(psi_{1:K-1}, phi_{1:K})`.
///
/// `m_v`/`s_v` hold the `K - 1` free stick coordinates (the last stick is
/// pinned to one); `m_w[k]`/`s_w[k]` hold the `L - 1` free coordinates of
/// archetype `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePosterior {
    pub m_v: Vec<f64>,
    pub s_v: Vec<f64>,
    pub m_w: Vec<Vec<f64>>,
    pub s_w: Vec<Vec<f64>>,
    pub c_w: f64,
    /// ELBO estimate at every step of the most recent fit.
    pub elbo_trace: Vec<f64>,
}

impl MixturePosterior {
    /// Moment-matched to the prior in the unconstrained coordinates, with a
    /// small jitter on the archetype means to break label symmetry.
    pub fn prior_matched(prior: &MixturePrior, stream: &mut RngStream) -> Self {
        let k = prior.k;
        let l = prior.objectives();
        let mv = digamma(1.0) - digamma(prior.alpha);
        let sv = (trigamma(1.0) + trigamma(prior.alpha)).sqrt();
        let last = prior.beta_dir[l - 1];
        let mut m_w = Vec::with_capacity(k);
        let mut s_w = Vec::with_capacity(k);
        for _ in 0..k {
            let mut m = Vec::with_capacity(l - 1);
            let mut s = Vec::with_capacity(l - 1);
            for b in &prior.beta_dir[..l - 1] {
                let jitter: f64 = stream.sample(StandardNormal);
                m.push(digamma(*b) - digamma(last) + 0.1 * jitter);
                s.push((trigamma(*b) + trigamma(last)).sqrt());
            }
            m_w.push(m);
            s_w.push(s);
        }
        Self {
            m_v: vec![mv; k - 1],
            s_v: vec![sv; k - 1],
            m_w,
            s_w,
            c_w: prior.c_w,
            elbo_trace: Vec::new(),
        }
    }

    pub fn components(&self) -> usize {
        self.m_w.len()
    }

    pub fn objectives(&self) -> usize {
        self.m_w[0].len() + 1
    }

    fn check_shape(&self, prior: &MixturePrior) -> Result<()> {
        let ok = self.m_w.len() == prior.k
            && self.s_w.len() == prior.k
            && self.m_v.len() == prior.k - 1
            && self.s_v.len() == prior.k - 1
            && self.m_w.iter().chain(&self.s_w).all(|r| r.len() == prior.objectives() - 1);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("posterior", "shape does not match the prior"))
        }
    }

    /// `[m_v, ln s_v, m_w, ln s_w]`, archetypes row-major.
    fn pack(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.m_v.clone();
        p.extend(self.s_v.iter().map(|s| s.ln()));
        p.extend(self.m_w.iter().flatten());
        p.extend(self.s_w.iter().flatten().map(|s| s.ln()));
        p
    }

    fn unpack(prior: &MixturePrior, p: &[f64], elbo_trace: Vec<f64>) -> Self {
        let (k, l1) = (prior.k, prior.objectives() - 1);
        let d = prior.latent_dim();
        let (mean, log_s) = p.split_at(d);
        let rows = |xs: &[f64], f: fn(f64) -> f64| -> Vec<Vec<f64>> {
            xs.chunks(l1).map(|c| c.iter().map(|v| f(*v)).collect()).collect()
        };
        Self {
            m_v: mean[..k - 1].to_vec(),
            s_v: log_s[..k - 1].iter().map(|v| v.exp()).collect(),
            m_w: rows(&mean[k - 1..], |v| v),
            s_w: rows(&log_s[k - 1..], f64::exp),
            c_w: prior.c_w,
            elbo_trace,
        }
    }
}

/// `eta_k = v_k prod_{j<k} (1 - v_j)` with the last stick forced to one.
pub fn stick_break(v: &[f64]) -> Result<SimplexVector> {
    if v.is_empty() {
        return Err(Error::Empty("stick_break needs at least one stick"));
    }
    if let Some(bad) = v.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::invalid("v", format!("{bad} not in [0,1]")));
    }
    let mut rest = 1.0;
    let mut eta = Vec::with_capacity(v.len());
    for (k, vk) in v.iter().enumerate() {
        let vk = if k + 1 == v.len() { 1.0 } else { *vk };
        eta.push(vk * rest);
        rest *= 1.0 - vk;
    }
    Simplex::new(eta, None)
}

/// `Phi((U(y_i; w) - U(y_j; w)) / (sqrt 2 sigma_u))` for the Chebyshev utility.
pub fn probit_choice_prob(y_i: &[f64], y_j: &[f64], w: &[f64], sigma_u: f64) -> f64 {
    probit_choice_prob_with(Scalarization::Chebyshev, y_i, y_j, w, sigma_u)
}

pub fn probit_choice_prob_with(s: Scalarization, y_i: &[f64], y_j: &[f64], w: &[f64], sigma_u: f64) -> f64 {
    let gap = s.utility(y_i, w) - s.utility(y_j, w);
    normal_cdf(gap / (std::f64::consts::SQRT_2 * sigma_u))
}

/// `sum_i ln sum_k eta_k P_k(winner_i > loser_i)`, stabilised by log-sum-exp.
pub fn marginal_likelihood(data: &[PreferenceDatum], theta: &MixtureParams, sigma_u: f64) -> Result<f64> {
    marginal_likelihood_with(Scalarization::Chebyshev, data, theta, sigma_u)
}

pub fn marginal_likelihood_with(
    s: Scalarization,
    data: &[PreferenceDatum],
    theta: &MixtureParams,
    sigma_u: f64,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("marginal likelihood needs at least one comparison"));
    }
    let l = theta.objectives();
    let scale = 1.0 / (std::f64::consts::SQRT_2 * sigma_u);
    let log_eta: Vec<f64> = theta.eta.as_slice().iter().map(|e| e.ln()).collect();
    let mut a = vec![0.0; theta.components()];
    let mut total = 0.0;
    for d in data {
        if d.winner.len() != l || d.loser.len() != l {
            return Err(Error::Dimension {
                what: "comparison outcome",
                expected: l,
                got: d.winner.len(),
            });
        }
        for (k, w) in theta.archetypes.iter().enumerate() {
            let gap = s.utility(&d.winner, w.as_slice()) - s.utility(&d.loser, w.as_slice());
            a[k] = log_eta[k] + log_normal_cdf(gap * scale);
        }
        total += crate::numeric::log_sum_exp(&a);
    }
    Ok(total)
}

/// Pre-drawn standard-normal noise for one ELBO estimate: one row of
/// `latent_dim` draws per Monte-Carlo sample.
#[derive(Debug, Clone)]
pub struct ElboNoise {
    pub rows: Vec<Vec<f64>>,
}

impl ElboNoise {
    pub fn draw(prior: &MixturePrior, mc_samples: usize, stream: &mut RngStream) -> Self {
        let d = prior.latent_dim();
        Self {
            rows: (0..mc_samples)
                .map(|_| (0..d).map(|_| stream.sample(StandardNormal)).collect())
                .collect(),
        }
    }
}

/// Reusable buffers for the log-joint gradient.
struct Workspace {
    log_eta: Vec<f64>,
    v: Vec<f64>,
    log_w: Vec<Vec<f64>>,
    w: Vec<Vec<f64>>,
    g_log_eta: Vec<f64>,
    g_log_w: Vec<Vec<f64>>,
    a: Vec<f64>,
    z: Vec<f64>,
    grad_win: Vec<f64>,
    grad_lose: Vec<f64>,
    gap_grad: Vec<Vec<f64>>,
}

impl Workspace {
    fn new(k: usize, l: usize) -> Self {
        Self {
            log_eta: vec![0.0; k],
            v: vec![0.0; k],
            log_w: vec![vec![0.0; l]; k],
            w: vec![vec![0.0; l]; k],
            g_log_eta: vec![0.0; k],
            g_log_w: vec![vec![0.0; l]; k],
            a: vec![0.0; k],
            z: vec![0.0; k],
            grad_win: vec![0.0; l],
            grad_lose: vec![0.0; l],
            gap_grad: vec![vec![0.0; l]; k],
        }
    }
}

/// Log joint `ln p(data | psi, phi) + ln p(psi) + ln p(phi)` at one latent
/// point, with its gradient written into `grad`.
fn log_joint(prior: &MixturePrior, data: &[PreferenceDatum], z: &[f64], grad: &mut [f64], ws: &mut Workspace) -> f64 {
    let k = prior.k;
    let l = prior.objectives();
    let (psi, phi) = z.split_at(k - 1);
    let alpha = prior.alpha;
    let mut value = 0.0;

    // sticks
    let mut acc = 0.0;
    for j in 0..k {
        if j + 1 < k {
            let log_v = -softplus(-psi[j]);
            let log_1mv = -softplus(psi[j]);
            ws.v[j] = log_v.exp();
            ws.log_eta[j] = acc + log_v;
            acc += log_1mv;
            value += alpha.ln() + alpha * log_1mv + log_v;
            grad[j] = (1.0 - ws.v[j]) - alpha * ws.v[j];
        } else {
            ws.v[j] = 1.0;
            ws.log_eta[j] = acc;
        }
    }

    // archetypes
    let beta_sum: f64 = prior.beta_dir.iter().sum();
    let dir_norm = ln_gamma(beta_sum) - prior.beta_dir.iter().map(|b| ln_gamma(*b)).sum::<f64>();
    for c in 0..k {
        let f = &phi[c * (l - 1)..(c + 1) * (l - 1)];
        let mx = f.iter().copied().fold(0.0f64, f64::max);
        let norm = mx + ((-mx).exp() + f.iter().map(|v| (v - mx).exp()).sum::<f64>()).ln();
        for m in 0..l {
            let raw = if m + 1 < l { f[m] } else { 0.0 };
            ws.log_w[c][m] = raw - norm;
            ws.w[c][m] = ws.log_w[c][m].exp();
        }
        value += dir_norm + prior.beta_dir.iter().zip(&ws.log_w[c]).map(|(b, lw)| b * lw).sum::<f64>();
        for m in 0..l - 1 {
            grad[k - 1 + c * (l - 1) + m] = prior.beta_dir[m] - beta_sum * ws.w[c][m];
        }
    }

    // likelihood
    let scale = 1.0 / (std::f64::consts::SQRT_2 * prior.sigma_u);
    ws.g_log_eta.iter_mut().for_each(|g| *g = 0.0);
    ws.g_log_w.iter_mut().flatten().for_each(|g| *g = 0.0);
    for d in data {
        for c in 0..k {
            let uw = prior.scalarization.utility_grad_log_w(&d.winner, &ws.w[c], &mut ws.grad_win);
            let ul = prior.scalarization.utility_grad_log_w(&d.loser, &ws.w[c], &mut ws.grad_lose);
            ws.z[c] = (uw - ul) * scale;
            ws.a[c] = ws.log_eta[c] + log_normal_cdf(ws.z[c]);
            let dz = dlog_normal_cdf(ws.z[c]) * scale;
            for m in 0..l {
                ws.gap_grad[c][m] = dz * (ws.grad_win[m] - ws.grad_lose[m]);
            }
        }
        let li = log_sum_exp(&ws.a);
        value += li;
        for c in 0..k {
            let r = (ws.a[c] - li).exp();
            ws.g_log_eta[c] += r;
            for m in 0..l {
                ws.g_log_w[c][m] += r * ws.gap_grad[c][m];
            }
        }
    }

    // chain rule back to psi: ln eta_c = ln v_c + sum_{j<c} ln(1 - v_j)
    let mut tail = ws.g_log_eta[k - 1];
    for j in (0..k - 1).rev() {
        grad[j] += ws.g_log_eta[j] * (1.0 - ws.v[j]) - ws.v[j] * tail;
        tail += ws.g_log_eta[j];
    }
    // and to phi: d ln w_m / d phi_n = [m == n] - w_n
    for c in 0..k {
        let total: f64 = ws.g_log_w[c].iter().sum();
        for n in 0..l - 1 {
            grad[k - 1 + c * (l - 1) + n] += ws.g_log_w[c][n] - ws.w[c][n] * total;
        }
    }
    value
}

/// Reparameterised ELBO estimate at packed variational parameters `params`
/// under fixed noise, with its exact gradient when `grad` is given.
///
/// `params` is `[means (D), log-scales (D)]` with `D` the latent dimension;
/// the entropy of the Gaussian factors is added in closed form.
pub fn elbo_with_noise(
    prior: &MixturePrior,
    data: &[PreferenceDatum],
    params: &[f64],
    noise: &ElboNoise,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let d = prior.latent_dim();
    let (mean, log_s) = params.split_at(d);
    let mut ws = Workspace::new(prior.k, prior.objectives());
    let mut z = vec![0.0; d];
    let mut gz = vec![0.0; d];
    if let Some(g) = grad.as_deref_mut() {
        g.iter_mut().for_each(|v| *v = 0.0);
    }
    let inv_n = 1.0 / noise.rows.len() as f64;
    let mut total = 0.0;
    for eps in &noise.rows {
        for i in 0..d {
            z[i] = mean[i] + log_s[i].exp() * eps[i];
        }
        total += log_joint(prior, data, &z, &mut gz, &mut ws) * inv_n;
        if let Some(g) = grad.as_deref_mut() {
            for i in 0..d {
                g[i] += gz[i] * inv_n;
                g[d + i] += gz[i] * eps[i] * log_s[i].exp() * inv_n;
            }
        }
    }
    let entropy: f64 = log_s.iter().sum::<f64>() + 0.5 * d as f64 * (1.0 + LN_2PI);
    if let Some(g) = grad {
        g[d..].iter_mut().for_each(|v| *v += 1.0);
    }
    total + entropy
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SviOptions {
    pub steps: usize,
    pub lr: f64,
    pub mc_samples: usize,
}

impl Default for SviOptions {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 1e-3,
            mc_samples: 8,
        }
    }
}

impl SviOptions {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            steps: cfg.budgets.svi_steps,
            lr: cfg.budgets.svi_lr,
            mc_samples: cfg.budgets.svi_mc_samples,
        }
    }
}

/// Stochastic variational inference with Adam on the reparameterised ELBO.
///
/// Warm-starts from `init` when given. With no comparisons the
/// prior-matched posterior is returned unchanged.
pub fn fit_svi(
    data: &[PreferenceDatum],
    prior: &MixturePrior,
    init: Option<&MixturePosterior>,
    opts: SviOptions,
    stream: &mut RngStream,
) -> Result<MixturePosterior> {
    if opts.steps == 0 || opts.mc_samples == 0 {
        return Err(Error::invalid("svi", "steps and mc_samples must be >= 1"));
    }
    let l = prior.objectives();
    for d in data {
        if d.winner.len() != l || d.loser.len() != l {
            return Err(Error::Dimension {
                what: "comparison outcome",
                expected: l,
                got: d.winner.len(),
            });
        }
    }
    let start = match init {
        Some(p) => {
            p.check_shape(prior)?;
            p.clone()
        }
        None => MixturePosterior::prior_matched(prior, &mut stream.fork("init")),
    };
    if data.is_empty() {
        return Ok(MixturePosterior {
            elbo_trace: Vec::new(),
            ..MixturePosterior::prior_matched(prior, &mut stream.fork("init"))
        });
    }

    let mut params = start.pack();
    let n = params.len();
    let d = n / 2;
    let mut grad = vec![0.0; n];
    let mut m1 = vec![0.0; n];
    let mut m2 = vec![0.0; n];
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut trace = Vec::with_capacity(opts.steps);
    for step in 0..opts.steps {
        let noise = ElboNoise::draw(prior, opts.mc_samples, stream);
        let value = elbo_with_noise(prior, data, &params, &noise, Some(&mut grad));
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NanGradient { step });
        }
        trace.push(value);
        let t = (step + 1) as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for i in 0..n {
            m1[i] = b1 * m1[i] + (1.0 - b1) * grad[i];
            m2[i] = b2 * m2[i] + (1.0 - b2) * grad[i] * grad[i];
            params[i] += opts.lr * (m1[i] / c1) / ((m2[i] / c2).sqrt() + eps);
        }
        for p in &mut params[d..] {
            *p = p.clamp(LOG_SCALE_RANGE.0, LOG_SCALE_RANGE.1);
        }
    }
    Ok(MixturePosterior::unpack(prior, &params, trace))
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    crate::numeric::log_sum_exp(xs)
}

/// Map one unconstrained draw to mixture parameters, flooring the archetypes.
fn theta_from_latent(psi: &[f64], phi: &[Vec<f64>], c_w: f64) -> MixtureParams {
    let mut v: Vec<f64> = psi.iter().map(|p| crate::numeric::sigmoid(*p)).collect();
    v.push(1.0);
    let eta = stick_break(&v).expect("sigmoid output lies in [0,1]");
    let archetypes = phi
        .iter()
        .map(|f| {
            let mx = f.iter().copied().fold(0.0f64, f64::max);
            let mut raw: Vec<f64> = f.iter().map(|x| (x - mx).exp()).collect();
            raw.push((-mx).exp());
            Simplex::floored(&raw, c_w).expect("floor is feasible")
        })
        .collect();
    MixtureParams::new(eta, archetypes).expect("shapes agree")
}

/// `n` independent draws of `(eta, w_{1:K})` from the posterior.
pub fn sample_theta(post: &MixturePosterior, n: usize, stream: &mut RngStream) -> Vec<MixtureParams> {
    (0..n)
        .map(|_| {
            let psi: Vec<f64> = post
                .m_v
                .iter()
                .zip(&post.s_v)
                .map(|(m, s)| m + s * stream.sample::<f64, _>(StandardNormal))
                .collect();
            let phi: Vec<Vec<f64>> = post
                .m_w
                .iter()
                .zip(&post.s_w)
                .map(|(mr, sr)| {
                    mr.iter()
                        .zip(sr)
                        .map(|(m, s)| m + s * stream.sample::<f64, _>(StandardNormal))
                        .collect()
                })
                .collect();
            theta_from_latent(&psi, &phi, post.c_w)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub eta_mean: SimplexVector,
    pub archetype_means: Vec<SimplexVector>,
}

impl PosteriorSummary {
    /// Point-mass mixture at the means.
    pub fn as_params(&self) -> MixtureParams {
        MixtureParams::new(self.eta_mean.clone(), self.archetype_means.clone()).expect("shapes agree")
    }

    /// `sum_k eta_k w_k`.
    pub fn mixture_mean_weight(&self) -> Vec<f64> {
        let l = self.archetype_means[0].len();
        let mut w = vec![0.0; l];
        for (e, a) in self.eta_mean.as_slice().iter().zip(&self.archetype_means) {
            for (wi, ai) in w.iter_mut().zip(a.as_slice()) {
                *wi += e * ai;
            }
        }
        w
    }
}

/// Monte-Carlo means of `eta` and every `w_k` over 1000 draws from a fixed stream.
pub fn posterior_summary(post: &MixturePosterior) -> PosteriorSummary {
    posterior_summary_n(post, 1000)
}

pub fn posterior_summary_n(post: &MixturePosterior, n: usize) -> PosteriorSummary {
    let mut stream = rng_stream(SUMMARY_SEED, "prefmix/summary");
    let draws = sample_theta(post, n.max(1), &mut stream);
    let k = post.components();
    let l = post.objectives();
    let mut eta = vec![0.0; k];
    let mut w = vec![vec![0.0; l]; k];
    for th in &draws {
        for c in 0..k {
            eta[c] += th.eta[c];
            for m in 0..l {
                w[c][m] += th.archetypes[c][m];
            }
        }
    }
    let inv = 1.0 / draws.len() as f64;
    let eta_mean = Simplex::from_raw(eta.iter().map(|v| v * inv).collect(), None).expect("mean of simplex draws");
    let archetype_means = w
        .into_iter()
        .map(|row| {
            let raw: Vec<f64> = row.iter().map(|v| v * inv).collect();
            let floor = raw.iter().copied().fold(f64::INFINITY, f64::min).min(post.c_w);
            Simplex::from_raw(raw, Some(floor)).expect("mean of floored draws")
        })
        .collect();
    PosteriorSummary {
        eta_mean,
        archetype_means,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::OutcomeVector;
    use approx::assert_relative_eq;

    fn datum(a: Vec<f64>, b: Vec<f64>) -> PreferenceDatum {
        PreferenceDatum::new(OutcomeVector::new(a).unwrap(), OutcomeVector::new(b).unwrap(), 1).unwrap()
    }

    fn theta(eta: Vec<f64>, ws: Vec<Vec<f64>>) -> MixtureParams {
        MixtureParams::new(
            Simplex::new(eta, None).unwrap(),
            ws.into_iter().map(|w| Simplex::from_raw(w, None).unwrap()).collect(),
        )
        .unwrap()
    }

    /// Comparisons answered by `truth` with probit noise.
    fn simulate(truth: &[Vec<f64>], eta: &[f64], n: usize, l: usize, sigma_u: f64, seed: u64) -> Vec<PreferenceDatum> {
        let mut s = rng_stream(seed, "simulate");
        (0..n)
            .map(|_| {
                let a: Vec<f64> = (0..l).map(|_| s.random::<f64>()).collect();
                let b: Vec<f64> = (0..l).map(|_| s.random::<f64>()).collect();
                let u: f64 = s.random();
                let mut acc = 0.0;
                let mut k = 0;
                for (i, e) in eta.iter().enumerate() {
                    acc += e;
                    if u < acc {
                        k = i;
                        break;
                    }
                }
                let p = probit_choice_prob(&a, &b, &truth[k], sigma_u);
                if s.random::<f64>() < p {
                    datum(a, b)
                } else {
                    datum(b, a)
                }
            })
            .collect()
    }

    #[test]
    fn stick_break_examples() {
        assert_eq!(stick_break(&[1.0, 0.3, 0.9]).unwrap().as_slice(), &[1.0, 0.0, 0.0]);
        assert_eq!(stick_break(&[0.5, 0.5, 1.0]).unwrap().as_slice(), &[0.5, 0.25, 0.25]);
        let e = stick_break(&[0.13, 0.77, 0.42, 0.2]).unwrap();
        assert!((e.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(stick_break(&[1.2, 0.5]).is_err());
    }

    #[test]
    fn probit_examples() {
        let w = [0.5, 0.5];
        assert_eq!(probit_choice_prob(&[0.2, 0.3], &[0.2, 0.3], &w, 0.1), 0.5);
        // U(a) - U(b) = -0.2 + 0.4 = 0.2 = sqrt 2 * sigma_u
        let sigma = 0.2 / std::f64::consts::SQRT_2;
        assert_relative_eq!(probit_choice_prob(&[0.1, 0.3], &[0.2, 0.5], &w, sigma), 0.841_344_746_068_543, epsilon = 1e-12);
        let a = [0.3, 0.1, 0.9];
        let b = [0.2, 0.6, 0.4];
        let w3 = [0.2, 0.5, 0.3];
        assert!((probit_choice_prob(&a, &b, &w3, 0.05) + probit_choice_prob(&b, &a, &w3, 0.05) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn likelihood_single_mode_and_ties() {
        let data = simulate(&[vec![0.3, 0.7]], &[1.0], 7, 2, 0.1, 1);
        let th = theta(vec![1.0], vec![vec![0.3, 0.7]]);
        let direct: f64 = data
            .iter()
            .map(|d| probit_choice_prob(&d.winner, &d.loser, &[0.3, 0.7], 0.1).ln())
            .sum();
        assert_relative_eq!(marginal_likelihood(&data, &th, 0.1).unwrap(), direct, epsilon = 1e-12);

        let ties: Vec<_> = (0..4).map(|_| datum(vec![0.4, 0.4], vec![0.4, 0.4])).collect();
        let th2 = theta(vec![0.6, 0.4], vec![vec![0.3, 0.7], vec![0.8, 0.2]]);
        assert_relative_eq!(marginal_likelihood(&ties, &th2, 0.02).unwrap(), 4.0 * 0.5f64.ln(), epsilon = 1e-12);
        assert!(marginal_likelihood(&[], &th2, 0.02).is_err());
    }

    #[test]
    fn likelihood_matches_naive_double_loop() {
        let ws = vec![vec![0.2, 0.5, 0.3], vec![0.6, 0.1, 0.3]];
        let eta = vec![0.35, 0.65];
        let data = simulate(&ws, &eta, 5, 3, 0.3, 2);
        let mut naive = 0.0;
        for d in &data {
            let mut p = 0.0;
            for k in 0..2 {
                p += eta[k] * probit_choice_prob(&d.winner, &d.loser, &ws[k], 0.3);
            }
            naive += p.ln();
        }
        let th = theta(eta, ws);
        assert!((marginal_likelihood(&data, &th, 0.3).unwrap() - naive).abs() < 1e-10);
    }

    #[test]
    fn likelihood_label_symmetry() {
        let ws = vec![vec![0.2, 0.5, 0.3], vec![0.6, 0.1, 0.3], vec![0.3, 0.3, 0.4]];
        let data = simulate(&ws, &[0.5, 0.3, 0.2], 30, 3, 0.05, 3);
        let a = theta(vec![0.5, 0.3, 0.2], ws.clone());
        let b = theta(vec![0.2, 0.5, 0.3], vec![ws[2].clone(), ws[0].clone(), ws[1].clone()]);
        let la = marginal_likelihood(&data, &a, 0.05).unwrap();
        let lb = marginal_likelihood(&data, &b, 0.05).unwrap();
        assert!((la - lb).abs() < 1e-10);
    }

    #[test]
    fn no_underflow_with_many_confident_comparisons() {
        let ws = vec![vec![0.5, 0.5]];
        let data = simulate(&ws, &[1.0], 10_000, 2, 0.02, 4);
        let wrong = theta(vec![1.0], vec![vec![0.95, 0.05]]);
        assert!(marginal_likelihood(&data, &wrong, 0.02).unwrap().is_finite());
    }

    fn gradient_instance() -> (MixturePrior, Vec<PreferenceDatum>, Vec<f64>, ElboNoise) {
        let prior = MixturePrior::new(3, 1.0, vec![1.0; 4], 0.1, 0.01).unwrap();
        let ws = vec![vec![0.4, 0.4, 0.1, 0.1], vec![0.1, 0.1, 0.4, 0.4]];
        let data = simulate(&ws, &[0.6, 0.4], 20, 4, 0.1, 5);
        let mut s = rng_stream(5, "params");
        let post = MixturePosterior::prior_matched(&prior, &mut s);
        let mut params = post.pack();
        let d = params.len() / 2;
        for p in params.iter_mut().take(d) {
            *p += 0.5 * s.sample::<f64, _>(StandardNormal);
        }
        for p in params.iter_mut().skip(d) {
            *p -= 1.0;
        }
        let noise = ElboNoise::draw(&prior, 4, &mut s);
        (prior, data, params, noise)
    }

    #[test]
    fn elbo_gradient_matches_finite_differences() {
        let (prior, data, params, noise) = gradient_instance();
        let mut g = vec![0.0; params.len()];
        elbo_with_noise(&prior, &data, &params, &noise, Some(&mut g));
        let h = 1e-5;
        for i in 0..params.len() {
            let mut a = params.clone();
            let mut b = params.clone();
            a[i] += h;
            b[i] -= h;
            let fd = (elbo_with_noise(&prior, &data, &a, &noise, None) - elbo_with_noise(&prior, &data, &b, &noise, None))
                / (2.0 * h);
            let rel = (g[i] - fd).abs() / fd.abs().max(g[i].abs()).max(1e-2);
            assert!(rel < 1e-4, "coordinate {i}: analytic {} vs fd {fd}", g[i]);
        }
    }

    #[test]
    fn empty_data_returns_prior() {
        let prior = MixturePrior::new(3, 1.0, vec![1.0; 3], 0.02, 0.01).unwrap();
        let post = fit_svi(&[], &prior, None, SviOptions::default(), &mut rng_stream(1, "svi")).unwrap();
        let summary = posterior_summary(&post);
        // E[eta] under Beta(1,1) sticks is (1/2, 1/4, 1/4)
        let tv = 0.5 * summary.eta_mean.l1_distance(&[0.5, 0.25, 0.25]);
        assert!(tv < 0.15, "tv {tv}");
    }

    #[test]
    fn huge_noise_keeps_posterior_near_prior() {
        let prior = MixturePrior::new(3, 1.0, vec![1.0; 3], 1e3, 0.01).unwrap();
        let data = simulate(&[vec![0.8, 0.1, 0.1]], &[1.0], 50, 3, 0.02, 6);
        let opts = SviOptions {
            steps: 300,
            lr: 1e-2,
            mc_samples: 4,
        };
        let post = fit_svi(&data, &prior, None, opts, &mut rng_stream(6, "svi")).unwrap();
        let tv = 0.5 * posterior_summary(&post).eta_mean.l1_distance(&[0.5, 0.25, 0.25]);
        assert!(tv < 0.2, "tv {tv}");
    }

    #[test]
    fn recovers_a_single_archetype() {
        let truth = vec![0.4, 0.4, 0.05, 0.05, 0.05, 0.05];
        let prior = MixturePrior::new(3, 1.0, vec![1.0; 6], 0.02, 0.01).unwrap();
        let data = simulate(&[truth.clone()], &[1.0], 150, 6, 0.02, 7);
        let opts = SviOptions {
            steps: 3000,
            lr: 1e-2,
            mc_samples: 8,
        };
        let post = fit_svi(&data, &prior, None, opts, &mut rng_stream(7, "svi")).unwrap();
        let s = posterior_summary(&post);
        let top = s.eta_mean.argmax();
        let err = s.archetype_means[top].l1_distance(&truth);
        assert!(err < 0.15, "L1 error {err}, eta {:?}", s.eta_mean);

        let smooth = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        let trace = &post.elbo_trace;
        assert!(smooth(&trace[trace.len() - 50..]) >= smooth(&trace[..50]));
    }

    #[test]
    fn warm_start_continues_from_init() {
        let prior = MixturePrior::new(2, 1.0, vec![1.0; 3], 0.05, 0.01).unwrap();
        let data = simulate(&[vec![0.6, 0.2, 0.2]], &[1.0], 20, 3, 0.05, 8);
        let opts = SviOptions {
            steps: 1,
            lr: 1e-3,
            mc_samples: 2,
        };
        let first = fit_svi(&data, &prior, None, opts, &mut rng_stream(8, "a")).unwrap();
        let second = fit_svi(&data, &prior, Some(&first), opts, &mut rng_stream(8, "b")).unwrap();
        for (a, b) in first.m_v.iter().zip(&second.m_v) {
            assert!((a - b).abs() <= 1.01e-3);
        }
        let bad = MixturePrior::new(3, 1.0, vec![1.0; 3], 0.05, 0.01).unwrap();
        assert!(fit_svi(&data, &bad, Some(&first), opts, &mut rng_stream(8, "c")).is_err());
    }

    #[test]
    fn collapsed_posterior_samples_agree() {
        let prior = MixturePrior::new(3, 1.0, vec![1.0; 4], 0.02, 0.01).unwrap();
        let mut post = MixturePosterior::prior_matched(&prior, &mut rng_stream(9, "init"));
        post.s_v.iter_mut().for_each(|s| *s = 1e-8);
        post.s_w.iter_mut().flatten().for_each(|s| *s = 1e-8);
        let draws = sample_theta(&post, 20, &mut rng_stream(9, "draws"));
        for d in &draws {
            assert!((d.eta.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(d.eta.l1_distance(draws[0].eta.as_slice()) < 1e-6);
            for (a, b) in d.archetypes.iter().zip(&draws[0].archetypes) {
                assert!(a.l1_distance(b.as_slice()) < 1e-6);
                assert!(a.min_entry() >= 0.01 - 1e-12);
            }
        }
        let s = posterior_summary_n(&post, 5);
        assert!(s.eta_mean.l1_distance(draws[0].eta.as_slice()) < 1e-6);
        assert_eq!(posterior_summary(&post), posterior_summary(&post));
    }

    /// `E[sigmoid(m + s Z)]` by trapezoidal quadrature over `Z`.
    fn expected_sigmoid(m: f64, s: f64) -> f64 {
        let n = 4000;
        let (lo, hi) = (-10.0, 10.0);
        let h = (hi - lo) / n as f64;
        (0..=n)
            .map(|i| {
                let z = lo + i as f64 * h;
                let wgt = if i == 0 || i == n { 0.5 } else { 1.0 };
                wgt * crate::numeric::sigmoid(m + s * z) * crate::numeric::normal_pdf(z)
            })
            .sum::<f64>()
            * h
    }

    #[test]
    fn eta_mean_matches_quadrature() {
        let prior = MixturePrior::new(3, 1.0, vec![1.0; 2], 0.02, 0.01).unwrap();
        let mut post = MixturePosterior::prior_matched(&prior, &mut rng_stream(10, "init"));
        post.m_v = vec![0.7, -0.4];
        post.s_v = vec![0.9, 1.5];
        let draws = sample_theta(&post, 10_000, &mut rng_stream(10, "draws"));
        let e1 = expected_sigmoid(0.7, 0.9);
        let e2 = expected_sigmoid(-0.4, 1.5);
        let oracle = [e1, (1.0 - e1) * e2, (1.0 - e1) * (1.0 - e2)];
        for k in 0..3 {
            let xs: Vec<f64> = draws.iter().map(|d| d.eta[k]).collect();
            let (mean, sd) = crate::numeric::mean_and_sample_std(&xs);
            let se = sd / (xs.len() as f64).sqrt();
            assert!((mean - oracle[k]).abs() < 3.0 * se, "k={k}: {mean} vs {}", oracle[k]);
        }
    }
}
