//! Independent Gaussian-process surrogates, one per objective.
//!
//! Each model uses an isotropic squared-exponential kernel
//! `k(a, b) = sf2 * exp(-|a - b|^2 / (2 l^2))` plus Gaussian observation
//! noise. Hyperparameters are fitted by maximising the log marginal
//! likelihood with multi-start L-BFGS over box-bounded log-parameters.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numeric::sigmoid;
use crate::optim::{lbfgs, LbfgsOptions};
use crate::rng::RngStream;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const JITTER_SCHEDULE: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];
const VAR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpBounds {
    pub signal_variance: Interval,
    pub lengthscale: Interval,
    pub noise_variance: Interval,
}

impl GpBounds {
    /// Bounds scaled to the data: lengthscale in `[0.05, 2] sqrt(d)`, signal
    /// variance in `[0.01, 100] var(y)` and noise variance in `[1e-6, 0.1] var(y)`.
    pub fn data_adaptive(d: usize, y: &[f64]) -> Self {
        let n = y.len().max(1) as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).max(VAR_FLOOR);
        let root_d = (d as f64).sqrt();
        Self {
            signal_variance: Interval::new(0.01 * var, 100.0 * var),
            lengthscale: Interval::new(0.05 * root_d, 2.0 * root_d),
            noise_variance: Interval::new(1e-6 * var, 0.1 * var),
        }
    }

    fn as_array(&self) -> [Interval; 3] {
        [self.signal_variance, self.lengthscale, self.noise_variance]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams {
    pub signal_variance: f64,
    pub lengthscale: f64,
    pub noise_variance: f64,
    pub bounds: GpBounds,
}

impl GpHyperparams {
    pub fn new(signal_variance: f64, lengthscale: f64, noise_variance: f64, bounds: GpBounds) -> Result<Self> {
        let h = Self {
            signal_variance,
            lengthscale,
            noise_variance,
            bounds,
        };
        for (name, v, b) in [
            ("signal_variance", signal_variance, bounds.signal_variance),
            ("lengthscale", lengthscale, bounds.lengthscale),
            ("noise_variance", noise_variance, bounds.noise_variance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("{v} must be positive")));
            }
            if !b.contains(v) {
                return Err(Error::invalid(name, format!("{v} outside [{}, {}]", b.lo, b.hi)));
            }
        }
        Ok(h)
    }

    /// Hyperparameters pinned to the given values.
    pub fn fixed(signal_variance: f64, lengthscale: f64, noise_variance: f64) -> Result<Self> {
        Self::new(
            signal_variance,
            lengthscale,
            noise_variance,
            GpBounds {
                signal_variance: Interval::point(signal_variance),
                lengthscale: Interval::point(lengthscale),
                noise_variance: Interval::point(noise_variance),
            },
        )
    }

    fn as_array(&self) -> [f64; 3] {
        [self.signal_variance, self.lengthscale, self.noise_variance]
    }
}

/// Prior mean of the latent function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanFunction {
    Zero,
    /// Constant equal to the average training target.
    Empirical,
}

#[derive(Debug, Clone)]
pub struct GpModel {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    hyp: GpHyperparams,
    mean_fn: MeanFunction,
    mean: f64,
    /// Lower Cholesky factor of `K + (sn2 + jitter) I`.
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

fn gram(x: &[Vec<f64>], sf2: f64, ell: f64) -> DMatrix<f64> {
    let n = x.len();
    let inv = 0.5 / (ell * ell);
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = sf2;
        for j in 0..i {
            let v = sf2 * (-sq_dist(&x[i], &x[j]) * inv).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

fn check_inputs(x: &[Vec<f64>], y: &[f64]) -> Result<usize> {
    check_dim("gp targets", x.len(), y.len())?;
    if x.is_empty() {
        return Err(Error::Empty("gp needs at least one training point"));
    }
    let d = x[0].len();
    for row in x {
        check_dim("gp input dimension", d, row.len())?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gp inputs"));
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gp targets"));
    }
    Ok(d)
}

fn factorize(k: &DMatrix<f64>, noise: f64, scale: f64) -> Result<(DMatrix<f64>, f64)> {
    let n = k.nrows();
    for jitter in JITTER_SCHEDULE {
        let mut m = k.clone();
        for i in 0..n {
            m[(i, i)] += noise + jitter * scale;
        }
        if let Some(c) = m.cholesky() {
            return Ok((c.unpack(), jitter * scale));
        }
    }
    let diag: Vec<f64> = (0..n).map(|i| k[(i, i)] + noise).collect();
    let hi = diag.iter().copied().fold(f64::MIN, f64::max);
    let lo = diag.iter().copied().fold(f64::MAX, f64::min).max(f64::MIN_POSITIVE);
    Err(Error::Cholesky {
        jitter: JITTER_SCHEDULE[JITTER_SCHEDULE.len() - 1] * scale,
        condition: hi / lo * n as f64,
    })
}

/// Solve `L v = b` in place for lower-triangular `L`.
fn forward_solve(l: &DMatrix<f64>, b: &mut [f64]) {
    let n = b.len();
    for i in 0..n {
        let mut s = b[i];
        for j in 0..i {
            s -= l[(i, j)] * b[j];
        }
        b[i] = s / l[(i, i)];
    }
}

fn backward_solve(l: &DMatrix<f64>, b: &mut [f64]) {
    let n = b.len();
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in i + 1..n {
            s -= l[(j, i)] * b[j];
        }
        b[i] = s / l[(i, i)];
    }
}

impl GpModel {
    /// Condition a GP with fixed hyperparameters on `(x, y)`.
    pub fn with_hyperparams(x: Vec<Vec<f64>>, y: Vec<f64>, hyp: GpHyperparams, mean_fn: MeanFunction) -> Result<Self> {
        check_inputs(&x, &y)?;
        let mean = match mean_fn {
            MeanFunction::Zero => 0.0,
            MeanFunction::Empirical => y.iter().sum::<f64>() / y.len() as f64,
        };
        let k = gram(&x, hyp.signal_variance, hyp.lengthscale);
        let (chol, jitter) = factorize(&k, hyp.noise_variance, hyp.signal_variance)?;
        let mut a: Vec<f64> = y.iter().map(|v| v - mean).collect();
        forward_solve(&chol, &mut a);
        backward_solve(&chol, &mut a);
        Ok(Self {
            x,
            y,
            hyp,
            mean_fn,
            mean,
            chol,
            alpha: DVector::from_vec(a),
            jitter,
        })
    }

    /// Same hyperparameters, enlarged training set.
    pub fn condition(&self, x_new: &[Vec<f64>], y_new: &[f64]) -> Result<Self> {
        let mut x = self.x.clone();
        let mut y = self.y.clone();
        x.extend_from_slice(x_new);
        y.extend_from_slice(y_new);
        Self::with_hyperparams(x, y, self.hyp, self.mean_fn)
    }

    pub fn hyperparams(&self) -> &GpHyperparams {
        &self.hyp
    }

    pub fn dim(&self) -> usize {
        self.x[0].len()
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// The matrix the cached factor should reproduce: `K + sn2 I`.
    pub fn noisy_gram(&self) -> DMatrix<f64> {
        let mut k = gram(&self.x, self.hyp.signal_variance, self.hyp.lengthscale);
        for i in 0..k.nrows() {
            k[(i, i)] += self.hyp.noise_variance;
        }
        k
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.y.len() as f64;
        let fit: f64 = self
            .y
            .iter()
            .zip(self.alpha.iter())
            .map(|(y, a)| (y - self.mean) * a)
            .sum();
        let logdet: f64 = (0..self.chol.nrows()).map(|i| self.chol[(i, i)].ln()).sum();
        -0.5 * fit - logdet - 0.5 * n * LN_2PI
    }

    /// Posterior mean and standard deviation of the latent function.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        check_dim("gp prediction input", self.dim(), x.len())?;
        Ok(self.predict_unchecked(x))
    }

    pub fn predict_unchecked(&self, x: &[f64]) -> (f64, f64) {
        let inv = 0.5 / (self.hyp.lengthscale * self.hyp.lengthscale);
        let sf2 = self.hyp.signal_variance;
        let mut k: Vec<f64> = self.x.iter().map(|xi| sf2 * (-sq_dist(x, xi) * inv).exp()).collect();
        let mean = self.mean + k.iter().zip(self.alpha.iter()).map(|(a, b)| a * b).sum::<f64>();
        forward_solve(&self.chol, &mut k);
        let mut var = sf2 - k.iter().map(|v| v * v).sum::<f64>();
        if var < 0.0 {
            if var < -1e-10 {
                log::warn!("clamping negative GP variance {var:e}");
            }
            var = 0.0;
        }
        (mean, var.sqrt())
    }

    /// `sqrt(beta_t) * std(x)`.
    pub fn confidence_radius(&self, x: &[f64], beta_t: f64) -> Result<f64> {
        if beta_t < 0.0 {
            return Err(Error::invalid("beta_t", "must be nonnegative"));
        }
        Ok(beta_t.sqrt() * self.predict(x)?.1)
    }
}

/// Negative log marginal likelihood and its gradient with respect to
/// `(ln sf2, ln l, ln sn2)`; `None` when the factorisation fails.
fn neg_lml_log_params(x: &[Vec<f64>], yc: &[f64], log_p: [f64; 3]) -> Option<(f64, [f64; 3])> {
    let (sf2, ell, sn2) = (log_p[0].exp(), log_p[1].exp(), log_p[2].exp());
    let n = yc.len();
    let k = gram(x, sf2, ell);
    let mut m = k.clone();
    for i in 0..n {
        m[(i, i)] += sn2 + 1e-10 * sf2;
    }
    let chol = m.cholesky()?;
    let alpha = chol.solve(&DVector::from_column_slice(yc));
    let kinv = chol.inverse();
    let l = chol.l_dirty();
    let logdet: f64 = (0..n).map(|i| l[(i, i)].ln()).sum();
    let fit = alpha.dot(&DVector::from_column_slice(yc));
    let value = 0.5 * fit + logdet + 0.5 * n as f64 * LN_2PI;

    // d(-lml)/dp = -0.5 tr((a a^T - K^-1) dK/dp)
    let inv_l2 = 1.0 / (ell * ell);
    let (mut g_sf, mut g_l, mut g_n) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let w = alpha[i] * alpha[j] - kinv[(i, j)];
            let kij = k[(i, j)];
            g_sf += w * kij;
            g_l += w * kij * sq_dist(&x[i], &x[j]) * inv_l2;
        }
        g_n += (alpha[i] * alpha[i] - kinv[(i, i)]) * sn2;
    }
    let grad = [-0.5 * g_sf, -0.5 * g_l, -0.5 * g_n];
    (value.is_finite() && grad.iter().all(|g| g.is_finite())).then_some((value, grad))
}

/// Box map from an unconstrained vector to log-parameters.
struct LogBox {
    lo: [f64; 3],
    hi: [f64; 3],
}

impl LogBox {
    fn new(bounds: &GpBounds) -> Self {
        let b = bounds.as_array();
        Self {
            lo: [b[0].lo.ln(), b[1].lo.ln(), b[2].lo.ln()],
            hi: [b[0].hi.ln(), b[1].hi.ln(), b[2].hi.ln()],
        }
    }

    fn to_log(&self, u: &[f64]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for i in 0..3 {
            out[i] = self.lo[i] + (self.hi[i] - self.lo[i]) * sigmoid(u[i]);
        }
        out
    }

    fn jacobian(&self, u: &[f64]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for i in 0..3 {
            let s = sigmoid(u[i]);
            out[i] = (self.hi[i] - self.lo[i]) * s * (1.0 - s);
        }
        out
    }

    fn from_log(&self, p: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for i in 0..3 {
            let width = self.hi[i] - self.lo[i];
            if width > 0.0 {
                let r = ((p[i] - self.lo[i]) / width).clamp(1e-3, 1.0 - 1e-3);
                out[i] = (r / (1.0 - r)).ln();
            }
        }
        out
    }
}

/// Fit hyperparameters by multi-start L-BFGS on the log marginal likelihood.
///
/// The first start is `warm` when given (projected into the box) and the box
/// centre otherwise; the remaining `restarts - 1` starts are uniform in the
/// log-box, drawn from `stream`. Every start is polished and the best model
/// is returned, so its marginal likelihood is at least that of every start.
pub fn fit(
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    bounds: &GpBounds,
    mean_fn: MeanFunction,
    restarts: usize,
    warm: Option<&GpHyperparams>,
    stream: &mut RngStream,
) -> Result<GpModel> {
    check_inputs(&x, &y)?;
    if x.len() < 2 {
        return Err(Error::Empty("gp fit needs at least two training points"));
    }
    if restarts == 0 {
        return Err(Error::invalid("restarts", "must be >= 1"));
    }
    for b in bounds.as_array() {
        if !(b.lo > 0.0 && b.lo <= b.hi && b.hi.is_finite()) {
            return Err(Error::invalid("gp bounds", format!("bad interval [{}, {}]", b.lo, b.hi)));
        }
    }
    let mean = match mean_fn {
        MeanFunction::Zero => 0.0,
        MeanFunction::Empirical => y.iter().sum::<f64>() / y.len() as f64,
    };
    let yc: Vec<f64> = y.iter().map(|v| v - mean).collect();
    let lb = LogBox::new(bounds);

    let mut starts = Vec::with_capacity(restarts);
    starts.push(match warm {
        Some(h) => {
            let p = h.as_array();
            lb.from_log([p[0].ln(), p[1].ln(), p[2].ln()])
        }
        None => [0.0; 3],
    });
    for _ in 1..restarts {
        // uniform in the log-box is uniform in the sigmoid's range
        let mut u = [0.0; 3];
        for ui in u.iter_mut() {
            let r = stream.random::<f64>().clamp(1e-3, 1.0 - 1e-3);
            *ui = (r / (1.0 - r)).ln();
        }
        starts.push(u);
    }

    let results: Vec<(f64, [f64; 3])> = starts
        .par_iter()
        .map(|u0| {
            let objective = |u: &[f64], g: &mut [f64]| match neg_lml_log_params(&x, &yc, lb.to_log(u)) {
                Some((v, grad)) => {
                    let jac = lb.jacobian(u);
                    for i in 0..3 {
                        g[i] = grad[i] * jac[i];
                    }
                    v
                }
                None => {
                    g.iter_mut().for_each(|v| *v = 0.0);
                    f64::INFINITY
                }
            };
            let m = lbfgs(
                objective,
                u0,
                LbfgsOptions {
                    max_iters: 60,
                    ..Default::default()
                },
            );
            (m.f, [m.x[0], m.x[1], m.x[2]])
        })
        .collect();

    let mut best: Option<(f64, [f64; 3])> = None;
    for (f, u) in results {
        if f.is_finite() && best.is_none_or(|(bf, _)| f < bf) {
            best = Some((f, u));
        }
    }
    let (_, u) = best.ok_or(Error::Cholesky {
        jitter: 1e-10,
        condition: f64::INFINITY,
    })?;
    let p = lb.to_log(&u);
    let clamp = |v: f64, b: Interval| v.clamp(b.lo, b.hi);
    let hyp = GpHyperparams::new(
        clamp(p[0].exp(), bounds.signal_variance),
        clamp(p[1].exp(), bounds.lengthscale),
        clamp(p[2].exp(), bounds.noise_variance),
        *bounds,
    )?;
    GpModel::with_hyperparams(x, y, hyp, mean_fn)
}

/// `beta_t = 2 ln(L pi^2 t^2 / (6 delta))`.
pub fn beta_t(objectives: usize, t: usize, delta: f64) -> f64 {
    let pi2 = std::f64::consts::PI * std::f64::consts::PI;
    2.0 * (objectives as f64 * pi2 * (t * t) as f64 / (6.0 * delta)).ln()
}
