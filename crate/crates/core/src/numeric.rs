//! Scalar abstraction and the handful of special functions the model needs.

use num_traits::{Float, FloatConst};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar usable by the generic parts of the crate.
///
/// Implemented for `f32` and `f64`; the probabilistic machinery (GPs,
/// variational inference) is written against `f64` directly.
pub trait Scalar:
    Float + FloatConst + Sum + Debug + Display + Default + Send + Sync + 'static
{
    fn lit(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn lit(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal density.
#[inline]
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI).exp()
}

/// Standard normal CDF.
#[inline]
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Mills ratio `Φ(-x)/φ(x)` for `x >= 5` by continued fraction.
fn mills_ratio_tail(x: f64) -> f64 {
    let mut acc = x;
    for k in (1..=40).rev() {
        acc = x + k as f64 / acc;
    }
    1.0 / acc
}

/// `ln Φ(z)`, accurate far into the lower tail.
pub fn log_normal_cdf(z: f64) -> f64 {
    if z > -5.0 {
        let p = normal_cdf(z);
        if p > 0.9 {
            (-normal_cdf(-z)).ln_1p()
        } else {
            p.ln()
        }
    } else {
        -0.5 * z * z - LN_SQRT_2PI + mills_ratio_tail(-z).ln()
    }
}

/// `d/dz ln Φ(z) = φ(z)/Φ(z)`.
pub fn dlog_normal_cdf(z: f64) -> f64 {
    if z > -5.0 {
        normal_pdf(z) / normal_cdf(z)
    } else {
        1.0 / mills_ratio_tail(-z)
    }
}

/// Bernoulli entropy in nats.
pub fn bernoulli_entropy(p: f64) -> f64 {
    let mut h = 0.0;
    if p > 0.0 {
        h -= p * p.ln();
    }
    if p < 1.0 {
        h -= (1.0 - p) * (1.0 - p).ln();
    }
    h
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Digamma for `x > 0` by recurrence up to x >= 12 followed by the asymptotic series.
pub fn digamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 12.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    acc + x.ln() - 0.5 / x - x2 * (1.0 / 12.0 - x2 * (1.0 / 120.0 - x2 * (1.0 / 252.0 - x2 / 240.0)))
}

/// Trigamma for `x > 0` by recurrence up to x >= 12 followed by the asymptotic series.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 12.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    acc + 1.0 / x
        + x2 / 2.0
        + (1.0 / x) * x2 * (1.0 / 6.0 - x2 * (1.0 / 30.0 - x2 * (1.0 / 42.0 - x2 / 30.0)))
}

/// Mean and sample standard deviation (n - 1 denominator; 0 for a single value).
pub fn mean_and_sample_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cdf_at_one() {
        assert_relative_eq!(normal_cdf(1.0), 0.841_344_746_068_542_9, epsilon = 1e-14);
    }

    #[test]
    fn log_cdf_is_continuous_across_the_tail_switch() {
        let below = log_normal_cdf(-5.0 - 1e-9);
        let above = log_normal_cdf(-5.0 + 1e-9);
        assert!((below - above).abs() < 1e-7, "{below} vs {above}");
        let d_below = dlog_normal_cdf(-5.0 - 1e-9);
        let d_above = dlog_normal_cdf(-5.0 + 1e-9);
        assert!((d_below - d_above).abs() < 1e-7);
    }

    #[test]
    fn log_cdf_deep_tail_is_finite() {
        let v = log_normal_cdf(-1e4);
        assert!(v.is_finite());
        assert_relative_eq!(v, -0.5e8 - LN_SQRT_2PI - (1e4f64).ln(), max_relative = 1e-9);
        assert_relative_eq!(dlog_normal_cdf(-1e4), 1e4, max_relative = 1e-6);
    }

    #[test]
    fn trigamma_known_values() {
        let pi2_6 = std::f64::consts::PI.powi(2) / 6.0;
        assert_relative_eq!(trigamma(1.0), pi2_6, epsilon = 1e-12);
        assert_relative_eq!(trigamma(0.5), std::f64::consts::PI.powi(2) / 2.0, epsilon = 1e-10);
        assert_relative_eq!(trigamma(2.0), pi2_6 - 1.0, epsilon = 1e-10);
    }

    #[test]
    fn digamma_known_values() {
        let euler = 0.577_215_664_901_532_9;
        assert_relative_eq!(digamma(1.0), -euler, epsilon = 1e-12);
        assert_relative_eq!(digamma(0.5), -euler - 2.0 * std::f64::consts::LN_2, epsilon = 1e-12);
        assert_relative_eq!(digamma(3.0), 1.5 - euler, epsilon = 1e-12);
    }

    #[test]
    fn entropy_of_fair_coin() {
        assert_relative_eq!(bernoulli_entropy(0.5), std::f64::consts::LN_2, epsilon = 1e-15);
        assert_eq!(bernoulli_entropy(0.0), 0.0);
        assert_eq!(bernoulli_entropy(1.0), 0.0);
    }

    #[test]
    fn sample_std_of_one_two_three() {
        let (m, s) = mean_and_sample_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_relative_eq!(s, 1.0, epsilon = 1e-15);
        assert_eq!(mean_and_sample_std(&[4.0]), (4.0, 0.0));
    }
}
