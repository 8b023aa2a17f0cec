//! Chebyshev and mixture utilities for minimisation problems.
//!
//! `U(y; w) = -min_l y_l / w_l`, larger is better. A mixture of archetypes
//! scores `sum_k eta_k U(y; w_k)`.

use serde::{Deserialize, Serialize};

use crate::config::Scalarization;
use crate::error::{check_dim, Error, Result};
use crate::numeric::Scalar;
use crate::simplex::Simplex;

/// Archetype weights bounded away from the simplex boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChebyshevUtilityParams<T> {
    w: Simplex<T>,
}

impl<T: Scalar> ChebyshevUtilityParams<T> {
    pub fn new(w: Simplex<T>) -> Result<Self> {
        match w.floor() {
            Some(c) if c > T::zero() => Ok(Self { w }),
            _ => Err(Error::invalid("archetype", "weights need a strictly positive floor c_w")),
        }
    }

    pub fn weights(&self) -> &Simplex<T> {
        &self.w
    }

    pub fn c_w(&self) -> T {
        self.w.floor().expect("validated at construction")
    }
}

/// Mixture weights over archetypes plus the archetypes themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams<T> {
    pub eta: Simplex<T>,
    pub archetypes: Vec<Simplex<T>>,
}

impl<T: Scalar> MixtureParams<T> {
    pub fn new(eta: Simplex<T>, archetypes: Vec<Simplex<T>>) -> Result<Self> {
        check_dim("mixture components", eta.len(), archetypes.len())?;
        let l = archetypes.first().map(Simplex::len).unwrap_or(0);
        for a in &archetypes {
            check_dim("archetype length", l, a.len())?;
        }
        Ok(Self { eta, archetypes })
    }

    pub fn components(&self) -> usize {
        self.eta.len()
    }

    pub fn objectives(&self) -> usize {
        self.archetypes[0].len()
    }
}

/// `-min_l y_l / w_l` with the minimising index; no validation.
#[inline]
pub fn chebyshev_raw<T: Scalar>(y: &[T], w: &[T]) -> (T, usize) {
    let mut best = T::infinity();
    let mut arg = 0;
    for (l, (yl, wl)) in y.iter().zip(w).enumerate() {
        let r = *yl / *wl;
        if r < best {
            best = r;
            arg = l;
        }
    }
    (-best, arg)
}

/// Chebyshev utility of outcome `y` under weights `w`.
pub fn chebyshev_utility<T: Scalar>(y: &[T], w: &[T]) -> Result<T> {
    check_dim("chebyshev weights", y.len(), w.len())?;
    if let Some(v) = w.iter().find(|v| **v <= T::zero()) {
        return Err(Error::invalid("chebyshev weights", format!("nonpositive weight {v}")));
    }
    Ok(chebyshev_raw(y, w).0)
}

/// `-sum_l w_l y_l`.
#[inline]
pub fn weighted_sum_raw<T: Scalar>(y: &[T], w: &[T]) -> T {
    -y.iter().zip(w).map(|(a, b)| *a * *b).sum::<T>()
}

impl Scalarization {
    #[inline]
    pub fn utility<T: Scalar>(self, y: &[T], w: &[T]) -> T {
        match self {
            Scalarization::Chebyshev => chebyshev_raw(y, w).0,
            Scalarization::WeightedSum => weighted_sum_raw(y, w),
        }
    }

    /// Utility and its gradient with respect to `ln w`, written into `grad`.
    pub fn utility_grad_log_w(self, y: &[f64], w: &[f64], grad: &mut [f64]) -> f64 {
        match self {
            Scalarization::Chebyshev => {
                let (u, arg) = chebyshev_raw(y, w);
                grad.iter_mut().for_each(|g| *g = 0.0);
                // U = -y_a exp(-ln w_a)
                grad[arg] = -u;
                u
            }
            Scalarization::WeightedSum => {
                let mut u = 0.0;
                for l in 0..y.len() {
                    grad[l] = -w[l] * y[l];
                    u += grad[l];
                }
                u
            }
        }
    }
}

pub fn mixture_utility<T: Scalar>(y: &[T], theta: &MixtureParams<T>) -> Result<T> {
    check_dim("mixture utility outcome", theta.objectives(), y.len())?;
    let mut total = T::zero();
    for (eta, w) in theta.eta.as_slice().iter().zip(&theta.archetypes) {
        total = total + *eta * chebyshev_utility(y, w.as_slice())?;
    }
    Ok(total)
}

/// Mixture utility under an arbitrary scalarisation; no validation.
pub fn mixture_utility_with<T: Scalar>(
    scalarization: Scalarization,
    y: &[T],
    eta: &[T],
    archetypes: &[Simplex<T>],
) -> T {
    eta.iter()
        .zip(archetypes)
        .map(|(e, w)| *e * scalarization.utility(y, w.as_slice()))
        .sum()
}

/// Both sides of the two Lipschitz inequalities for the Chebyshev utility.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzTerms<T> {
    /// `|U(y,w) - U(y',w)|`
    pub lhs_y: T,
    /// `|y - y'|_inf / c_w`
    pub rhs_y: T,
    /// `|U(y,w) - U(y,w')|`
    pub lhs_w: T,
    /// `|y|_inf |w - w'|_1 / c_w^2`
    pub rhs_w: T,
}

impl<T: Scalar> LipschitzTerms<T> {
    pub fn holds(&self, tol: T) -> bool {
        self.lhs_y <= self.rhs_y + tol && self.lhs_w <= self.rhs_w + tol
    }
}

pub fn lipschitz_bounds<T: Scalar>(
    y: &[T],
    y_prime: &[T],
    w: &[T],
    w_prime: &[T],
    c_w: T,
) -> Result<LipschitzTerms<T>> {
    check_dim("lipschitz y'", y.len(), y_prime.len())?;
    check_dim("lipschitz w", y.len(), w.len())?;
    check_dim("lipschitz w'", y.len(), w_prime.len())?;
    if c_w <= T::zero() {
        return Err(Error::invalid("c_w", "must be positive"));
    }
    let slack = T::lit(1e-12);
    if w.iter().chain(w_prime).any(|v| *v < c_w - slack) {
        return Err(Error::invalid("lipschitz weights", format!("entry below floor {c_w}")));
    }
    let u = chebyshev_raw(y, w).0;
    let sup = |v: &mut dyn Iterator<Item = T>| v.fold(T::zero(), |m, x| m.max(x.abs()));
    let dy = sup(&mut y.iter().zip(y_prime).map(|(a, b)| *a - *b));
    let y_inf = sup(&mut y.iter().copied());
    let dw: T = w.iter().zip(w_prime).map(|(a, b)| (*a - *b).abs()).sum();
    Ok(LipschitzTerms {
        lhs_y: (u - chebyshev_raw(y_prime, w).0).abs(),
        rhs_y: dy / c_w,
        lhs_w: (u - chebyshev_raw(y, w_prime).0).abs(),
        rhs_w: y_inf * dw / (c_w * c_w),
    })
}
