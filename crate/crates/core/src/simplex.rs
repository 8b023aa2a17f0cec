use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Scalar;

/// Tolerance on `|sum - 1|` accepted after normalisation.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Nonnegative weights summing to one, optionally bounded below by a floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simplex<T> {
    p: Vec<T>,
    floor: Option<T>,
}

impl<T: Scalar> Simplex<T> {
    /// Normalise nonnegative raw weights and check the floor.
    ///
    /// A floor violation after normalisation is an error; nothing is clamped.
    pub fn from_raw(raw: Vec<T>, floor: Option<T>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Simplex("empty weight vector".into()));
        }
        if raw.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::Simplex(format!("weights must be finite and nonnegative: {raw:?}")));
        }
        let total: T = raw.iter().copied().sum();
        if total <= T::zero() {
            return Err(Error::Simplex("weights sum to zero".into()));
        }
        let p: Vec<T> = raw.into_iter().map(|v| v / total).collect();
        Self::new(p, floor)
    }

    /// Wrap an already-normalised vector, validating every invariant.
    pub fn new(p: Vec<T>, floor: Option<T>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::Simplex("empty weight vector".into()));
        }
        let sum: T = p.iter().copied().sum();
        if (sum - T::one()).abs() > T::lit(SIMPLEX_TOL) {
            return Err(Error::Simplex(format!("entries sum to {sum}, not 1")));
        }
        if let Some(c) = floor {
            if c < T::zero() {
                return Err(Error::Simplex(format!("negative floor {c}")));
            }
            let slack = T::lit(1e-12);
            if let Some(v) = p.iter().find(|v| **v < c - slack) {
                return Err(Error::Simplex(format!("entry {v} below floor {c}")));
            }
        } else if let Some(v) = p.iter().find(|v| **v < T::zero()) {
            return Err(Error::Simplex(format!("negative entry {v}")));
        }
        Ok(Self { p, floor })
    }

    /// Floor-then-renormalise: entries below `c` are raised to `c` and the
    /// remaining mass is rescaled, repeating until every entry is at least `c`.
    pub fn floored(raw: &[T], c: T) -> Result<Self> {
        let n = raw.len();
        if n == 0 {
            return Err(Error::Simplex("empty weight vector".into()));
        }
        if T::lit(n as f64) * c > T::one() + T::lit(1e-12) {
            return Err(Error::Simplex(format!("floor {c} infeasible for {n} entries")));
        }
        if raw.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::Simplex(format!("weights must be finite and nonnegative: {raw:?}")));
        }
        let total: T = raw.iter().copied().sum();
        if total <= T::zero() {
            return Err(Error::Simplex("weights sum to zero".into()));
        }
        let mut p: Vec<T> = raw.iter().map(|v| *v / total).collect();
        let mut pinned = vec![false; n];
        loop {
            let n_pinned = pinned.iter().filter(|b| **b).count();
            let free_mass: T = p
                .iter()
                .zip(&pinned)
                .filter(|(_, b)| !**b)
                .map(|(v, _)| *v)
                .sum();
            let budget = T::one() - T::lit(n_pinned as f64) * c;
            let scale = if free_mass > T::zero() {
                budget / free_mass
            } else {
                T::zero()
            };
            let mut changed = false;
            for i in 0..n {
                if pinned[i] {
                    p[i] = c;
                } else {
                    p[i] = p[i] * scale;
                    if p[i] < c {
                        pinned[i] = true;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        Self::new(p, Some(c))
    }

    pub fn uniform(n: usize) -> Self {
        let v = T::one() / T::lit(n as f64);
        Self {
            p: vec![v; n],
            floor: None,
        }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.p
    }

    pub fn floor(&self) -> Option<T> {
        self.floor
    }

    pub fn into_vec(self) -> Vec<T> {
        self.p
    }

    pub fn min_entry(&self) -> T {
        self.p.iter().copied().fold(T::infinity(), T::min)
    }

    /// Index of the largest entry, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.p.iter().enumerate() {
            if *v > self.p[best] {
                best = i;
            }
        }
        best
    }

    pub fn l1_distance(&self, other: &[T]) -> T {
        self.p
            .iter()
            .zip(other)
            .map(|(a, b)| (*a - *b).abs())
            .sum()
    }
}

impl<T> std::ops::Index<usize> for Simplex<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.p[i]
    }
}
