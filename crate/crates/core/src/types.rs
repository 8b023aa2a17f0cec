use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// A design in the unit hypercube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DesignPoint(Vec<f64>);

impl DesignPoint {
    pub fn new(x: Vec<f64>, d: usize) -> Result<Self> {
        check_dim("design point", d, x.len())?;
        if let Some(v) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid("design point", format!("coordinate {v} outside [0,1]")));
        }
        Ok(Self(x))
    }

    /// Clamp each coordinate into `[0,1]`; used after numerical search steps.
    pub fn clamped(mut x: Vec<f64>) -> Self {
        for v in &mut x {
            *v = v.clamp(0.0, 1.0);
        }
        Self(x)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Objective values, minimisation convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OutcomeVector(Vec<f64>);

impl OutcomeVector {
    pub fn new(y: Vec<f64>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::Empty("outcome vector is empty"));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("outcome vector"));
        }
        Ok(Self(y))
    }

    /// Validate against a declared objective count and optional bound `B_y`.
    pub fn checked(y: Vec<f64>, l: usize, bound: Option<f64>) -> Result<Self> {
        check_dim("outcome vector", l, y.len())?;
        let out = Self::new(y)?;
        if let Some(b) = bound {
            let m = out.sup_norm();
            if m > b {
                return Err(Error::invalid("outcome vector", format!("|y|_inf = {m} exceeds bound {b}")));
            }
        }
        Ok(out)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sup_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl std::ops::Deref for OutcomeVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// One pairwise answer from the decision maker, winner first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceDatum {
    pub winner: OutcomeVector,
    pub loser: OutcomeVector,
    pub round: usize,
    /// Ground-truth mode (1-based) in simulations; never read by the learner.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_mode_truth: Option<usize>,
}

impl PreferenceDatum {
    pub fn new(winner: OutcomeVector, loser: OutcomeVector, round: usize) -> Result<Self> {
        check_dim("preference pair", winner.len(), loser.len())?;
        Ok(Self {
            winner,
            loser,
            round,
            latent_mode_truth: None,
        })
    }

    pub fn with_truth(mut self, mode: usize, k_star: usize) -> Result<Self> {
        if mode == 0 || mode > k_star {
            return Err(Error::invalid("latent_mode_truth", format!("{mode} not in [1, {k_star}]")));
        }
        self.latent_mode_truth = Some(mode);
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn design_point_bounds() {
        assert!(DesignPoint::new(vec![0.0, 1.0], 2).is_ok());
        assert!(DesignPoint::new(vec![0.0, 1.1], 2).is_err());
        assert!(DesignPoint::new(vec![0.5], 2).is_err());
    }

    #[test]
    fn outcome_bound_enforced() {
        assert!(OutcomeVector::checked(vec![0.5, -2.0], 2, Some(1.0)).is_err());
        assert!(OutcomeVector::checked(vec![0.5, f64::NAN], 2, None).is_err());
        assert!(OutcomeVector::checked(vec![0.5, -0.9], 2, Some(1.0)).is_ok());
    }

    #[test]
    fn datum_checks() {
        let a = OutcomeVector::new(vec![1.0, 2.0]).unwrap();
        let b = OutcomeVector::new(vec![1.0]).unwrap();
        assert!(PreferenceDatum::new(a.clone(), b, 1).is_err());
        let d = PreferenceDatum::new(a.clone(), a, 1).unwrap();
        assert!(d.clone().with_truth(0, 3).is_err());
        assert!(d.with_truth(3, 3).is_ok());
    }
}
