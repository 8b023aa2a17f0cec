//! Preference-based many-objective Bayesian optimisation with a
//! Dirichlet-process mixture of Chebyshev preference archetypes.
//!
//! The crate is organised bottom-up:
//!
//! - [`scalarize`]: Chebyshev and mixture utilities.
//! - [`gp`]: independent per-objective Gaussian-process surrogates.
//! - [`prefmix`]: the truncated stick-breaking mixture over archetypes and its
//!   variational posterior.
//! - [`policy`]: pairwise query selection.
//! - [`acquire`]: mixture expected improvement and the outer optimisation loop.
//! - [`oracle`], [`bench`]: simulated decision makers and benchmark problems.
//! - [`eval`]: metrics, alignment and the regret-decomposition checks.
//! - [`experiment`]: wiring a configuration into a runnable loop.
//!
//! Generic numerical pieces are parameterised over [`Scalar`]; the aliases
//! below fix them to `f64`, which is what the probabilistic machinery uses.

pub mod acquire;
pub mod assign;
pub mod bench;
pub mod config;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gp;
pub mod numeric;
pub mod optim;
pub mod oracle;
pub mod policy;
pub mod prefmix;
pub mod record;
pub mod rng;
pub mod scalarize;
pub mod simplex;
pub mod types;

pub use config::{OracleKind, QueryMode, Regime, RunConfig, Scalarization, POLICY_IDS};
pub use error::{Error, Result};
pub use numeric::Scalar;
pub use record::{load_run, save_run, RunRecord};
pub use rng::{rng_stream, RngStream};
pub use types::{DesignPoint, OutcomeVector, PreferenceDatum};

/// Real scalar used throughout the inference code.
pub type Real = f64;
pub type SimplexVector = simplex::Simplex<Real>;
pub type MixtureParams = scalarize::MixtureParams<Real>;
pub type ChebyshevUtilityParams = scalarize::ChebyshevUtilityParams<Real>;
pub type LipschitzTerms = scalarize::LipschitzTerms<Real>;
