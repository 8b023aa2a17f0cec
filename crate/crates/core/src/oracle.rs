//! Simulated decision makers.
//!
//! A simulated DM holds a ground-truth mixture of archetypes. Each query is
//! answered by the archetype of the currently active latent mode under a
//! probit likelihood. In the persistent regime the mode is kept with
//! probability `rho` between queries and otherwise redrawn from `eta*`; the
//! i.i.d. regime is the same process with `rho = 0`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Regime, RunConfig};
use crate::error::{Error, Result};
use crate::numeric::normal_cdf;
use crate::rng::{rng_stream, RngStream};
use crate::scalarize::chebyshev_raw;
use crate::SimplexVector;

/// How archetypes are laid out over the objectives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeSpec {
    pub objectives: usize,
    /// Dominant objective group of each mode (0-based indices).
    pub groups: Vec<Vec<usize>>,
    pub dominant_mass: f64,
    pub c_w: f64,
}

/// Spread `dominant_mass` uniformly over each mode's group and the rest uniformly elsewhere.
pub fn build_archetypes(spec: &ArchetypeSpec) -> Result<Vec<SimplexVector>> {
    let l = spec.objectives;
    if !(spec.dominant_mass > 0.0 && spec.dominant_mass < 1.0) {
        return Err(Error::invalid("dominant_mass", "must lie in (0,1)"));
    }
    let mut seen = vec![false; l];
    for g in &spec.groups {
        if g.is_empty() {
            return Err(Error::invalid("archetype groups", "empty group"));
        }
        for &i in g {
            if i >= l {
                return Err(Error::invalid("archetype groups", format!("objective {i} out of range")));
            }
            if seen[i] {
                return Err(Error::invalid("archetype groups", format!("objective {i} in two groups")));
            }
            seen[i] = true;
        }
    }
    spec.groups
        .iter()
        .map(|g| {
            let rest = l - g.len();
            let inside = if rest == 0 { 1.0 } else { spec.dominant_mass } / g.len() as f64;
            let outside = if rest == 0 { 0.0 } else { (1.0 - spec.dominant_mass) / rest as f64 };
            let raw: Vec<f64> = (0..l)
                .map(|i| if g.contains(&i) { inside } else { outside })
                .collect();
            SimplexVector::from_raw(raw, Some(spec.c_w))
        })
        .collect()
}

/// Probit choice probability `Phi((U(y_i;w) - U(y_j;w)) / (sqrt 2 sigma_u))`.
pub fn choice_probability(y_i: &[f64], y_j: &[f64], w: &[f64], sigma_u: f64) -> f64 {
    let gap = chebyshev_raw(y_i, w).0 - chebyshev_raw(y_j, w).0;
    normal_cdf(gap / (std::f64::consts::SQRT_2 * sigma_u))
}

/// Ground truth and gating state of a simulated DM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmState {
    pub eta_star: SimplexVector,
    pub archetypes_star: Vec<SimplexVector>,
    pub regime: Regime,
    pub rho: f64,
    /// Active mode, 1-based.
    pub current_mode: usize,
    pub sigma_u: f64,
}

impl DmState {
    /// Initialise with `z_1 ~ Categorical(eta*)`.
    pub fn new(
        eta_star: SimplexVector,
        archetypes_star: Vec<SimplexVector>,
        regime: Regime,
        rho: f64,
        sigma_u: f64,
        stream: &mut RngStream,
    ) -> Result<Self> {
        if eta_star.len() != archetypes_star.len() {
            return Err(Error::Dimension {
                what: "true archetypes",
                expected: eta_star.len(),
                got: archetypes_star.len(),
            });
        }
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::invalid("rho", format!("{rho} not in [0,1)")));
        }
        if sigma_u <= 0.0 {
            return Err(Error::invalid("sigma_u", "must be positive"));
        }
        let mut s = Self {
            eta_star,
            archetypes_star,
            regime,
            rho,
            current_mode: 1,
            sigma_u,
        };
        s.current_mode = s.draw_mode(stream);
        Ok(s)
    }

    /// Ground truth as configured in a run.
    pub fn from_config(cfg: &RunConfig, stream: &mut RngStream) -> Result<Self> {
        let archetypes = build_archetypes(&ArchetypeSpec {
            objectives: cfg.problem.objectives,
            groups: cfg.context.groups.clone(),
            dominant_mass: cfg.context.dominant_mass,
            c_w: cfg.model.c_w,
        })?;
        let eta = SimplexVector::new(cfg.context.eta_star.clone(), None)?;
        Self::new(
            eta,
            archetypes,
            cfg.context.regime,
            cfg.context.rho,
            cfg.context.sigma_u,
            stream,
        )
    }

    fn draw_mode(&self, stream: &mut RngStream) -> usize {
        let dist = WeightedIndex::new(self.eta_star.as_slice()).expect("eta* is a valid simplex");
        dist.sample(stream) + 1
    }

    fn effective_rho(&self) -> f64 {
        match self.regime {
            Regime::Iid => 0.0,
            Regime::Persistent => self.rho,
        }
    }

    /// Stay with probability `rho`, otherwise redraw from `eta*`.
    pub fn step_mode(&mut self, stream: &mut RngStream) -> usize {
        self.step_mode_detailed(stream).0
    }

    /// Like [`step_mode`](Self::step_mode), also reporting whether a redraw
    /// happened. A redraw may land on the mode that was already active.
    pub fn step_mode_detailed(&mut self, stream: &mut RngStream) -> (usize, bool) {
        // both draws are always consumed so the stream layout is regime independent
        let stay = stream.random::<f64>() < self.effective_rho();
        let fresh = self.draw_mode(stream);
        if !stay {
            self.current_mode = fresh;
        }
        (self.current_mode, !stay)
    }

    /// Answer `y_i` vs `y_j` with the active archetype; returns `(y_i wins, mode)`.
    pub fn respond(&self, y_i: &[f64], y_j: &[f64], stream: &mut RngStream) -> (bool, usize) {
        let w = &self.archetypes_star[self.current_mode - 1];
        let p = choice_probability(y_i, y_j, w.as_slice(), self.sigma_u);
        (stream.random::<f64>() < p, self.current_mode)
    }

    pub fn truth(&self) -> crate::MixtureParams {
        crate::MixtureParams::new(self.eta_star.clone(), self.archetypes_star.clone())
            .expect("validated at construction")
    }
}

/// Simulated DM driven by per-query labelled streams, so that its answers
/// depend only on the run seed and the query index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedDm {
    pub state: DmState,
    pub seed: u64,
    pub queries_answered: usize,
}

impl SimulatedDm {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let mut init = rng_stream(cfg.seed, "oracle/init");
        Ok(Self {
            state: DmState::from_config(cfg, &mut init)?,
            seed: cfg.seed,
            queries_answered: 0,
        })
    }

    /// Answer query number `queries_answered + 1`; the mode steps before every query but the first.
    pub fn answer(&mut self, y_i: &[f64], y_j: &[f64]) -> (bool, usize) {
        let t = self.queries_answered + 1;
        if t > 1 {
            let mut s = rng_stream(self.seed, &format!("oracle/mode/{t}"));
            self.state.step_mode(&mut s);
        }
        let mut s = rng_stream(self.seed, &format!("oracle/respond/{t}"));
        self.queries_answered = t;
        self.state.respond(y_i, y_j, &mut s)
    }
}

/// Counts from driving the mode chain alone for a number of steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GatingStats {
    pub steps: usize,
    /// Redraw events; a redraw may land on the mode already active.
    pub switches: usize,
    /// Steps where the active mode actually changed.
    pub changes: usize,
    /// Mean length of the segments delimited by redraws.
    pub mean_run_length: f64,
}

/// Run the gating chain for `steps` queries (the first query never steps).
pub fn simulate_gating(state: &mut DmState, steps: usize, stream: &mut RngStream) -> GatingStats {
    let mut switches = 0;
    let mut changes = 0;
    let mut prev = state.current_mode;
    for _ in 1..steps {
        let (m, redrawn) = state.step_mode_detailed(stream);
        switches += redrawn as usize;
        changes += (m != prev) as usize;
        prev = m;
    }
    GatingStats {
        steps,
        switches,
        changes,
        mean_run_length: steps as f64 / (switches + 1) as f64,
    }
}
