//! Run configuration schema.
//!
//! Configurations are JSON documents. Missing fields take problem-specific
//! defaults, which is why loading goes through [`RunConfig::from_value`]: the
//! user document is merged over the defaults of the named problem before it
//! is deserialised.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryMode {
    Random,
    Clusterless,
    Inter,
    Intra,
    Hybrid,
}

impl QueryMode {
    pub const ALL: [QueryMode; 5] = [
        QueryMode::Random,
        QueryMode::Clusterless,
        QueryMode::Inter,
        QueryMode::Intra,
        QueryMode::Hybrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QueryMode::Random => "random",
            QueryMode::Clusterless => "clusterless",
            QueryMode::Inter => "inter",
            QueryMode::Intra => "intra",
            QueryMode::Hybrid => "hybrid",
        }
    }
}

impl std::str::FromStr for QueryMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        QueryMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = QueryMode::ALL.iter().map(|m| m.name()).collect();
                Error::invalid("query.mode", format!("unknown mode {s:?} (valid: {})", valid.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Iid,
    Persistent,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Iid => "iid",
            Regime::Persistent => "persistent",
        }
    }
}

/// Scalarisation used by the learner's utility model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scalarization {
    Chebyshev,
    WeightedSum,
}

/// Who answers the comparisons.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    #[default]
    Simulated,
    Human,
}

/// Where the acquisition's preference posterior comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreferenceSource {
    /// Learned from comparisons by variational inference.
    Learned,
    /// Point mass at the simulator's true mixture (fixed-preference baseline).
    FixedTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    /// `dtlz2`, `wfg9` or `tabular`.
    pub id: String,
    pub objectives: usize,
    pub dims: usize,
    /// CSV path for tabular problems.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
    /// Std of optional additive Gaussian observation noise.
    #[serde(default)]
    pub observation_noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub truncation: usize,
    pub alpha: f64,
    pub beta_dir: Vec<f64>,
    pub sigma_u: f64,
    pub c_w: f64,
    pub scalarization: Scalarization,
    pub preference: PreferenceSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryConfig {
    pub mode: QueryMode,
    pub lambda: f64,
    /// θ-samples used for mutual-information scores.
    pub samples: usize,
    /// Candidate pairs scored per round.
    pub n_pairs: usize,
    /// Override of the intra-mode target component (0-based).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intra_mode: Option<usize>,
}

/// Ground truth for simulated decision makers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextConfig {
    pub regime: Regime,
    pub rho: f64,
    pub eta_star: Vec<f64>,
    /// Dominant objective group per mode, 0-based objective indices.
    pub groups: Vec<Vec<usize>>,
    pub dominant_mass: f64,
    pub sigma_u: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Budgets {
    pub outer_iterations: usize,
    pub n_init: usize,
    pub svi_steps: usize,
    pub svi_lr: f64,
    pub svi_mc_samples: usize,
    pub ei_mc_samples: usize,
    pub ei_restarts: usize,
    pub ei_max_evals: usize,
    pub u_best_samples: usize,
    pub gp_restarts: usize,
    pub gp_refit_period: usize,
    pub reference_samples: usize,
    pub summary_samples: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Self {
            outer_iterations: 50,
            n_init: 5,
            svi_steps: 500,
            svi_lr: 1e-3,
            svi_mc_samples: 8,
            ei_mc_samples: 12,
            ei_restarts: 10,
            ei_max_evals: 400,
            u_best_samples: 64,
            gp_restarts: 5,
            gp_refit_period: 3,
            reference_samples: 500,
            summary_samples: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub model: ModelConfig,
    pub query: QueryConfig,
    pub context: ContextConfig,
    pub budgets: Budgets,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    /// Evaluate the regret-decomposition terms every iteration.
    #[serde(default)]
    pub theory: bool,
    /// Store wall-clock seconds in run records (breaks byte-identical reruns).
    #[serde(default)]
    pub record_timing: bool,
    #[serde(default)]
    pub oracle: OracleKind,
}

/// Policy ids accepted by experiment grids: the five query modes plus the
/// fixed-preference and weighted-sum baselines.
pub const POLICY_IDS: [&str; 7] = [
    "random",
    "clusterless",
    "inter",
    "intra",
    "hybrid",
    "fixed-preference",
    "weighted-sum",
];

fn paired_groups(l: usize) -> Vec<Vec<usize>> {
    (0..l / 2).map(|g| vec![2 * g, 2 * g + 1]).collect()
}

impl RunConfig {
    /// Defaults for a named benchmark, `None` for unknown ids.
    pub fn for_problem(id: &str) -> Option<Self> {
        let (l, d, eta_star, rho, sigma_u) = match id {
            "dtlz2" => (6, 7, vec![0.5, 0.3, 0.2], 0.5, 0.02),
            "wfg9" => (8, 34, vec![0.50, 0.25, 0.15, 0.10], 0.5, 0.02),
            // objectives/dims are replaced by the table's shape at load time
            "tabular" => (6, 1, vec![0.40, 0.35, 0.25], 0.8, 0.1),
            _ => return None,
        };
        let k_star = eta_star.len();
        Some(Self {
            problem: ProblemConfig {
                id: id.to_owned(),
                objectives: l,
                dims: d,
                table: None,
                observation_noise: 0.0,
            },
            model: ModelConfig {
                truncation: k_star + 1,
                alpha: 1.0,
                beta_dir: vec![1.0; l],
                sigma_u,
                c_w: 0.01,
                scalarization: Scalarization::Chebyshev,
                preference: PreferenceSource::Learned,
            },
            query: QueryConfig {
                mode: QueryMode::Hybrid,
                lambda: 0.5,
                samples: 64,
                n_pairs: 200,
                intra_mode: None,
            },
            context: ContextConfig {
                regime: Regime::Persistent,
                rho,
                eta_star,
                groups: paired_groups(l).into_iter().take(k_star).collect(),
                dominant_mass: 0.8,
                sigma_u,
            },
            budgets: Budgets::default(),
            seed: 0,
            output_dir: None,
            theory: false,
            record_timing: false,
            oracle: OracleKind::Simulated,
        })
    }

    /// Merge a (possibly partial) JSON document over the defaults of its problem.
    pub fn from_value(doc: &Value) -> Result<Self> {
        let id = doc
            .pointer("/problem/id")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Config(vec!["problem.id: missing".into()]))?;
        let base = Self::for_problem(id).ok_or_else(|| {
            Error::Config(vec![format!(
                "problem.id: unknown problem {id:?} (valid: dtlz2, wfg9, tabular)"
            )])
        })?;
        let mut merged = serde_json::to_value(&base).expect("config serialises");
        // objective count drives vector-valued defaults
        if let Some(l) = doc.pointer("/problem/objectives").and_then(Value::as_u64) {
            if doc.pointer("/model/beta_dir").is_none() {
                merged["model"]["beta_dir"] = serde_json::json!(vec![1.0; l as usize]);
            }
        }
        merge(&mut merged, doc);
        let cfg: RunConfig = serde_json::from_value(merged)
            .map_err(|e| Error::Config(vec![format!("schema: {e}")]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply a dotted-key override such as `query.mode=inter`.
    ///
    /// The value is parsed as JSON when possible and taken as a string otherwise.
    pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(vec![format!("override {assignment:?}: expected key=value")]))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
        let mut node = doc;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            if !node.is_object() {
                *node = Value::Object(Default::default());
            }
            let obj = node.as_object_mut().expect("object");
            if i + 1 == parts.len() {
                obj.insert((*part).to_owned(), value);
                return Ok(());
            }
            node = obj.entry((*part).to_owned()).or_insert(Value::Object(Default::default()));
        }
        Err(Error::Config(vec![format!("override {assignment:?}: empty key")]))
    }

    /// Check every invariant, reporting all offending fields at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let mut need = |ok: bool, msg: String| {
            if !ok {
                errs.push(msg);
            }
        };
        let l = self.problem.objectives;
        let k_star = self.context.eta_star.len();
        need(l >= 2, format!("problem.objectives: {l} < 2"));
        need(self.problem.dims >= 1, "problem.dims: must be >= 1".into());
        match self.problem.id.as_str() {
            "dtlz2" => {
                need(l == 6, format!("problem.objectives: dtlz2 has 6 objectives, got {l}"));
                need(self.problem.dims == 7, format!("problem.dims: dtlz2 has 7 variables, got {}", self.problem.dims));
            }
            "wfg9" => {
                need(l == 8, format!("problem.objectives: wfg9 has 8 objectives, got {l}"));
                need(self.problem.dims == 34, format!("problem.dims: wfg9 has 34 variables, got {}", self.problem.dims));
            }
            "tabular" => need(self.problem.table.is_some(), "problem.table: required for tabular problems".into()),
            other => need(false, format!("problem.id: unknown problem {other:?}")),
        }
        need(
            self.problem.observation_noise >= 0.0,
            "problem.observation_noise: must be >= 0".into(),
        );

        let m = &self.model;
        need(m.truncation >= 1, "model.truncation: must be >= 1".into());
        need(m.alpha > 0.0, format!("model.alpha: {} must be > 0", m.alpha));
        need(
            m.beta_dir.len() == l,
            format!("model.beta_dir: length {} != objectives {l}", m.beta_dir.len()),
        );
        need(m.beta_dir.iter().all(|b| *b > 0.0), "model.beta_dir: entries must be > 0".into());
        need(m.sigma_u > 0.0, format!("model.sigma_u: {} must be > 0", m.sigma_u));
        need(
            m.c_w > 0.0 && m.c_w * l as f64 <= 1.0,
            format!("model.c_w: {} must lie in (0, 1/L]", m.c_w),
        );

        let q = &self.query;
        need((0.0..=1.0).contains(&q.lambda), format!("query.lambda: {} not in [0,1]", q.lambda));
        need(q.samples >= 1, "query.samples: must be >= 1".into());
        need(q.n_pairs >= 1, "query.n_pairs: must be >= 1".into());
        if let Some(c) = q.intra_mode {
            need(c < m.truncation, format!("query.intra_mode: {c} >= truncation {}", m.truncation));
        }

        let c = &self.context;
        need((0.0..1.0).contains(&c.rho), format!("context.rho: {} not in [0,1)", c.rho));
        need(k_star >= 1, "context.eta_star: empty".into());
        need(
            c.eta_star.iter().all(|p| (0.0..=1.0).contains(p)),
            "context.eta_star: entries must be probabilities".into(),
        );
        need(
            (c.eta_star.iter().sum::<f64>() - 1.0).abs() <= 1e-9,
            "context.eta_star: must sum to 1".into(),
        );
        need(
            c.groups.len() == k_star,
            format!("context.groups: {} groups for {k_star} modes", c.groups.len()),
        );
        need(
            c.groups.iter().flatten().all(|&i| i < l),
            "context.groups: objective index out of range".into(),
        );
        need(c.groups.iter().all(|g| !g.is_empty()), "context.groups: empty group".into());
        need(
            c.dominant_mass > 0.0 && c.dominant_mass < 1.0,
            format!("context.dominant_mass: {} not in (0,1)", c.dominant_mass),
        );
        need(c.sigma_u > 0.0, "context.sigma_u: must be > 0".into());

        let b = &self.budgets;
        for (name, v) in [
            ("budgets.outer_iterations", b.outer_iterations),
            ("budgets.n_init", b.n_init),
            ("budgets.svi_steps", b.svi_steps),
            ("budgets.svi_mc_samples", b.svi_mc_samples),
            ("budgets.ei_mc_samples", b.ei_mc_samples),
            ("budgets.ei_restarts", b.ei_restarts),
            ("budgets.ei_max_evals", b.ei_max_evals),
            ("budgets.u_best_samples", b.u_best_samples),
            ("budgets.gp_restarts", b.gp_restarts),
            ("budgets.gp_refit_period", b.gp_refit_period),
            ("budgets.reference_samples", b.reference_samples),
            ("budgets.summary_samples", b.summary_samples),
        ] {
            need(v >= 1, format!("{name}: must be >= 1"));
        }
        need(b.n_init >= 2, "budgets.n_init: at least 2 initial designs are needed".into());
        need(b.svi_lr > 0.0, "budgets.svi_lr: must be > 0".into());

        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn k_star(&self) -> usize {
        self.context.eta_star.len()
    }

    /// Grid policy id of this configuration, see [`POLICY_IDS`].
    pub fn policy_id(&self) -> &'static str {
        match (self.model.preference, self.model.scalarization) {
            (PreferenceSource::FixedTruth, _) => "fixed-preference",
            (_, Scalarization::WeightedSum) => "weighted-sum",
            _ => self.query.mode.name(),
        }
    }

    /// Write the fields selecting policy `id` into a config document.
    pub fn apply_policy(doc: &mut Value, id: &str) -> Result<()> {
        let (mode, scalarization, preference) = match id {
            "fixed-preference" => ("hybrid", "chebyshev", "fixed_truth"),
            "weighted-sum" => ("hybrid", "weighted_sum", "learned"),
            other => match other.parse::<QueryMode>() {
                Ok(m) => (m.name(), "chebyshev", "learned"),
                Err(_) => {
                    return Err(Error::Config(vec![format!(
                        "policy: unknown policy {id:?} (valid: {})",
                        POLICY_IDS.join(", ")
                    )]))
                }
            },
        };
        for (key, v) in [
            ("query.mode", mode),
            ("model.scalarization", scalarization),
            ("model.preference", preference),
        ] {
            Self::apply_override(doc, &format!("{key}=\"{v}\""))?;
        }
        Ok(())
    }
}

fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn defaults_validate() {
        for id in ["dtlz2", "wfg9"] {
            RunConfig::for_problem(id).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn dtlz2_defaults_match_published_setup() {
        let c = RunConfig::for_problem("dtlz2").unwrap();
        assert_eq!(c.context.eta_star, vec![0.5, 0.3, 0.2]);
        assert_eq!(c.context.groups, vec![vec![0, 1], vec![2, 3], vec![4, 5]]);
        assert_eq!(c.context.rho, 0.5);
        assert_eq!(c.model.sigma_u, 0.02);
        assert_eq!(c.budgets.svi_steps, 500);
        assert_eq!(c.budgets.ei_mc_samples, 12);
        assert_eq!(c.budgets.ei_restarts, 10);
    }

    #[test]
    fn partial_document_merges_over_defaults() {
        let doc = json!({"problem": {"id": "dtlz2"}, "query": {"mode": "inter"}, "seed": 9});
        let c = RunConfig::from_value(&doc).unwrap();
        assert_eq!(c.query.mode, QueryMode::Inter);
        assert_eq!(c.seed, 9);
        assert_eq!(c.query.lambda, 0.5);
    }

    #[test]
    fn every_bad_field_is_listed() {
        let doc = json!({
            "problem": {"id": "dtlz2", "objectives": 5},
            "query": {"lambda": 1.5},
            "context": {"rho": 1.0}
        });
        let err = RunConfig::from_value(&doc).unwrap_err().to_string();
        assert!(err.contains("problem.objectives"), "{err}");
        assert!(err.contains("query.lambda"), "{err}");
        assert!(err.contains("context.rho"), "{err}");
    }

    #[test]
    fn unknown_mode_is_schema_error() {
        let doc = json!({"problem": {"id": "dtlz2"}, "query": {"mode": "greedy"}});
        let err = RunConfig::from_value(&doc).unwrap_err().to_string();
        assert!(err.contains("greedy") || err.contains("unknown variant"), "{err}");
    }

    #[test]
    fn dotted_overrides() {
        let mut doc = json!({"problem": {"id": "dtlz2"}});
        RunConfig::apply_override(&mut doc, "query.mode=intra").unwrap();
        RunConfig::apply_override(&mut doc, "budgets.outer_iterations=3").unwrap();
        let c = RunConfig::from_value(&doc).unwrap();
        assert_eq!(c.query.mode, QueryMode::Intra);
        assert_eq!(c.budgets.outer_iterations, 3);
        assert!(RunConfig::apply_override(&mut doc, "nokey").is_err());
    }
}
