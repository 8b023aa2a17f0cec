use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use mixbo::{Regime, RunConfig};
use serde_json::Value;

/// One experiment: a fully resolved config and where its outputs go,
/// relative to the output root.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub config: RunConfig,
    pub rel_dir: PathBuf,
}

impl Cell {
    pub fn new(config: RunConfig) -> Self {
        let rel_dir = PathBuf::from(format!("{}-{}", config.problem.id, config.context.regime.name()))
            .join(config.policy_id())
            .join(config.seed.to_string());
        Self { config, rel_dir }
    }
}

/// Expand a config document into grid cells.
///
/// A document with a `base` key is a grid: `base` is a partial run config and
/// the optional `policies`, `regimes` and `seeds` lists multiply it out
/// (`seeds` may also be a count). Any other document is a single run config.
/// `overrides` are dotted `key=value` assignments applied to the base, and
/// `seed` replaces the seed list.
pub fn expand(doc: &Value, overrides: &[String], seed: Option<u64>) -> Result<Vec<Cell>> {
    let (mut base, policies, regimes, seeds) = match doc.get("base") {
        Some(base) => (
            base.clone(),
            string_list(doc, "policies")?,
            string_list(doc, "regimes")?,
            seed_list(doc)?,
        ),
        None => (doc.clone(), None, None, None),
    };
    for o in overrides {
        RunConfig::apply_override(&mut base, o)?;
    }
    let seeds = match (seed, seeds) {
        (Some(s), _) => vec![s],
        (None, Some(list)) => list,
        (None, None) => vec![base.get("seed").and_then(Value::as_u64).unwrap_or(0)],
    };
    let policies: Vec<Option<String>> = match policies {
        Some(p) => p.into_iter().map(Some).collect(),
        None => vec![None],
    };
    let regimes: Vec<Option<Regime>> = match regimes {
        Some(r) => r
            .iter()
            .map(|name| match name.as_str() {
                "iid" => Ok(Some(Regime::Iid)),
                "persistent" => Ok(Some(Regime::Persistent)),
                other => bail!("regimes: unknown regime {other:?} (valid: iid, persistent)"),
            })
            .collect::<Result<_>>()?,
        None => vec![None],
    };

    let mut cells = Vec::new();
    let mut errors = Vec::new();
    for policy in &policies {
        for regime in &regimes {
            let mut d = base.clone();
            if let Some(p) = policy {
                if let Err(e) = RunConfig::apply_policy(&mut d, p) {
                    errors.push(e.to_string());
                    continue;
                }
            }
            if let Some(r) = regime {
                RunConfig::apply_override(&mut d, &format!("context.regime=\"{}\"", r.name()))?;
            }
            for s in &seeds {
                d["seed"] = Value::from(*s);
                match RunConfig::from_value(&d) {
                    Ok(cfg) => cells.push(Cell::new(cfg)),
                    Err(e) => errors.push(e.to_string()),
                }
            }
        }
    }
    errors.dedup();
    if !errors.is_empty() {
        bail!("{}", errors.join("\n"));
    }
    let mut dirs: Vec<&PathBuf> = cells.iter().map(|c| &c.rel_dir).collect();
    dirs.sort();
    if let Some(w) = dirs.windows(2).find(|w| w[0] == w[1]) {
        bail!("two grid cells share the output directory {}", w[0].display());
    }
    if cells.is_empty() {
        bail!("the grid is empty");
    }
    Ok(cells)
}

fn string_list(doc: &Value, key: &str) -> Result<Option<Vec<String>>> {
    match doc.get(key) {
        None => Ok(None),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| v.as_str().map(str::to_owned).with_context(|| format!("{key}: entries must be strings")))
            .collect::<Result<_>>()
            .map(Some),
        Some(_) => bail!("{key}: expected a list of strings"),
    }
}

fn seed_list(doc: &Value) -> Result<Option<Vec<u64>>> {
    match doc.get("seeds") {
        None => Ok(None),
        Some(Value::Number(n)) => {
            let n = n.as_u64().context("seeds: expected a count or a list")?;
            Ok(Some((0..n).collect()))
        }
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| v.as_u64().context("seeds: entries must be non-negative integers"))
            .collect::<Result<_>>()
            .map(Some),
        Some(_) => bail!("seeds: expected a count or a list"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn grid_multiplies_out() {
        let doc = json!({
            "base": {"problem": {"id": "dtlz2"}},
            "policies": ["random", "hybrid", "weighted-sum"],
            "regimes": ["iid", "persistent"],
            "seeds": 3
        });
        let cells = expand(&doc, &[], None).unwrap();
        assert_eq!(cells.len(), 18);
        assert!(cells.iter().any(|c| c.rel_dir == std::path::Path::new("dtlz2-iid/weighted-sum/2")));
        let one = expand(&doc, &["budgets.outer_iterations=2".into()], Some(9)).unwrap();
        assert_eq!(one.len(), 6);
        assert!(one.iter().all(|c| c.config.seed == 9 && c.config.budgets.outer_iterations == 2));
    }

    #[test]
    fn plain_config_is_one_cell() {
        let cells = expand(&json!({"problem": {"id": "wfg9"}, "seed": 4}), &[], None).unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].rel_dir, std::path::Path::new("wfg9-persistent/hybrid/4"));
    }

    #[test]
    fn bad_entries_are_all_reported() {
        let doc = json!({"base": {"problem": {"id": "dtlz2"}, "model": {"alpha": -1.0}}, "policies": ["hybrid", "greedy"]});
        let msg = expand(&doc, &[], None).unwrap_err().to_string();
        assert!(msg.contains("greedy") && msg.contains("clusterless"), "{msg}");
        assert!(msg.contains("model.alpha"), "{msg}");
    }
}
