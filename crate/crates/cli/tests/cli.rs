use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mixbo::experiment::Experiment;
use mixbo::{load_run, RunConfig};
use mixbo_cli::runner::CHECKPOINT_FILE;
use mixbo_cli::{expand, run_cell, CellStatus, RunOptions};
use serde_json::{json, Value};

const QUICK: &[&str] = &[
    "budgets.svi_steps=60",
    "budgets.ei_restarts=2",
    "budgets.ei_max_evals=40",
    "budgets.gp_restarts=2",
    "budgets.summary_samples=100",
    "budgets.reference_samples=200",
    "query.samples=16",
    "query.n_pairs=20",
];

fn mixbo(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixbo"))
        .env("MIXBO_OUT", out)
        .env_remove("RUST_LOG")
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, doc: &Value) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, serde_json::to_string_pretty(doc).unwrap()).unwrap();
    p
}

fn quick_args<'a>(verb: &'a str, cfg: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![verb, "--config", cfg, "--workers", "2"];
    v.extend_from_slice(extra);
    v.extend_from_slice(QUICK);
    v
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn minimal_run_then_idempotent_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(
        tmp.path(),
        &json!({"problem": {"id": "dtlz2"}, "query": {"mode": "random"}, "budgets": {"outer_iterations": 2}, "seed": 0}),
    );
    let o = mixbo(&out, &quick_args("run", cfg.to_str().unwrap(), &[]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cell = out.join("dtlz2-persistent/random/0");
    assert_eq!(load_run(&cell.join("records.jsonl")).unwrap().len(), 2);
    for f in ["config.json", "regret.csv", "archetype_error.csv", "eta_kl.csv", "pref_errors.csv", "gating.csv"] {
        assert!(cell.join(f).exists(), "{f}");
    }
    assert!(!cell.join(CHECKPOINT_FILE).exists());
    let first = snapshot(&out);

    let o = mixbo(&out, &quick_args("run", cfg.to_str().unwrap(), &[]));
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("1 skipped"));
    assert_eq!(snapshot(&out), first);

    let o = mixbo(&out, &quick_args("run", cfg.to_str().unwrap(), &["--force"]));
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("1 completed"));
    assert_eq!(snapshot(&out), first);
}

#[test]
fn changed_config_over_finished_cell_needs_force() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), &json!({"problem": {"id": "dtlz2"}, "budgets": {"outer_iterations": 1}}));
    let c = cfg.to_str().unwrap();
    assert!(mixbo(&out, &quick_args("run", c, &[])).status.success());
    let o = mixbo(&out, &quick_args("run", c, &["model.alpha=2.0"]));
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--force"));
    assert!(mixbo(&out, &quick_args("run", c, &["--force", "model.alpha=2.0"])).status.success());
}

#[test]
fn unknown_policy_and_bad_fields_are_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), &json!({"base": {"problem": {"id": "dtlz2"}}, "policies": ["hybrid", "greedy"]}));
    let o = mixbo(&out, &["run", "--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    for id in mixbo::POLICY_IDS {
        assert!(err.contains(id), "{err}");
    }

    let cfg = write_config(
        tmp.path(),
        &json!({"problem": {"id": "dtlz2"}, "model": {"alpha": 0.0, "sigma_u": -1.0}, "query": {"lambda": 2.0}}),
    );
    let o = mixbo(&out, &["run", "--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    for field in ["model.alpha", "model.sigma_u", "query.lambda"] {
        assert!(err.contains(field), "{err}");
    }
    assert!(!out.exists());
}

#[test]
fn seeds_aggregate_into_tidy_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = mixbo(&out, &["aggregate"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("<seed>"));

    let cfg = write_config(
        tmp.path(),
        &json!({"base": {"problem": {"id": "dtlz2"}, "budgets": {"outer_iterations": 2}}, "policies": ["random", "clusterless"], "seeds": [0, 1, 2]}),
    );
    assert!(mixbo(&out, &quick_args("run", cfg.to_str().unwrap(), &[])).status.success());
    let o = mixbo(&out, &["aggregate"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let t = mixbo::record::CsvTable::read(&out.join("aggregate/regret.csv")).unwrap();
    assert_eq!(t.rows.len(), 2 * 2);
    assert!(t.rows.iter().all(|r| r[4] == "3"));
    let mean: f64 = t.rows[0][5].parse().unwrap();
    let direct: Vec<f64> = (0..3)
        .map(|s| {
            let recs = load_run(&out.join(format!("dtlz2-persistent/clusterless/{s}/records.jsonl"))).unwrap();
            recs[0].simple_regret.unwrap()
        })
        .collect();
    assert!((mean - direct.iter().sum::<f64>() / 3.0).abs() < 1e-12);
}

#[test]
fn theory_runs_and_refuses_configs_without_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), &json!({"problem": {"id": "dtlz2"}, "budgets": {"outer_iterations": 10}, "seed": 1}));
    let o = mixbo(&out, &quick_args("theory", cfg.to_str().unwrap(), &["--tuples", "2000"]));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{stdout}\n{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout.contains("mismatch-bound violations: 0"), "{stdout}");
    assert!(out.join("theory/dtlz2-persistent/hybrid/1/theory.csv").exists());
    assert!(out.join("theory/lipschitz.txt").exists());

    let human = write_config(tmp.path(), &json!({"problem": {"id": "dtlz2"}, "oracle": "human"}));
    let o = mixbo(&out, &["theory", "--config", human.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("human"));

    let tab = write_config(tmp.path(), &json!({"problem": {"id": "tabular", "table": "pool.csv"}}));
    let o = mixbo(&out, &["theory", "--config", tab.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("tabular"));
}

#[test]
fn interrupted_cell_resumes_from_its_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let mut doc = json!({"problem": {"id": "dtlz2"}, "budgets": {"outer_iterations": 4}, "seed": 5});
    for kv in QUICK {
        RunConfig::apply_override(&mut doc, kv).unwrap();
    }
    let cell = expand(&doc, &[], None).unwrap().remove(0);
    let opts = RunOptions {
        out: tmp.path().join("out"),
        force: false,
        workers: 1,
        base_dir: None,
    };

    let exp = Experiment::new(cell.config.clone(), None, None).unwrap();
    let straight = exp.run_fresh().unwrap();
    let (mut state, dm) = exp.start().unwrap();
    let mut dm = dm.unwrap();
    for _ in 0..2 {
        state.step(&exp.problem, &mut dm, exp.truth.as_ref()).unwrap();
    }
    let dir = opts.out.join(&cell.rel_dir);
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join(CHECKPOINT_FILE), serde_json::to_vec(&json!({"state": state, "dm": dm})).unwrap()).unwrap();

    assert_eq!(run_cell(&cell, &opts).unwrap(), CellStatus::Resumed { from: 2, rounds: 4 });
    assert_eq!(load_run(&dir.join("records.jsonl")).unwrap(), straight);
    assert_eq!(run_cell(&cell, &opts).unwrap(), CellStatus::Skipped);
}
