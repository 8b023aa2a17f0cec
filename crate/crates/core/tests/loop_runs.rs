use std::collections::HashSet;
use std::fs;

use mixbo::acquire::LoopState;
use mixbo::eval::write_metric_csvs;
use mixbo::experiment::Experiment;
use mixbo::oracle::SimulatedDm;
use mixbo::{save_run, RunConfig, RunRecord};
use serde_json::{json, Value};

fn quick(problem: &str, policy: &str, seed: u64, t: usize) -> RunConfig {
    let mut doc = json!({"problem": {"id": problem}, "seed": seed});
    RunConfig::apply_policy(&mut doc, policy).unwrap();
    for kv in [
        format!("budgets.outer_iterations={t}"),
        "budgets.svi_steps=60".into(),
        "budgets.ei_restarts=2".into(),
        "budgets.ei_max_evals=40".into(),
        "budgets.gp_restarts=2".into(),
        "budgets.summary_samples=100".into(),
        "budgets.reference_samples=200".into(),
        "query.samples=16".into(),
        "query.n_pairs=20".into(),
    ] {
        RunConfig::apply_override(&mut doc, &kv).unwrap();
    }
    RunConfig::from_value(&doc).unwrap()
}

fn artifacts(records: &[RunRecord], exp: &Experiment) -> Vec<(String, Vec<u8>)> {
    let dir = tempfile::tempdir().unwrap();
    save_run(records, &dir.path().join("records.jsonl")).unwrap();
    write_metric_csvs(dir.path(), records, exp.truth.as_ref()).unwrap();
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn same_seed_gives_byte_identical_artifacts() {
    let exp = Experiment::new(quick("dtlz2", "hybrid", 4, 3), None, None).unwrap();
    let a = artifacts(&exp.run_fresh().unwrap(), &exp);
    let b = artifacts(&exp.run_fresh().unwrap(), &exp);
    assert!(a.iter().any(|(n, _)| n == "regret.csv"));
    assert_eq!(a, b);

    let other = Experiment::new(quick("dtlz2", "hybrid", 5, 3), None, None).unwrap();
    assert_ne!(artifacts(&other.run_fresh().unwrap(), &other), a);
}

#[test]
fn records_are_consistent_with_the_problem() {
    let cfg = quick("dtlz2", "inter", 2, 4);
    let n0 = cfg.budgets.n_init;
    let exp = Experiment::new(cfg, None, None).unwrap();
    let records = exp.run_fresh().unwrap();
    assert_eq!(records.len(), 4);
    for (t, r) in records.iter().enumerate() {
        assert_eq!(r.iteration, t + 1);
        assert_eq!(r.outcome, exp.problem.evaluate(&r.design).unwrap().to_vec());
        let (i, j) = r.query;
        assert!(i != j && i < n0 + t + 1 && j < n0 + t + 1);
        assert!(matches!(r.mode_used, Some(m) if (1..=3).contains(&m)));
        assert!((r.eta_mean.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(r.aligned_errors.as_ref().unwrap().len(), 3);
        assert!(r.simple_regret.unwrap().is_finite());
        assert!(r.wall_clock_s.is_none());
    }
}

#[test]
fn interrupted_run_resumes_to_the_same_records() {
    let exp = Experiment::new(quick("dtlz2", "clusterless", 9, 4), None, None).unwrap();
    let straight = exp.run_fresh().unwrap();

    let (mut state, dm) = exp.start().unwrap();
    let mut dm = dm.unwrap();
    let mut saved: Option<(String, String)> = None;
    let stop = exp.run(&mut state, &mut dm, |s, d| {
        if s.records.len() == 2 {
            saved = Some((serde_json::to_string(s).unwrap(), serde_json::to_string(d).unwrap()));
            return Err(mixbo::Error::invalid("test", "interrupt"));
        }
        Ok(())
    });
    assert!(stop.is_err());
    let (s, d) = saved.unwrap();
    let mut state: LoopState = serde_json::from_str(&s).unwrap();
    let mut dm: SimulatedDm = serde_json::from_str(&d).unwrap();
    let resumed = exp.run(&mut state, &mut dm, |_, _| Ok(())).unwrap();
    assert_eq!(resumed, straight);
}

#[test]
fn baselines_run() {
    for policy in ["fixed-preference", "weighted-sum", "random", "intra"] {
        let cfg = quick("dtlz2", policy, 1, 2);
        assert_eq!(cfg.policy_id(), policy);
        let exp = Experiment::new(cfg, None, None).unwrap();
        assert_eq!(exp.run_fresh().unwrap().len(), 2, "{policy}");
    }
}

#[test]
fn unknown_policy_lists_the_valid_ones() {
    let mut doc = json!({"problem": {"id": "dtlz2"}});
    let err = RunConfig::apply_policy(&mut doc, "greedy").unwrap_err().to_string();
    for id in mixbo::POLICY_IDS {
        assert!(err.contains(id), "{err}");
    }
}

#[test]
fn tabular_pool_is_never_revisited() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("x1,x2,y1,y2,y3,y4,y5,y6\n");
    for r in 0..30 {
        let a = r as f64 / 29.0;
        let b = ((r * 7) % 30) as f64 / 29.0;
        let ys: Vec<String> = (0..6)
            .map(|m| format!("{:.6}", ((a + 0.3 * m as f64) * 3.1).sin().abs() + b * (m % 2) as f64))
            .collect();
        csv.push_str(&format!("{a:.6},{b:.6},{}\n", ys.join(",")));
    }
    fs::write(dir.path().join("pool.csv"), csv).unwrap();

    let mut doc: Value = json!({"problem": {"id": "tabular", "table": "pool.csv"}, "seed": 3});
    for kv in ["budgets.outer_iterations=6", "budgets.svi_steps=40", "budgets.summary_samples=100", "query.samples=16"] {
        RunConfig::apply_override(&mut doc, kv).unwrap();
    }
    let cfg = RunConfig::from_value(&doc).unwrap();
    let exp = Experiment::new(cfg, Some(dir.path()), None).unwrap();
    assert_eq!(exp.config.problem.dims, 2);
    let (mut state, dm) = exp.start().unwrap();
    let records = exp.run(&mut state, &mut dm.unwrap(), |_, _| Ok(())).unwrap();
    let rows: HashSet<usize> = state.design_rows.iter().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), state.designs.len());
    assert_eq!(records.len(), 6);
    assert!(records.iter().all(|r| r.simple_regret.unwrap() >= -1e-12));
}
