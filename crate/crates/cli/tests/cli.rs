use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hardquad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hardquad"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn hardquad")
}

fn stdout_json(o: &Output) -> serde_json::Value {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("json on stdout")
}

fn body(path: &Path) -> String {
    let text = fs::read_to_string(path).unwrap();
    assert!(text.starts_with("# hardquad v1 generated_at_unix="), "{}", path.display());
    text.lines().skip(1).collect::<Vec<_>>().join("\n")
}

#[test]
fn gen_is_deterministic_in_seed() {
    let a = stdout_json(&hardquad(&["gen", "--d", "40", "--lambda", "2", "--seed", "7"]));
    let b = stdout_json(&hardquad(&["gen", "--d", "40", "--lambda", "2", "--seed", "7"]));
    assert_eq!(a, b);
    assert_eq!(a["params"]["d"], 40);
    assert_eq!(a["u"].as_array().unwrap().len(), 40);
}

#[test]
fn config_keys_override_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.json");
    fs::write(&cfg, r#"{"d": 60, "lambda": 1.9}"#).unwrap();
    let v = stdout_json(&hardquad(&["gen", "--d", "40", "--lambda", "2", "--seed", "3", "--config", cfg.to_str().unwrap()]));
    assert_eq!(v["params"]["d"], 60);
    assert_eq!(v["params"]["lambda"], 1.9);
}

#[test]
fn replica_point_and_table() {
    let v = stdout_json(&hardquad(&["replica", "--rho", "2", "--mu", "0"]));
    let q = v["point"]["q_star"].as_f64().unwrap();
    assert!((q - 0.5).abs() < 1e-12, "{q}");
    let o = hardquad(&["replica", "--lambdas", "1.1,1.5"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert!(lines[0].starts_with("# hardquad v1"));
    assert!(lines[1].starts_with("lambda,tau0,rho,mu,q_star"));
    assert_eq!(lines.len(), 4);
}

#[test]
fn solve_reports_queries_within_budget() {
    let v = stdout_json(&hardquad(&["solve", "--d", "200", "--lambda", "1.5", "--solver", "cg", "--budget", "60", "--seed", "2"]));
    let used = v["result"]["queries_used"].as_u64().unwrap();
    assert!(used <= 60);
    assert!(v["result"]["rel_err"].as_f64().unwrap() < 1e-6);
}

#[test]
fn potential_trace_is_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    let o = hardquad(&[
        "potential", "--d", "300", "--lambda", "1.3", "--rounds", "5", "--solver", "cg", "--seed", "2", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = fs::read_to_string(dir.path().join("trace.jsonl")).unwrap();
    let rows: Vec<serde_json::Value> = trace.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(!rows.is_empty() && rows.len() <= 6);
    let phis: Vec<f64> = rows.iter().map(|r| r["phi"].as_f64().unwrap()).collect();
    assert!(phis.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    let sched: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("potential.json")).unwrap()).unwrap();
    assert_eq!(sched["schedule"]["taus"].as_array().unwrap().len(), 7);
}

#[test]
fn sweep_from_config_is_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.json");
    fs::write(
        &cfg,
        r#"{"name": "tiny", "grid": [{"d": 80, "deformation": {"lambda": 1.5}, "tau0": {"fixed": 0.25}, "solvers": ["cg", "gd"], "budget": 200}]}"#,
    )
    .unwrap();
    let mut bodies = Vec::new();
    for threads in ["1", "2"] {
        let out = dir.path().join(format!("t{threads}"));
        let o = hardquad(&[
            "sweep", "--config", cfg.to_str().unwrap(), "--trials", "3", "--seed", "11", "--threads", threads, "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        bodies.push(body(&out.join("tiny.csv")));
    }
    assert_eq!(bodies[0], bodies[1]);
    assert_eq!(bodies[0].lines().count(), 4);
}

#[test]
fn sweep_without_grid_fails() {
    let o = hardquad(&["sweep"]);
    assert!(!o.status.success());
}

#[test]
fn verify_quick_subset_exits_by_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let o = hardquad(&["verify", "--quick", "--only", "1,2", "--out", dir.path().to_str().unwrap()]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(o.status.success(), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("criterion")).count(), 2, "{text}");
    assert!(dir.path().join("claims.csv").exists());
}

#[test]
fn bad_parameters_are_rejected() {
    let o = hardquad(&["gen", "--d", "40", "--lambda", "0.9"]);
    assert_eq!(o.status.code(), Some(2));
    let o = hardquad(&["mmse-mc", "--d", "40"]);
    assert_eq!(o.status.code(), Some(2));
}
