use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const EX1: &str = r#"{"p":[0.5,0.3,0.2],"q":[0.2,0.3,0.5],"n":2,"tau":1e-4}"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_multidraft"))
}

fn write_ex1(dir: &Path) -> PathBuf {
    let path = dir.join("ex1.json");
    std::fs::write(&path, EX1).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn accept_prints_alpha_star() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_ex1(dir.path());
    let v = json(&run(&["accept", "--input", input.to_str().unwrap()]));
    assert!((v["alpha_star"].as_f64().unwrap() - 0.86).abs() < 1e-12);
    assert_eq!(v["h_star"], serde_json::json!([2, 1]));
    assert!((v["psi"].as_f64().unwrap() + 0.14).abs() < 1e-12);
}

#[test]
fn dumped_maxflow_plan_passes_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_ex1(dir.path());
    let plan = dir.path().join("plan.tsv");
    let (i, p) = (input.to_str().unwrap(), plan.to_str().unwrap());
    let v = json(&run(&[
        "solve",
        "--method",
        "maxflow",
        "--input",
        i,
        "--dump-plan",
        p,
        "--json",
    ]));
    assert!((v["flow_value"].as_f64().unwrap() - 0.86).abs() < 1e-12);
    let text = std::fs::read_to_string(&plan).unwrap();
    assert!(text.lines().all(|l| l.split('\t').count() == 3));
    let out = run(&["oracle", "--check", "plan", "--plan", p, "--input", i]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn global_plan_fails_the_exact_plan_check() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_ex1(dir.path());
    let plan = dir.path().join("plan.tsv");
    let (i, p) = (input.to_str().unwrap(), plan.to_str().unwrap());
    let v = json(&run(&[
        "solve",
        "--input",
        i,
        "--dump-plan",
        p,
        "--emit-residuals",
        "--json",
    ]));
    assert!((v["residuals"]["0"]["residual"].as_f64().unwrap() - 0.14).abs() < 1e-12);
    let a = v["plan_acceptance"].as_f64().unwrap();
    assert!(a >= 0.86 - 10.0 * 1e-4);
    let out = run(&["oracle", "--check", "plan", "--plan", p, "--input", i]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn oracle_alpha_and_beta_pass() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_ex1(dir.path());
    let i = input.to_str().unwrap();
    for check in ["alpha", "beta"] {
        let out = run(&["oracle", "--check", check, "--input", i, "--json"]);
        assert_eq!(json(&out)["pass"], Value::Bool(true));
    }
}

#[test]
fn lp_and_maxflow_opt_agree() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_ex1(dir.path());
    let i = input.to_str().unwrap();
    let lp = json(&run(&[
        "solve", "--method", "lp-exact", "--input", i, "--json",
    ]));
    let opt = json(&run(&[
        "solve",
        "--method",
        "maxflow-opt",
        "--input",
        i,
        "--json",
    ]));
    let a = lp["lp_alpha"].as_f64().unwrap();
    assert!((a - opt["flow_value"].as_f64().unwrap()).abs() < 1e-9);
}

#[test]
fn slice_sums_to_one() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_ex1(dir.path());
    let out = run(&[
        "slice",
        "--omega",
        "1,2",
        "--input",
        input.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let total: f64 = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split('\t').nth(1).unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-9);
    assert!(text.contains("\"system\":\"inner\""));
}

#[test]
fn verify_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_ex1(dir.path());
    let i = input.to_str().unwrap();
    let a = run(&["verify", "--samples", "50", "--seed", "7", "--input", i]);
    let b = run(&[
        "verify",
        "--samples",
        "50",
        "--seed",
        "7",
        "--input",
        i,
        "--threads",
        "1",
    ]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(String::from_utf8(a.stdout).unwrap().lines().count(), 50);
}

#[test]
fn simulate_is_reproducible_up_to_timing() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_ex1(dir.path());
    let i = input.to_str().unwrap();
    let strip = |mut v: Value| {
        v.as_object_mut().unwrap().remove("timing");
        v
    };
    let a = strip(json(&run(&[
        "simulate",
        "--samples",
        "9000",
        "--seed",
        "3",
        "--input",
        i,
        "--json",
    ])));
    let b = strip(json(&run(&[
        "simulate",
        "--samples",
        "9000",
        "--seed",
        "3",
        "--input",
        i,
        "--json",
        "--threads",
        "2",
    ])));
    assert_eq!(a, b);
    assert!(a["empirical_acceptance"].as_f64().unwrap() > 0.8);
}

#[test]
fn multistep_reports_block_efficiency() {
    let v = json(&run(&[
        "multistep",
        "--vocab",
        "3",
        "--blocks",
        "200",
        "--method",
        "maxflow-opt",
        "--exhaustive",
        "--json",
    ]));
    let eff = v["block_efficiency"].as_f64().unwrap();
    assert!((1.0..=3.0).contains(&eff));
    assert!(v["exhaustive_l1"].as_f64().unwrap() < 1e-9);
}

#[test]
fn bench_csv_columns() {
    let out = run(&[
        "bench", "--ks", "3", "--ns", "2", "--trials", "2", "--vocab", "20", "--csv",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("k,n,method,mean_ms,median_ms,success_rate,alpha")
    );
    assert_eq!(lines.count(), 3);
}

#[test]
fn missing_input_is_an_error() {
    let out = run(&["accept"]);
    assert_eq!(out.status.code(), Some(2));
    let bad = run(&["solve", "--method", "nonsense"]);
    assert!(!bad.status.success());
}
