use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;
use tempfile::TempDir;

fn advgame(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_advgame"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn advgame")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = advgame(dir, args);
    assert!(
        out.status.success(),
        "advgame {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas/v1")
}

fn assert_valid(schema: &str, doc: &Value) {
    let s: Value = read_json(&schema_dir().join(format!("{schema}.schema.json")));
    let compiled = jsonschema::JSONSchema::compile(&s).expect("schema compiles");
    if let Err(errors) = compiled.validate(doc) {
        let msgs: Vec<String> = errors.map(|e| format!("{} at {}", e, e.instance_path)).collect();
        panic!("{schema} schema rejects output: {msgs:#?}");
    };
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let first = text.lines().find(|l| l.starts_with('{')).expect("JSON error line on stderr");
    serde_json::from_str(first).expect("error line parses")
}

fn get(v: &Value, path: &str) -> f64 {
    v.pointer(path).and_then(Value::as_f64).unwrap_or_else(|| panic!("missing {path} in {v}"))
}

/// Classifier and naive-attack files shared by several tests.
struct Fixture {
    dir: TempDir,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        ok(dir.path(), &["best-response", "--player", "classifier", "--out", "clf.json"]);
        ok(
            dir.path(),
            &["best-response", "--player", "adversary", "--opponent", "clf.json", "--out", "adv.json"],
        );
        Fixture { dir }
    })
}

#[test]
fn gen_synthetic_row_counts() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["gen-synthetic", "--n-per-class", "0", "--out", "empty.csv"]);
    let text = std::fs::read_to_string(dir.path().join("empty.csv")).unwrap();
    assert_eq!(text, "x1,x2,label\n");
    ok(dir.path(), &["gen-synthetic", "--n-per-class", "500", "--out", "s.csv"]);
    let text = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    assert_eq!(text.lines().count(), 1001);
}

#[test]
fn refit_recovers_synthetic_parameters() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["gen-synthetic", "--n-per-class", "100000", "--seed", "9", "--out", "big.csv"]);
    ok(dir.path(), &["fit", "--input", "big.csv", "--out", "m.json"]);
    let m = read_json(&dir.path().join("m.json"));
    assert_valid("model", &m);
    let expect = [
        ("/mu_pos/0", 3.0),
        ("/mu_pos/1", 3.0),
        ("/mu_neg/0", 0.0),
        ("/mu_neg/1", 0.0),
        ("/sigma_pos/0/0", 1.0),
        ("/sigma_pos/1/1", 0.2),
        ("/sigma_pos/0/1", 0.0),
        ("/sigma_neg/0/0", 0.2),
        ("/sigma_neg/1/1", 1.0),
        ("/sigma_neg/0/1", 0.0),
        ("/positive_prior", 0.5),
    ];
    for (path, v) in expect {
        assert!((get(&m, path) - v).abs() <= 0.1, "{path}: {} vs {v}", get(&m, path));
    }
}

#[test]
fn fit_with_whitening_writes_transform() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["gen-synthetic", "--n-per-class", "200", "--out", "s.csv"]);
    ok(dir.path(), &["fit", "--input", "s.csv", "--whiten", "--out", "mw.json"]);
    assert_valid("model", &read_json(&dir.path().join("mw.json")));
    assert_valid("whiten_transform", &read_json(&dir.path().join("mw.whiten.json")));
    // the fitted model can drive a command directly
    ok(
        dir.path(),
        &["best-response", "--player", "classifier", "--model", "fit:s.csv", "--whiten", "--out", "c.json"],
    );
}

#[test]
fn fit_errors_are_reported() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("nolabel.csv"), "a,b\n1,2\n3,4\n").unwrap();
    let out = advgame(dir.path(), &["fit", "--input", "nolabel.csv"]);
    assert!(!out.status.success());
    let err = stderr_json(&out);
    assert_eq!(err["error"], "parse");
    assert!(err["message"].as_str().unwrap().contains("label"));

    std::fs::write(dir.path().join("01.csv"), "a,label\n1,0\n2,1\n3,0\n4,1\n").unwrap();
    let out = advgame(dir.path(), &["fit", "--input", "01.csv"]);
    assert!(!out.status.success());
    assert_eq!(stderr_json(&out)["error"], "parse");
    ok(dir.path(), &["fit", "--input", "01.csv", "--labels01"]);
}

#[test]
fn classifier_best_response_baseline() {
    let f = fixture();
    let v = read_json(&f.dir.path().join("clf.json"));
    assert_valid("best_response", &v);
    assert!((get(&v, "/metrics/true_negative") - 0.9900).abs() <= 1e-3);
    assert!((get(&v, "/metrics/true_positive") - 0.9993).abs() <= 1e-3);
    assert_eq!(v["response"]["route"], "cone_program");
}

#[test]
fn naive_attack_end_to_end() {
    let f = fixture();
    let v = read_json(&f.dir.path().join("adv.json"));
    assert_valid("best_response", &v);
    assert!(get(&v, "/metrics/manipulation_cost") <= 2.0 * (1.0 + 1e-6));
    let fn_ = get(&v, "/metrics/false_negative");
    assert!((fn_ - 0.3449).abs() <= 0.01, "naive false negative {fn_} vs 0.3449 ± 0.01");
}

#[test]
fn eval_constant_sum_and_schema() {
    let f = fixture();
    let out = ok(f.dir.path(), &["eval", "--adversary", "adv.json", "--classifier", "clf.json"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_valid("eval", &v);
    assert!((get(&v, "/metrics/true_positive") + get(&v, "/metrics/false_negative") - 1.0).abs() <= 1e-12);
    assert_eq!(v["adversary_feasible"], true);
    assert_eq!(v["classifier_feasible"], true);
}

fn simulate_vs_eval() -> (Value, Value) {
    let f = fixture();
    let dir = f.dir.path();
    let args = ["--adversary", "adv.json", "--classifier", "clf.json"];
    let e = ok(dir, &[&["eval"][..], &args].concat());
    let s = ok(dir, &[&["simulate", "--samples", "1000000", "--seed", "3"][..], &args].concat());
    let e: Value = serde_json::from_slice(&e.stdout).unwrap();
    let s: Value = serde_json::from_slice(&s.stdout).unwrap();
    assert_valid("simulate", &s);
    (e, s)
}

#[test]
fn simulated_rates_agree_with_eval() {
    let (e, s) = simulate_vs_eval();
    let n = get(&s, "/rates/n_samples");
    for (sim, closed) in [("/rates/tp", "/metrics/true_positive"), ("/rates/tn", "/metrics/true_negative")] {
        let p = get(&e, closed);
        let se = (p * (1.0 - p) / n).sqrt();
        assert!((get(&s, sim) - p).abs() <= 4.0 * se, "{sim}: {} vs {p}", get(&s, sim));
    }
}

#[test]
fn simulated_cost_agrees_with_eval() {
    let (e, s) = simulate_vs_eval();
    let c = get(&e, "/metrics/manipulation_cost");
    let m = get(&s, "/rates/cost_mean");
    assert!(
        (m - c).abs() <= 4.0 * get(&s, "/rates/std_err_cost"),
        "simulated cost {m} vs closed form {c}"
    );
}

#[test]
fn simulate_scatter_and_determinism() {
    let f = fixture();
    let dir = f.dir.path();
    let args = [
        "simulate", "--adversary", "adv.json", "--classifier", "clf.json", "--samples", "1000", "--scatter",
        "sc.csv", "--scatter-per-class", "500",
    ];
    let a = ok(dir, &args);
    let sc = std::fs::read_to_string(dir.join("sc.csv")).unwrap();
    assert!(sc.starts_with("x1,x2,class,manipulated\n"));
    assert_eq!(sc.lines().count(), 1501);
    let b = ok(dir, &args);
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(sc, std::fs::read_to_string(dir.join("sc.csv")).unwrap());
}

#[test]
fn boundary_points_lie_on_the_line() {
    let f = fixture();
    let out = ok(
        f.dir.path(),
        &["boundary", "--classifier", "clf.json", "--lo=-2,-2", "--hi", "6,6", "--count", "50"],
    );
    let clf = read_json(&f.dir.path().join("clf.json"));
    let a = [get(&clf, "/response/policy/weights/0"), get(&clf, "/response/policy/weights/1")];
    let b = get(&clf, "/response/policy/bias");
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x1,x2"));
    let pts: Vec<(f64, f64)> = lines
        .map(|l| {
            let (x, y) = l.split_once(',').unwrap();
            (x.parse().unwrap(), y.parse().unwrap())
        })
        .collect();
    assert_eq!(pts.len(), 50);
    for (x, y) in pts {
        assert!((a[0] * x + a[1] * y + b).abs() <= 1e-12);
    }
}

#[test]
fn boundary_rejects_zero_weights() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("z.json"), r#"{"dim":2,"weights":[0.0,0.0],"bias":1.0}"#).unwrap();
    let out = advgame(dir.path(), &["boundary", "--classifier", "z.json", "--lo=-1,-1", "--hi", "1,1"]);
    assert!(!out.status.success());
    assert_eq!(stderr_json(&out)["error"], "degenerate_policy");
}

#[test]
fn invalid_config_is_rejected() {
    let dir = TempDir::new().unwrap();
    let out = advgame(dir.path(), &["best-response", "--player", "classifier", "--delta", "0.7"]);
    assert!(!out.status.success());
    assert_eq!(stderr_json(&out)["error"], "invalid_config");
}

fn equilibrium_run(dir: &Path, extra: &[&str]) -> (Value, Vec<Value>) {
    ok(dir, &[&["equilibrium", "--out", "eq.json", "--trace", "trace.jsonl"][..], extra].concat());
    let eq = read_json(&dir.join("eq.json"));
    assert_valid("equilibrium", &eq);
    let trace: Vec<Value> = std::fs::read_to_string(dir.join("trace.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    for rec in &trace {
        assert_valid("trace_record", rec);
    }
    (eq, trace)
}

fn synthetic_equilibrium() -> &'static (Value, Vec<Value>) {
    static EQ: OnceLock<(Value, Vec<Value>)> = OnceLock::new();
    EQ.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        equilibrium_run(dir.path(), &[])
    })
}

#[test]
fn equilibrium_trace_is_feasible() {
    let (eq, trace) = synthetic_equilibrium();
    assert_eq!(trace.len() as u64, eq["iterations"].as_u64().unwrap());
    for rec in trace {
        assert!(get(rec, "/cost") <= 2.0 * (1.0 + 1e-6));
        assert!(get(rec, "/tn") >= 0.99 - 1e-6);
        assert!((get(rec, "/tp") + get(rec, "/fn") - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn equilibrium_matches_reference_false_negative() {
    let (eq, _) = synthetic_equilibrium();
    let fn_ = get(eq, "/metrics/false_negative");
    assert!((get(eq, "/metrics/true_negative") - 0.99).abs() <= 1e-3);
    assert!((fn_ - 0.1526).abs() <= 0.02, "equilibrium false negative {fn_} vs 0.1526 ± 0.02");
}

#[test]
fn equilibrium_output_verifies() {
    let (eq, _) = synthetic_equilibrium();
    let adv = get(eq, "/verification/adv_gain");
    let clf = get(eq, "/verification/clf_gain");
    assert!(adv <= 0.01 && clf <= 0.01, "deviation gains adversary {adv}, classifier {clf}");
}

#[test]
fn zero_budget_equilibrium_collapses() {
    let dir = TempDir::new().unwrap();
    let (eq, _) = equilibrium_run(dir.path(), &["--epsilon", "0", "--max-iters", "30"]);
    let base = ok(dir.path(), &["best-response", "--player", "classifier"]);
    let base: Value = serde_json::from_slice(&base.stdout).unwrap();
    for m in ["true_positive", "false_negative", "true_negative", "manipulation_cost"] {
        let path = format!("/metrics/{m}");
        assert!((get(&eq, &path) - get(&base, &path)).abs() <= 1e-3, "{m}");
    }
    assert_eq!(eq["verification"]["is_equilibrium"], true);
}
