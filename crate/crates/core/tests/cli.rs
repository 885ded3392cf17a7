use serde_json::Value;
use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(name: &str) -> String {
    format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn scratch(name: &str) -> PathBuf {
    std::env::temp_dir().join(format!("fellbundle-cli-{}-{name}", std::process::id()))
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fellbundle"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exit code")
}

fn json(args: &[&str]) -> (i32, Value) {
    let mut full = vec!["--json"];
    full.extend_from_slice(args);
    let out = run(&full);
    let value = serde_json::from_slice(&out.stdout).expect("stdout is JSON");
    (out.status.code().unwrap(), value)
}

#[test]
fn validate_exit_codes() {
    for good in ["delta.json", "z2_line.json", "klein_cocycle.json", "compacts_1_2.json", "swap_action.json", "scalar_bimodule.json"] {
        assert_eq!(code(&["--samples", "10", "validate", &fixture(good)]), 0, "{good}");
    }
    assert_eq!(code(&["validate", &fixture("broken.json")]), 1);
    assert_eq!(code(&["validate", &fixture("pair2_to_delta.json")]), 2);
    assert_eq!(code(&["validate", &fixture("does_not_exist.json")]), 2);

    let bad = scratch("truncated.json");
    std::fs::write(&bad, "{\"arrows\": ").unwrap();
    assert_eq!(code(&["validate", bad.to_str().unwrap()]), 2);
    std::fs::remove_file(bad).ok();
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&[]), 2);
    assert_eq!(code(&["--tol", "-1", "validate", &fixture("delta.json")]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
}

#[test]
fn broken_groupoid_reports_a_witness() {
    let (exit, report) = json(&["validate", &fixture("broken.json")]);
    assert_eq!(exit, 1);
    assert_eq!(report["status"], "fail");
    let failing: Vec<&Value> = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["status"] != "pass")
        .collect();
    assert!(!failing.is_empty());
    assert_eq!(failing[0]["witness"].as_array().map(Vec::len), Some(3));
}

#[test]
fn norm_of_one_plus_u() {
    let (exit, report) = json(&["norm", &fixture("z2_section.json")]);
    assert_eq!(exit, 0);
    let reduced = report["facts"]["reduced_norm"].as_f64().unwrap();
    assert!((reduced - 2.0).abs() < 1e-9, "{reduced}");
}

#[test]
fn algebra_dimensions() {
    let (exit, report) = json(&["algebra", &fixture("compacts_1_2.json")]);
    assert_eq!(exit, 0);
    assert_eq!(report["facts"]["dim"], 9);
    assert_eq!(report["facts"]["center_dim"], 1);
    let (exit, report) = json(&["algebra", "--report", "dims,center,faithful", &fixture("klein_cocycle.json")]);
    assert_eq!(exit, 0);
    assert_eq!(report["facts"]["dim"], 4);
    assert_eq!(report["facts"]["center_dim"], 1);
}

#[test]
fn certificate_round_trip_and_tampering() {
    let cert = scratch("cert.json");
    let c = cert.to_str().unwrap();
    let args = ["--out", c, "morita", "theorem42", &fixture("compacts_1_2.json"), &fixture("pair2_to_delta.json")];
    assert_eq!(code(&args), 0);
    assert_eq!(code(&["morita", "check", c]), 0);

    let mut value: Value = serde_json::from_str(&std::fs::read_to_string(&cert).unwrap()).unwrap();
    value["projections"][0][0][0] = serde_json::json!([0.5, 0.0]);
    std::fs::write(&cert, serde_json::to_string(&value).unwrap()).unwrap();
    assert_eq!(code(&["morita", "check", c]), 1);

    std::fs::write(&cert, "[1, 2, 3]").unwrap();
    assert_eq!(code(&["morita", "check", c]), 2);
    std::fs::remove_file(cert).ok();
}

#[test]
fn construct_writes_a_valid_bundle() {
    let out = scratch("klein_bundle.json");
    let o = out.to_str().unwrap();
    assert_eq!(code(&["--out", o, "construct", "cocycle", &fixture("klein_cocycle.json")]), 0);
    let (exit, report) = json(&["--samples", "10", "validate", o]);
    assert_eq!(exit, 0);
    assert_eq!(report["facts"]["bundle_kind"], "concrete");
    std::fs::remove_file(out).ok();
}

#[test]
fn reports_are_deterministic() {
    let args = ["--seed", "11", "--samples", "20", "check-expectation", &fixture("z2_line.json")];
    let (a, b) = (run(&args), run(&args));
    assert_eq!(a.status.code(), Some(0));
    let mut with_json = vec!["--json"];
    with_json.extend_from_slice(&args);
    assert_eq!(run(&with_json).stdout, run(&with_json).stdout);
    assert_eq!(a.status.code(), b.status.code());
}

#[test]
fn tolerance_induced_failures_are_flagged() {
    let (exit, report) = json(&["--tol", "1e-15", "selftest"]);
    assert_eq!(exit, 1);
    assert_eq!(report["status"], "tolerance_induced");
    assert_eq!(report["config"]["tol"].as_f64(), Some(1e-15));
    let (exit, report) = json(&["selftest"]);
    assert_eq!(exit, 0);
    assert_eq!(report["status"], "pass");
}

#[test]
fn stabilize_reports_corner_dims() {
    let (exit, report) = json(&["--samples", "5", "morita", "stabilize", &fixture("z2_line.json")]);
    assert_eq!(exit, 0);
    assert_eq!(report["status"], "pass");
    assert_eq!(report["facts"]["ambient_dim"], 18);
}
