use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const FIXTURES: &[&str] = &[
    "ex2_1",
    "ex2_2",
    "ex5_1_uncontrolled",
    "ex5_1_controlled",
    "ex5_1_controlled_03",
    "ex5_1_controlled_06",
    "ex5_2_a1",
    "ex5_2_controlled",
    "ex5_3_controlled",
];

fn lvdelay(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lvdelay")).args(args).output().expect("binary runs")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(format!("{name}.cfg"))
}

fn scratch_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("lvdelay-test-{}-{tag}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn structured(args: &[&str]) -> (Value, i32) {
    let out = lvdelay(args);
    let code = out.status.code().unwrap();
    let v = serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("{e}: {}", String::from_utf8_lossy(&out.stderr));
    });
    (v, code)
}

fn analyze(name: &str) -> Value {
    let path = fixture(name);
    let (v, code) = structured(&["analyze", path.to_str().unwrap(), "--format", "structured"]);
    assert_eq!(code, 0, "{name}");
    v
}

fn num(v: &Value) -> f64 {
    v.as_f64().unwrap()
}

fn close(a: &Value, b: f64, tol: f64) -> bool {
    (num(a) - b).abs() <= tol
}

/// Structural equality with a relative tolerance on numbers.
fn json_close(a: &Value, b: &Value, path: &str) -> Result<(), String> {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            if (x - y).abs() <= 1e-9 * (1.0 + x.abs().max(y.abs())) {
                Ok(())
            } else {
                Err(format!("{path}: {x} != {y}"))
            }
        }
        (Value::Array(x), Value::Array(y)) => {
            if x.len() != y.len() {
                return Err(format!("{path}: length {} != {}", x.len(), y.len()));
            }
            x.iter().zip(y).enumerate().try_for_each(|(i, (p, q))| json_close(p, q, &format!("{path}[{i}]")))
        }
        (Value::Object(x), Value::Object(y)) => {
            let kx: Vec<_> = x.keys().collect();
            let ky: Vec<_> = y.keys().collect();
            if kx != ky {
                return Err(format!("{path}: keys {kx:?} != {ky:?}"));
            }
            x.iter().try_for_each(|(k, p)| json_close(p, &y[k], &format!("{path}.{k}")))
        }
        _ if a == b => Ok(()),
        _ => Err(format!("{path}: {a} != {b}")),
    }
}

#[test]
fn analyze_matches_golden_files() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden");
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    for name in FIXTURES {
        let out = lvdelay(&["analyze", fixture(name).to_str().unwrap(), "--format", "structured"]);
        let file = golden.join(format!("{name}.json"));
        if update {
            fs::write(&file, &out.stdout).unwrap();
            continue;
        }
        let got: Value = serde_json::from_slice(&out.stdout).unwrap();
        let want: Value = serde_json::from_str(&fs::read_to_string(&file).unwrap()).unwrap();
        if let Err(e) = json_close(&got, &want, name) {
            panic!("golden mismatch: {e}");
        }
    }
}

#[test]
fn fixture_conclusions() {
    let v = analyze("ex5_1_uncontrolled");
    assert_eq!(v["verdict"]["theorem"], "none_applicable");
    let sat: Vec<&Value> = v["equilibria"]["candidates"].as_array().unwrap().iter().filter(|c| c["saturated"] == true).collect();
    assert_eq!(sat.len(), 1);
    assert!(close(&sat[0]["x_star"][0], 53.0 / 80.0, 1e-12) && close(&sat[0]["x_star"][1], 1.0 / 20.0, 1e-12));

    for (name, alpha) in [("ex5_1_controlled", 0.1), ("ex5_1_controlled_03", 0.3), ("ex5_1_controlled_06", 0.6)] {
        let v = analyze(name);
        let verdict = &v["verdict"];
        assert_eq!(verdict["theorem"], "T3_1", "{name}");
        assert!(close(&verdict["equilibrium"]["x_star"][0], 1.0 / (1.5 + alpha), 1e-12), "{name}");
        assert!(close(&verdict["equilibrium"]["x_star"][1], 0.0, 0.0), "{name}");
        assert_eq!(verdict["global_attractor"], true);
    }

    let v = analyze("ex2_2");
    assert_eq!(v["verdict"]["theorem"], "none_applicable");
    let supports: Vec<&Value> = v["equilibria"]["candidates"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["saturated"] == true)
        .map(|c| &c["support"])
        .collect();
    assert_eq!(supports, vec![&serde_json::json!([]), &serde_json::json!([0, 1])]);
    let m = v["matrices"].as_array().unwrap().iter().find(|m| m["name"] == "M").unwrap();
    assert_eq!(m["verdict"]["class"], "not_p");

    let v = analyze("ex5_2_a1");
    assert_eq!(v["verdict"]["theorem"], "T4_3");
    assert!(close(&v["verdict"]["equilibrium"]["x_star"][0], 2.0 / 3.0, 1e-12));
    assert!(close(&v["verdict"]["certificate"]["alphas"][0]["eta_rate"], 1.0 / 3.0, 1e-9));

    let v = analyze("ex5_2_controlled");
    assert_eq!(v["verdict"]["theorem"], "T4_3");
    assert!(close(&v["verdict"]["equilibrium"]["x_star"][0], 2.0 / 3.5, 1e-12));

    let v = analyze("ex5_3_controlled");
    assert_eq!(v["verdict"]["theorem"], "T3_2_positive");
    let det = 2.0 * 2.0 - 0.125 * 0.5;
    assert!(close(&v["verdict"]["equilibrium"]["x_star"][1], 0.5 / (3.0 * det), 1e-12));

    let v = analyze("ex2_1");
    assert_eq!(v["verdict"]["theorem"], "T3_2_positive");
}

#[test]
fn analyze_text_names_the_verdict() {
    let out = lvdelay(&["analyze", fixture("ex5_1_controlled").to_str().unwrap()]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("verdict: T3_1"), "{text}");
    assert!(text.contains("x* = (0.625, 0)"), "{text}");
}

#[test]
fn malformed_spec_is_an_input_error() {
    let dir = scratch_dir("malformed");
    let path = dir.join("bad.cfg");
    fs::write(&path, "n = 2\nb = [1.0, 1.0]\na = [[0.0, 0.0], [0.0, 0.0]]\n").unwrap();
    let out = lvdelay(&["analyze", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mu"));
    let out = lvdelay(&["analyze", dir.join("missing.cfg").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let out = lvdelay(&["verify", path.to_str().unwrap(), "--runs", "2"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn examples_list_and_materialize() {
    let out = lvdelay(&["examples"]);
    assert_eq!(out.status.code(), Some(0));
    let listed = String::from_utf8(out.stdout).unwrap();
    assert!(listed.lines().count() >= 7);
    for name in FIXTURES {
        assert!(listed.contains(name));
    }
    let dir = scratch_dir("examples");
    let path = dir.join("ex.cfg");
    let out = lvdelay(&["examples", "ex5_1_uncontrolled", "--out", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(fs::read_to_string(&path).unwrap(), fs::read_to_string(fixture("ex5_1_uncontrolled")).unwrap());
    let out = lvdelay(&["examples", "ex5_1_uncontrolled"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), fs::read_to_string(fixture("ex5_1_uncontrolled")).unwrap());
    assert_eq!(lvdelay(&["examples", "ex9_9"]).status.code(), Some(1));
}

#[test]
fn simulate_example_5_1_converges_and_is_deterministic() {
    let dir = scratch_dir("simulate");
    let spec = fixture("ex5_1_uncontrolled");
    let mut csvs = Vec::new();
    for k in 0..2 {
        let csv = dir.join(format!("run{k}.csv"));
        let args = [
            "simulate",
            spec.to_str().unwrap(),
            "--T",
            "200",
            "--history",
            "0.5,0.5",
            "--out",
            csv.to_str().unwrap(),
            "--stride",
            "50",
            "--format",
            "structured",
        ];
        let (v, code) = structured(&args);
        assert_eq!(code, 0);
        let fx = &v["simulation"]["final_x"];
        assert!(close(&fx[0], 0.6625, 1e-4) && close(&fx[1], 0.05, 1e-4), "{fx}");
        assert_eq!(v["simulation"]["convergence"]["converged"], true);
        csvs.push(fs::read(&csv).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
    let text = String::from_utf8(csvs[0].clone()).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,x_1,x_2,u_1,u_2"));
    assert_eq!(lines.count(), 401);
}

#[test]
fn simulate_logistic_and_extinction_rate() {
    let dir = scratch_dir("logistic");
    let path = dir.join("logistic.cfg");
    fs::write(
        &path,
        "n = 1\nb = [1.0]\nmu = [1.0]\na = [[0.0]]\n\n[kernels]\nK = [[{kind = \"dirac\", tau = 1.0}]]\nG = [{kind = \"dirac\", tau = 1.0}]\n",
    )
    .unwrap();
    let (v, _) = structured(&["simulate", path.to_str().unwrap(), "--T", "50", "--format", "structured"]);
    assert!(close(&v["simulation"]["final_x"][0], 1.0, 1e-6));

    let spec = fixture("ex5_2_a1");
    let (v, _) = structured(&["simulate", spec.to_str().unwrap(), "--T", "100", "--history", "0.5,0.5", "--format", "structured"]);
    let rate = &v["simulation"]["extinction"][0];
    assert_eq!(rate["species"], 1);
    assert!(num(&rate["observed_rate"]) >= 0.28, "{rate}");
    assert_eq!(v["simulation"]["lyapunov"]["monotone"], true);
}

#[test]
fn simulate_with_lyapunov_columns() {
    let dir = scratch_dir("lyapunov");
    let csv = dir.join("trace.csv");
    let out = lvdelay(&[
        "simulate",
        fixture("ex5_3_controlled").to_str().unwrap(),
        "--T",
        "20",
        "--out",
        csv.to_str().unwrap(),
        "--stride",
        "100",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("t,x_1,x_2,u_1,u_2,U1,U2,U\n"), "{}", &text[..80]);
}

#[test]
fn verify_passes_on_certified_examples() {
    for name in ["ex5_1_controlled", "ex5_2_a1", "ex5_3_controlled"] {
        let (v, code) = structured(&["verify", fixture(name).to_str().unwrap(), "--format", "structured"]);
        assert_eq!(code, 0, "{name}");
        assert_eq!(v["status"], "pass", "{name}");
        let runs = v["runs"].as_array().unwrap();
        assert_eq!(runs.len(), 3);
        let seeds: Vec<u64> = runs.iter().map(|r| r["seed"].as_u64().unwrap()).collect();
        assert_eq!(seeds, vec![1, 2, 3]);
    }
}

#[test]
fn verify_skips_without_verdict() {
    let out = lvdelay(&["verify", fixture("ex2_2").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("overall: SKIP"));
}

#[test]
fn verify_fails_on_injected_equilibrium() {
    let spec = fixture("ex5_1_controlled_03");
    let out = lvdelay(&["verify", spec.to_str().unwrap(), "--inject-equilibrium", "0.5,0.1"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8(out.stdout).unwrap().contains("overall: FAIL"));
}

#[test]
fn verify_reports_are_deterministic() {
    let spec = fixture("ex5_3_controlled");
    let a = lvdelay(&["verify", spec.to_str().unwrap(), "--seed", "7", "--format", "structured"]);
    let b = lvdelay(&["verify", spec.to_str().unwrap(), "--seed", "7", "--format", "structured"]);
    assert_eq!(a.stdout, b.stdout);
}
