use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn problems() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("problems")
}

fn run(verb: &str, spec: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hopflayer"))
        .arg(verb)
        .arg("--spec")
        .arg(spec)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .expect("binary runs")
}

fn write_spec(dir: &TempDir, text: &str) -> PathBuf {
    let p = dir.path().join("problem.json");
    fs::write(&p, text).unwrap();
    p
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Rows of a numeric CSV, header dropped.
fn rows(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect()
}

fn golden_exact(t: f64, x: f64) -> f64 {
    let s = t - 0.5;
    if t > 0.5 && x.abs() <= 2.0 * s * s {
        x * x / (4.0 * s * s) + 0.25
    } else {
        x.abs() - s * s + 0.25
    }
}

const SMALL_GOLDEN: &str = r#"{
  "schema": "hopflayer/1",
  "dimension": 1,
  "horizon": 2.0,
  "sigma": { "kind": "pwl", "breakpoints": [0.0], "slopes": [-1.0, 1.0] },
  "hamiltonian": { "kind": "product", "g": [-1.0, 2.0], "h": [0.0, 0.0, 1.0] },
  "grids": { "dual": { "counts": [401] }, "space": { "counts": [41] }, "time_count": 9 },
  "tolerances": { "semiconvexity_samples": 2000 }
}"#;

#[test]
fn golden_solution_matches_closed_form() {
    let out = TempDir::new().unwrap();
    let o = run("solve", &problems().join("golden.json"), out.path(), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let header = fs::read_to_string(out.path().join("solution.csv")).unwrap();
    assert!(header.starts_with("t,x,u,l_diam\n"));
    let rows = rows(&out.path().join("solution.csv"));
    assert_eq!(rows.len(), 21 * 201);
    let err = rows
        .iter()
        .map(|r| (r[2] - golden_exact(r[0], r[1])).abs())
        .fold(0.0, f64::max);
    assert!(err <= 1e-3, "max error {err}");
    // Lexicographic (t, x) order.
    assert!(rows.windows(2).all(|w| (w[0][0], w[0][1]) < (w[1][0], w[1][1])));
}

#[test]
fn golden_verify_reports_the_gap() {
    let dir = TempDir::new().unwrap();
    let spec = write_spec(&dir, SMALL_GOLDEN);
    let out = dir.path().join("out");
    let o = run("verify", &spec, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = &report(&out)["metrics"];
    assert!((m["final_hopf_gap"].as_f64().unwrap() - 0.25).abs() <= 1e-3);
    assert_eq!(m["final_hopf_gap_at"][0].as_f64(), Some(0.0));
    assert!(m["max_hopf_excess"].as_f64().unwrap() <= 1e-9);
    assert_eq!(m["semiconvexity_constant"].as_f64(), Some(8.0));
    assert_eq!(m["semiconvexity_violations"].as_u64(), Some(0));
}

#[test]
fn single_convex_layer_has_no_gap() {
    let out = TempDir::new().unwrap();
    let o = run("verify", &problems().join("single_convex.json"), out.path(), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = &report(out.path())["metrics"];
    assert!(m["max_hopf_gap"].as_f64().unwrap().abs() <= 1e-12);
}

#[test]
fn zero_hamiltonian_keeps_sigma() {
    let out = TempDir::new().unwrap();
    let o = run("solve", &problems().join("zero_hamiltonian.json"), out.path(), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    // sigma from the problem file: slopes -1, 0, 1/2 with kinks at -1/2, 1/4
    // and sigma(-1/2) = 0.2.
    let sigma = |x: f64| {
        if x < -0.5 {
            0.2 - (x + 0.5)
        } else if x < 0.25 {
            0.2
        } else {
            0.2 + 0.5 * (x - 0.25)
        }
    };
    for r in rows(&out.path().join("solution.csv")) {
        assert!(
            (r[2] - sigma(r[1])).abs() <= 1e-12,
            "t {} x {}: {} vs {}",
            r[0],
            r[1],
            r[2],
            sigma(r[1])
        );
    }
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let spec = write_spec(&dir, SMALL_GOLDEN);
    for verb in ["solve", "verify", "singular"] {
        let a = dir.path().join(format!("{verb}_a"));
        let b = dir.path().join(format!("{verb}_b"));
        assert!(run(verb, &spec, &a, &[]).status.success());
        assert!(run(verb, &spec, &b, &[]).status.success());
        let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert!(names.len() >= 3);
        for n in names {
            assert_eq!(
                fs::read(a.join(&n)).unwrap(),
                fs::read(b.join(&n)).unwrap(),
                "{verb}: {n:?}"
            );
        }
    }
}

#[test]
fn resolved_spec_reproduces_the_run() {
    let dir = TempDir::new().unwrap();
    let spec = write_spec(&dir, SMALL_GOLDEN);
    let a = dir.path().join("a");
    assert!(run("verify", &spec, &a, &[]).status.success());
    let b = dir.path().join("b");
    assert!(run("verify", &a.join("spec.resolved.json"), &b, &[]).status.success());
    assert_eq!(
        fs::read(a.join("spec.resolved.json")).unwrap(),
        fs::read(b.join("spec.resolved.json")).unwrap()
    );
    assert_eq!(
        fs::read(a.join("report.json")).unwrap(),
        fs::read(b.join("report.json")).unwrap()
    );
}

#[test]
fn seed_flag_overrides_the_spec() {
    let dir = TempDir::new().unwrap();
    let spec = write_spec(&dir, SMALL_GOLDEN);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run("verify", &spec, &a, &[]).status.success());
    assert!(run("verify", &spec, &b, &["--seed", "7"]).status.success());
    let (ra, rb) = (report(&a), report(&b));
    assert_eq!(ra["seed"].as_u64(), Some(0));
    assert_eq!(rb["seed"].as_u64(), Some(7));
    assert_ne!(ra["spec_digest"], rb["spec_digest"]);
}

#[test]
fn zero_horizon_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let spec = write_spec(&dir, &SMALL_GOLDEN.replace("\"horizon\": 2.0", "\"horizon\": 0.0"));
    let o = run("solve", &spec, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("horizon"), "{}", stderr(&o));
}

#[test]
fn dented_samples_name_the_node() {
    let mut values: Vec<f64> = (0..21)
        .map(|i| {
            let x = -1.0 + 0.1 * i as f64;
            x * x
        })
        .collect();
    values[7] += 0.05;
    let text = format!(
        r#"{{
  "schema": "hopflayer/1", "dimension": 1, "horizon": 1.0,
  "sigma": {{ "kind": "samples", "box": [[-1.0, 1.0]], "counts": [21], "values": {values:?} }},
  "hamiltonian": {{ "kind": "product", "g": [1.0], "h": [0.0, 0.0, 1.0] }}
}}"#
    );
    let dir = TempDir::new().unwrap();
    let spec = write_spec(&dir, &text);
    let o = run("solve", &spec, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sigma not convex at node 7"), "{}", stderr(&o));
}

#[test]
fn unknown_fields_are_rejected() {
    let dir = TempDir::new().unwrap();
    let spec = write_spec(
        &dir,
        &SMALL_GOLDEN.replace("\"dimension\"", "\"colour\": 1, \"dimension\""),
    );
    let o = run("solve", &spec, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"), "{}", stderr(&o));
}

#[test]
fn failed_tolerance_exits_with_three() {
    let dir = TempDir::new().unwrap();
    let text = SMALL_GOLDEN.replace(
        "\"semiconvexity_samples\": 2000",
        "\"semiconvexity_samples\": 2000, \"residual_tol\": 1e-12",
    );
    let spec = write_spec(&dir, &text);
    let out = dir.path().join("out");
    let o = run("verify", &spec, &out, &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let r = report(&out);
    assert_eq!(r["metrics"]["passed"], Value::Bool(false));
    assert!(r["failures"][0].as_str().unwrap().contains("residual"));
}

#[test]
fn chars_needs_smoothing() {
    let dir = TempDir::new().unwrap();
    let text = SMALL_GOLDEN.replace(
        "\"tolerances\"",
        "\"characteristics\": { \"y\": [0.5] }, \"tolerances\"",
    );
    let spec = write_spec(&dir, &text);
    let o = run("chars", &spec, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("smoothing"), "{}", stderr(&o));
}

#[test]
fn chars_backward_search_on_smoothed_golden() {
    let out = TempDir::new().unwrap();
    let o = run("chars", &problems().join("golden_smoothed.json"), out.path(), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.path().join("backward.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("target_id,t0,x0,y,p,residual,type"));
    let first: Vec<(f64, &str)> = lines
        .filter(|l| l.starts_with("0,"))
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            (c[3].parse().unwrap(), c[6])
        })
        .collect();
    let expected = [(-0.5, "I"), (0.0, "II"), (0.5, "I")];
    assert_eq!(first.len(), 3);
    for ((y, kind), (ey, ek)) in first.iter().zip(expected) {
        assert!((y - ey).abs() <= 1e-10 && *kind == ek, "{y} {kind}");
    }
    let curves = fs::read_to_string(out.path().join("curves.csv")).unwrap();
    assert!(curves.starts_with("curve_id,t,x,v,p,type\n"));
}

#[test]
fn singular_traces_merging_kinks() {
    let out = TempDir::new().unwrap();
    let o = run("singular", &problems().join("merging_kinks.json"), out.path(), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.path().join("arcs.csv")).unwrap();
    let mut forward = 0;
    for l in text.lines().skip(1) {
        let c: Vec<&str> = l.split(',').collect();
        if c[0] == "0" && c[1] == "forward" {
            let (t, x): (f64, f64) = (c[3].parse().unwrap(), c[4].parse().unwrap());
            assert!((x - (1.0 - t).max(0.0)).abs() < 1e-6, "t {t} x {x}");
            forward += 1;
        }
    }
    assert!(forward > 100);
    let anchors = fs::read_to_string(out.path().join("anchors.csv")).unwrap();
    // Three maximizers at the merge point (1, 0).
    let merge: Vec<&str> = anchors.lines().nth(2).unwrap().split(',').collect();
    assert_eq!(merge[3], "3");
}

#[test]
fn two_dimensional_solve_has_y_column() {
    let out = TempDir::new().unwrap();
    let o = run("solve", &problems().join("quadratic_2d.json"), out.path(), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.path().join("solution.csv")).unwrap();
    assert!(text.starts_with("t,x,y,u,l_diam\n"));
    assert_eq!(text.lines().count(), 1 + 5 * 21 * 21);
}
