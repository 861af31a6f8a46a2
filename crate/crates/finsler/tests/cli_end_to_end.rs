//! Drive the installed binary the way a user would: spec files in, exit
//! codes and files out. Builds here use small grids; the full-size runs live
//! in the acceptance suite.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn exe() -> &'static str {
    env!("CARGO_BIN_EXE_finsler")
}

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(exe())
        .args(args)
        .args(["--out-dir", dir.to_str().unwrap()])
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn write_chart(dir: &Path) -> PathBuf {
    let p = dir.join("chart.json");
    fs::write(
        &p,
        r#"{"base": {"kind": "euclidean"}, "lambda": "0.1*x", "domain_radius": 2.0, "eps": 0.2, "r": 2.0, "l": 3}"#,
    )
    .unwrap();
    p
}

fn build_small(dir: &Path) -> PathBuf {
    let chart = write_chart(dir);
    let out = run(
        &[
            "build",
            chart.to_str().unwrap(),
            "--n-theta",
            "64",
            "--n-corr",
            "49",
            "--quiet",
        ],
        dir,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("torus.json")
}

#[test]
fn check_norm_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = dir.path().join("euclid.json");
    fs::write(&ok, r#"{"kind": "euclidean"}"#).unwrap();
    assert_eq!(code(&run(&["check-norm", ok.to_str().unwrap()], dir.path())), 0);

    // A body with flat edges: the convexity check must reject it. (A
    // pointwise degeneracy like the quartic's is smoothed away by the
    // 256-sample support representation, so an edge is the honest failing
    // tabulated input.)
    let flat = dir.path().join("square.json");
    let n = 256;
    let support: Vec<String> = (0..n)
        .map(|k| {
            let t = std::f64::consts::TAU * k as f64 / n as f64;
            format!("{:.17}", t.cos().abs() + t.sin().abs())
        })
        .collect();
    fs::write(
        &flat,
        format!(r#"{{"kind": "tabulated", "support": [{}]}}"#, support.join(",")),
    )
    .unwrap();
    let out = run(&["check-norm", flat.to_str().unwrap()], dir.path());
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));

    let bad = dir.path().join("broken.json");
    fs::write(&bad, r#"{"kind": bogus"#).unwrap();
    assert_eq!(code(&run(&["check-norm", bad.to_str().unwrap()], dir.path())), 2);

    assert_eq!(
        code(&run(&["check-norm", "no-such-file.json"], dir.path())),
        2
    );
}

#[test]
fn build_writes_artifact_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let artifact = build_small(dir.path());
    assert!(artifact.exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["resolved"]["eps"], 0.2);
    assert_eq!(manifest["resolved"]["l"], 3);
    for p in manifest["artifacts"].as_array().unwrap() {
        assert!(Path::new(p.as_str().unwrap()).exists(), "missing {p}");
    }
    // The artifact round-trips as strict JSON.
    let parsed: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&artifact).unwrap()).unwrap();
    assert_eq!(parsed["version"], 1);
}

#[test]
fn build_rejects_r_below_eps() {
    let dir = tempfile::tempdir().unwrap();
    let chart = write_chart(dir.path());
    let out = run(
        &["build", chart.to_str().unwrap(), "--r", "0.1", "--quiet"],
        dir.path(),
    );
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("must exceed"));
}

#[test]
fn verify_passes_clean_artifact_and_flags_sabotage() {
    let dir = tempfile::tempdir().unwrap();
    let artifact = build_small(dir.path());
    let chart = dir.path().join("chart.json");
    let out = run(
        &[
            "verify",
            artifact.to_str().unwrap(),
            "--spec",
            chart.to_str().unwrap(),
            "--geodesics",
            "8",
            "--curves",
            "4",
            "--samples",
            "40",
            "--quiet",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["pass"], true);
    assert!(fs::read_to_string(dir.path().join("report.txt"))
        .unwrap()
        .contains("overall: PASS"));

    let out = run(
        &[
            "verify",
            artifact.to_str().unwrap(),
            "--sabotage",
            "--geodesics",
            "8",
            "--curves",
            "2",
            "--samples",
            "10",
            "--quiet",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 1);
    let report = fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(report.contains("conjugate time"), "{report}");
    assert!(report.contains("overall: FAIL"));
}

#[test]
fn verify_rejects_garbage_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("torus.json");
    fs::write(&bad, "{\"version\": 1").unwrap();
    assert_eq!(code(&run(&["verify", bad.to_str().unwrap()], dir.path())), 2);
}

#[test]
fn plot_data_row_counts() {
    let dir = tempfile::tempdir().unwrap();
    let artifact = build_small(dir.path());
    let art = artifact.to_str().unwrap();
    let lines = |name: &str| {
        fs::read_to_string(dir.path().join(name))
            .unwrap()
            .lines()
            .count()
    };
    assert_eq!(code(&run(&["plot-data", art, "indicatrices", "--quiet"], dir.path())), 0);
    assert_eq!(lines("indicatrices.csv"), 1 + 81 * 64);
    assert_eq!(code(&run(&["plot-data", art, "envelope", "--quiet"], dir.path())), 0);
    assert_eq!(lines("envelope.csv"), 1 + 129 * 129);
    assert_eq!(code(&run(&["plot-data", art, "cosphere", "--quiet"], dir.path())), 0);
    assert_eq!(lines("cosphere.csv"), 1 + 5 * 64);
    assert_eq!(code(&run(&["plot-data", art, "geodesics", "--quiet"], dir.path())), 0);
    let geo = fs::read_to_string(dir.path().join("geodesics.csv")).unwrap();
    let curves: std::collections::HashSet<&str> = geo
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(curves.len(), 16);
    assert_eq!(code(&run(&["plot-data", art, "nonsense"], dir.path())), 2);
}
