use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("orlicz-cli-test-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn run(config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orlicz"))
        .arg("run")
        .arg(config)
        .arg("--output")
        .arg(out)
        .args(extra)
        .output()
        .expect("binary runs")
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

#[test]
fn triangle_config_passes_with_known_covariance() {
    let out = scratch("triangle");
    let o = run(&configs().join("triangle_na.toml"), &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    let cov = r["reports"][0]["details"][0]["result"]["value"].as_f64().unwrap();
    assert!((cov + 1.0 / 9.0).abs() < 1e-9, "{cov}");
    assert_eq!(r["provenance"]["seed"], 1);
    assert_eq!(r["provenance"]["config_sha256"].as_str().unwrap().len(), 64);
    for f in ["na_pairs.csv", "na_sweep.csv", "projection.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn json_config_matches_toml() {
    let out = scratch("json");
    let o = run(&configs().join("triangle_na.json"), &out, &[]);
    assert_eq!(o.status.code(), Some(0));
    let cov = report(&out)["reports"][0]["details"][0]["result"]["value"].as_f64().unwrap();
    assert!((cov + 1.0 / 9.0).abs() < 1e-9);
}

#[test]
fn corrupted_model_fails_theta() {
    let out = scratch("corrupted");
    let o = run(&configs().join("corrupted_theta.toml"), &out, &[]);
    assert_eq!(o.status.code(), Some(1));
    let r = report(&out);
    assert_eq!(r["passed"], false);
    assert!(r["reports"][0]["violations"].as_u64().unwrap() > 0);
    assert!(out.join("theta_cases.csv").exists());
}

#[test]
fn missing_dimension_is_a_located_error() {
    let out = scratch("missing");
    let o = run(&configs().join("missing_dimension.toml"), &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("missing_dimension.toml:5:") && err.contains("dimension"), "{err}");
}

#[test]
fn unknown_key_names_its_line() {
    let dir = scratch("unknown");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("bad.toml");
    std::fs::write(&cfg, "command = \"ratio-lemmas\"\nseed = 1\ncolour = 3\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_orlicz")).arg("validate").arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.toml:3:") && err.contains("colour"), "{err}");
}

#[test]
fn stochastic_command_without_seed_is_rejected() {
    let dir = scratch("noseed");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("noseed.toml");
    std::fs::write(&cfg, "command = \"sample\"\n\n[sample]\ncount = 10\n").unwrap();
    let o = run(&cfg, &dir.join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
}

fn assert_identical(a: &Path, b: &Path) {
    let mut names: Vec<_> = std::fs::read_dir(a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(!names.is_empty());
    for n in names {
        let x = std::fs::read(a.join(&n)).unwrap();
        let y = std::fs::read(b.join(&n)).unwrap();
        assert!(x == y, "{} differs between reruns", n.to_string_lossy());
    }
}

#[test]
fn reruns_are_byte_identical() {
    for name in ["triangle_na.toml", "sample_ball.toml", "localize_synthetic.toml", "hereditary.toml"] {
        let (a, b) = (scratch(&format!("{name}-a")), scratch(&format!("{name}-b")));
        let oa = run(&configs().join(name), &a, &[]);
        let ob = run(&configs().join(name), &b, &[]);
        assert_eq!(oa.status.code(), Some(0), "{name}");
        assert_eq!(ob.status.code(), Some(0), "{name}");
        assert_identical(&a, &b);
    }
}

#[test]
fn seed_and_tolerance_flags_override_the_config() {
    let out = scratch("override");
    let o = run(&configs().join("sample_ball.toml"), &out, &["--seed", "99", "--rel-tol", "1e-8"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(report(&out)["provenance"]["seed"], 99);
}

#[test]
fn suite_meets_every_expectation() {
    let out = scratch("suite");
    let start = std::time::Instant::now();
    let o = run(&configs().join("suite.toml"), &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(start.elapsed().as_secs() < 300);
    let r = report(&out);
    for e in r["reports"][0]["details"].as_array().unwrap() {
        assert_eq!(e["as_expected"], true, "{e}");
    }
}
