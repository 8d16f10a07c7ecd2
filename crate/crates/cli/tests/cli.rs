use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn pwrd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pwrd")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let o = pwrd(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn code(args: &[&str]) -> i32 {
    pwrd(args).status.code().unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn json(p: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

const WHITE: &str = r#"{"dims":[16,16],"labels":[[0,256]],"regions":[{"mean":0.0,"kernel":{"kind":"white","variance":1.0}}]}"#;

const TWO: &str = r#"{"dims":[32,32],"labels":[[0,512],[1,512]],"regions":[
 {"mean":0.0,"kernel":{"kind":"exponential","variance":1.0,"length_scale":2.0}},
 {"mean":1.0,"kernel":{"kind":"exponential","variance":9.0,"length_scale":2.0}}],
 "spectrum":{"method":"bccb","tile":16}}"#;

fn setup(model: &str) -> (tempfile::TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("model.json");
    fs::write(&m, model).unwrap();
    (dir, s(&m))
}

#[test]
fn sample_writes_files_and_manifest() {
    let (dir, m) = setup(WHITE);
    let out = dir.path().join("b");
    ok(&["sample", "--model", &m, "--count", "10", "--seed", "2", "--out", &s(&out)]);
    let bins = fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "bin").count();
    assert_eq!(bins, 10);
    let man = json(out.join("manifest.json"));
    assert_eq!(man["count"], 10);
    assert_eq!(man["seed"], 2);
    let cfg = json(out.join("resolved_config.json"));
    assert_eq!(cfg["command"], "sample");
    assert!(cfg["tool_version"].is_string());
}

#[test]
fn sample_is_reproducible() {
    let (dir, m) = setup(TWO);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["sample", "--model", &m, "--count", "3", "--seed", "9", "--dtype", "float32", "--out", &s(&a)]);
    ok(&["sample", "--model", &m, "--count", "3", "--seed", "9", "--dtype", "float32", "--out", &s(&b)]);
    for f in ["field_00000.bin", "field_00002.bin", "manifest.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
    assert_eq!(fs::metadata(a.join("field_00000.bin")).unwrap().len(), 4 * 1024);
}

#[test]
fn invalid_model_is_a_usage_error() {
    let (dir, _) = setup(WHITE);
    let m = dir.path().join("broken.json");
    fs::write(&m, r#"{"dims":[4,4],"labels":[[0,16]],"regions":[{"mean":0,"kernel":{"kind":"cosine"}}]}"#).unwrap();
    let o = pwrd(&["sample", "--model", &s(&m), "--out", &s(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("model file"));
}

#[test]
fn indefinite_kernel_is_a_numerical_failure() {
    let bad = r#"{"dims":[8,8],"labels":[[0,64]],"regions":[{"mean":0.0,"kernel":{"kind":"tabulated",
      "table":[{"lag":[0,0],"value":1.0},{"lag":[1,0],"value":0.9},{"lag":[0,1],"value":0.9},
               {"lag":[1,1],"value":0.0},{"lag":[1,-1],"value":0.0}],"compact_support":true}}]}"#;
    let (dir, m) = setup(bad);
    assert_eq!(code(&["sample", "--model", &m, "--out", &s(&dir.path().join("x"))]), 3);
}

#[test]
fn missing_options_and_unknown_commands_exit_2() {
    assert_eq!(code(&["fit", "--out", "/nonexistent/never"]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["bounds", "--model", "/nonexistent/model.json", "--d", "0.1", "--out", "x"]), 2);
}

#[test]
fn fit_recovers_two_regions_and_honors_k_range() {
    let (dir, m) = setup(TWO);
    let b = dir.path().join("b");
    ok(&["sample", "--model", &m, "--count", "10", "--seed", "4", "--out", &s(&b)]);
    let f = dir.path().join("f");
    ok(&["fit", "--input", &s(&b), "--tile", "16", "--k-range", "1,2,3", "--out", &s(&f)]);
    let model = json(f.join("model.json"));
    assert_eq!(model["regions"].as_array().unwrap().len(), 2);
    assert!(model["metadata"]["trace"].is_array());
    assert!(fs::read(f.join("labels.pgm")).unwrap().starts_with(b"P5\n32 32\n255\n"));
    assert_eq!(json(f.join("fit_report.json"))["K"], 2);

    let g = dir.path().join("g");
    ok(&["fit", "--input", &s(&b), "--tile", "16", "--k-range", "1", "--out", &s(&g)]);
    assert_eq!(json(g.join("model.json"))["regions"].as_array().unwrap().len(), 1);

    assert_eq!(code(&["fit", "--input", &s(&b), "--tile", "64", "--out", &s(&dir.path().join("h"))]), 2);
}

#[test]
fn fitted_model_feeds_the_other_commands() {
    let (dir, m) = setup(TWO);
    let b = dir.path().join("b");
    ok(&["sample", "--model", &m, "--count", "8", "--seed", "1", "--out", &s(&b)]);
    let f = dir.path().join("f");
    ok(&["fit", "--input", &s(&b), "--tile", "16", "--k-range", "1,2", "--out", &s(&f)]);
    let fitted = s(&f.join("model.json"));
    ok(&["sample", "--model", &fitted, "--count", "2", "--out", &s(&dir.path().join("b2"))]);
    let o = dir.path().join("o");
    ok(&["bounds", "--model", &fitted, "--d", "1.0", "--approx-only", "--out", &s(&o)]);
    assert_eq!(fs::read_to_string(o.join("bounds.csv")).unwrap().lines().count(), 2);
}

#[test]
fn diagnose_reports_and_rejects_single_realization() {
    let (dir, m) = setup(TWO);
    let b = dir.path().join("b");
    ok(&["sample", "--model", &m, "--count", "30", "--seed", "6", "--out", &s(&b)]);
    let d = dir.path().join("d");
    ok(&["diagnose", "--input", &s(&b), "--model", &m, "--probes", "100", "--out", &s(&d)]);
    let r = json(d.join("diagnostics.json"));
    assert_eq!(r["probe_report"]["decision"], "gaussian_consistent");
    assert_eq!(r["probe_report"]["J"], 100);
    assert!(r["second_order"]["stationarity"]["statistic"].is_number());
    assert_eq!(r["model_scores"]["bic_ranking"][0], "piecewise_grf_k2");
    let csv = fs::read_to_string(d.join("radial_profile.csv")).unwrap();
    assert!(csv.starts_with("l,C_bar,count\n"));

    let one = dir.path().join("one");
    ok(&["sample", "--model", &m, "--count", "1", "--out", &s(&one)]);
    assert_eq!(code(&["diagnose", "--input", &s(&one), "--out", &s(&dir.path().join("e"))]), 2);
}

#[test]
fn diagnose_rejects_squared_fields() {
    let (dir, m) = setup(r#"{"dims":[32,32],"labels":[[0,1024]],"regions":[
      {"mean":0.0,"kernel":{"kind":"exponential","variance":1.0,"length_scale":16.0}}]}"#);
    let b = dir.path().join("b");
    ok(&["sample", "--model", &m, "--count", "100", "--seed", "3", "--out", &s(&b)]);
    // square every value in place
    for e in fs::read_dir(&b).unwrap() {
        let p = e.unwrap().path();
        if p.extension().unwrap() == "bin" {
            let bytes = fs::read(&p).unwrap();
            let sq: Vec<u8> = bytes
                .chunks_exact(8)
                .flat_map(|c| {
                    let v = f64::from_le_bytes(c.try_into().unwrap());
                    (v * v).to_le_bytes()
                })
                .collect();
            fs::write(&p, sq).unwrap();
        }
    }
    let d = dir.path().join("d");
    ok(&["diagnose", "--input", &s(&b), "--out", &s(&d)]);
    assert_eq!(json(d.join("diagnostics.json"))["probe_report"]["decision"], "gaussian_rejected");
}

#[test]
fn bounds_white_half_epsilon_is_one_bit() {
    let (dir, m) = setup(WHITE);
    let o = dir.path().join("o");
    ok(&["bounds", "--model", &m, "--d", "0.25", "--epsilon", "0.5", "--approx-only", "--out", &s(&o)]);
    let csv = fs::read_to_string(o.join("bounds.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "n,rate_conv_bits,rate_ach_bits,rate_approx_bits,se_conv,se_ach,epsilon,D,seed");
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "256");
    assert!((row[3].parse::<f64>().unwrap() - 1.0).abs() < 1e-12);
    let rd = fs::read_to_string(o.join("rd_curve.csv")).unwrap();
    assert!(rd.starts_with("D,theta_star,rate_nats_per_site,rate_bits_per_site,dispersion,"));
}

#[test]
fn bounds_infeasible_distortion_still_succeeds() {
    let (dir, m) = setup(WHITE);
    let o = dir.path().join("o");
    ok(&["bounds", "--model", &m, "--d", "5", "--d-grid", "0.5,5", "--approx-only", "--out", &s(&o)]);
    let rd = fs::read_to_string(o.join("rd_curve.csv")).unwrap();
    assert!(rd.lines().nth(2).unwrap().contains("infeasible"));
    let b = fs::read_to_string(o.join("bounds.csv")).unwrap();
    assert_eq!(b.lines().nth(1).unwrap(), "256,,,,,,0.05,5,0");
}

#[test]
fn bounds_svg_is_optional() {
    let (dir, m) = setup(WHITE);
    let o = dir.path().join("o");
    ok(&["bounds", "--model", &m, "--d", "0.3", "--scales", "1,2", "--approx-only", "--svg", "--out", &s(&o)]);
    assert!(fs::read_to_string(o.join("bounds.svg")).unwrap().starts_with("<svg"));
    assert!(o.join("rd_curve.svg").exists());
    let p = dir.path().join("p");
    ok(&["bounds", "--model", &m, "--d", "0.3", "--approx-only", "--out", &s(&p)]);
    assert!(!p.join("bounds.svg").exists());
}

#[test]
fn flags_override_config_file() {
    let (dir, m) = setup(WHITE);
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, format!(r#"{{"model": {:?}, "count": 4, "seed": 1}}"#, m)).unwrap();
    let o = dir.path().join("o");
    ok(&["sample", "--config", &s(&cfg), "--count", "2", "--out", &s(&o)]);
    let r = json(o.join("resolved_config.json"));
    assert_eq!(r["count"], 2);
    assert_eq!(r["seed"], 1);
    assert_eq!(json(o.join("manifest.json"))["count"], 2);
}

#[test]
fn config_checks() {
    let (dir, m) = setup(WHITE);
    let o = dir.path().join("o");
    ok(&["sample", "--model", &m, "--out", &s(&o)]);
    let resolved = s(&o.join("resolved_config.json"));
    assert_eq!(code(&["fit", "--config", &resolved, "--out", &s(&dir.path().join("f"))]), 2);
    let typo = dir.path().join("typo.json");
    fs::write(&typo, r#"{"cont": 3}"#).unwrap();
    assert_eq!(code(&["sample", "--config", &s(&typo), "--model", &m, "--out", &s(&dir.path().join("t"))]), 2);
}
