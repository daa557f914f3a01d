use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::Path;
use std::process::{Command, Output};

use anmi::models::ProbitCoefficients;
use anmi::survey::{
    draw_stratified_sample, generate_population, impose_missingness, margin_from_population,
    read_sample_csv, write_sample_csv, MarginDeclaration, MarginScope, SurveySample,
};

fn anmi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anmi"))
        .args(args)
        .env_remove("ANMI_OUTPUT_ROOT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Scenario-1 style data: full-size sample, its masked version, and the
/// population margin as a declaration file.
fn scenario_one_files(dir: &Path, scale: usize, gamma0: f64, seed: u64) -> (SurveySample, SurveySample) {
    let theta = BTreeMap::from([(1, [0.5, 0.15, 0.35]), (2, [0.1, 0.45, 0.45])]);
    let pop = generate_population(
        &theta,
        &ProbitCoefficients::new(0.5, -0.5, -1.0),
        &BTreeMap::from([(1, 35_000 / scale), (2, 15_000 / scale)]),
        seed,
    )
    .unwrap();
    let draws = BTreeMap::from([(1, 1_500 / scale), (2, 3_500 / scale)]);
    let full = draw_stratified_sample(&pop, &draws, seed + 1).unwrap();
    let gamma = ProbitCoefficients::new(gamma0, 0.1, 0.3).with_x(-1.1);
    let (masked, _) = impose_missingness(&full, &gamma, seed + 2).unwrap();
    write_sample_csv(&masked, File::create(dir.join("data.csv")).unwrap()).unwrap();
    let margin = margin_from_population(&pop, &draws, MarginScope::Overall).unwrap();
    fs::write(
        dir.join("margin.json"),
        serde_json::to_string(&MarginDeclaration::from(&margin)).unwrap(),
    )
    .unwrap();
    (full, masked)
}

#[test]
fn list_methods_and_scenarios() {
    let o = anmi(&["list", "--methods"]);
    assert!(o.status.success());
    let labels: Vec<String> = stdout(&o)
        .lines()
        .map(|l| l.split_whitespace().next().unwrap().to_string())
        .collect();
    assert_eq!(labels, ["MAR+Weight", "AN+Weight", "AN+Constraint", "AN+Constraint+Weight"]);

    let o = anmi(&["list", "--scenarios"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for id in ["scenario1", "scenario2", "scenario3", "scenario4", "scenario1-desk", "scenario4-desk"] {
        assert!(text.lines().any(|l| l.split_whitespace().next() == Some(id)), "{id}");
    }

    let o = anmi(&["list"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn unknown_scenario_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = anmi(&["simulate", "nosuch", "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nosuch"));
    assert!(!out.exists());
}

#[test]
fn simulate_desk_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("desk");
    let o = anmi(&["simulate", "scenario1-desk", "--out", path_str(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [
        "scenario1-desk_totals.csv",
        "scenario1-desk_parameters.csv",
        "scenario1-desk_manifest.json",
        "run_manifest.json",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_digest"].as_str().unwrap().len(), 64);
    assert!(manifest["seeds"]["master_seed"].is_u64());
    assert_eq!(manifest["seeds"]["runs"].as_array().unwrap().len(), 10);
    assert!(manifest["timings_seconds"]["simulate"].is_f64());
    let leftovers: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .filter(|n| n.to_string_lossy().contains("partial"))
        .collect();
    assert!(leftovers.is_empty());
}

#[test]
fn simulate_is_deterministic_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let quick = ["--runs", "1", "--iterations", "300", "--burn-in", "100", "--thin", "20", "--seed", "7"];
    let mut outs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let mut args = vec!["simulate", "scenario1", "--out", path_str(&out)];
        args.extend(quick);
        let o = anmi(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        outs.push(out);
    }
    for f in ["scenario1_totals.csv", "scenario1_parameters.csv", "scenario1_manifest.json"] {
        assert_eq!(fs::read(outs[0].join(f)).unwrap(), fs::read(outs[1].join(f)).unwrap(), "{f}");
    }
    let a: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(outs[0].join("run_manifest.json")).unwrap()).unwrap();
    let b: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(outs[1].join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(a["config_digest"], b["config_digest"]);
    assert_eq!(a["seeds"]["master_seed"], 7);
}

#[test]
fn json_format_and_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_anmi"))
        .args(["simulate", "scenario3-desk", "--runs", "1", "--iterations", "200", "--burn-in", "100"])
        .args(["--thin", "10", "--format", "json"])
        .env("ANMI_OUTPUT_ROOT", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let report = dir.path().join("scenario3-desk").join("scenario3-desk_report.json");
    let parsed = anmi::sim::read_report_json(File::open(report).unwrap()).unwrap();
    assert_eq!(parsed.config.runs, 1);
    assert_eq!(parsed.config.chain.iterations, 200);
}

#[test]
fn existing_output_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("taken");
    fs::create_dir(&out).unwrap();
    fs::write(out.join("keep.txt"), "mine").unwrap();
    let args = ["simulate", "scenario1-desk", "--runs", "1", "--iterations", "100", "--burn-in", "50", "--thin", "5"];
    let mut with_out = args.to_vec();
    with_out.extend(["--out", path_str(&out)]);
    let o = anmi(&with_out);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(fs::read_to_string(out.join("keep.txt")).unwrap(), "mine");
    with_out.push("--force");
    let o = anmi(&with_out);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!out.join("keep.txt").exists());
}

#[test]
fn invalid_overrides_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = anmi(&["simulate", "scenario1-desk", "--runs", "0", "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let o = anmi(&["simulate", "scenario1-desk", "--burn-in", "5000", "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"id": "x", "unexpected": true}"#).unwrap();
    let o = anmi(&["simulate", path_str(&cfg), "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn simulate_reads_config_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = anmi::sim::builtin_scenarios()["scenario2-desk"].clone();
    c.id = "custom".into();
    c.runs = 1;
    c.methods = vec![anmi::mcmc::Method::AnConstraint];
    c.chain = anmi::sim::ChainSchedule { iterations: 200, burn_in: 100, thin: 10, refresh_margin_variance: false };
    let cfg = dir.path().join("custom.json");
    fs::write(&cfg, serde_json::to_string_pretty(&c).unwrap()).unwrap();
    let out = dir.path().join("custom-out");
    let o = anmi(&["simulate", path_str(&cfg), "--out", path_str(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let totals = anmi::sim::read_totals_csv(File::open(out.join("custom_totals.csv")).unwrap()).unwrap();
    assert_eq!(totals.rows.len(), 3);
}

#[test]
fn impute_without_missing_values_returns_the_input() {
    let dir = tempfile::tempdir().unwrap();
    let (full, _) = scenario_one_files(dir.path(), 10, -8.0, 3);
    let (_, masked) = scenario_one_files(dir.path(), 10, -8.0, 3);
    assert_eq!(masked.missing_count(), 0);
    let out = dir.path().join("imp");
    let o = anmi(&[
        "impute", "--data", path_str(&dir.path().join("data.csv")), "--margin",
        path_str(&dir.path().join("margin.json")), "--method", "AN+Constraint", "--iterations", "300",
        "--burn-in", "100", "--thin", "20", "--out", path_str(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let files: Vec<_> = fs::read_dir(out.join("completed")).unwrap().collect();
    assert_eq!(files.len(), 10);
    for f in files {
        let d = read_sample_csv(File::open(f.unwrap().path()).unwrap()).unwrap();
        assert_eq!(d, full);
    }
    let mi: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("mi_estimates.json")).unwrap()).unwrap();
    assert_eq!(mi["L"], 10);
    assert_eq!(mi["estimates"]["T_X"]["between"], 0.0);
    let diag: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag["overall_acceptance"], 1.0);
    assert!(out.join("trace.csv").is_file());
    assert!(out.join("run_manifest.json").is_file());
}

#[test]
fn impute_recovers_gamma2_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let (_, masked) = scenario_one_files(dir.path(), 1, -0.25, 11);
    assert!(masked.missing_count() > 1000);
    let out = dir.path().join("imp");
    let o = anmi(&[
        "impute", "--data", path_str(&dir.path().join("data.csv")), "--margin",
        path_str(&dir.path().join("margin.json")), "--method", "an-constraint", "--seed", "5", "--out",
        path_str(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mi: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("mi_estimates.json")).unwrap()).unwrap();
    let g = &mi["estimates"]["gamma_x"];
    let (point, se) = (g["point"].as_f64().unwrap(), g["variance"].as_f64().unwrap().sqrt());
    assert!((point + 1.1).abs() <= 3.0 * se, "gamma2 {point} (SE {se})");
    assert_eq!(mi["L"], 50);
}

#[test]
fn malformed_weights_report_rows() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    fs::write(&data, "stratum,weight,y,x,r\n1,2,1,1,0\n1,abc,2,0,0\n1,2,3,,1\n1,-4,1,0,0\n").unwrap();
    let out = dir.path().join("o");
    let o = anmi(&["impute", "--data", path_str(&data), "--method", "MAR+Weight", "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("row 2") && err.contains("row 4"), "{err}");
    assert!(!out.exists());
}

#[test]
fn constraint_without_margin_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    scenario_one_files(dir.path(), 10, -0.25, 1);
    let o = anmi(&["impute", "--data", path_str(&dir.path().join("data.csv")), "--method", "AN+Constraint+Weight"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("margin"));
    let o = anmi(&["impute", "--data", path_str(&dir.path().join("data.csv")), "--method", "bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn chain_failure_exits_one_without_output() {
    let dir = tempfile::tempdir().unwrap();
    // Every unit has y = 1, so the outcome design is rank deficient.
    let mut text = String::from("stratum,weight,y,x,r\n");
    for i in 0..20 {
        text.push_str(if i % 3 == 0 { "1,5,1,,1\n" } else { "1,5,1,1,0\n" });
    }
    let data = dir.path().join("flat.csv");
    fs::write(&data, text).unwrap();
    let out = dir.path().join("o");
    let o = anmi(&["impute", "--data", path_str(&data), "--method", "AN+Weight", "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("chain seed"));
    assert!(!out.exists());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
}
