use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::{json, Value};
use sns_core::experiment::{
    load_or_calibrate, monotonicity_violations, run_calibration, run_global_sweep, run_local,
    run_oscillating_sweep, run_verify, wilson_interval, ExperimentConfig, Manifest,
};
use sns_core::field_ops::{make_initial_data, InitialDataSpec};
use sns_core::grid::GridSpec;
use sns_core::stochastic::NoiseModel;
use sns_core::Error;

fn noise(sigma: f64) -> Value {
    serde_json::to_value(NoiseModel::default_linear(sigma)).unwrap()
}

fn base(out: &Path, sigma: f64) -> Value {
    json!({
        "grid": { "dimension": 2, "points_per_axis": 32, "box_length": std::f64::consts::TAU },
        "solver": {
            "p": 4.0, "r": 3.0, "n_cutoff": 10.0,
            "picard_tol": 1e-8, "picard_max_iter": 20,
            "t_end": 0.1, "dt": 0.01
        },
        "noise": noise(sigma),
        "initial": { "kind": "gaussian_divfree", "amplitude": 0.05, "profile_width": 0.5 },
        "n_paths": 6,
        "delta_values": [0.5, 0.05, 0.0],
        "master_seed": 7,
        "output_dir": out,
        "calibration": {
            "dt": 0.02, "t_end": 0.1, "refinements": 2,
            "ensemble": 2, "paths": 24, "u0_samples": 4
        },
        "local": { "t0_values": [0.1, 0.05, 0.02] }
    })
}

fn config(v: &Value) -> ExperimentConfig {
    let c: ExperimentConfig = serde_json::from_value(v.clone()).unwrap();
    c.validate().unwrap();
    c
}

#[test]
fn wilson_interval_brackets_estimate() {
    let (lo, hi) = wilson_interval(50, 100, 1.96);
    assert!(lo < 0.5 && hi > 0.5);
    assert!((lo - 0.4038).abs() < 1e-3 && (hi - 0.5962).abs() < 1e-3);
    assert_eq!(wilson_interval(10, 10, 1.96).1, 1.0);
    assert_eq!(wilson_interval(0, 10, 1.96).0, 0.0);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = base(dir.path(), 0.05);
    v["surprise"] = json!(1);
    assert!(serde_json::from_value::<ExperimentConfig>(v).is_err());
    let mut v = base(dir.path(), 0.05);
    v["delta_values"] = json!([0.1, 0.2]);
    let c: ExperimentConfig = serde_json::from_value(v).unwrap();
    assert!(c.validate().is_err());
}

#[test]
fn calibration_is_deterministic_and_self_consistent() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (m1, h1) = run_calibration(&config(&base(a.path(), 0.05))).unwrap();
    let (m2, h2) = run_calibration(&config(&base(b.path(), 0.05))).unwrap();
    assert_eq!(h1, h2);
    assert_eq!(
        fs::read(a.path().join("manifest.json")).unwrap(),
        fs::read(b.path().join("manifest.json")).unwrap()
    );
    assert_eq!(m1, m2);
    let r = m1.besov.r;
    assert_eq!(m1.radius, (4.0 * m1.c_star).powf(-1.0 / r).min(1.0));
    assert!(m1.noise_model.audit.as_ref().unwrap().passed);
    let (m3, h3) = Manifest::load(&a.path().join("manifest.json")).unwrap();
    assert_eq!((m3, h3), (m1, h1));
}

#[test]
fn local_run_with_zero_noise_and_small_data_survives_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(&base(dir.path(), 0.0));
    let report = run_local(&c).unwrap();
    assert!(report.curve.iter().all(|p| p.survival == 1.0));
    let t0s: Vec<f64> = report.curve.iter().map(|p| p.x).collect();
    assert_eq!(t0s, vec![0.1, 0.05, 0.02]);
    assert!(dir.path().join("local.csv").exists());

    let mut one = base(dir.path(), 0.0);
    one["n_paths"] = json!(1);
    let first = run_local(&config(&one)).unwrap();
    let lines = fs::read(dir.path().join("paths.jsonl")).unwrap();
    let second = run_local(&config(&one)).unwrap();
    assert_eq!(first.curve, second.curve);
    assert_eq!(lines, fs::read(dir.path().join("paths.jsonl")).unwrap());
}

#[test]
fn local_survival_grows_as_window_shrinks() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = base(dir.path(), 0.05);
    v["initial"]["amplitude"] = json!(3.0);
    v["n_paths"] = json!(12);
    let report = run_local(&config(&v)).unwrap();
    assert_eq!(monotonicity_violations(&report.curve, 0.0), 0);
    assert!(report.curve.first().unwrap().survival < 1.0);
}

#[test]
fn global_sweep_curve_and_zero_data() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(&base(dir.path(), 0.05));
    let report = run_global_sweep(&c).unwrap();
    assert_eq!(report.curve.len(), 3);
    assert_eq!(report.curve[2].survival, 1.0);
    assert_eq!(report.curve[2].x, 0.0);
    assert_eq!(monotonicity_violations(&report.curve, 2.0), 0);
    let csv = fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    assert!(csv.starts_with("delta,survival,ci_low,ci_high,n_paths\n"));
    assert_eq!(csv.lines().count(), 4);
    let lines = fs::read_to_string(dir.path().join("paths.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 18);
    let first: Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    for key in ["path_id", "seed", "status", "sigma_hit", "rho_N_hit", "tau_N", "final_norms"] {
        assert!(first.get(key).is_some(), "missing {key}");
    }
    let report_json: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let (_, hash) = Manifest::load(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(report_json["manifest_sha256"], json!(hash));
}

#[test]
fn global_sweep_refuses_additive_noise() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = base(dir.path(), 0.05);
    let additive = NoiseModel::additive(vec![
        sns_core::stochastic::NoiseMode {
            shape: sns_core::stochastic::ModeShape::Cos,
            wavevector: [1, 0, 0],
            sigma: 0.1,
            direction: Some(1),
        },
    ]);
    v["noise"] = serde_json::to_value(additive).unwrap();
    let c = config(&v);
    let err = run_global_sweep(&c).unwrap_err();
    assert!(matches!(err, Error::Refused(_)), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn stale_manifest_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(&base(dir.path(), 0.0));
    run_calibration(&c).unwrap();
    let mut v = base(dir.path(), 0.0);
    v["grid"]["points_per_axis"] = json!(64);
    assert!(load_or_calibrate(&config(&v)).is_err());
}

#[test]
fn oscillating_sweep_norms() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = base(dir.path(), 0.05);
    v["grid"] = json!({ "dimension": 3, "points_per_axis": 32, "box_length": std::f64::consts::TAU });
    v["initial"] = json!({ "kind": "oscillating", "amplitude": 0.05, "p_exponent": 6.0, "profile_width": 0.6 });
    v["solver"]["t_end"] = json!(0.02);
    v["n_paths"] = json!(2);
    v["noise"] = noise(0.0);
    v["oscillating"] = json!({ "epsilons": [0.5, 0.25, 0.0625] });
    let report = run_oscillating_sweep(&config(&v)).unwrap();
    let rows = &report.oscillations;
    assert_eq!(rows.len(), 3);
    assert!(rows[2].skipped.is_some(), "1/16 is not resolvable on 32^3");
    let grid = GridSpec::periodic(3, 32).unwrap();
    for row in rows.iter().take(2) {
        let spec = InitialDataSpec::oscillating(0.05, row.epsilon, 6.0, 0.6);
        let sup = make_initial_data(&spec, &grid).unwrap().field.linf_norm();
        assert!((row.linf.unwrap() - sup).abs() <= 1e-12 * sup);
    }
    // amplitude * eps^(3/p - 1) with p = 6 and eps halved.
    let pre_ratio = rows[1].prefactor.unwrap() / rows[0].prefactor.unwrap();
    assert!((pre_ratio - 2f64.sqrt()).abs() < 1e-12);
    let crit = [rows[0].critical_norm.unwrap(), rows[1].critical_norm.unwrap()];
    assert!(crit[0].max(crit[1]) / crit[0].min(crit[1]) <= 2.0);
    assert!(rows.iter().take(2).all(|r| r.max_divergence.unwrap() <= 1e-10));
    assert!(dir.path().join("oscillating.csv").exists());
}

#[test]
fn verify_passes_and_detects_corrupt_partition() {
    let dir = tempfile::tempdir().unwrap();
    let v = base(dir.path(), 0.05);
    let verdict = run_verify(&config(&v)).unwrap();
    let failed: Vec<_> = verdict.suites.iter().filter(|s| !s.passed).collect();
    assert!(verdict.passed, "{failed:#?}");
    assert!(verdict.suites.len() >= 9);
    assert!(verdict.suites.iter().all(|s| !s.property.is_empty()));

    let mut bad = v.clone();
    bad["verify"] = json!({ "corrupt_partition": { "shell": 1, "factor": 1.01 } });
    let verdict = run_verify(&config(&bad)).unwrap();
    assert!(!verdict.passed);
    let pou = verdict.suites.iter().find(|s| s.name == "partition_of_unity").unwrap();
    assert!(!pou.passed);
}

fn sns(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sns")).args(args).output().unwrap()
}

#[test]
fn cli_exit_codes_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.json");
    let out = dir.path().join("out");
    fs::write(&cfg, serde_json::to_string(&base(&out, 0.0)).unwrap()).unwrap();
    let cfg_s = cfg.to_str().unwrap();
    let out_s = out.to_str().unwrap();

    let run = sns(&["global-sweep", "--config", cfg_s, "--paths", "2", "--seed", "3", "--workers", "1"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let report: Value = serde_json::from_slice(&run.stdout).unwrap();
    assert_eq!(report["n_paths"], json!(2));
    assert_eq!(report["master_seed"], json!(3));
    assert!(out.join("curve.csv").exists());

    let mut bad = base(&out, 0.0);
    bad["verify"] = json!({ "corrupt_partition": { "shell": 1, "factor": 1.5 } });
    let bad_cfg = dir.path().join("bad.json");
    fs::write(&bad_cfg, serde_json::to_string(&bad).unwrap()).unwrap();
    let run = sns(&["verify", "--config", bad_cfg.to_str().unwrap(), "--out", out_s]);
    assert_eq!(run.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&run.stdout).contains("FAIL partition_of_unity"));

    let mut unknown = base(&out, 0.0);
    unknown["typo"] = json!(true);
    fs::write(&bad_cfg, serde_json::to_string(&unknown).unwrap()).unwrap();
    let run = sns(&["local", "--config", bad_cfg.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(2));

    let run = sns(&["local", "--config", cfg_s, "--workers", "0"]);
    assert_eq!(run.status.code(), Some(2));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_str().unwrap();
        if name.starts_with("noise") {
            NoiseModel::from_json_file(&path).unwrap();
        } else {
            ExperimentConfig::from_file(&path).unwrap();
        }
        n += 1;
    }
    assert!(n >= 2);
}
