use std::path::Path;
use std::process::{Command, Output};

use mcchannel::channel::{peak_time, VerticalChannelParams};
use mcchannel::reference;
use serde_json::Value;

fn mc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcchannel"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = mc(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn rows(csv: &str) -> Vec<Vec<f64>> {
    csv.lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with('t'))
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect()
}

fn synth(dir: &Path, out: &str, extra: &[&str]) -> Vec<String> {
    let mut args = vec!["synth", "--trials", "6", "--output", out];
    args.extend(extra);
    ok(dir, &args);
    (1..=6).map(|k| format!("{out}/trial_{k}.csv")).collect()
}

fn average(report: &Value) -> [f64; 3] {
    let avg = &report["average"];
    [
        avg["a"].as_f64().unwrap(),
        avg["b"].as_f64().unwrap(),
        avg["e"].as_f64().unwrap(),
    ]
}

fn fit_json(dir: &Path, files: &[String], extra: &[&str]) -> Value {
    let mut args = vec!["fit", "--format", "json"];
    args.extend(extra);
    args.extend(files.iter().map(String::as_str));
    serde_json::from_str(&ok(dir, &args)).unwrap()
}

#[test]
fn eval_vertical_peaks_near_1_2_s() {
    let dir = tempfile::tempdir().unwrap();
    let data = rows(&ok(dir.path(), &["eval", "--rate", "100"]));
    assert_eq!(data.len(), 1100);
    let peak = data.iter().max_by(|x, y| x[1].total_cmp(&y[1])).unwrap();
    assert!((peak[0] - 1.2).abs() < 0.1, "peak at {}", peak[0]);
    let p = VerticalChannelParams::new(
        reference::A,
        reference::B,
        reference::E,
        reference::FIT_DISTANCE,
    )
    .unwrap();
    assert!((peak[0] - peak_time(&p).unwrap()).abs() <= 0.005);
    // The reference value at t = 1 s.
    let at1 = data.iter().find(|r| (r[0] - 1.0).abs() < 1e-9).unwrap();
    assert!((at1[1] - 0.996308972).abs() < 1e-8);
}

#[test]
fn eval_diffusion_is_positive_and_single_peaked() {
    let dir = tempfile::tempdir().unwrap();
    let data = rows(&ok(
        dir.path(),
        &[
            "eval",
            "--model",
            "diffusion",
            "--t-end",
            "2000",
            "--rate",
            "1",
        ],
    ));
    assert!(data.iter().all(|r| r[1] > 0.0));
    let k = data
        .iter()
        .enumerate()
        .max_by(|x, y| x.1[1].total_cmp(&y.1[1]))
        .unwrap()
        .0;
    assert!(data[..=k].windows(2).all(|w| w[0][1] < w[1][1]));
    assert!(data[k..].windows(2).all(|w| w[0][1] > w[1][1]));
    // d^2 / (2 D) for 10 cm in isopropyl alcohol.
    let tp = 100.0 / (2.0 * reference::DIFFUSION_COEFFICIENT);
    assert!((data[k][0] - tp).abs() <= 1.0);
}

#[test]
fn eval_rejects_empty_grid_and_bad_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let out = mc(dir.path(), &["eval", "--t-start", "5", "--t-end", "5"]);
    assert_eq!(out.status.code(), Some(2));
    let out = mc(dir.path(), &["eval", "--a", "-1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--a"));
}

#[test]
fn fit_recovers_noiseless_reference() {
    let dir = tempfile::tempdir().unwrap();
    let files = synth(dir.path(), "data", &[]);
    let report = fit_json(dir.path(), &files, &[]);
    let want = [reference::A, reference::B, reference::E];
    for (got, want) in average(&report).iter().zip(want) {
        assert!(((got - want) / want).abs() <= 1e-6, "{got} vs {want}");
    }
    assert_eq!(report["trials"].as_array().unwrap().len(), 6);
}

#[test]
fn fit_recovers_noisy_reference_within_five_percent() {
    let dir = tempfile::tempdir().unwrap();
    let files = synth(dir.path(), "data", &["--noise", "0.01", "--seed", "17"]);
    let report = fit_json(dir.path(), &files, &[]);
    let want = [reference::A, reference::B, reference::E];
    for (got, want) in average(&report).iter().zip(want) {
        assert!(((got - want) / want).abs() <= 0.05, "{got} vs {want}");
    }
}

#[test]
fn fit_fixed_baseline_removes_offset() {
    let dir = tempfile::tempdir().unwrap();
    let files = synth(dir.path(), "data", &["--baseline-offset", "0.3"]);
    let report = fit_json(dir.path(), &files, &["--baseline", "0.3"]);
    let want = [reference::A, reference::B, reference::E];
    for (got, want) in average(&report).iter().zip(want) {
        assert!(((got - want) / want).abs() <= 1e-6, "{got} vs {want}");
    }
}

#[test]
fn fit_fails_on_malformed_trace_unless_keep_going() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = synth(dir.path(), "data", &[]);
    std::fs::write(dir.path().join("bad.csv"), "0.1,0.2\n0.2,oops\n").unwrap();
    files.push("bad.csv".into());
    let mut args = vec!["fit", "--output", "strict"];
    args.extend(files.iter().map(String::as_str));
    let out = mc(dir.path(), &args);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("trial bad:"));
    assert!(!dir.path().join("strict/fit_report.json").exists());

    let mut args = vec!["fit", "--keep-going", "--output", "partial"];
    args.extend(files.iter().map(String::as_str));
    let out = mc(dir.path(), &args);
    assert_eq!(out.status.code(), Some(1));
    let report = json(dir.path().join("partial/fit_report.json"));
    assert_eq!(report["trials"].as_array().unwrap().len(), 6);
    assert_eq!(report["errors"].as_array().unwrap().len(), 1);
    assert!(report["average"].is_object());
    let manifest = json(dir.path().join("partial/manifest.json"));
    assert_eq!(manifest["success"], Value::Bool(false));
}

#[test]
fn fit_normalize_makes_b_scale_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let files = synth(dir.path(), "one", &["--noise", "0.01", "--seed", "3"]);
    let doubled: Vec<String> = files.iter().map(|f| f.replace("one/", "two/")).collect();
    std::fs::create_dir(dir.path().join("two")).unwrap();
    for (src, dst) in files.iter().zip(&doubled) {
        let text = std::fs::read_to_string(dir.path().join(src)).unwrap();
        let scaled: String = text
            .lines()
            .map(|l| {
                if l.starts_with('#') {
                    format!("{l}\n")
                } else {
                    let (t, v) = l.split_once(',').unwrap();
                    format!("{t},{}\n", 2.0 * v.parse::<f64>().unwrap())
                }
            })
            .collect();
        std::fs::write(dir.path().join(dst), scaled).unwrap();
    }
    let r1 = fit_json(dir.path(), &files, &["--normalize"]);
    let r2 = fit_json(dir.path(), &doubled, &["--normalize"]);
    let (p1, p2) = (average(&r1), average(&r2));
    for i in 0..3 {
        assert!(
            (p1[i] - p2[i]).abs() <= 1e-9 * p1[i].abs().max(1e-3),
            "{p1:?} vs {p2:?}"
        );
    }
}

#[test]
fn compare_against_itself_and_with_lag() {
    let dir = tempfile::tempdir().unwrap();
    let files = synth(dir.path(), "data", &[]);
    let mut args = vec!["compare", "--output", "self"];
    args.extend(files.iter().map(String::as_str));
    ok(dir.path(), &args);
    let csv = std::fs::read_to_string(dir.path().join("self/compare.csv")).unwrap();
    for r in rows(&csv) {
        assert!((r[1] - r[2]).abs() <= 1e-8);
    }
    let summary = json(dir.path().join("self/compare_summary.json"));
    assert_eq!(summary["peak_lag_s"].as_f64(), Some(0.0));

    // Slower spread in the data than in the model delays the experiment peak.
    let slow = synth(dir.path(), "slow", &["--b", "90"]);
    let mut args = vec!["compare", "--output", "lag"];
    args.extend(slow.iter().map(String::as_str));
    let out = mc(dir.path(), &args);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("peak_lag_s="));
    let summary = json(dir.path().join("lag/compare_summary.json"));
    assert!(summary["peak_lag_s"].as_f64().unwrap() > 0.0);
}

#[test]
fn compare_rejects_mismatched_spans() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--output", "a"]);
    ok(dir.path(), &["synth", "--t-end", "5", "--output", "b"]);
    let out = mc(
        dir.path(),
        &[
            "compare",
            "--window-end",
            "20",
            "a/trial_1.csv",
            "b/trial_1.csv",
        ],
    );
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("11") && err.contains('5'), "{err}");
}

#[test]
fn simulate_is_deterministic_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"particle_count": 20000, "time_step": 0.01, "duration": 1.0,
        "diffusion_coefficient": 0.25, "rng_seed": 4, "bin_width": 0.05}"#;
    std::fs::write(dir.path().join("sim.json"), cfg).unwrap();
    ok(dir.path(), &["simulate", "sim.json", "--output", "r1"]);
    ok(dir.path(), &["simulate", "sim.json", "--output", "r2"]);
    let p1 = std::fs::read(dir.path().join("r1/profile_0.csv")).unwrap();
    let p2 = std::fs::read(dir.path().join("r2/profile_0.csv")).unwrap();
    assert_eq!(p1, p2);
    ok(
        dir.path(),
        &["simulate", "sim.json", "--seed", "5", "--output", "r3"],
    );
    assert_ne!(
        p1,
        std::fs::read(dir.path().join("r3/profile_0.csv")).unwrap()
    );
    let summary = json(dir.path().join("r1/summary.json"));
    assert!(summary.to_string().contains("l1_vs_analytic"));

    std::fs::write(dir.path().join("zero.json"), cfg.replace("20000", "0")).unwrap();
    let out = mc(dir.path(), &["simulate", "zero.json", "--output", "r4"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("particle_count"));
}

#[test]
fn flags_override_config_file_over_defaults() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.json"), r#"{"a": 2.5, "noise": 0.02}"#).unwrap();
    ok(dir.path(), &["synth", "--output", "defaults"]);
    ok(
        dir.path(),
        &["--config", "cfg.json", "synth", "--output", "config"],
    );
    ok(
        dir.path(),
        &[
            "--config", "cfg.json", "synth", "--a", "3.5", "--output", "flag",
        ],
    );
    let amp = |d: &str| {
        let m = json(dir.path().join(d).join("manifest.json"));
        (
            m["config"]["params"]["amplitude"].as_f64().unwrap(),
            m["config"]["noise"].as_f64().unwrap(),
        )
    };
    assert_eq!(amp("defaults"), (reference::A, 0.0));
    assert_eq!(amp("config"), (2.5, 0.02));
    assert_eq!(amp("flag"), (3.5, 0.02));

    std::fs::write(dir.path().join("typo.json"), r#"{"amplitude": 2.5}"#).unwrap();
    let out = mc(dir.path(), &["--config", "typo.json", "synth"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn manifest_lists_outputs_and_input_digests() {
    let dir = tempfile::tempdir().unwrap();
    let files = synth(dir.path(), "data", &[]);
    let mut args = vec!["fit", "--output", "fit"];
    args.extend(files.iter().map(String::as_str));
    let out = mc(dir.path(), &args);
    assert_eq!(out.status.code(), Some(0));
    let m = json(dir.path().join("fit/manifest.json"));
    assert_eq!(m["success"], Value::Bool(true));
    assert_eq!(m["subcommand"], "fit");
    for f in m["outputs"].as_array().unwrap() {
        assert!(
            dir.path().join("fit").join(f.as_str().unwrap()).exists(),
            "{f}"
        );
    }
    let inputs = m["inputs"].as_array().unwrap();
    assert_eq!(inputs.len(), 6);
    assert!(inputs
        .iter()
        .all(|i| i["sha256"].as_str().unwrap().len() == 64));
}

#[test]
fn fit_accepts_initial_guess() {
    let dir = tempfile::tempdir().unwrap();
    let files = synth(dir.path(), "data", &[]);
    let report = fit_json(dir.path(), &files[..1], &["--initial", "1,30,0.01"]);
    assert!(((average(&report)[1] - reference::B) / reference::B).abs() <= 1e-6);
    let out = mc(dir.path(), &["fit", "--initial", "1,30", &files[0]]);
    assert_eq!(out.status.code(), Some(2));
}
