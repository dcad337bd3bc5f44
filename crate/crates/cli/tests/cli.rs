//! End-to-end tests of the `esl` binary: artifact round trips, the
//! simulate -> solve pipeline, exit codes, and byte-identical campaign
//! reruns across worker counts.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn esl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_esl"))
        .args(args)
        .output()
        .expect("spawning the esl binary cannot fail")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).to_string()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("esl must exit, not be signalled")
}

/// 16 electrodes over a 60 mm head with a 22 mm lattice: 42 sources, fast
/// enough for every end-to-end test here.
fn gen_tiny_leadfield(dir: &Path) {
    let out = esl(&[
        "leadfield",
        "gen",
        "--set",
        "head_radius_mm=60",
        "--set",
        "grid_spacing_mm=22",
        "--set",
        "n_electrodes=16",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
}

#[test]
fn version_prints_artifact_and_format_versions() {
    let out = esl(&["--version"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("formats: esl-leadfield/1"), "got {text:?}");
}

#[test]
fn help_exits_zero_and_unknown_flag_exits_one() {
    let help = esl(&["--help"]);
    assert_eq!(code(&help), 0);
    assert!(stdout(&help).contains("bench"));

    let unknown = esl(&["--frobnicate"]);
    assert_eq!(code(&unknown), 1);
    assert!(!stderr(&unknown).is_empty());

    let missing = esl(&["solve"]);
    assert_eq!(code(&missing), 1, "missing required args is a usage error");
}

#[test]
fn leadfield_gen_writes_header_and_matrix() {
    let tmp = tempfile::tempdir().unwrap();
    let lf_dir = tmp.path().join("lf");
    gen_tiny_leadfield(&lf_dir);

    let header = fs::read_to_string(lf_dir.join("leadfield.json")).unwrap();
    let header: serde_json::Value = serde_json::from_str(&header).unwrap();
    assert_eq!(header["format"], "esl-leadfield/1");
    assert_eq!(header["n_electrodes"], 16);
    let n_cols = header["n_columns"].as_u64().unwrap();
    let gain = fs::read(lf_dir.join("gain.f64le")).unwrap();
    assert_eq!(gain.len() as u64, 16 * n_cols * 8);

    let info = esl(&["leadfield", "info", "--leadfield", lf_dir.to_str().unwrap()]);
    assert_eq!(code(&info), 0, "stderr: {}", stderr(&info));
    let text = stdout(&info);
    assert!(text.contains("electrodes:  16"), "got {text}");
    assert!(text.contains("normalized:  true"), "got {text}");
}

#[test]
fn leadfield_info_on_missing_dir_is_a_data_error() {
    let out = esl(&["leadfield", "info", "--leadfield", "/nonexistent/lf"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("error:"));
}

#[test]
fn simulate_then_solve_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let lf_dir = tmp.path().join("lf");
    gen_tiny_leadfield(&lf_dir);

    let sim_dir = tmp.path().join("sim");
    let sim = esl(&[
        "simulate",
        "--leadfield",
        lf_dir.to_str().unwrap(),
        "--case",
        "tc-i",
        "--seed",
        "5",
        "--out",
        sim_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&sim), 0, "stderr: {}", stderr(&sim));
    assert!(sim_dir.join("measurements.csv").exists());
    let scenario: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(sim_dir.join("scenario.json")).unwrap()).unwrap();
    assert_eq!(scenario["active_indices"].as_array().unwrap().len(), 1);

    let est_path = tmp.path().join("est.json");
    let solved = esl(&[
        "solve",
        "--solver",
        "sloreta",
        "--leadfield",
        lf_dir.to_str().unwrap(),
        "--measurements",
        sim_dir.join("measurements.csv").to_str().unwrap(),
        "--alpha",
        "1e-9",
        "--out",
        est_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&solved), 0, "stderr: {}", stderr(&solved));
    let est: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&est_path).unwrap()).unwrap();
    assert_eq!(est["solver"], "sloreta");
    assert_eq!(est["converged"], true);
}

#[test]
fn solve_rejects_mismatched_measurements() {
    let tmp = tempfile::tempdir().unwrap();
    let lf_dir = tmp.path().join("lf");
    gen_tiny_leadfield(&lf_dir);
    let y_path = tmp.path().join("y.csv");
    fs::write(&y_path, "1,2\n3,4\n").unwrap();
    let out = esl(&[
        "solve",
        "--solver",
        "mne",
        "--leadfield",
        lf_dir.to_str().unwrap(),
        "--measurements",
        y_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
}

#[test]
fn unsatisfiable_scenario_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let lf_dir = tmp.path().join("lf");
    gen_tiny_leadfield(&lf_dir);
    let case_path = tmp.path().join("impossible.json");
    fs::write(
        &case_path,
        r#"{"name": "impossible", "bands": [{"count": 1, "min_radius_mm": 500}]}"#,
    )
    .unwrap();
    let out = esl(&[
        "simulate",
        "--leadfield",
        lf_dir.to_str().unwrap(),
        "--case",
        case_path.to_str().unwrap(),
        "--out",
        tmp.path().join("sim").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3, "stderr: {}", stderr(&out));
}

fn tiny_campaign_config() -> String {
    r#"{
        "spaces": [{"sphere": {
            "head_radius_mm": 60.0, "conductivity": 0.33, "grid_spacing_mm": 22.0,
            "n_electrodes": 16, "cap_angle_deg": 120.0, "dof": 1
        }}],
        "solvers": [{"solver": "sloreta", "alpha": {"fixed": 1e-9}}],
        "test_cases": [{"name": "tc-i", "bands": [{"count": 1}]}],
        "trials": 3,
        "seed": 9
    }"#
    .to_string()
}

#[test]
fn bench_reruns_are_byte_identical_across_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("campaign.json");
    fs::write(&cfg_path, tiny_campaign_config()).unwrap();

    let d1 = tmp.path().join("run1");
    let d2 = tmp.path().join("run2");
    for (dir, workers) in [(&d1, "2"), (&d2, "1")] {
        let out = esl(&[
            "bench",
            "--config",
            cfg_path.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
            "--workers",
            workers,
        ]);
        assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    }
    for name in ["trials.csv", "results.json", "summary.md"] {
        let a = fs::read(d1.join(name)).unwrap();
        let b = fs::read(d2.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between worker counts");
    }
}

#[test]
fn bench_set_overrides_and_report_rerenders() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("campaign.json");
    fs::write(&cfg_path, tiny_campaign_config()).unwrap();
    let dir = tmp.path().join("run");

    let out = esl(&[
        "bench",
        "--config",
        cfg_path.to_str().unwrap(),
        "--set",
        "trials=2",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let csv = fs::read_to_string(dir.join("trials.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "header + 2 trials, got:\n{csv}");

    let report = esl(&[
        "report",
        "--results",
        dir.join("results.json").to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert_eq!(code(&report), 0, "stderr: {}", stderr(&report));
    assert_eq!(stdout(&report), csv);

    let md = esl(&[
        "report",
        "--results",
        dir.join("results.json").to_str().unwrap(),
        "--format",
        "md",
    ]);
    assert_eq!(code(&md), 0);
    assert!(stdout(&md).starts_with("# Campaign summary"));

    let bad = esl(&[
        "report",
        "--results",
        dir.join("results.json").to_str().unwrap(),
        "--format",
        "yaml",
    ]);
    assert_eq!(code(&bad), 1, "unknown format is a usage error");
}

#[test]
fn bench_without_output_dir_prints_the_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("campaign.json");
    fs::write(&cfg_path, tiny_campaign_config()).unwrap();
    let out = esl(&["bench", "--config", cfg_path.to_str().unwrap(), "--set", "trials=1"]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert!(stdout(&out).starts_with("# Campaign summary"));
}
