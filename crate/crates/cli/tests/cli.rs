use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use twist_echo_cli::config::{Protocol, RunConfig};
use twist_echo_cli::output::{read_csv_rows, read_json_rows, TIMESTAMP_PREFIX};
use twist_echo_cli::run::ResultRow;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_twist-echo"))
}

fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, json).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_config(dir: &Path, json: &str, extra: &[&str]) -> (Output, PathBuf) {
    let cfg = write_config(dir, "config.json", json);
    let out = dir.join(format!("out-{}.dat", extra.join("_").replace(['-', ' '], "")));
    let mut args = vec!["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    (run(&args), out)
}

const SMALL_SWEEP: &str = r#"{
    "protocol": "tact_echo",
    "n_atoms": 40,
    "squeezing_db": -4.0,
    "theta": 0.01,
    "noise": {"kind": "constant", "sigma": 2.0},
    "sweep": {"parameter": "echo_ratio", "values": [1.0, 0.0, 0.5, 2.0]}
}"#;

#[test]
fn output_is_independent_of_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let (a, pa) = run_config(dir.path(), SMALL_SWEEP, &["--threads", "1", "--no-timestamp"]);
    let (b, pb) = run_config(dir.path(), SMALL_SWEEP, &["--threads", "3", "--no-timestamp"]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(code(&b), 0, "{}", stderr(&b));
    let (x, y) = (std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap());
    assert_eq!(x, y);
    assert!(!x.contains(&b'\r'));
}

#[test]
fn rows_are_sorted_by_sweep_value_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (o, p) = run_config(dir.path(), SMALL_SWEEP, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(p).unwrap();
    assert!(text.starts_with(TIMESTAMP_PREFIX));
    let rows = read_csv_rows(text.as_bytes()).unwrap();
    let values: Vec<f64> = rows.iter().map(|r| r.sweep_value.unwrap()).collect();
    assert_eq!(values, vec![0.0, 0.5, 1.0, 2.0]);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.index, i);
        assert_eq!(r.echo_ratio, values[i]);
        r.check().unwrap();
        assert!(r.wall_time_ms.is_some());
        assert!(r.error.is_none());
    }
    let (o, p) = run_config(dir.path(), SMALL_SWEEP, &["--format", "json", "--no-timestamp"]);
    assert_eq!(code(&o), 0);
    let json_rows = read_json_rows(&std::fs::read_to_string(p).unwrap()).unwrap();
    assert_eq!(json_rows.len(), rows.len());
    for (a, b) in json_rows.iter().zip(&rows) {
        a.check().unwrap();
        assert!(a.wall_time_ms.is_none());
        assert_eq!(a.noisy_fisher_information, b.noisy_fisher_information);
    }
}

#[test]
fn csv_floats_keep_full_precision() {
    let dir = tempfile::tempdir().unwrap();
    let (o, p) = run_config(dir.path(), SMALL_SWEEP, &["--no-timestamp"]);
    assert_eq!(code(&o), 0);
    let csv_rows = read_csv_rows(std::fs::File::open(p).unwrap()).unwrap();
    let (o, p) = run_config(dir.path(), SMALL_SWEEP, &["--no-timestamp", "--format", "json"]);
    assert_eq!(code(&o), 0);
    let json_rows = read_json_rows(&std::fs::read_to_string(p).unwrap()).unwrap();
    let strip = |r: &ResultRow| ResultRow {
        wall_time_ms: None,
        ..r.clone()
    };
    for (a, b) in csv_rows.iter().zip(&json_rows) {
        assert_eq!(strip(a), strip(b));
    }
}

#[test]
fn echoed_squeezed_state_overlaps_a_coherent_state() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"protocol": "tact_echo", "n_atoms": 100, "squeezing_db": -6.0, "echo_ratio": 1.0, "theta": 0.2, "noise": {"kind": "none"}}"#;
    let (o, p) = run_config(dir.path(), cfg, &["--no-timestamp"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = read_csv_rows(std::fs::File::open(p).unwrap()).unwrap();
    assert_eq!(rows.len(), 1);
    let f = rows[0].css_fidelity.unwrap();
    assert!((f - 0.998).abs() <= 0.002, "{f}");
    assert!((rows[0].squeezing_db.unwrap() + 6.0).abs() < 0.05);
}

#[test]
fn tact_gain_grows_with_echo_ratio_under_noise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{
        "protocol": "tact_echo", "n_atoms": 1000, "squeezing_db": -6.0,
        "theta_policy": "optimize", "noise": {"kind": "constant", "sigma": 10.0},
        "sweep": {"parameter": "echo_ratio", "range": {"start": 0.0, "stop": 3.0, "step": 0.1}}
    }"#;
    let (o, p) = run_config(dir.path(), cfg, &["--no-timestamp"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = read_csv_rows(std::fs::File::open(p).unwrap()).unwrap();
    assert_eq!(rows.len(), 31);
    for w in rows.windows(2) {
        let (a, b) = (w[0].gain_db.unwrap(), w[1].gain_db.unwrap());
        assert!(b >= a - 1e-6, "r = {}: {a} -> {b}", w[1].echo_ratio);
    }
}

#[test]
fn schema_violations_exit_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (r#"{"protocol": "tact_echo", "n_atoms": 10, "squeezing_db": -3, "t_chi": 0.1, "theta": 0.1}"#, "squeezing_db"),
        (r#"{"protocol": "tact_echo", "n_atoms": 10, "theta": 0.1}"#, "squeezing_db"),
        (
            r#"{"protocol": "tact_echo", "n_atoms": 10, "t_chi": 0.1, "theta": 0.1, "sweep": {"parameter": "echo_ratio", "values": []}}"#,
            "sweep.values",
        ),
        (
            r#"{"protocol": "tact_echo", "n_atoms": 10, "t_chi": 0.1, "theta": 0.1, "sweep": {"parameter": "colour", "values": [1]}}"#,
            "sweep.parameter",
        ),
        (r#"{"protocol": "warp", "n_atoms": 10, "t_chi": 0.1, "theta": 0.1}"#, "protocol"),
        (r#"{"protocol": "tact_echo", "n_atoms": 10, "t_chi": 0.1, "theta": 0.1, "extra": 1}"#, "extra"),
        (r#"{"protocol": "tact_echo", "n_atoms": 10, "t_chi": 0.1}"#, "theta"),
        (
            r#"{"protocol": "tact_echo", "n_atoms": 10, "t_chi": 0.1, "theta": 0.1, "noise": {"kind": "constant", "sigma": -1}}"#,
            "noise",
        ),
        (
            r#"{"protocol": "spinor_echo", "n_atoms": 10, "t_chi": 0.1, "theta": 0.1, "noise": {"kind": "css_level"}, "spinor": {"measurement": "separate"}}"#,
            "noise",
        ),
        (
            r#"{"protocol": "tact_echo", "n_atoms": 10, "t_chi": 0.1, "theta": 0.1, "sweep": {"parameter": "n_atoms", "values": [2.5]}}"#,
            "sweep.values",
        ),
    ];
    for (json, path) in cases {
        let cfg = write_config(dir.path(), "bad.json", json);
        for cmd in ["validate", "run"] {
            let o = run(&[cmd, "--config", cfg.to_str().unwrap()]);
            assert_eq!(code(&o), 2, "{cmd} {json}");
            let err = stderr(&o);
            assert!(err.contains(&format!("{path}:")), "{json}: {err}");
        }
    }
}

#[test]
fn validate_counts_points() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "ok.json", SMALL_SWEEP);
    let o = run(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("4 point"));
    let parsed = RunConfig::from_json(SMALL_SWEEP).unwrap();
    assert_eq!(parsed.protocol, Protocol::TactEcho);
}

#[test]
fn all_rows_failing_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"protocol": "tact_echo", "n_atoms": 8, "squeezing_db": -40.0, "theta": 0.01,
        "sweep": {"parameter": "echo_ratio", "values": [0.0, 1.0]}}"#;
    let (o, p) = run_config(dir.path(), cfg, &["--no-timestamp"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let rows = read_csv_rows(std::fs::File::open(p).unwrap()).unwrap();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert!(r.error.as_deref().unwrap().contains("unreachable"));
        r.check().unwrap();
    }
}

#[test]
fn partially_failing_sweep_succeeds_with_error_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"protocol": "tact_echo", "n_atoms": 8, "squeezing_db": -3.0, "theta": 0.01,
        "sweep": {"parameter": "squeezing_db", "values": [-40.0, -3.0]}}"#;
    let (o, p) = run_config(dir.path(), cfg, &["--no-timestamp"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = read_csv_rows(std::fs::File::open(p).unwrap()).unwrap();
    assert!(rows[0].error.is_some());
    assert!(rows[1].error.is_none());
}

#[test]
fn every_protocol_produces_a_row() {
    let dir = tempfile::tempdir().unwrap();
    let configs = [
        r#"{"protocol": "oat_echo", "n_atoms": 30, "squeezing_db": -5.0, "theta": 0.02}"#,
        r#"{"protocol": "oat_echo_opt", "n_atoms": 30, "squeezing_db": -5.0, "theta_policy": "optimize", "oat": {"alignment": true, "readout": false}}"#,
        r#"{"protocol": "spinor_echo", "n_atoms": 12, "t_chi": 0.05, "theta": 0.02, "spinor": {"variant": "fwm_only", "measurement": "separate"}}"#,
        r#"{"protocol": "qfi_scan", "n_atoms": 30, "t_chi": 0.05}"#,
        r#"{"protocol": "one_mode", "n_atoms": 1000, "squeezing_db": -6.0, "echo_ratio": 2.0, "theta": 0.001, "noise": {"kind": "css_level"}}"#,
    ];
    for cfg in configs {
        let (o, p) = run_config(dir.path(), cfg, &["--no-timestamp"]);
        assert_eq!(code(&o), 0, "{cfg}: {}", stderr(&o));
        let rows = read_csv_rows(std::fs::File::open(p).unwrap()).unwrap();
        assert_eq!(rows.len(), 1);
        rows[0].check().unwrap();
        assert!(rows[0].error.is_none(), "{cfg}: {:?}", rows[0].error);
    }
}

#[test]
fn one_mode_rows_follow_the_closed_forms() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"protocol": "one_mode", "n_atoms": 1000, "t_chi": 0.001, "echo_ratio": 2.0, "theta": 0.001, "noise": {"kind": "constant", "sigma": 10.0}}"#;
    let (o, p) = run_config(dir.path(), cfg, &["--no-timestamp"]);
    assert_eq!(code(&o), 0);
    let r = &read_csv_rows(std::fs::File::open(p).unwrap()).unwrap()[0];
    let (n, g) = (1000.0f64, 1.0f64);
    let f = n * (2.0 * g).exp();
    let noisy = 1.0 / ((-2.0 * g).exp() / n + 4.0 * 100.0 / (n * n * (4.0 * g).exp()));
    assert!((r.fisher_information.unwrap() / f - 1.0).abs() < 1e-12);
    assert!((r.noisy_fisher_information.unwrap() / noisy - 1.0).abs() < 1e-12);
    assert!((r.magnification.unwrap() - (2.0 * g).exp()).abs() < 1e-9);
}

#[test]
fn figure_recipes_write_one_file_per_panel() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fig3");
    let o = run(&["figure", "fig3", "--max-n", "40", "--out-dir", out.to_str().unwrap(), "--no-timestamp"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for panel in ["fig3a", "fig3b", "fig3c", "fig3d"] {
        let rows = read_csv_rows(std::fs::File::open(out.join(format!("{panel}.csv"))).unwrap()).unwrap();
        assert!(rows.iter().all(|r| r.n_atoms == 40));
        assert!(rows.iter().any(|r| r.protocol == Protocol::OneMode));
        for r in &rows {
            r.check().unwrap();
        }
    }
    let out = dir.path().join("fig8");
    let o = run(&["figure", "fig8", "--max-n", "100", "--out-dir", out.to_str().unwrap(), "--no-timestamp"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let peaks = std::fs::read_to_string(out.join("fig8_peaks.csv")).unwrap();
    assert!(peaks.starts_with("n_atoms,"));
    assert_eq!(peaks.lines().count(), 2);
    let o = run(&["figure", "fig8", "--max-n", "50", "--out-dir", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn scaling_recipe_reports_slopes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["figure", "fig6", "--max-n", "400", "--out-dir", dir.path().to_str().unwrap(), "--no-timestamp"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("fig6_slopes.csv")).unwrap();
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let records: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(records.len(), 3);
    let tact_echo = &records[0];
    assert_eq!(&tact_echo[1], "tact_echo");
    let slope: f64 = tact_echo[3].parse().unwrap();
    assert!(slope > 1.5, "{slope}");
}
