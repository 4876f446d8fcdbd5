use std::process::{Command, Output};

use caplab::shattering::ShatterCertificate;
use caplab_cli::commands::parse_certificate;
use caplab_cli::config::ExperimentConfig;

fn caplab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_caplab"))
        .args(args)
        .env_remove("CAPLAB_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// Data rows of a CSV report as maps from column name to cell.
fn csv_rows(text: &str) -> Vec<std::collections::BTreeMap<String, String>> {
    let mut lines = text.lines();
    let Some(header) = lines.next() else { return Vec::new() };
    let cols: Vec<&str> = header.split(',').collect();
    lines
        .map(|l| cols.iter().map(|c| c.to_string()).zip(l.split(',').map(String::from)).collect())
        .collect()
}

fn tmp(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("caplab-cli-tests-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn conv_linear_bound_row() {
    let o = caplab(&[
        "bounds", "--kind", "conv-linear", "--b", "1", "--B", "1", "--bx", "1", "--L", "1", "--eps", "1", "--ophi", "2",
        "--format", "csv",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = csv_rows(&stdout(&o));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["m"], "4");
}

#[test]
fn smooth_bound_with_identity() {
    let o = caplab(&[
        "bounds", "--kind", "smooth", "--sigma", "identity", "--b", "1", "--B", "1", "--bx", "1", "--eps", "0.5",
        "--format", "csv",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(csv_rows(&stdout(&o))[0]["m"], "4");
}

#[test]
fn eps_sweep_quadruples() {
    let o = caplab(&["bounds", "--kind", "conv-linear", "--eps", "1,0.5,0.25", "--format", "csv"]);
    let ms: Vec<f64> = csv_rows(&stdout(&o)).iter().map(|r| r["m"].parse().unwrap()).collect();
    assert_eq!(ms, vec![2.0, 8.0, 32.0]);
}

#[test]
fn constants_override_changes_bounds() {
    let base = caplab(&["bounds", "--kind", "conv-pool", "--n", "4", "--format", "csv"]);
    let scaled = caplab(&["bounds", "--kind", "conv-pool", "--n", "4", "--constants", "c=4", "--format", "csv"]);
    let m0: f64 = csv_rows(&stdout(&base))[0]["m"].parse().unwrap();
    let m1: f64 = csv_rows(&stdout(&scaled))[0]["m"].parse().unwrap();
    assert!(m1 > m0);
    let json = caplab(&["bounds", "--kind", "conv-pool", "--n", "4", "--constants", "c=4"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&json)).unwrap();
    assert_eq!(v["command"], "bounds");
    assert_eq!(v["rows"][0][12], serde_json::json!(m1));
}

#[test]
fn conv_certificate_passes_and_round_trips() {
    let cert_path = tmp("conv-cert.json");
    let o = caplab(&[
        "shatter",
        "--kind",
        "conv",
        "--B",
        "1",
        "--bx",
        "1",
        "--eps",
        "0.5",
        "--n",
        "4",
        "--seed",
        "1",
        "--certificate",
        cert_path.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let cert: ShatterCertificate = parse_certificate(&text).unwrap();
    assert!(cert.passed);
    assert_eq!(cert.labelings_checked, 4);
    assert_eq!(std::fs::read_to_string(&cert_path).unwrap(), text);
    let again = serde_json::to_string_pretty(&cert).unwrap() + "\n";
    assert_eq!(again, text);
    assert_eq!(parse_certificate(&again).unwrap(), cert);
}

#[test]
fn failed_certificate_exits_one_and_round_trips() {
    let o = caplab(&[
        "shatter", "--kind", "frobenius", "--n", "8", "--d", "64", "--eps", "0.02", "--max-points", "6", "--max-tries",
        "1", "--seed", "5",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let cert = parse_certificate(&stdout(&o)).unwrap();
    assert!(!cert.passed && !cert.failures.is_empty());
    let text = serde_json::to_string(&cert).unwrap();
    assert_eq!(parse_certificate(&text).unwrap(), cert);
}

#[test]
fn sparse_certificate_with_networks() {
    let o = caplab(&[
        "shatter",
        "--kind",
        "frobenius",
        "--n",
        "8",
        "--d",
        "64",
        "--eps",
        "0.02",
        "--max-points",
        "6",
        "--seed",
        "5",
        "--set",
        "keep_networks=true",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let cert = parse_certificate(&stdout(&o)).unwrap();
    assert!(cert.passed);
    assert!(cert.records.iter().all(|r| r.network.is_some()));
    assert_eq!(cert.seed, Some(5));
}

#[test]
fn identity_spectral_construction_is_infeasible() {
    let o = caplab(&["shatter", "--kind", "spectral", "--sigma", "identity", "--n", "16", "--eps", "0.07"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("infeasible"), "{}", stderr(&o));
}

#[test]
fn conv_width_is_rounded_down() {
    let o = caplab(&["shatter", "--kind", "conv", "--n", "3", "--eps", "0.5", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("warning: rounded n to 2"));
    assert_eq!(csv_rows(&stdout(&o))[0]["n"], "2");
}

#[test]
fn enumeration_cap_is_enforced() {
    let o = caplab(&["shatter", "--kind", "conv", "--B", "2", "--eps", "0.5", "--n", "4", "--enum-cap", "4"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cap"), "{}", stderr(&o));
}

#[test]
fn linear_class_estimate_passes_its_ceiling() {
    let o = caplab(&[
        "estimate", "--sigma", "identity", "--width", "2", "--m", "64", "--d", "8", "--trials", "100", "--compare",
        "linear", "--format", "csv",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let row = &csv_rows(&stdout(&o))[0];
    assert_eq!(row["check"], "PASS");
    assert_eq!(row["bound"], "0.125");
}

#[test]
fn width_sweep_reports_monotone_flag() {
    let o = caplab(&[
        "estimate", "--width", "1,4,16", "--m", "16", "--d", "256", "--trials", "20", "--steps", "200", "--format",
        "csv",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = csv_rows(&stdout(&o));
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r["monotone"] == "true"));
}

#[test]
fn zero_trials_is_a_usage_error() {
    let o = caplab(&["estimate", "--trials", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(caplab(&["bounds", "--nope", "1"]).status.code(), Some(2));
    assert_eq!(caplab(&["bounds", "--kind", "frobenius", "--set", "typo=1"]).status.code(), Some(2));
}

#[test]
fn erf_plot_is_odd() {
    let o = caplab(&[
        "activation-plot", "--sigma", "erf:1", "--from", "-3", "--to", "3", "--samples", "7", "--format", "csv",
    ]);
    let rows = csv_rows(&stdout(&o));
    assert_eq!(rows.len(), 7);
    assert_eq!(rows[3]["z"], "0");
    assert_eq!(rows[3]["erf:1"], "0");
    for i in 0..3 {
        let a: f64 = rows[i]["erf:1"].parse().unwrap();
        let b: f64 = rows[6 - i]["erf:1"].parse().unwrap();
        assert_eq!(a, -b);
    }
}

#[test]
fn smoothed_relu_plot_value() {
    let o = caplab(&[
        "activation-plot", "--sigma", "smoothed_relu:5", "--from", "2", "--to", "2", "--samples", "1", "--format", "csv",
    ]);
    let v: f64 = csv_rows(&stdout(&o))[0]["smoothed_relu:5"].parse().unwrap();
    // The gap to relu far from the origin is 1/(2r√π).
    let want = 2.0 - 1.0 / (10.0 * std::f64::consts::PI.sqrt());
    assert!((v - want).abs() < 1e-14, "{v}");
}

#[test]
fn zero_samples_give_empty_output() {
    let o = caplab(&["activation-plot", "--samples", "0", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "");
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let args = [
        "estimate", "--width", "3", "--m", "6", "--d", "5", "--trials", "8", "--steps", "50", "--seed", "11",
    ];
    let a = caplab(&args);
    let b = caplab(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let c = caplab(&["estimate", "--width", "3", "--m", "6", "--d", "5", "--trials", "8", "--steps", "50", "--seed", "12"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn seed_precedence() {
    let config = tmp("seed.toml");
    std::fs::write(&config, "seed = 21\n").unwrap();
    let seed_of = |extra: &[&str], env: Option<&str>| -> u64 {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_caplab"));
        cmd.args(["activation-plot", "--samples", "1"]).args(extra).env_remove("CAPLAB_SEED");
        if let Some(e) = env {
            cmd.env("CAPLAB_SEED", e);
        }
        let out = cmd.output().unwrap();
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        v["seed"].as_u64().unwrap()
    };
    assert_eq!(seed_of(&[], None), 0);
    assert_eq!(seed_of(&[], Some("9")), 9);
    let cfg = config.to_str().unwrap();
    assert_eq!(seed_of(&["--config", cfg], Some("9")), 21);
    assert_eq!(seed_of(&["--config", cfg, "--seed", "3"], Some("9")), 3);
}

#[test]
fn config_file_with_flag_overrides() {
    let config = tmp("bounds.toml");
    std::fs::write(
        &config,
        "format = \"csv\"\n\n[bounds]\nkind = \"conv-linear\"\neps = [1.0, 0.5]\nophi = 2\n",
    )
    .unwrap();
    let cfg = config.to_str().unwrap();
    let from_file = csv_rows(&stdout(&caplab(&["bounds", "--config", cfg])));
    assert_eq!(from_file.len(), 2);
    assert_eq!(from_file[0]["m"], "4");
    let overridden = csv_rows(&stdout(&caplab(&["bounds", "--config", cfg, "--eps", "0.25"])));
    assert_eq!(overridden.len(), 1);
    assert_eq!(overridden[0]["m"], "64");
    let parsed = ExperimentConfig::load(&config).unwrap();
    assert_eq!(ExperimentConfig::parse(&parsed.emit()).unwrap(), parsed);
}

#[test]
fn sweep_over_grid() {
    let o = caplab(&[
        "sweep", "--command", "bounds", "--grid", "eps=1,0.5", "--grid", "ophi=1,2", "--set", "kind=conv-linear",
        "--format", "csv",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = csv_rows(&stdout(&o));
    let ms: Vec<&str> = rows.iter().map(|r| r["m"].as_str()).collect();
    assert_eq!(ms, vec!["2", "4", "8", "16"]);
    assert_eq!(rows[3]["sweep_eps"], "0.5");
    assert_eq!(rows[3]["sweep_ophi"], "2");
}

#[test]
fn sweep_over_seeds_and_shatter() {
    let o = caplab(&[
        "sweep", "--command", "shatter", "--grid", "seed=1,2", "--set", "kind=spectral", "--set", "n=16", "--set",
        "eps=0.07", "--set", "max_points=4", "--format", "csv",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = csv_rows(&stdout(&o));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["seed"], "1");
    assert_eq!(rows[1]["seed"], "2");
    assert!(rows.iter().all(|r| r["passed"] == "true"));
}

#[test]
fn out_flag_writes_file() {
    let path = tmp("plot.csv");
    let o = caplab(&[
        "activation-plot", "--samples", "3", "--format", "csv", "--out", path.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "");
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("z,erf:1,smoothed_relu:1\n"));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn in_process_run_matches_binary() {
    let args = ["caplab", "bounds", "--kind", "frobenius", "--format", "csv"];
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = caplab_cli::run(args, &mut out, &mut err);
    assert_eq!(code, 0);
    assert_eq!(out, caplab(&args[1..]).stdout);
    assert_eq!(csv_rows(&String::from_utf8(out).unwrap())[0]["m"], "97");
}
