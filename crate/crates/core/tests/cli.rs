use std::path::Path;
use std::process::Command as Process;

use benchmark_pricer::cli::{self, Command, ExperimentConfig};

const BIN: &str = env!("CARGO_BIN_EXE_benchmark-pricer");

fn pricer(args: &[&str]) -> std::process::Output {
    Process::new(BIN).args(args).env(cli::THREADS_ENV, "2").output().unwrap()
}

fn config(command: Command, model: &str, out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(command, Some(cli::preset_model(model).unwrap()));
    c.out = out.to_path_buf();
    c.n_paths = 20_000;
    c.n_steps = 8;
    c
}

#[test]
fn price_and_report_flags() {
    let dir = tempfile::tempdir().unwrap();
    let mut bs = config(Command::Price, "black_scholes", &dir.path().join("bs"));
    bs.claim = Some("call:100".into());
    let m = cli::run(&bs).unwrap();
    assert_eq!(m.rows.len(), 1);
    assert!(m.files.iter().any(|f| f == "price.csv"));
    let mut bes = config(Command::Price, "bessel3", &dir.path().join("bes"));
    bes.claim = Some("zcb".into());
    bes.scheme = Some(benchmark_pricer::SamplingScheme::Exact);
    cli::run(&bes).unwrap();

    let rows = cli::report(&[dir.path().join("bs"), dir.path().join("bes")]).unwrap();
    let flags: Vec<&str> = rows.iter().map(|r| r.flag.as_str()).collect();
    assert!(flags.contains(&"ok"), "{flags:?}");
    assert!(flags.contains(&"expected_strict"), "{flags:?}");
    for r in &rows {
        assert!(r.row.value.is_finite() && r.row.stderr >= 0.0);
    }
}

#[test]
fn report_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cli::report(&[]).unwrap_err().exit_code(), 2);
    let bad = dir.path().join("manifest.json");
    std::fs::write(&bad, "{\"rows\": 3").unwrap();
    assert_eq!(cli::report(&[bad]).unwrap_err().exit_code(), 2);
}

#[test]
fn simulate_writes_numeraire_summary() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(Command::Simulate, "black_scholes", dir.path());
    c.strategies = vec!["gop".into(), "savings".into(), "const:0.5".into()];
    c.dump_paths = true;
    c.n_paths = 200;
    let m = cli::run(&c).unwrap();
    let text = std::fs::read_to_string(dir.path().join("simulate.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "strategy,time,mean,stderr,min,max");
    assert_eq!(text.lines().count(), 1 + 3 * 9);
    assert!(m.files.iter().any(|f| f == "paths.csv"));
    assert!(dir.path().join(cli::MANIFEST_FILE).is_file());
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ok");
    let o = pricer(&["price", "--model", "black_scholes", "--claim", "call:100", "--paths", "2000", "--steps", "4", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let printed: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(printed.is_object());
    assert!(out.join("price.csv").is_file());

    let missing = dir.path().join("none");
    let o = pricer(&["price", "--model", "black_scholes", "--paths", "0", "--out", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!missing.exists());

    let o = pricer(&["diagnose", "--model", "heston", "--out", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let two = r#"{"name": "custom_multi", "params": {"n_assets": 2, "n_drivers": 2, "mu": [0.1, 0.2], "sigma": [[1.0, 0.0], [0.0, 2.0]], "r": 0.0}}"#;
    let o = pricer(&["hedge", "--model", two, "--claim", "call:1", "--paths", "200", "--steps", "4", "--out", dir.path().join("multi").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));

    let o = pricer(&["report", "--out", dir.path().join("rep").to_str().unwrap(), out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(dir.path().join("rep/summary.csv")).unwrap();
    assert!(summary.starts_with("model,claim,method,value,stderr,flag"));
}

#[test]
fn utility_run_reports_price() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(Command::Utility, "black_scholes", dir.path());
    c.claim = Some("put:95".into());
    c.utility = Some("power:0.5".into());
    c.v = 2.0;
    cli::run(&c).unwrap();
    let mut r = csv::Reader::from_path(dir.path().join("utility.csv")).unwrap();
    assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), ["utility", "v", "claim", "y_star", "p_H", "stderr"]);
    let row = r.records().next().unwrap().unwrap();
    let p: f64 = row[4].parse().unwrap();
    assert!(p > 0.0 && p < 95.0);
}
