//! Experiment configuration, dispatch and reporting behind the `benchmark-pricer` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::diagnostics::{self, DiagnoseOptions};
use crate::error::{Error, Result};
use crate::gop;
use crate::hedging;
use crate::market::{MarketModel, ModelConfig};
use crate::pricing::{self, Claim};
use crate::sim::{self, fmt_f64, PathBundle, SamplingScheme, SimulationGrid, Strategy};
use crate::stats;
use crate::utility::{self, UtilitySpec};

pub const THREADS_ENV: &str = "BENCHMARK_PRICER_THREADS";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Diagnose,
    Simulate,
    Price,
    Hedge,
    Utility,
    Report,
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown command `{s}`")))
    }
}

fn default_seed() -> u64 {
    1
}
fn default_paths() -> usize {
    10_000
}
fn default_steps() -> usize {
    sim::DEFAULT_STEPS
}
fn default_levels() -> usize {
    6
}
fn default_degree() -> usize {
    hedging::DEFAULT_DEGREE
}
fn default_v() -> f64 {
    1.0
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// One experiment. Read from JSON; every field except `command` and `model` has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    /// Required for every command except `report`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default = "default_steps")]
    pub n_steps: usize,
    #[serde(default = "default_levels")]
    pub refinement_levels: usize,
    #[serde(default = "default_degree")]
    pub regression_degree: usize,
    /// Defaults to the model's exact sampler when it has one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<SamplingScheme>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claim: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utility: Option<String>,
    /// Initial wealth for `simulate` and `utility`.
    #[serde(default = "default_v")]
    pub v: f64,
    /// `gop`, `savings` or `const:w1,...,wN`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub strategies: Vec<String>,
    /// Write the simulated paths to `paths.csv` (`simulate` only).
    #[serde(default)]
    pub dump_paths: bool,
    /// Manifest files or run directories for `report`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub manifests: Vec<PathBuf>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

impl ExperimentConfig {
    pub fn new(command: Command, model: Option<ModelConfig>) -> Self {
        Self {
            command,
            model,
            seed: default_seed(),
            n_paths: default_paths(),
            n_steps: default_steps(),
            refinement_levels: default_levels(),
            regression_degree: default_degree(),
            scheme: None,
            claim: None,
            utility: None,
            v: default_v(),
            strategies: Vec::new(),
            dump_paths: false,
            manifests: Vec::new(),
            out: default_out(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Checks every option without touching the file system.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_paths", self.n_paths),
            ("n_steps", self.n_steps),
            ("refinement_levels", self.refinement_levels),
            ("regression_degree", self.regression_degree),
        ];
        for (name, x) in positive {
            if x == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.v > 0.0 && self.v.is_finite()) {
            return Err(Error::Config(format!("v must be positive, got {}", self.v)));
        }
        if self.command == Command::Report {
            if self.manifests.is_empty() {
                return Err(Error::Config("report needs at least one manifest".into()));
            }
            return Ok(());
        }
        let model = self.build_model()?;
        if self.command == Command::Price || self.command == Command::Hedge || self.command == Command::Utility {
            self.parse_claim()?;
        }
        if self.command == Command::Utility {
            self.parse_utility()?;
        }
        if self.command == Command::Simulate {
            self.parse_strategies(&model)?;
        }
        Ok(())
    }

    fn build_model(&self) -> Result<MarketModel> {
        let cfg = self
            .model
            .as_ref()
            .ok_or_else(|| Error::Config(format!("command {:?} needs a model", self.command)))?;
        cfg.build().map_err(|e| match e {
            Error::RankDeficient { .. } | Error::Assumption(_) => e,
            other => Error::Config(other.to_string()),
        })
    }

    fn parse_claim(&self) -> Result<Claim> {
        self.claim.as_deref().unwrap_or("call:100").parse()
    }

    fn parse_utility(&self) -> Result<UtilitySpec> {
        self.utility.as_deref().unwrap_or("log").parse()
    }

    fn parse_strategies(&self, model: &MarketModel) -> Result<Vec<Strategy>> {
        let default = ["gop".to_string(), "savings".to_string()];
        let specs: &[String] = if self.strategies.is_empty() { &default } else { &self.strategies };
        specs.iter().map(|s| parse_strategy(s, model.n_assets())).collect()
    }

    fn resolved_scheme(&self, model: &MarketModel) -> SamplingScheme {
        self.scheme.unwrap_or(if model.exact_law().is_some() {
            SamplingScheme::Exact
        } else {
            SamplingScheme::LogEuler
        })
    }
}

/// `gop`, `savings` or `const:w1,...,wN`.
pub fn parse_strategy(spec: &str, n_assets: usize) -> Result<Strategy> {
    match spec.trim() {
        "gop" => Ok(Strategy::growth_optimal()),
        "savings" => Ok(Strategy::savings(n_assets)),
        s => {
            let body = s
                .strip_prefix("const:")
                .ok_or_else(|| Error::Config(format!("unknown strategy `{s}`")))?;
            let w = body
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::Config(format!("bad weights in `{s}`")))?;
            if w.len() != n_assets || w.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config(format!("`{s}` needs {n_assets} finite weights")));
            }
            Ok(Strategy::constant(s, w))
        }
    }
}

/// Parameters for a named model with the documented reference values filled in.
pub fn preset_model(name: &str) -> Result<ModelConfig> {
    let params = match name {
        "black_scholes" => json!({"mu": 0.05, "sigma": 0.2, "r": 0.0, "s": 100.0, "T": 1.0}),
        "bessel3" => json!({"s": 1.0, "T": 1.0}),
        "exploding_mpr" => json!({"s": 1.0, "T": 1.0}),
        other => return Err(Error::Config(format!("no preset for model `{other}`"))),
    };
    Ok(ModelConfig::new(name, params))
}

/// Everything needed to reproduce a run, plus its headline outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub version: String,
    pub seed: u64,
    pub wall_clock_seconds: f64,
    /// Files written next to the manifest.
    pub files: Vec<String>,
    /// Summary rows `(model, claim, method, value, stderr)` picked up by `report`.
    #[serde(default)]
    pub rows: Vec<SummaryRow>,
    pub outputs: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub claim: String,
    pub method: String,
    pub value: f64,
    pub stderr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_params: Option<Value>,
}

/// Caps the rayon pool at `BENCHMARK_PRICER_THREADS` when set. Call once, before any work.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)
            .map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
        let mut w = csv::Writer::from_path(self.dir.join(name))?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json(&mut self, name: &str, value: &Value) -> Result<()> {
        fs::write(self.dir.join(name), serde_json::to_string_pretty(value)? + "\n")?;
        self.files.push(name.to_string());
        Ok(())
    }
}

fn bundle_for(config: &ExperimentConfig, model: &MarketModel) -> Result<PathBundle> {
    let grid = SimulationGrid::uniform(model.horizon(), config.n_steps)?;
    sim::simulate_bundle(model, config.seed, &grid, config.n_paths, config.resolved_scheme(model))
}

fn model_params(model: &MarketModel) -> Option<Value> {
    model.config().map(|c| Value::Object(c.params.clone()))
}

/// Validates `config`, runs the command, writes its files and `manifest.json` under
/// `config.out`, and returns the manifest. Nothing is written when validation fails.
pub fn run(config: &ExperimentConfig) -> Result<RunManifest> {
    config.validate()?;
    let start = Instant::now();
    let mut config = config.clone();
    let mut out = Outputs::create(&config.out)?;
    let (outputs, rows) = match config.command {
        Command::Report => report_into(&config.manifests, &mut out)?,
        command => {
            let model = config.build_model()?;
            if config.scheme.is_none() {
                config.scheme = Some(config.resolved_scheme(&model));
            }
            match command {
                Command::Diagnose => run_diagnose(&config, &model, &mut out)?,
                Command::Simulate => run_simulate(&config, &model, &mut out)?,
                Command::Price => run_price(&config, &model, &mut out)?,
                Command::Hedge => run_hedge(&config, &model, &mut out)?,
                Command::Utility => run_utility(&config, &model, &mut out)?,
                Command::Report => unreachable!(),
            }
        }
    };
    let manifest = RunManifest {
        seed: config.seed,
        config,
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        files: out.files.clone(),
        rows,
        outputs,
    };
    fs::write(
        out.dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(manifest)
}

type RunOutput = (Value, Vec<SummaryRow>);

fn run_diagnose(config: &ExperimentConfig, model: &MarketModel, out: &mut Outputs) -> Result<RunOutput> {
    let report = if config.scheme == Some(SamplingScheme::LogEuler) || model.exact_law().is_none() {
        let bundle = bundle_for(config, model)?;
        diagnostics::diagnose_bundle(model, &bundle, config.refinement_levels)?
    } else {
        diagnostics::diagnose(
            model,
            &DiagnoseOptions {
                seed: config.seed,
                n_paths: config.n_paths,
                n_steps: config.n_steps,
                refinement_levels: config.refinement_levels,
            },
        )?
    };
    let value = report.to_json();
    out.json("diagnostics.json", &value)?;
    Ok((value, Vec::new()))
}

fn run_simulate(config: &ExperimentConfig, model: &MarketModel, out: &mut Outputs) -> Result<RunOutput> {
    let strategies = config.parse_strategies(model)?;
    let bundle = bundle_for(config, model)?;
    let mut rows = Vec::new();
    let mut verdicts = serde_json::Map::new();
    for strategy in &strategies {
        let rebalancing = sim::Rebalancing::for_scheme(bundle.scheme);
        let table = sim::simulate_portfolio_with(model, strategy, config.v, &bundle, rebalancing)?;
        for (k, t) in bundle.grid.times().iter().enumerate() {
            let col = table.column(k, 0);
            let e = stats::mean_stderr(&col)?;
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            rows.push(vec![
                strategy.label.clone(),
                fmt_f64(*t),
                fmt_f64(e.mean),
                fmt_f64(e.stderr),
                fmt_f64(lo),
                fmt_f64(hi),
            ]);
        }
        if bundle.n_paths >= diagnostics::MIN_MARTINGALE_SAMPLES {
            let b = gop::benchmark(&table, &bundle.gop)?;
            let v = gop::numeraire_test(&b, &bundle.grid)?;
            verdicts.insert(
                strategy.label.clone(),
                json!({"supermartingale": v.pass, "worst_margin": v.worst_margin}),
            );
        }
    }
    out.csv(
        "simulate.csv",
        &["strategy", "time", "mean", "stderr", "min", "max"],
        rows,
    )?;
    if config.dump_paths {
        let file = fs::File::create(out.dir.join("paths.csv"))?;
        bundle.write_csv(std::io::BufWriter::new(file))?;
        out.files.push("paths.csv".into());
    }
    let z = stats::mean_stderr(&bundle.deflator.terminal())?;
    Ok((
        json!({
            "strategies": strategies.iter().map(|s| s.label.clone()).collect::<Vec<_>>(),
            "deflator_terminal_mean": z.mean,
            "deflator_terminal_stderr": z.stderr,
            "numeraire": verdicts,
        }),
        Vec::new(),
    ))
}

fn run_price(config: &ExperimentConfig, model: &MarketModel, out: &mut Outputs) -> Result<RunOutput> {
    let claim = config.parse_claim()?;
    let bundle = bundle_for(config, model)?;
    let est = pricing::real_world_price(&claim, &bundle)?;
    let row = SummaryRow {
        model: model.name().to_string(),
        claim: claim.label.clone(),
        method: est.method.to_string(),
        value: est.value,
        stderr: est.stderr,
        model_params: model_params(model),
    };
    out.csv(
        "price.csv",
        &["model", "claim", "method", "value", "stderr", "n_paths", "seed"],
        vec![vec![
            row.model.clone(),
            row.claim.clone(),
            row.method.clone(),
            fmt_f64(est.value),
            fmt_f64(est.stderr),
            est.n_paths.to_string(),
            config.seed.to_string(),
        ]],
    )?;
    let comparison = pricing::risk_neutral_comparison(&claim, &bundle)?;
    let upper = if model.is_complete() {
        Some(pricing::upper_hedging_price(model, &claim, &bundle)?)
    } else {
        None
    };
    let details = json!({
        "real_world": est,
        "heavy_tailed": est.heavy_tailed(),
        "upper_hedging": upper,
        "risk_neutral": comparison,
    });
    out.json("price_details.json", &details)?;
    Ok((details, vec![row]))
}

fn run_hedge(config: &ExperimentConfig, model: &MarketModel, out: &mut Outputs) -> Result<RunOutput> {
    let claim = config.parse_claim()?;
    let bundle = bundle_for(config, model)?;
    let result = hedging::replicate(model, &claim, &bundle, config.regression_degree)?;
    let rows = result
        .nodes
        .iter()
        .map(|n| vec![fmt_f64(n.time), fmt_f64(n.mean_delta), fmt_f64(n.rms_error_running)])
        .collect();
    out.csv("hedge.csv", &["time", "mean_delta", "rms_error_running"], rows)?;
    let summary = result.summary_json();
    out.json("hedge_summary.json", &summary)?;
    Ok((summary, Vec::new()))
}

fn run_utility(config: &ExperimentConfig, model: &MarketModel, out: &mut Outputs) -> Result<RunOutput> {
    let claim = config.parse_claim()?;
    let u = config.parse_utility()?;
    let bundle = bundle_for(config, model)?;
    let (opt, price) = utility::indifference_price_for(&u, config.v, &claim, &bundle)?;
    let rw = pricing::real_world_price(&claim, &bundle)?;
    out.csv(
        "utility.csv",
        &["utility", "v", "claim", "y_star", "p_H", "stderr"],
        vec![vec![
            u.label().to_string(),
            fmt_f64(config.v),
            claim.label.clone(),
            fmt_f64(opt.y_star),
            fmt_f64(price.value),
            fmt_f64(price.stderr),
        ]],
    )?;
    let row = SummaryRow {
        model: model.name().to_string(),
        claim: claim.label.clone(),
        method: price.method.to_string(),
        value: price.value,
        stderr: price.stderr,
        model_params: model_params(model),
    };
    Ok((
        json!({
            "utility": u.label(),
            "y_star": opt.y_star,
            "budget": opt.budget,
            "indifference": price,
            "real_world": rw,
            "note": opt.note,
        }),
        vec![row],
    ))
}

/// A summary row with its reference check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub row: SummaryRow,
    /// `ok`, `expected_strict`, `outside_tolerance`, or empty when no reference applies.
    pub flag: String,
}

/// Black–Scholes at-the-money call, `s = K = 100`, `sigma = 0.2`, `r = 0`, `T = 1`.
pub const BS_CALL_REFERENCE: f64 = 7.965567455405804;
/// `E[Z_T]` for the three-dimensional Bessel market at `s = 1`, `T = 1`.
pub const BESSEL_ZCB_REFERENCE: f64 = 0.6826894921370859;
pub const BESSEL_ZCB_TOL: f64 = 0.01;

fn param(row: &SummaryRow, key: &str) -> Option<f64> {
    row.model_params.as_ref()?.get(key)?.as_f64()
}

fn reference_flag(row: &SummaryRow) -> String {
    let is = |key: &str, x: f64| param(row, key).is_some_and(|v| (v - x).abs() < 1e-12);
    let r_zero = param(row, "r").map_or(true, |v| v == 0.0);
    if row.model == "black_scholes"
        && row.claim == "call:100"
        && is("s", 100.0)
        && is("sigma", 0.2)
        && is("T", 1.0)
        && r_zero
    {
        let ok = (row.value - BS_CALL_REFERENCE).abs() <= 3.0 * row.stderr;
        return if ok { "ok" } else { "outside_tolerance" }.into();
    }
    if row.model == "bessel3" && row.claim == "zcb" && is("s", 1.0) && is("T", 1.0) {
        let ok = (row.value - BESSEL_ZCB_REFERENCE).abs() <= BESSEL_ZCB_TOL;
        return if ok { "expected_strict" } else { "outside_tolerance" }.into();
    }
    String::new()
}

fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(MANIFEST_FILE)
    } else {
        p.to_path_buf()
    }
}

/// Reads manifests (files or run directories) and flags rows against the reference values.
/// Read-only.
pub fn report(manifests: &[PathBuf]) -> Result<Vec<ReportRow>> {
    if manifests.is_empty() {
        return Err(Error::Config("report needs at least one manifest".into()));
    }
    let mut rows = Vec::new();
    for p in manifests {
        let path = manifest_path(p);
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let m: RunManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("malformed manifest {}: {e}", path.display())))?;
        rows.extend(m.rows.into_iter().map(|row| ReportRow {
            flag: reference_flag(&row),
            row,
        }));
    }
    Ok(rows)
}

fn report_into(manifests: &[PathBuf], out: &mut Outputs) -> Result<RunOutput> {
    let rows = report(manifests)?;
    let table = rows
        .iter()
        .map(|r| {
            vec![
                r.row.model.clone(),
                r.row.claim.clone(),
                r.row.method.clone(),
                fmt_f64(r.row.value),
                fmt_f64(r.row.stderr),
                r.flag.clone(),
            ]
        })
        .collect();
    out.csv("summary.csv", &["model", "claim", "method", "value", "stderr", "flag"], table)?;
    let outside = rows.iter().filter(|r| r.flag == "outside_tolerance").count();
    Ok((json!({"rows": rows.len(), "outside_tolerance": outside}), Vec::new()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_validation() {
        let c: ExperimentConfig = serde_json::from_str(
            r#"{"command": "price", "model": {"name": "bessel3", "params": {"s": 1.0, "T": 1.0}}, "claim": "zcb"}"#,
        )
        .unwrap();
        assert_eq!((c.seed, c.n_paths, c.n_steps), (1, 10_000, sim::DEFAULT_STEPS));
        assert!(c.validate().is_ok());
        let mut bad = c.clone();
        bad.n_paths = 0;
        assert_eq!(bad.validate().unwrap_err().exit_code(), 2);
        bad = c.clone();
        bad.claim = Some("swap".into());
        assert_eq!(bad.validate().unwrap_err().exit_code(), 2);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"command": "fly"}"#).is_err());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"command": "price", "pathz": 3}"#).is_err());
    }

    #[test]
    fn strategies_parse() {
        assert_eq!(parse_strategy("const:0.5,0.5", 2).unwrap().label, "const:0.5,0.5");
        assert!(parse_strategy("const:0.5", 2).is_err());
        assert!(parse_strategy("kelly", 1).is_err());
        assert_eq!("hedge".parse::<Command>().unwrap(), Command::Hedge);
    }

    #[test]
    fn reference_flags() {
        let row = |model: &str, claim: &str, value: f64, params: Value| SummaryRow {
            model: model.into(),
            claim: claim.into(),
            method: "real_world".into(),
            value,
            stderr: 0.05,
            model_params: Some(params),
        };
        let bs = json!({"mu": 0.05, "sigma": 0.2, "r": 0.0, "s": 100.0, "T": 1.0});
        assert_eq!(reference_flag(&row("black_scholes", "call:100", 7.99, bs.clone())), "ok");
        assert_eq!(reference_flag(&row("black_scholes", "call:100", 8.5, bs.clone())), "outside_tolerance");
        assert_eq!(reference_flag(&row("black_scholes", "put:100", 7.99, bs)), "");
        let bes = json!({"s": 1.0, "T": 1.0});
        assert_eq!(reference_flag(&row("bessel3", "zcb", 0.68, bes.clone())), "expected_strict");
        assert_eq!(reference_flag(&row("bessel3", "zcb", 1.0, bes)), "outside_tolerance");
    }

    #[test]
    fn empty_report_is_an_error() {
        assert!(matches!(report(&[]), Err(Error::Config(_))));
    }
}
