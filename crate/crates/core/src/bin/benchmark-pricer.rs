use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use benchmark_pricer::cli::{self, Command, ExperimentConfig};
use benchmark_pricer::{Error, ModelConfig, Result};
use clap::{Parser, ValueEnum};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Diagnose,
    Simulate,
    Price,
    Hedge,
    Utility,
    Report,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Diagnose => Command::Diagnose,
            Cmd::Simulate => Command::Simulate,
            Cmd::Price => Command::Price,
            Cmd::Hedge => Command::Hedge,
            Cmd::Utility => Command::Utility,
            Cmd::Report => Command::Report,
        }
    }
}

/// Growth-optimal portfolios, deflators and real-world pricing in diffusion markets.
///
/// Flags override the values in the JSON config. Results go to DIR/manifest.json and
/// DIR/*.csv. BENCHMARK_PRICER_THREADS caps the worker count.
#[derive(Debug, Parser)]
#[command(name = "benchmark-pricer", version)]
struct Args {
    command: Cmd,
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Model name with preset parameters (black_scholes, bessel3, exploding_mpr), a JSON
    /// document `{"name": ..., "params": {...}}`, or a path to one.
    #[arg(long)]
    model: Option<String>,
    /// call:K, put:K, zcb, savings, stock, benchmark or poly:c0,c1,...
    #[arg(long)]
    claim: Option<String>,
    /// Comma-separated list of gop, savings, const:w1;...;wN.
    #[arg(long)]
    strategies: Option<String>,
    #[arg(long)]
    degree: Option<usize>,
    /// log or power:a
    #[arg(long)]
    utility: Option<String>,
    #[arg(long)]
    v: Option<f64>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    dump_paths: bool,
    /// Manifests or run directories (report).
    manifests: Vec<PathBuf>,
}

fn parse_model(spec: &str) -> Result<ModelConfig> {
    let text = if spec.trim_start().starts_with('{') {
        spec.to_string()
    } else if std::path::Path::new(spec).is_file() {
        std::fs::read_to_string(spec)?
    } else {
        return cli::preset_model(spec);
    };
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("model: {e}")))
}

fn config_from(args: Args) -> Result<ExperimentConfig> {
    let command = Command::from(args.command);
    let mut c = match &args.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::new(command, None),
    };
    c.command = command;
    if let Some(m) = &args.model {
        c.model = Some(parse_model(m)?);
    }
    if let Some(x) = args.seed {
        c.seed = x;
    }
    if let Some(x) = args.paths {
        c.n_paths = x;
    }
    if let Some(x) = args.steps {
        c.n_steps = x;
    }
    if let Some(x) = args.out {
        c.out = x;
    }
    if let Some(x) = args.claim {
        c.claim = Some(x);
    }
    if let Some(x) = args.strategies {
        c.strategies = x.split(',').map(|s| s.replace(';', ",")).collect();
    }
    if let Some(x) = args.degree {
        c.regression_degree = x;
    }
    if let Some(x) = args.utility {
        c.utility = Some(x);
    }
    if let Some(x) = args.v {
        c.v = x;
    }
    if let Some(x) = args.levels {
        c.refinement_levels = x;
    }
    c.dump_paths |= args.dump_paths;
    c.manifests.extend(args.manifests);
    Ok(c)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let outcome = cli::configure_threads()
        .and_then(|_| config_from(args))
        .and_then(|c| cli::run(&c));
    match outcome {
        Ok(m) => {
            let text = serde_json::to_string_pretty(&m.outputs).unwrap_or_default();
            let _ = writeln!(std::io::stdout(), "{text}");
            eprintln!("wrote {} ({} files)", m.config.out.join(cli::MANIFEST_FILE).display(), m.files.len());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
