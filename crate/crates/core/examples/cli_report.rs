//! Drives the experiment runner from code: two pricing runs followed by a report
//! that compares them with closed-form references.
//!
//! cargo run --release --example cli_report [OUT_DIR]

use std::path::PathBuf;

use benchmark_pricer::cli::{self, Command, ExperimentConfig};
use benchmark_pricer::SamplingScheme;

fn main() -> benchmark_pricer::Result<()> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/example_report".into()));
    let mut runs = Vec::new();
    for (model, claim, scheme) in [
        ("black_scholes", "call:100", SamplingScheme::LogEuler),
        ("bessel3", "zcb", SamplingScheme::Exact),
    ] {
        let mut c = ExperimentConfig::new(Command::Price, Some(cli::preset_model(model)?));
        c.claim = Some(claim.into());
        c.scheme = Some(scheme);
        c.n_paths = 50_000;
        c.n_steps = 16;
        c.out = root.join(model);
        cli::run(&c)?;
        runs.push(c.out);
    }
    for r in cli::report(&runs)? {
        println!(
            "{:14} {:9} {:22} {:.5} +/- {:.5} {}",
            r.row.model, r.row.claim, r.row.method, r.row.value, r.row.stderr, r.flag
        );
    }
    Ok(())
}
