//! Runs the no-arbitrage diagnostics on the three built-in models and on a
//! rank-deficient market that admits an increasing profit.
//!
//! cargo run --release --example diagnose

use benchmark_pricer::diagnostics::{self, DiagnoseOptions, SamplePoint};
use benchmark_pricer::MarketModel;
use nalgebra::DMatrix;

fn main() -> benchmark_pricer::Result<()> {
    let opts = DiagnoseOptions { n_paths: 20_000, n_steps: 64, ..Default::default() };
    for model in [
        MarketModel::black_scholes(0.05, 0.2, 0.0, 100.0, 1.0)?,
        MarketModel::bessel3(1.0, 1.0)?,
        MarketModel::exploding_mpr(1.0, 1.0)?,
    ] {
        let report = diagnostics::diagnose(&model, &opts)?;
        println!("{}", serde_json::to_string_pretty(&report.to_json()).unwrap());
    }

    // two assets loaded on one Brownian motion with different drifts
    let pair = MarketModel::constant("pair", 0.0, vec![0.1, 0.2], DMatrix::from_row_slice(2, 1, &[1.0, 1.0]), vec![1.0, 1.0], 1.0, true)?;
    let found = diagnostics::detect_increasing_profit(&pair, &[SamplePoint { t: 0.0, state: vec![1.0, 1.0] }])?;
    println!("pair market: increasing profit found = {}, residual norm {:.4}", found.is_found(), found.residual_norm());
    println!("scaling constant for x = 0.5: {:.4}", diagnostics::arbitrage_scaling(0.5)?);
    Ok(())
}
