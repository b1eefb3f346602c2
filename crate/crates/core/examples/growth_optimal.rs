//! Simulates the growth-optimal portfolio in Black-Scholes and Bessel(3) markets and
//! runs the numeraire test on a few benchmarked strategies.
//!
//! cargo run --release --example growth_optimal

use benchmark_pricer::gop;
use benchmark_pricer::{simulate_bundle, stats, MarketModel, SamplingScheme, SimulationGrid, Strategy};

fn main() -> benchmark_pricer::Result<()> {
    let bs = MarketModel::black_scholes(0.1, 0.2, 0.02, 100.0, 1.0)?;
    let grid = SimulationGrid::uniform(1.0, 64)?;
    let bundle = simulate_bundle(&bs, 7, &grid, 50_000, SamplingScheme::LogEuler)?;
    let logs: Vec<f64> = bundle.gop.terminal().iter().map(|g| g.ln()).collect();
    let e = stats::mean_stderr(&logs)?;
    println!("black_scholes: E[log V*_T] = {:.4} +/- {:.4} (growth rate of pi* = 2 is 0.08)", e.mean, e.stderr);
    for (label, pi) in [("savings", 0.0), ("half", 0.5), ("stock", 1.0), ("gop", 2.0), ("levered", 4.0)] {
        let bp = gop::benchmarked_portfolio(&bs, &Strategy::constant(label, vec![pi]), 1.0, &bundle)?;
        let v = gop::numeraire_test(&bp, &grid)?;
        println!("  {label:8} pi={pi}: supermartingale {} (worst margin {:+.2e})", v.pass, v.worst_margin);
    }

    let bes = MarketModel::bessel3(1.0, 1.0)?;
    let grid = SimulationGrid::uniform(1.0, 20)?;
    let bundle = simulate_bundle(&bes, 7, &grid, 50_000, SamplingScheme::Exact)?;
    let savings = gop::benchmarked_portfolio(&bes, &Strategy::savings(1), 1.0, &bundle)?;
    let v = gop::numeraire_test(&savings, &grid)?;
    println!("bessel3: benchmarked savings declines beyond bands = {}", v.declines_beyond_bands);
    for m in &v.means {
        println!("  t={:.2} mean {:.4} +/- {:.4}", m.time, m.mean, m.stderr);
    }
    Ok(())
}
