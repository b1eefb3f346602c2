//! Replicates an at-the-money Black–Scholes call by regression on simulated paths
//! and reports hedge error and delta accuracy at two rebalancing frequencies.
//!
//! cargo run --release --example hedge_call

use benchmark_pricer::hedging::{replicate, DEFAULT_DEGREE};
use benchmark_pricer::pricing::Claim;
use benchmark_pricer::{simulate_bundle, MarketModel, SamplingScheme, SimulationGrid};

fn norm_cdf(x: f64) -> f64 {
    // Abramowitz-Stegun 26.2.17 is plenty for a printout.
    let t = 1.0 / (1.0 + 0.2316419 * x.abs());
    let poly = t * (0.319381530 + t * (-0.356563782 + t * (1.781477937 + t * (-1.821255978 + t * 1.330274429))));
    let tail = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt() * poly;
    if x >= 0.0 { 1.0 - tail } else { tail }
}

fn bs_call(s: f64, k: f64, sigma: f64, tau: f64) -> (f64, f64) {
    let d1 = ((s / k).ln() + 0.5 * sigma * sigma * tau) / (sigma * tau.sqrt());
    let d2 = d1 - sigma * tau.sqrt();
    (s * norm_cdf(d1) - k * norm_cdf(d2), norm_cdf(d1))
}

fn main() -> benchmark_pricer::Result<()> {
    let model = MarketModel::black_scholes(0.05, 0.2, 0.0, 100.0, 1.0)?;
    let claim = Claim::call(100.0);
    for steps in [256, 1024] {
        let grid = SimulationGrid::uniform(1.0, steps)?;
        let bundle = simulate_bundle(&model, 11, &grid, 10_000, SamplingScheme::LogEuler)?;
        let t0 = std::time::Instant::now();
        let res = replicate(&model, &claim, &bundle, DEFAULT_DEGREE)?;
        println!(
            "steps={steps} v_H={:.4} rms={:.4} ({:.2}% of price) max={:.4} fair={} [{:?}]",
            res.initial_capital,
            res.terminal_error_rms,
            100.0 * res.terminal_error_rms / res.initial_capital,
            res.terminal_error_max,
            res.fairness.pass,
            t0.elapsed()
        );
        let k = grid.node_at(0.5).unwrap();
        let mut s = bundle.assets.column(k, 0);
        s.sort_by(f64::total_cmp);
        let (q1, q3) = (s[s.len() / 4], s[3 * s.len() / 4]);
        let mut worst: f64 = 0.0;
        let mut worst_v: f64 = 0.0;
        for i in 0..=20 {
            let x = q1 + (q3 - q1) * i as f64 / 20.0;
            let (c, d) = bs_call(x, 100.0, 0.2, 0.5);
            let fr = res.surface.fraction_delta(k, x, res.surface.value(k, x));
            worst = worst.max((fr / (d * x / c) - 1.0).abs());
            worst_v = worst_v.max((res.surface.value(k, x) / c - 1.0).abs());
        }
        println!("  interquartile S in [{q1:.2}, {q3:.2}]: worst fraction-delta error {:.2}%, value error {:.2}%", 100.0 * worst, 100.0 * worst_v);
    }
    Ok(())
}
