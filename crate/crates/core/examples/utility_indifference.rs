//! Optimal terminal wealth by convex duality and utility indifference prices of a
//! call for log and power investors.
//!
//! cargo run --release --example utility_indifference

use benchmark_pricer::pricing::{self, Claim};
use benchmark_pricer::utility::{self, UtilitySpec};
use benchmark_pricer::{simulate_bundle, MarketModel, SamplingScheme, SimulationGrid};

fn main() -> benchmark_pricer::Result<()> {
    let model = MarketModel::black_scholes(0.05, 0.2, 0.0, 100.0, 1.0)?;
    let bundle = simulate_bundle(&model, 13, &SimulationGrid::uniform(1.0, 16)?, 50_000, SamplingScheme::LogEuler)?;
    let claim = Claim::call(100.0);
    let rw = pricing::real_world_price(&claim, &bundle)?;
    println!("real-world price {:.4} +/- {:.4}", rw.value, rw.stderr);
    for spec in ["log", "power:0.3", "power:0.5", "power:0.7"] {
        let u: UtilitySpec = spec.parse()?;
        for v in [0.5, 5.0] {
            let (opt, p) = utility::indifference_price_for(&u, v, &claim, &bundle)?;
            let eu = utility::expected_utility(&u, &opt.terminal)?;
            println!(
                "{spec:10} v={v:<4} y*={:.5} E[U]={:.4} p_H={:.4} +/- {:.4}",
                opt.y_star, eu.mean, p.value, p.stderr
            );
        }
    }
    Ok(())
}
