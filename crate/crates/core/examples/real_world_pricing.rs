//! Real-world prices of standard claims, the Bessel(3) zero-coupon bond and its
//! risk-neutral counterpart.
//!
//! cargo run --release --example real_world_pricing

use benchmark_pricer::pricing::{self, Claim};
use benchmark_pricer::{simulate_bundle, MarketModel, SamplingScheme, SimulationGrid};

fn main() -> benchmark_pricer::Result<()> {
    let bs = MarketModel::black_scholes(0.05, 0.2, 0.0, 100.0, 1.0)?;
    let bundle = simulate_bundle(&bs, 3, &SimulationGrid::uniform(1.0, 16)?, 100_000, SamplingScheme::LogEuler)?;
    for spec in ["call:100", "put:95", "zcb", "stock", "poly:1,0.01"] {
        let claim: Claim = spec.parse()?;
        let p = pricing::real_world_price(&claim, &bundle)?;
        println!("black_scholes {spec:12} {:.4} +/- {:.4}", p.value, p.stderr);
    }

    let bes = MarketModel::bessel3(1.0, 1.0)?;
    let bundle = simulate_bundle(&bes, 3, &SimulationGrid::uniform(1.0, 4)?, 200_000, SamplingScheme::Exact)?;
    let rn = pricing::risk_neutral_comparison(&Claim::zcb(), &bundle)?;
    println!(
        "bessel3 zcb: real-world {:.4} +/- {:.4}, risk-neutral 1, gap {:.4} ({:?})",
        rn.real_world.value, rn.real_world.stderr, rn.discrepancy.mean, rn.gap.verdict
    );
    println!("  {}", rn.note);
    let upper = pricing::upper_hedging_price(&bes, &Claim::zcb(), &bundle)?;
    println!("  upper hedging price {:.4}", upper.value);
    Ok(())
}
