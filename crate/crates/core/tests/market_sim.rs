mod common;

use benchmark_pricer::rng::{NoiseSource, Stream};
use benchmark_pricer::sim::{self, Rebalancing};
use benchmark_pricer::{
    builtin_model, simulate_bundle, stats, MarketModel, ModelConfig, SamplingScheme, SimulationGrid, Strategy,
};
use nalgebra::DMatrix;
use serde_json::json;

fn grid(t: f64, n: usize) -> SimulationGrid {
    SimulationGrid::uniform(t, n).unwrap()
}

#[test]
fn coefficient_examples() {
    let bes = MarketModel::bessel3(1.0, 1.0).unwrap();
    let c = bes.eval_coefficients(0.3, &[2.0]).unwrap();
    assert_eq!((c.r, c.mu[0], c.sigma[(0, 0)]), (0.0, 0.25, 0.5));
    let ex = MarketModel::exploding_mpr(1.0, 1.0).unwrap();
    let c = ex.eval_coefficients(0.25, &[3.0]).unwrap();
    assert_eq!((c.r, c.mu[0], c.sigma[(0, 0)]), (0.0, 2.0, 1.0));
    let multi = ModelConfig::new(
        "custom_multi",
        json!({"n_assets": 2, "n_drivers": 2, "mu": [0.1, 0.2], "sigma": [[1.0, 0.0], [0.0, 2.0]], "r": 0.0}),
    )
    .build()
    .unwrap();
    assert_eq!((multi.n_assets(), multi.n_drivers()), (2, 2));
    assert!(bes.exact_law().is_some());
    let unknown = builtin_model("heston", &serde_json::Map::new());
    assert!(unknown.is_err());
}

#[test]
fn driver_moments() {
    let d = sim::simulate_drivers(3, &grid(1.0, 1), 100_000, 1).unwrap();
    let e = stats::mean_stderr(d.as_slice()).unwrap();
    assert!(e.mean.abs() < 4.0 / (1e5f64).sqrt());
    let half = sim::simulate_drivers(4, &grid(1.0, 2), 50_000, 1).unwrap();
    let var = half.as_slice().iter().map(|x| x * x).sum::<f64>() / half.as_slice().len() as f64;
    assert!((var / 0.5 - 1.0).abs() < 0.05, "variance {var}");
    let again = sim::simulate_drivers(7, &grid(1.0, 2), 1, 1).unwrap();
    assert_eq!(again, sim::simulate_drivers(7, &grid(1.0, 2), 1, 1).unwrap());
}

#[test]
fn black_scholes_terminal_mean_is_lognormal() {
    let m = MarketModel::black_scholes(0.1, 0.2, 0.02, 100.0, 1.0).unwrap();
    let b = simulate_bundle(&m, 9, &grid(1.0, 256), 100_000, SamplingScheme::LogEuler).unwrap();
    let e = stats::mean_stderr(&b.assets.terminal()).unwrap();
    let oracle = 100.0 * 0.1f64.exp();
    assert!((e.mean - oracle).abs() <= 3.0 * e.stderr, "{} vs {oracle}", e.mean);
}

#[test]
fn bessel_sampler_matches_quadrature_and_gaussian_norms() {
    let m = MarketModel::bessel3(1.0, 1.0).unwrap();
    let b = simulate_bundle(&m, 21, &grid(1.0, 4), 50_000, SamplingScheme::Exact).unwrap();
    let s_t = b.assets.terminal();
    let inv: Vec<f64> = s_t.iter().map(|s| 1.0 / s).collect();
    let e = stats::mean_stderr(&inv).unwrap();
    assert!((e.mean - common::bessel_inverse_mean(1.0, 1.0)).abs() < 0.01);
    // independent draws: norm of a 3-D Brownian motion started at (1, 0, 0)
    let src = NoiseSource::new(999);
    let norms: Vec<f64> = (0..50_000u64)
        .map(|p| {
            let x = 1.0 + src.normal(Stream::Aux, p, 0, 0);
            let y = src.normal(Stream::Aux, p, 0, 1);
            let z = src.normal(Stream::Aux, p, 0, 2);
            (x * x + y * y + z * z).sqrt()
        })
        .collect();
    let (_, p_value) = stats::ks_two_sample(&s_t, &norms).unwrap();
    assert!(p_value > 1e-3, "KS p-value {p_value}");
    // the deflator of the exact bundle is s / S
    for p in 0..100 {
        for k in 0..b.n_nodes() {
            let s = b.assets.value(p, k);
            assert!((b.deflator.value(p, k) - 1.0 / s).abs() <= 1e-12 / s);
        }
    }
}

#[test]
fn portfolio_examples() {
    let m = MarketModel::black_scholes(0.1, 0.2, 0.02, 100.0, 1.0).unwrap();
    let b = simulate_bundle(&m, 2, &grid(1.0, 64), 500, SamplingScheme::LogEuler).unwrap();
    let flat = sim::simulate_portfolio(&m, &Strategy::savings(1), 2.5, &b).unwrap();
    assert!(flat.as_slice().iter().all(|x| *x == 2.5));
    let pi = Strategy::constant("mix", vec![0.7]);
    let one = sim::simulate_portfolio(&m, &pi, 1.0, &b).unwrap();
    let three = sim::simulate_portfolio(&m, &pi, 3.0, &b).unwrap();
    assert!(one.as_slice().iter().zip(three.as_slice()).all(|(a, b)| 3.0 * a == *b));
    let hold = sim::simulate_portfolio(&m, &Strategy::constant("hold", vec![1.0]), 1.0, &b).unwrap();
    for p in 0..b.n_paths {
        for k in 0..b.n_nodes() {
            let disc = b.assets.value(p, k) / b.savings.value(p, k) / 100.0;
            assert!((hold.value(p, k) / disc - 1.0).abs() < 1e-12);
        }
    }
    // buy and hold is also exact under discrete rebalancing
    let held = sim::simulate_portfolio_with(&m, &Strategy::constant("hold", vec![1.0]), 1.0, &b, Rebalancing::Discrete).unwrap();
    assert!(held.as_slice().iter().zip(hold.as_slice()).all(|(a, b)| (a / b - 1.0).abs() < 1e-12));
}

#[test]
fn deflator_examples() {
    let flat = MarketModel::black_scholes(0.03, 0.3, 0.03, 1.0, 1.0).unwrap();
    let b = simulate_bundle(&flat, 1, &grid(1.0, 8), 100, SamplingScheme::LogEuler).unwrap();
    assert!(b.deflator.as_slice().iter().all(|z| *z == 1.0));
    assert!(b.gop.as_slice().iter().all(|g| *g == 1.0));
    let m = MarketModel::black_scholes(0.1, 0.2, 0.02, 100.0, 1.0).unwrap();
    let b = simulate_bundle(&m, 5, &grid(1.0, 16), 100_000, SamplingScheme::LogEuler).unwrap();
    let e = stats::mean_stderr(&b.deflator.terminal()).unwrap();
    assert!((e.mean - 1.0).abs() <= 3.0 * e.stderr);
}

#[test]
fn gop_from_theta_agrees_with_simulated_pi_star() {
    let two = MarketModel::constant(
        "two",
        0.01,
        vec![0.07, 0.04],
        DMatrix::from_row_slice(2, 2, &[0.25, 0.0, 0.05, 0.15]),
        vec![1.0, 1.0],
        1.0,
        false,
    )
    .unwrap();
    for m in [MarketModel::black_scholes(0.1, 0.2, 0.02, 100.0, 1.0).unwrap(), two] {
        let b = simulate_bundle(&m, 8, &grid(1.0, 64), 300, SamplingScheme::LogEuler).unwrap();
        let v = sim::simulate_portfolio(&m, &Strategy::growth_optimal(), 1.0, &b).unwrap();
        for (a, g) in v.as_slice().iter().zip(b.gop.as_slice()) {
            assert!((a / g - 1.0).abs() <= 1e-10);
        }
    }
}

#[test]
fn csv_dump_is_deterministic() {
    let m = MarketModel::bessel3(1.0, 1.0).unwrap();
    let dump = || {
        let b = simulate_bundle(&m, 4, &grid(1.0, 3), 5, SamplingScheme::Exact).unwrap();
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        buf
    };
    let a = dump();
    assert_eq!(a, dump());
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().next().unwrap(), "path,time,asset_1,deflator,gop");
    assert_eq!(text.lines().count(), 1 + 5 * 4);
}
