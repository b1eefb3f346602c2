//! The ten acceptance criteria. Each prints one PASS/FAIL line; the process fails if any
//! criterion fails.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use benchmark_pricer::cli::{self, Command, ExperimentConfig};
use benchmark_pricer::diagnostics::{self, DeflatorSpec, DiagnoseOptions, GapVerdict, IncreasingProfit, SamplePoint, ViabilityKind};
use benchmark_pricer::gop;
use benchmark_pricer::hedging::{replicate, DEFAULT_DEGREE};
use benchmark_pricer::pricing::{self, Claim};
use benchmark_pricer::rng::{NoiseSource, Stream};
use benchmark_pricer::utility::{self, UtilitySpec};
use benchmark_pricer::{
    simulate_bundle, CoefficientSnapshot, MarketModel, PathBundle, Result, SamplingScheme,
    SimulationGrid, Strategy,
};
use nalgebra::DMatrix;

type Outcome = Result<(bool, String)>;

fn bs() -> MarketModel {
    MarketModel::black_scholes(0.05, 0.2, 0.0, 100.0, 1.0).unwrap()
}

fn bundle(model: &MarketModel, seed: u64, steps: usize, paths: usize, scheme: SamplingScheme) -> Result<PathBundle> {
    simulate_bundle(model, seed, &SimulationGrid::uniform(model.horizon(), steps)?, paths, scheme)
}

/// Uniform draws from the library's counter generator, keyed by `(seed, i)`.
fn uniforms(seed: u64, n: usize) -> Vec<f64> {
    let src = NoiseSource::new(seed);
    (0..n).map(|i| src.uniform(Stream::Aux, i as u64, 0, 0)).collect()
}

fn gap_zcb() -> Outcome {
    let b = bundle(&MarketModel::bessel3(1.0, 1.0)?, 1, 1, 100_000, SamplingScheme::Exact)?;
    let e = pricing::zero_coupon_bond(&b, 1.0)?;
    let oracle = common::bessel_inverse_mean(1.0, 1.0);
    let strict = e.value + 5.0 * e.stderr < 1.0;
    let ok = (e.value - oracle).abs() <= 0.01 && strict;
    Ok((ok, format!("E[Z_T] = {:.4} ± {:.4} (oracle {oracle:.4}), mean + 5 se < 1: {strict}", e.value, e.stderr)))
}

fn c1() -> Outcome {
    let b = bundle(&MarketModel::bessel3(1.0, 1.0)?, 7, 1, 100_000, SamplingScheme::Exact)?;
    let z = b.deflator.terminal();
    let g = diagnostics::martingale_gap(&z)?;
    let oracle = common::bessel_inverse_mean(1.0, 1.0);
    let ok = (g.mean - oracle).abs() <= 0.01 && g.mean + 5.0 * g.stderr < 1.0 && g.verdict == GapVerdict::StrictLocalMartingale;
    Ok((ok, format!("E[Z_T] = {:.4} ± {:.4} vs oracle {oracle:.4}, verdict {}", g.mean, g.stderr, g.verdict)))
}

fn c2() -> Outcome {
    let opts = DiagnoseOptions { seed: 3, n_paths: 2000, n_steps: 64, refinement_levels: 6 };
    let v_bs = diagnostics::diagnose(&bs(), &opts)?.viability.verdict;
    let v_bes = diagnostics::diagnose(&MarketModel::bessel3(1.0, 1.0)?, &opts)?.viability.verdict;
    let ex = diagnostics::diagnose(&MarketModel::exploding_mpr(1.0, 1.0)?, &opts)?.viability;
    let ln2 = std::f64::consts::LN_2;
    let incs_ok = ex.increments.len() >= 5 && ex.increments.iter().all(|i| (i / ln2 - 1.0).abs() <= 0.05);
    let ok = v_bs == ViabilityKind::Viable
        && v_bes == ViabilityKind::Viable
        && ex.verdict == ViabilityKind::DivergentMprIntegral
        && incs_ok;
    let incs: Vec<String> = ex.increments.iter().map(|x| format!("{x:.4}")).collect();
    Ok((ok, format!("bs {v_bs}, bessel3 {v_bes}, exploding_mpr {} with increments [{}] (ln 2 = {ln2:.4})", ex.verdict, incs.join(", "))))
}

fn c3() -> Outcome {
    let deficient = MarketModel::constant(
        "deficient",
        0.0,
        vec![0.1, 0.2],
        DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
        vec![1.0, 1.0],
        1.0,
        true,
    )?;
    let pt = [SamplePoint { t: 0.0, state: vec![1.0, 1.0] }];
    let (norm, w) = match diagnostics::detect_increasing_profit(&deficient, &pt)? {
        IncreasingProfit::Found(w) => (w.residual_norm, w.weights),
        IncreasingProfit::NoneDetected { .. } => return Ok((false, "no increasing profit found".into())),
    };
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let sign = w[1].signum();
    let weights_ok = (w[0] + sign * h).abs() < 1e-4 && (w[1] - sign * h).abs() < 1e-4;
    let norm_ok = (norm - 0.05 * 2f64.sqrt()).abs() <= 1e-9;
    let u = uniforms(31, 100 * 8);
    let mut worst: f64 = 0.0;
    for c in u.chunks(8) {
        let n = 1 + (c[0] * 3.0) as usize;
        let d = n + (c[1] * 2.0) as usize;
        let mut sigma = DMatrix::from_fn(n, d, |i, j| (c[(2 + i + j) % 8] - 0.5) + if i == j { 1.0 } else { 0.0 });
        sigma *= 0.3;
        let mu: Vec<f64> = (0..n).map(|i| 0.2 * (c[(5 + i) % 8] - 0.3)).collect();
        let m = MarketModel::constant("random", 0.01, mu, sigma, vec![1.0; n], 1.0, false)?;
        let s = [SamplePoint { t: 0.0, state: vec![1.0; n] }];
        worst = worst.max(diagnostics::detect_increasing_profit(&m, &s)?.residual_norm());
    }
    let ok = norm_ok && weights_ok && worst < 1e-9;
    Ok((ok, format!("residual {norm:.10}, weights [{:.4}, {:.4}], worst full-rank residual {worst:.1e}", w[0], w[1])))
}

/// Zooming grid search of a concave function over the box `[-range, range]^n`.
fn grid_argmax(f: &dyn Fn(&[f64]) -> f64, n: usize, range: f64, final_step: f64) -> Vec<f64> {
    let mut center = vec![0.0; n];
    let mut half = range;
    let mut step = range / 100.0;
    loop {
        let k = (half / step).round() as i64;
        let mut best = (f64::NEG_INFINITY, center.clone());
        let mut idx = vec![-k; n];
        'outer: loop {
            let x: Vec<f64> = center.iter().zip(&idx).map(|(c, i)| c + *i as f64 * step).collect();
            let v = f(&x);
            if v > best.0 {
                best = (v, x);
            }
            for j in 0..n {
                idx[j] += 1;
                if idx[j] <= k {
                    continue 'outer;
                }
                idx[j] = -k;
            }
            break;
        }
        center = best.1;
        if step <= final_step * 1.000001 {
            return center;
        }
        half = 2.0 * step;
        step /= 10.0;
    }
}

fn c4() -> Outcome {
    let models = [
        (bs(), SamplingScheme::LogEuler),
        (MarketModel::bessel3(1.0, 1.0)?, SamplingScheme::Exact),
        (MarketModel::bessel3(1.0, 1.0)?, SamplingScheme::LogEuler),
        (
            MarketModel::constant(
                "two_asset",
                0.02,
                vec![0.08, 0.05],
                DMatrix::from_row_slice(2, 2, &[0.2, 0.05, -0.1, 0.3]),
                vec![1.0, 2.0],
                1.0,
                false,
            )?,
            SamplingScheme::LogEuler,
        ),
    ];
    let mut worst: f64 = 0.0;
    for (m, scheme) in &models {
        let b = bundle(m, 5, 128, 2000, *scheme)?;
        for (z, g) in b.deflator.as_slice().iter().zip(b.gop.as_slice()) {
            worst = worst.max((z.ln() + g.ln()).abs());
        }
    }
    let u = uniforms(41, 100 * 7);
    let mut worst_pi: f64 = 0.0;
    for c in u.chunks(7) {
        let n = 1 + (c[0] * 2.0) as usize;
        let sigma = if n == 1 {
            DMatrix::from_element(1, 1, 0.15 + 0.35 * c[1])
        } else {
            DMatrix::from_row_slice(2, 2, &[0.2 + 0.3 * c[1], 0.1 * (c[2] - 0.5), 0.1 * (c[3] - 0.5), 0.2 + 0.3 * c[4]])
        };
        let mu: Vec<f64> = (0..n).map(|i| 0.02 + 0.3 * (c[5 + i] - 0.5)).collect();
        let snap = CoefficientSnapshot::new(0.02, mu, sigma)?;
        let star = gop::gop_strategy(&snap)?;
        // growth rate written out directly: r + pi'(mu - r) - |sigma' pi|² / 2
        let f = |x: &[f64]| {
            let excess: f64 = x.iter().zip(&snap.mu).map(|(p, m)| p * (m - snap.r)).sum();
            let var: f64 = (0..snap.n_drivers())
                .map(|j| (0..n).map(|i| x[i] * snap.sigma[(i, j)]).sum::<f64>().powi(2))
                .sum();
            snap.r + excess - 0.5 * var
        };
        let argmax = grid_argmax(&f, n, 12.0, 1e-4);
        for (a, b) in argmax.iter().zip(star.iter()) {
            worst_pi = worst_pi.max((a - b).abs());
        }
    }
    let ok = worst <= 1e-10 && worst_pi <= 1e-4;
    Ok((ok, format!("max |log Z + log V*| = {worst:.1e}, max |argmax - pi*| = {worst_pi:.1e}")))
}

fn c5() -> Outcome {
    let b = bundle(&bs(), 2, 16, 100_000, SamplingScheme::LogEuler)?;
    let p = pricing::real_world_price(&Claim::call(100.0), &b)?;
    let oracle = common::bs_call(100.0, 100.0, 0.2, 1.0).0;
    let ok = p.within(oracle, 3.0) && p.stderr <= 0.15;
    Ok((ok, format!("price {:.4} ± {:.4} vs closed form {oracle:.4}", p.value, p.stderr)))
}

fn c6() -> Outcome {
    let (ok_gap, line) = gap_zcb()?;
    let b = bundle(&MarketModel::bessel3(1.0, 1.0)?, 1, 1, 100_000, SamplingScheme::Exact)?;
    let rn = pricing::risk_neutral_comparison(&Claim::zcb(), &b)?;
    let flagged = rn.gap.verdict == GapVerdict::StrictLocalMartingale && rn.reweighted.is_none();
    Ok((ok_gap && flagged, format!("{line}; risk-neutral value 1, discrepancy {:.4} flagged: {flagged}", rn.discrepancy.mean)))
}

fn c7() -> Outcome {
    let cases = [
        (bs(), SamplingScheme::LogEuler, [Claim::call(100.0), Claim::put(95.0), Claim::polynomial(vec![1.0, 0.01])]),
        (MarketModel::bessel3(1.0, 1.0)?, SamplingScheme::Exact, [Claim::call(1.0), Claim::zcb(), Claim::stock()]),
    ];
    let mut worst: f64 = 0.0;
    for (m, scheme, claims) in &cases {
        let b = bundle(m, 9, 32, 20_000, *scheme)?;
        for c in claims {
            // deflator form E[Z_T H / S^0_T] against the benchmark form E[H / V*_T]
            let u = pricing::upper_hedging_price(m, c, &b)?;
            let deflated = pricing::deflated_payoffs(c, &b)?;
            let d = deflated.iter().sum::<f64>() / deflated.len() as f64;
            let r = pricing::real_world_price(c, &b)?;
            worst = worst.max((d - r.value).abs() / (1.0 + r.value.abs()));
            worst = worst.max((u.value - r.value).abs() / (1.0 + r.value.abs()));
        }
    }
    Ok((worst <= 1e-12, format!("max relative gap over 6 cases {worst:.1e}")))
}

fn c8() -> Outcome {
    let model = bs();
    let claim = Claim::call(100.0);
    let mut rms = Vec::new();
    let mut worst: f64 = 0.0;
    let mut price = 0.0;
    for steps in [256, 512, 1024] {
        let b = bundle(&model, 11, steps, 10_000, SamplingScheme::LogEuler)?;
        let res = replicate(&model, &claim, &b, DEFAULT_DEGREE)?;
        rms.push(res.terminal_error_rms);
        price = res.initial_capital;
        if steps == 1024 {
            let k = b.grid.node_at(0.5).unwrap();
            let mut s = b.assets.column(k, 0);
            s.sort_by(f64::total_cmp);
            let (q1, q3) = (s[s.len() / 4], s[3 * s.len() / 4]);
            for i in 0..=40 {
                let x = q1 + (q3 - q1) * i as f64 / 40.0;
                let (c, d) = common::bs_call(x, 100.0, 0.2, 0.5);
                let fitted = res.surface.fraction_delta(k, x, res.surface.value(k, x));
                worst = worst.max((fitted / (d * x / c) - 1.0).abs());
            }
        }
    }
    let rel = rms[2] / price;
    let decreasing = rms.windows(2).all(|w| w[1] < w[0]);
    let ok = rel <= 0.05 && decreasing && worst <= 0.03;
    Ok((ok, format!(
        "rms {:.4}/{:.4}/{:.4} at 256/512/1024 steps ({:.2}% of price), fraction-delta error {:.2}% on the IQR",
        rms[0], rms[1], rms[2], 100.0 * rel, 100.0 * worst
    )))
}

fn c9() -> Outcome {
    let b = bundle(&bs(), 13, 16, 50_000, SamplingScheme::LogEuler)?;
    let claim = Claim::call(100.0);
    let rw = pricing::real_world_price(&claim, &b)?;
    let mut worst_z: f64 = 0.0;
    let utilities = [
        UtilitySpec::log(),
        UtilitySpec::power(0.3)?,
        UtilitySpec::power(0.5)?,
        UtilitySpec::power(0.7)?,
    ];
    for u in &utilities {
        for v in [0.5, 1.0, 5.0] {
            let (_, p) = utility::indifference_price_for(u, v, &claim, &b)?;
            let joint = (p.stderr.powi(2) + rw.stderr.powi(2)).sqrt();
            worst_z = worst_z.max((p.value - rw.value).abs() / joint);
        }
    }
    let mut worst_log: f64 = 0.0;
    for v in [0.5, 1.0, 5.0] {
        let opt = utility::optimal_terminal_wealth(&UtilitySpec::log(), v, &b)?;
        let k = b.terminal_node();
        for (p, x) in opt.terminal.iter().enumerate() {
            let g = v * b.gop.value(p, k);
            worst_log = worst_log.max((x - g).abs() / g);
        }
    }
    let ok = worst_z <= 3.0 && worst_log <= 1e-10;
    Ok((ok, format!("12 indifference prices within {worst_z:.2e} joint se of {:.4}; log wealth vs GOP {worst_log:.1e}", rw.value)))
}

fn run_in_pool(threads: usize, config: &ExperimentConfig) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| cli::run(config)).map(|_| ())
}

fn read_csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn c10() -> Outcome {
    // pricing is linear and monotone, exactly, on a fixed bundle
    let b = bundle(&bs(), 17, 32, 10_000, SamplingScheme::LogEuler)?;
    let price = |c: &Claim| pricing::real_world_price(c, &b).map(|p| p.value);
    let (h1, h2) = (Claim::call(95.0), Claim::put(105.0));
    let combo = price(&Claim::combine(2.0, &h1, 0.5, &h2))?;
    let linear = (combo - (2.0 * price(&h1)? + 0.5 * price(&h2)?)).abs() <= 1e-12 * combo;
    let calls: Vec<f64> = [80.0, 90.0, 100.0, 110.0].iter().map(|k| price(&Claim::call(*k))).collect::<Result<_>>()?;
    let monotone = calls.windows(2).all(|w| w[1] <= w[0]) && calls[0] <= price(&Claim::stock())?;

    // every simple strategy is a supermartingale in units of the GOP
    let mut numeraire = true;
    let two = MarketModel::constant(
        "two_asset",
        0.02,
        vec![0.08, 0.05],
        DMatrix::from_row_slice(2, 2, &[0.2, 0.05, -0.1, 0.3]),
        vec![1.0, 2.0],
        1.0,
        false,
    )?;
    let models = [
        (bs(), SamplingScheme::LogEuler),
        (MarketModel::bessel3(1.0, 1.0)?, SamplingScheme::Exact),
        (MarketModel::exploding_mpr(1.0, 1.0)?, SamplingScheme::LogEuler),
        (two, SamplingScheme::LogEuler),
    ];
    for (m, scheme) in &models {
        let b = bundle(m, 19, 64, 4000, *scheme)?;
        let n = m.n_assets();
        for s in [Strategy::savings(n), Strategy::constant("half", vec![0.5 / n as f64; n]), Strategy::growth_optimal()] {
            let bp = gop::benchmarked_portfolio(m, &s, 1.0, &b)?;
            numeraire &= gop::numeraire_test(&bp, &b.grid)?.pass;
        }
    }

    // deflators shifted along the kernel of sigma are never smaller than theta
    let wide = MarketModel::constant("wide", 0.02, vec![0.1], DMatrix::from_row_slice(1, 2, &[0.2, 0.1]), vec![1.0], 1.0, false)?;
    let wb = bundle(&wide, 23, 32, 2000, SamplingScheme::LogEuler)?;
    let mut minimal = true;
    for c in [-0.5, -0.1, 0.0, 0.2, 1.0] {
        let spec = DeflatorSpec::shifted(&wide, vec![0.1 * c, -0.2 * c]);
        let rep = diagnostics::validate_deflator(&spec, &wide, &wb, &[Strategy::savings(1)])?;
        minimal &= rep.norm_dominates_theta && rep.min_norm_excess >= -1e-12;
    }

    // byte-identical outputs across repeated runs and worker counts
    let tmp = tempfile::tempdir()?;
    let mut reproducible = true;
    let configs = [
        (Command::Simulate, "black_scholes", None),
        (Command::Price, "bessel3", Some("zcb")),
        (Command::Hedge, "black_scholes", Some("call:100")),
        (Command::Utility, "black_scholes", Some("call:100")),
    ];
    for (i, (cmd, model, claim)) in configs.iter().enumerate() {
        let mut outputs = Vec::new();
        for (j, threads) in [1, 4, 4].iter().enumerate() {
            let mut c = ExperimentConfig::new(*cmd, Some(cli::preset_model(model)?));
            c.n_paths = 2000;
            c.n_steps = 32;
            c.claim = claim.map(str::to_string);
            c.utility = Some("power:0.5".into());
            c.out = tmp.path().join(format!("{i}-{j}"));
            run_in_pool(*threads, &c)?;
            outputs.push(read_csvs(&c.out));
        }
        reproducible &= !outputs[0].is_empty() && outputs.windows(2).all(|w| w[0] == w[1]);
    }
    let ok = linear && monotone && numeraire && minimal && reproducible;
    Ok((ok, format!(
        "linear {linear}, monotone {monotone}, numeraire {numeraire}, minimal deflator {minimal}, reproducible {reproducible}"
    )))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, u64); 10] = [
        ("1 strict local martingale gap", c1, 10),
        ("2 viability trichotomy", c2, 10),
        ("3 increasing-profit detection", c3, 1),
        ("4 GOP identities", c4, 30),
        ("5 real-world = risk-neutral for Black-Scholes", c5, 30),
        ("6 bond-price discrepancy", c6, 10),
        ("7 upper hedging = real world", c7, 30),
        ("8 replication", c8, 120),
        ("9 utility-indifference universality", c9, 120),
        ("10 property suite", c10, 120),
    ];
    let mut failed = 0;
    for (name, f, budget) in criteria {
        let start = Instant::now();
        let outcome = f();
        let elapsed = start.elapsed();
        let (ok, detail) = match outcome {
            Ok((ok, detail)) => (ok, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let on_time = elapsed <= Duration::from_secs(budget);
        let pass = ok && on_time;
        if !pass {
            failed += 1;
        }
        println!(
            "[{}] criterion {name}: {detail} [{:.2}s of {budget}s]",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    println!("acceptance: {} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
