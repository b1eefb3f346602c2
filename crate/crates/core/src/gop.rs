//! Growth rates, the growth-optimal portfolio and benchmarking.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{SamplePoint, MIN_MARTINGALE_SAMPLES};
use crate::error::{Error, Result};
use crate::market::{CoefficientSnapshot, MarketModel};
use crate::risk;
use crate::sim::{self, PathBundle, PathTable, Rebalancing, SimulationGrid, Strategy};
use crate::stats;

fn check_len(snap: &CoefficientSnapshot, pi: &[f64]) -> Result<()> {
    if pi.len() != snap.n_assets() {
        return Err(Error::Dimension(format!(
            "{} weights for {} assets",
            pi.len(),
            snap.n_assets()
        )));
    }
    Ok(())
}

/// Drift of `log V^pi`: `r + pi'(mu - r 1) - pi' sigma sigma' pi / 2`.
pub fn growth_rate(snap: &CoefficientSnapshot, pi: &[f64]) -> Result<f64> {
    check_len(snap, pi)?;
    let mut expo = vec![0.0; snap.n_drivers()];
    risk::vol_exposure(snap, pi, &mut expo);
    let excess: f64 = pi
        .iter()
        .zip(snap.mu.iter())
        .map(|(w, m)| w * (m - snap.r))
        .sum();
    let var: f64 = expo.iter().map(|e| e * e).sum();
    Ok(snap.r + excess - 0.5 * var)
}

/// Growth-optimal weights `(sigma sigma')⁻¹ sigma theta`. Needs full row rank.
pub fn gop_strategy(snap: &CoefficientSnapshot) -> Result<DVector<f64>> {
    let mut theta = vec![0.0; snap.n_drivers()];
    risk::theta_into(snap, f64::NAN, false, &mut theta)?;
    let mut pi = vec![0.0; snap.n_assets()];
    risk::gop_weights_into(snap, &theta, f64::NAN, &mut pi)?;
    Ok(DVector::from_vec(pi))
}

/// Growth rates of one strategy over a set of sample points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub strategy_label: String,
    pub growth_rates: Vec<f64>,
    /// True when every rate equals the growth-optimal one to `1e-12`.
    pub optimal_flag: bool,
}

/// Evaluates a constant-weight strategy against the growth-optimal rate at each point.
pub fn growth_report(model: &MarketModel, label: &str, pi: &[f64], points: &[SamplePoint]) -> Result<GrowthReport> {
    let mut rates = Vec::with_capacity(points.len());
    let mut optimal = true;
    for pt in points {
        let snap = model.eval_coefficients(pt.t, &pt.state)?;
        let g = growth_rate(&snap, pi)?;
        let star = gop_strategy(&snap)?;
        let g_star = growth_rate(&snap, star.as_slice())?;
        optimal &= (g - g_star).abs() <= 1e-12 * (1.0 + g_star.abs());
        rates.push(g);
    }
    Ok(GrowthReport {
        strategy_label: label.to_string(),
        growth_rates: rates,
        optimal_flag: optimal,
    })
}

/// Discounted GOP `V̄^{pi*}` with unit initial wealth, built from the market price of
/// risk: `d log V̄ = |theta|²/2 dt + theta' dW`.
pub fn simulate_gop(model: &MarketModel, bundle: &PathBundle) -> Result<PathTable> {
    sim::simulate_gop_paths(model, bundle)
}

/// Portfolio values in units of the GOP: `V̂ = V̄^pi / V̄^{pi*}`.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkedPath {
    pub values: PathTable,
}

impl BenchmarkedPath {
    pub fn initial_value(&self) -> f64 {
        self.values.value(0, 0)
    }
}

pub fn benchmark(portfolio: &PathTable, gop: &PathTable) -> Result<BenchmarkedPath> {
    if portfolio.width() != 1 || gop.width() != 1 {
        return Err(Error::Dimension("benchmarking needs scalar paths".into()));
    }
    let values = portfolio
        .zip_with(gop, |v, g| v / g)
        .map_err(|_| Error::Dimension("portfolio and GOP tables are on different grids".into()))?;
    if gop.as_slice().iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(Error::NonFinite("GOP value".into()));
    }
    if values.as_slice().iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("benchmarked value".into()));
    }
    Ok(BenchmarkedPath { values })
}

/// Mean benchmarked value at one monitoring node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitoredMean {
    pub node: usize,
    pub time: f64,
    pub mean: f64,
    pub stderr: f64,
}

/// Slack for round-off in the supermartingale check, relative to the benchmarked scale.
pub const NUMERAIRE_ROUNDOFF: f64 = 1e-12;

/// Outcome of the supermartingale (numeraire) check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumeraireVerdict {
    pub pass: bool,
    /// Largest `mean(V̂_t - V̂_s) - 3 se` over monitored pairs `s < t`; pass iff `<= 0`.
    pub worst_margin: f64,
    pub means: Vec<MonitoredMean>,
    /// `mean(V̂_T - V̂_0) + 3 se < 0`: the decline is visible beyond the bands.
    pub declines_beyond_bands: bool,
}

pub(crate) fn monitored_means(values: &PathTable, grid: &SimulationGrid, nodes: &[usize]) -> Result<Vec<MonitoredMean>> {
    nodes
        .iter()
        .map(|&k| {
            let e = stats::mean_stderr(&values.column(k, 0))?;
            Ok(MonitoredMean {
                node: k,
                time: grid.times()[k],
                mean: e.mean,
                stderr: e.stderr,
            })
        })
        .collect()
}

fn paired_difference(values: &PathTable, s: usize, t: usize) -> Result<stats::MeanEstimate> {
    let diffs: Vec<f64> = (0..values.n_paths())
        .map(|p| values.value(p, t) - values.value(p, s))
        .collect();
    stats::mean_stderr(&diffs)
}

/// Supermartingale check of benchmarked values on the grid deciles: for every pair of
/// monitoring nodes `s < t`, `mean(V̂_t - V̂_s) <= 3 se` of the paired difference, up to
/// [`NUMERAIRE_ROUNDOFF`] times the initial value.
pub fn numeraire_test(benchmarked: &BenchmarkedPath, grid: &SimulationGrid) -> Result<NumeraireVerdict> {
    let values = &benchmarked.values;
    if values.n_paths() < MIN_MARTINGALE_SAMPLES {
        return Err(Error::InsufficientSamples {
            needed: MIN_MARTINGALE_SAMPLES,
            got: values.n_paths(),
        });
    }
    if values.n_nodes() != grid.n_nodes() {
        return Err(Error::Dimension("benchmarked paths are not on this grid".into()));
    }
    let nodes = grid.decile_nodes();
    let mut worst = f64::NEG_INFINITY;
    for (a, &s) in nodes.iter().enumerate() {
        for &t in &nodes[a + 1..] {
            let e = paired_difference(values, s, t)?;
            worst = worst.max(e.mean - 3.0 * e.stderr);
        }
    }
    let total = paired_difference(values, nodes[0], *nodes.last().unwrap())?;
    Ok(NumeraireVerdict {
        pass: worst <= NUMERAIRE_ROUNDOFF * values.value(0, 0).abs().max(1.0),
        worst_margin: worst,
        means: monitored_means(values, grid, &nodes)?,
        declines_beyond_bands: total.mean + 3.0 * total.stderr < 0.0,
    })
}

/// Simulates `strategy` from capital `v` and returns its benchmarked paths, rebalancing
/// as suits the bundle's sampling scheme.
pub fn benchmarked_portfolio(
    model: &MarketModel,
    strategy: &Strategy,
    v: f64,
    bundle: &PathBundle,
) -> Result<BenchmarkedPath> {
    let rebalancing = Rebalancing::for_scheme(bundle.scheme);
    let portfolio = sim::simulate_portfolio_with(model, strategy, v, bundle, rebalancing)?;
    benchmark(&portfolio, &bundle.gop)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn bs_snap() -> CoefficientSnapshot {
        CoefficientSnapshot::new(0.02, vec![0.1], DMatrix::from_element(1, 1, 0.2)).unwrap()
    }

    #[test]
    fn growth_rate_black_scholes() {
        let s = bs_snap();
        assert!((growth_rate(&s, &[1.0]).unwrap() - 0.08).abs() < 1e-15);
        assert_eq!(growth_rate(&s, &[0.0]).unwrap(), 0.02);
        assert!((growth_rate(&s, &[2.0]).unwrap() - 0.10).abs() < 1e-15);
        assert!(growth_rate(&s, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn gop_weights() {
        assert!((gop_strategy(&bs_snap()).unwrap()[0] - 2.0).abs() < 1e-14);
        let flat = CoefficientSnapshot::new(0.03, vec![0.03], DMatrix::from_element(1, 1, 0.4)).unwrap();
        assert_eq!(gop_strategy(&flat).unwrap()[0], 0.0);
        let two = CoefficientSnapshot::new(
            0.0,
            vec![0.1, 0.2],
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]),
        )
        .unwrap();
        let pi = gop_strategy(&two).unwrap();
        assert!((pi[0] - 0.1).abs() < 1e-14 && (pi[1] - 0.05).abs() < 1e-14);
        let deficient = CoefficientSnapshot::new(
            0.0,
            vec![0.1, 0.2],
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
        )
        .unwrap();
        assert!(matches!(gop_strategy(&deficient), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn benchmark_rejects_mismatched_grids() {
        let a = PathTable::filled(2, 3, 1, 1.0);
        let b = PathTable::filled(2, 4, 1, 1.0);
        assert!(matches!(benchmark(&a, &b), Err(Error::Dimension(_))));
        let ok = benchmark(&a, &PathTable::filled(2, 3, 1, 2.0)).unwrap();
        assert_eq!(ok.initial_value(), 0.5);
    }

    #[test]
    fn numeraire_needs_paths() {
        let g = SimulationGrid::uniform(1.0, 10).unwrap();
        let b = BenchmarkedPath { values: PathTable::filled(10, 11, 1, 1.0) };
        assert!(matches!(numeraire_test(&b, &g), Err(Error::InsufficientSamples { .. })));
        let flat = BenchmarkedPath { values: PathTable::filled(1000, 11, 1, 1.0) };
        let v = numeraire_test(&flat, &g).unwrap();
        assert!(v.pass);
        assert_eq!(v.worst_margin, 0.0);
        let rising = BenchmarkedPath { values: PathTable::from_vec(1000, 11, 1, (0..11000).map(|i| 1.0 + (i % 11) as f64 * 1e-3).collect()).unwrap() };
        assert!(!numeraire_test(&rising, &g).unwrap().pass);
        assert!(!v.declines_beyond_bands);
    }
}
