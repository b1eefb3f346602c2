//! Regression-based replication of claims in one-dimensional Markov markets.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::MIN_MARTINGALE_SAMPLES;
use crate::error::{Error, Result};
use crate::gop::{benchmark, BenchmarkedPath};
use crate::market::MarketModel;
use crate::pricing::{real_world_price, Claim, TerminalPayoff as TerminalFn};
use crate::sim::{self, PathBundle, PathTable, Rebalancing, SimulationGrid, Strategy};
use crate::stats;

pub const DEFAULT_DEGREE: usize = 4;
/// Ridge penalty on the non-constant coefficients, relative to the path count.
pub const RIDGE: f64 = 1e-8;
/// Relative bump for the central-difference delta.
pub const DELTA_BUMP: f64 = 0.01;
pub const MAX_DELTA: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
enum Fit {
    Constant(f64),
    /// Polynomial in `(log S - center) / scale`, lowest power first, plus an optional
    /// standardized smoothed-payoff column `(f - mean) / sd` whose coefficient comes last.
    Poly {
        center: f64,
        scale: f64,
        coeffs: Vec<f64>,
        payoff: Option<(f64, f64)>,
    },
}

impl Fit {
    fn eval(&self, s: f64, feature: f64) -> f64 {
        match self {
            Fit::Constant(c) => *c,
            Fit::Poly { center, scale, coeffs, payoff } => {
                let x = (s.ln() - center) / scale;
                let (poly, extra) = match payoff {
                    Some((mean, sd)) => {
                        let (last, rest) = coeffs.split_last().unwrap();
                        (rest, last * (feature - mean) / sd)
                    }
                    None => (&coeffs[..], 0.0),
                };
                poly.iter().rev().fold(0.0, |acc, c| acc * x + c) + extra
            }
        }
    }
}

/// Log-price points per node in the smoothed-payoff table.
const TABLE_POINTS: usize = 512;
/// Trapezoid points for the normal average, on `[-QUAD_RANGE, QUAD_RANGE]`.
const QUAD_POINTS: usize = 401;
const QUAD_RANGE: f64 = 7.0;
/// Relative margin of the table beyond the simulated price range.
const TABLE_MARGIN: f64 = 0.05;

/// Values of the smoothed payoff on a uniform grid in `log S` at one node.
#[derive(Debug, Clone)]
struct NodeTable {
    u0: f64,
    du: f64,
    values: Vec<f64>,
}

impl NodeTable {
    /// Cubic Hermite interpolation with central-difference slopes: value and `d/du`.
    fn eval(&self, u: f64) -> Option<(f64, f64)> {
        let x = (u - self.u0) / self.du;
        let m = self.values.len();
        if !(x >= 1.0 && x <= (m - 2) as f64) {
            return None;
        }
        let i = (x.floor() as usize).min(m - 3);
        let f = |j: usize| self.values[j];
        let slope = |j: usize| 0.5 * (f(j + 1) - f(j - 1));
        let (p0, p1, m0, m1) = (f(i), f(i + 1), slope(i), slope(i + 1));
        let t = x - i as f64;
        let (t2, t3) = (t * t, t * t * t);
        let value = (2.0 * t3 - 3.0 * t2 + 1.0) * p0 + (t3 - 2.0 * t2 + t) * m0 + (-2.0 * t3 + 3.0 * t2) * p1 + (t3 - t2) * m1;
        let dvalue = (6.0 * t2 - 6.0 * t) * p0 + (3.0 * t2 - 4.0 * t + 1.0) * m0 + (-6.0 * t2 + 6.0 * t) * p1 + (3.0 * t2 - 2.0 * t) * m1;
        Some((value, dvalue / self.du))
    }
}

/// Terminal payoff averaged over a lognormal move with the local volatility frozen
/// at `(t, S)` for the remaining time; the payoff itself at the horizon. Tabulated per
/// node over the simulated price range and interpolated, with direct quadrature as the
/// fallback outside the table.
#[derive(Clone)]
struct SmoothedPayoff {
    model: MarketModel,
    payoff: Arc<TerminalFn>,
    z: Vec<f64>,
    w: Vec<f64>,
    times: Vec<f64>,
    tables: Vec<Option<NodeTable>>,
}

impl SmoothedPayoff {
    fn new(model: &MarketModel, claim: &Claim, bundle: &PathBundle) -> Option<Self> {
        let payoff = claim.terminal_payoff_arc()?;
        let dz = 2.0 * QUAD_RANGE / (QUAD_POINTS - 1) as f64;
        let z: Vec<f64> = (0..QUAD_POINTS).map(|i| -QUAD_RANGE + i as f64 * dz).collect();
        let mut w: Vec<f64> = z.iter().map(|x| (-0.5 * x * x).exp()).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
        let mut out = Self {
            model: model.clone(),
            payoff,
            z,
            w,
            times: bundle.grid.times().to_vec(),
            tables: Vec::new(),
        };
        let last = bundle.terminal_node();
        out.tables = (0..bundle.n_nodes())
            .into_par_iter()
            .map(|k| {
                if k == last {
                    return None;
                }
                let column = bundle.assets.column(k, 0);
                let lo = column.iter().fold(f64::INFINITY, |a, b| a.min(*b));
                let hi = column.iter().fold(0.0f64, |a, b| a.max(*b));
                let (u_lo, u_hi) = ((lo * (1.0 - TABLE_MARGIN)).ln(), (hi * (1.0 + TABLE_MARGIN)).ln());
                let du = (u_hi - u_lo) / (TABLE_POINTS - 3) as f64;
                let u0 = u_lo - du;
                let values = (0..TABLE_POINTS)
                    .map(|i| out.direct(out.times[k], (u0 + i as f64 * du).exp()))
                    .collect();
                Some(NodeTable { u0, du, values })
            })
            .collect();
        Some(out)
    }

    fn direct(&self, t: f64, s: f64) -> f64 {
        let tau = self.model.horizon() - t;
        if tau <= 0.0 {
            return (self.payoff)(s);
        }
        let mut snap = self.model.snapshot_buffer();
        self.model.eval_into(t, &[s], &mut snap);
        let vol = snap.sigma[(0, 0)].abs();
        if !(vol.is_finite() && vol > 0.0) {
            return (self.payoff)(s);
        }
        let sd = vol * tau.sqrt();
        self.z
            .iter()
            .zip(&self.w)
            .map(|(z, w)| w * (self.payoff)(s * (sd * z - 0.5 * sd * sd).exp()))
            .sum()
    }

    fn eval(&self, k: usize, s: f64) -> f64 {
        match self.tables[k].as_ref().and_then(|tab| tab.eval(s.ln())) {
            Some((v, _)) => v,
            None => self.direct(self.times[k], s),
        }
    }

    /// Share delta `d/dS`.
    fn delta(&self, k: usize, s: f64) -> f64 {
        match self.tables[k].as_ref().and_then(|tab| tab.eval(s.ln())) {
            Some((_, dv)) => dv / s,
            None => {
                let h = DELTA_BUMP * s;
                (self.direct(self.times[k], s + h) - self.direct(self.times[k], s - h)) / (2.0 * h)
            }
        }
    }
}

impl std::fmt::Debug for SmoothedPayoff {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SmoothedPayoff").field("model", &self.model.name()).finish()
    }
}

/// Fitted portfolio value `v̂(t_k, S)` on every grid node.
#[derive(Debug, Clone)]
pub struct ValueSurface {
    pub degree: usize,
    pub times: Vec<f64>,
    /// Coefficient of determination per node.
    pub r_squared: Vec<f64>,
    fits: Vec<Fit>,
    smoothed: Option<SmoothedPayoff>,
}

impl ValueSurface {
    fn feature(&self, k: usize, fit: &Fit, s: f64) -> f64 {
        match (fit, &self.smoothed) {
            (Fit::Poly { payoff: Some(_), .. }, Some(f)) => f.eval(k, s),
            _ => 0.0,
        }
    }

    pub fn value(&self, k: usize, s: f64) -> f64 {
        let fit = &self.fits[k];
        fit.eval(s, self.feature(k, fit, s))
    }

    /// Central difference of the fit at node `k` with a bump of 1% of `s`. The
    /// initial node has a single state, so its slope comes from the next node's fit.
    pub fn delta(&self, k: usize, s: f64) -> f64 {
        let k = match &self.fits[k] {
            Fit::Constant(_) if k == 0 && self.fits.len() > 1 => 1,
            _ => k,
        };
        let fit = &self.fits[k];
        let h = DELTA_BUMP * s;
        let up = fit.eval(s + h, self.feature(k, fit, s + h));
        let down = fit.eval(s - h, self.feature(k, fit, s - h));
        (up - down) / (2.0 * h)
    }

    /// Share of wealth `wealth` held in the asset: `delta * S / wealth`.
    pub fn fraction_delta(&self, k: usize, s: f64, wealth: f64) -> f64 {
        self.delta(k, s) * s / wealth
    }

    pub fn n_nodes(&self) -> usize {
        self.fits.len()
    }
}

fn require_one_dimensional(model: &MarketModel) -> Result<()> {
    if model.n_assets() != 1 || model.n_drivers() != 1 {
        return Err(Error::Assumption(format!(
            "replication is implemented for one asset driven by one Brownian motion; `{}` has {} assets and {} drivers",
            model.name(),
            model.n_assets(),
            model.n_drivers()
        )));
    }
    Ok(())
}

/// Ridge least squares of `y` on standardized powers of `log s`, plus `feature` as
/// one more column when given and not constant over the sample.
fn regress(s: &[f64], y: &[f64], degree: usize, feature: Option<Vec<f64>>) -> Result<(Fit, f64)> {
    let n = s.len() as f64;
    let logs: Vec<f64> = s.iter().map(|x| x.ln()).collect();
    let spread = stats::mean_stderr(&logs)?;
    let center = spread.mean;
    let scale = spread.stderr * n.sqrt();
    let y_mean = stats::neumaier_sum(y.iter().copied()) / n;
    let sst: f64 = y.iter().map(|v| (v - y_mean).powi(2)).sum();
    if !(scale > 1e-12 * (1.0 + center.abs())) || degree == 0 {
        let fit = Fit::Constant(y_mean);
        return Ok((fit, if sst == 0.0 { 1.0 } else { 0.0 }));
    }
    let payoff = match feature {
        Some(col) => {
            let e = stats::mean_stderr(&col)?;
            let sd = e.stderr * n.sqrt();
            (sd > 1e-12 * (1.0 + e.mean.abs())).then_some((col, e.mean, sd))
        }
        None => None,
    };
    let m = degree + 1 + usize::from(payoff.is_some());
    let mut gram = DMatrix::<f64>::zeros(m, m);
    let mut rhs = DVector::<f64>::zeros(m);
    let mut row = vec![0.0; m];
    for (p, (l, &target)) in logs.iter().zip(y).enumerate() {
        let x = (l - center) / scale;
        row[0] = 1.0;
        for j in 1..=degree {
            row[j] = row[j - 1] * x;
        }
        if let Some((col, mean, sd)) = &payoff {
            row[m - 1] = (col[p] - mean) / sd;
        }
        for i in 0..m {
            rhs[i] += row[i] * target;
            for j in 0..=i {
                gram[(i, j)] += row[i] * row[j];
            }
        }
    }
    for i in 0..m {
        for j in 0..i {
            gram[(j, i)] = gram[(i, j)];
        }
        if i > 0 {
            gram[(i, i)] += RIDGE * n;
        }
    }
    let coeffs = gram
        .cholesky()
        .ok_or_else(|| Error::Numerical("degenerate regression matrix".into()))?
        .solve(&rhs);
    let fit = Fit::Poly {
        center,
        scale,
        coeffs: coeffs.iter().copied().collect(),
        payoff: payoff.as_ref().map(|(_, mean, sd)| (*mean, *sd)),
    };
    let ssr: f64 = s
        .iter()
        .zip(y)
        .enumerate()
        .map(|(p, (x, v))| {
            let f = payoff.as_ref().map_or(0.0, |(col, _, _)| col[p]);
            (v - fit.eval(*x, f)).powi(2)
        })
        .sum();
    let r2 = if sst > 0.0 { 1.0 - ssr / sst } else if ssr <= 1e-24 * n { 1.0 } else { 0.0 };
    Ok((fit, r2))
}

/// Regresses `H (Z_T / Z_k) (S^0_k / S^0_T)` on the asset price at every node, giving
/// the replicating portfolio value as a function of `(t_k, S)`.
///
/// Claims on the terminal asset price add the smoothed payoff (see [`SmoothedPayoff`])
/// to the basis, and their targets subtract the deflated gains of the portfolio that
/// holds the smoothed payoff's delta in the asset: `sum_{j>=k} delta_j d(Z S̄)_j`, plus
/// the cash leg `(c_j - delta_j S_j) / S^0_j dZ_j` when the coefficients are constant.
/// Both are martingale increments, so the conditional mean is unchanged while most of
/// the target variance cancels.
pub fn value_function(model: &MarketModel, claim: &Claim, bundle: &PathBundle, degree: usize) -> Result<ValueSurface> {
    require_one_dimensional(model)?;
    let h = claim.evaluate(bundle)?;
    let last = bundle.terminal_node();
    let n_nodes = bundle.n_nodes();
    let smoothed = SmoothedPayoff::new(model, claim, bundle);
    let times = bundle.grid.times();
    let (z, b, assets) = (&bundle.deflator, &bundle.savings, &bundle.assets);
    // The cash leg needs Z itself to be a true martingale, which Novikov's condition
    // guarantees when the coefficients are constant.
    let deflator_control = model.has_constant_coefficients();
    let targets = PathTable::build_paths(bundle.n_paths, n_nodes, 1, |p, out| {
        let terminal = h[p] * z.value(p, last) / b.value(p, last);
        let mut gains = 0.0;
        out[last] = terminal * b.value(p, last) / z.value(p, last);
        for k in (0..last).rev() {
            if let Some(f) = &smoothed {
                let s = assets.value(p, k);
                let delta = f.delta(k, s);
                let deflated = |j: usize| z.value(p, j) * assets.value(p, j) / b.value(p, j);
                gains += delta * (deflated(k + 1) - deflated(k));
                if deflator_control {
                    let cash = (f.eval(k, s) - delta * s) / b.value(p, k);
                    gains += cash * (z.value(p, k + 1) - z.value(p, k));
                }
            }
            out[k] = (terminal - gains) * b.value(p, k) / z.value(p, k);
        }
        match out.iter().position(|v| !v.is_finite()) {
            Some(k) => Err(Error::NonFinite(format!("regression target at node {k} on path {p}"))),
            None => Ok(()),
        }
    })?;
    let results: Vec<(Fit, f64)> = (0..n_nodes)
        .into_par_iter()
        .map(|k| {
            let s = assets.column(k, 0);
            let feature = smoothed
                .as_ref()
                .map(|f| s.iter().map(|x| f.eval(k, *x)).collect());
            regress(&s, &targets.column(k, 0), degree, feature)
        })
        .collect::<Result<_>>()?;
    let (fits, r_squared) = results.into_iter().unzip();
    Ok(ValueSurface {
        degree,
        times: times.to_vec(),
        r_squared,
        fits,
        smoothed,
    })
}

/// Outcome of the martingale test on a benchmarked portfolio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessVerdict {
    pub pass: bool,
    /// Largest `|mean(V̂_t - V̂_0)| / se` over monitored nodes (0 when every difference vanishes).
    pub worst_z: f64,
    pub means: Vec<crate::gop::MonitoredMean>,
}

/// Checks that benchmarked values keep their initial mean at every grid decile
/// within three standard errors of the paired difference.
pub fn fairness_check(benchmarked: &BenchmarkedPath, grid: &SimulationGrid) -> Result<FairnessVerdict> {
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
    let mut worst: f64 = 0.0;
    let mut pass = true;
    for &k in &nodes[1..] {
        let diffs: Vec<f64> = (0..values.n_paths())
            .map(|p| values.value(p, k) - values.value(p, 0))
            .collect();
        let e = stats::mean_stderr(&diffs)?;
        if e.mean.abs() > 3.0 * e.stderr {
            pass = false;
        }
        if e.stderr > 0.0 {
            worst = worst.max(e.mean.abs() / e.stderr);
        } else if e.mean != 0.0 {
            worst = f64::INFINITY;
        }
    }
    Ok(FairnessVerdict {
        pass,
        worst_z: worst,
        means: crate::gop::monitored_means(values, grid, &nodes)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HedgeNodeStats {
    pub time: f64,
    /// Mean of the share delta over paths (the last node repeats the last step).
    pub mean_delta: f64,
    /// RMS of hedge wealth minus fitted value (minus the payoff at the horizon).
    pub rms_error_running: f64,
}

#[derive(Debug, Clone)]
pub struct HedgeResult {
    pub initial_capital: f64,
    /// Fraction of wealth in the asset, per path and step.
    pub strategy_table: PathTable,
    /// Discounted hedge wealth `V̄^{v_H, pi_H}`.
    pub portfolio: PathTable,
    /// `S^0_T V̄_T - H` per path.
    pub terminal_errors: Vec<f64>,
    pub terminal_error_rms: f64,
    pub terminal_error_max: f64,
    pub fairness: FairnessVerdict,
    pub nodes: Vec<HedgeNodeStats>,
    pub surface: ValueSurface,
}

impl HedgeResult {
    pub fn strategy(&self) -> Strategy {
        Strategy::tabulated("hedge", self.strategy_table.clone())
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "v_H": self.initial_capital,
            "rms_T": self.terminal_error_rms,
            "max_T": self.terminal_error_max,
            "fairness": {
                "pass": self.fairness.pass,
                "worst_z": if self.fairness.worst_z.is_finite() { self.fairness.worst_z } else { f64::MAX },
            },
        })
    }
}

/// Builds the replicating portfolio from the real-world price: at each node the
/// share delta of the fitted surface is converted to a fraction of current wealth,
/// shares are held over each step, and the resulting table is replayed through
/// [`sim::simulate_portfolio_with`].
pub fn replicate(model: &MarketModel, claim: &Claim, bundle: &PathBundle, degree: usize) -> Result<HedgeResult> {
    let surface = value_function(model, claim, bundle, degree)?;
    let v_h = real_world_price(claim, bundle)?.value;
    if !(v_h > 0.0) {
        return Err(Error::Numerical(format!("claim `{}` has zero price", claim.label)));
    }
    let savings = &bundle.savings;
    let (wealth, table) = sim::simulate_feedback_portfolio(
        model,
        "hedge",
        v_h,
        bundle,
        Rebalancing::Discrete,
        |p, k, t, state, w, out| {
            let s = state[0];
            let delta = surface.delta(k, s);
            if !delta.is_finite() || delta.abs() > MAX_DELTA {
                return Err(Error::Numerical(format!("unstable delta {delta} at t={t}, S={s}")));
            }
            let value = savings.value(p, k) * w;
            if value == 0.0 {
                return Err(Error::Numerical(format!("hedge wealth vanished at t={t} on path {p}")));
            }
            out[0] = delta * s / value;
            Ok(())
        },
    )?;
    let strategy = Strategy::tabulated("hedge", table.clone());
    let portfolio = sim::simulate_portfolio_with(model, &strategy, v_h, bundle, Rebalancing::Discrete)?;
    let replay_gap = portfolio
        .as_slice()
        .iter()
        .zip(wealth.as_slice())
        .map(|(a, b)| (a - b).abs() / (1.0 + b.abs()))
        .fold(0.0, f64::max);
    if replay_gap > 1e-9 {
        return Err(Error::Numerical(format!("tabulated replay drifted by {replay_gap:e}")));
    }

    let h = claim.evaluate(bundle)?;
    let last = bundle.terminal_node();
    let errors: Vec<f64> = (0..bundle.n_paths)
        .map(|p| savings.value(p, last) * portfolio.value(p, last) - h[p])
        .collect();
    let rms = (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt();
    let max = errors.iter().fold(0.0f64, |m, e| m.max(e.abs()));

    let n_paths = bundle.n_paths as f64;
    let nodes = (0..bundle.n_nodes())
        .map(|k| {
            let step = k.min(last - 1);
            let mut delta_sum = 0.0;
            let mut sq = 0.0;
            for p in 0..bundle.n_paths {
                let s = bundle.assets.value(p, k);
                let s_step = bundle.assets.value(p, step);
                let w = savings.value(p, step) * wealth.value(p, step);
                delta_sum += table.value(p, step) * w / s_step;
                let target = if k == last { h[p] } else { surface.value(k, s) };
                sq += (savings.value(p, k) * portfolio.value(p, k) - target).powi(2);
            }
            HedgeNodeStats {
                time: bundle.grid.times()[k],
                mean_delta: delta_sum / n_paths,
                rms_error_running: (sq / n_paths).sqrt(),
            }
        })
        .collect();
    let fairness = fairness_check(&benchmark(&portfolio, &bundle.gop)?, &bundle.grid)?;
    Ok(HedgeResult {
        initial_capital: v_h,
        strategy_table: table,
        portfolio,
        terminal_errors: errors,
        terminal_error_rms: rms,
        terminal_error_max: max,
        fairness,
        nodes,
        surface,
    })
}
