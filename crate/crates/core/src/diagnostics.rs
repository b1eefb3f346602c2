//! Market price of risk, increasing-profit detection, viability profiling and
//! martingale-deflator checks.
//!
//! The verdicts here are finite-sample diagnostics. A model is *viable* when the
//! integral of `|theta|²` stays finite; that cannot be decided from samples, so
//! [`viability_check`] looks at how the Riemann sums react to refining the grid
//! near `t = 0`. Likewise the martingale property of a deflator is only visible
//! through its drift-free discrete shadow and the terminal mean.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::linalg;
use crate::market::{CoefficientSnapshot, MarketModel};
use crate::risk;
use crate::rng::{NoiseSource, Stream};
use crate::sim::{
    self, brownian_increments, eval_time, PathBundle, PathTable, SamplingScheme, SimulationGrid,
    Spacing, Strategy,
};
use crate::stats;

/// Residual norm above which `mu - r 1` is considered outside the range of `sigma`.
pub const PROFIT_TOL: f64 = 1e-9;
/// Tolerance on `sigma gamma = mu - r 1` for deflator specifications.
pub const DRIFT_EQ_TOL: f64 = 1e-9;
/// Steps per dyadic band when refining the grid near zero.
pub const REFINE_SUBSTEPS: usize = 16;
/// Relative change of the integral at the last level below which a model is viable.
pub const VIABLE_REL_CHANGE: f64 = 0.01;
/// Minimum ratio of successive increments for a divergent profile.
pub const DIVERGENT_PERSISTENCE: f64 = 0.9;
/// Minimum number of samples for the statistical martingale checks.
pub const MIN_MARTINGALE_SAMPLES: usize = 1000;
/// Bound on the drift t-statistic of `D V̄`.
pub const DRIFT_T_BOUND: f64 = 4.0;

/// Minimum-norm solution `theta` of `sigma theta = mu - r 1`.
///
/// When `allow_deficient` is false, `sigma` must have full row rank; otherwise the
/// Moore–Penrose solution is returned even if the drift equation has no solution.
pub fn market_price_of_risk(snap: &CoefficientSnapshot, allow_deficient: bool) -> Result<DVector<f64>> {
    let mut out = vec![0.0; snap.n_drivers()];
    risk::theta_into(snap, f64::NAN, allow_deficient, &mut out)?;
    Ok(DVector::from_vec(out))
}

/// A point `(t, state)` at which coefficients are inspected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub t: f64,
    pub state: Vec<f64>,
}

/// Evidence of an increasing profit at one sample point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfitWitness {
    pub point: SamplePoint,
    /// Projection of `mu - r 1` onto the kernel of `sigma'`.
    pub residual: Vec<f64>,
    pub residual_norm: f64,
    /// Normalized residual: a strategy with `sigma' pi = 0` and positive excess return.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum IncreasingProfit {
    NoneDetected { max_residual_norm: f64 },
    Found(ProfitWitness),
}

impl IncreasingProfit {
    pub fn is_found(&self) -> bool {
        matches!(self, IncreasingProfit::Found(_))
    }

    pub fn residual_norm(&self) -> f64 {
        match self {
            IncreasingProfit::NoneDetected { max_residual_norm } => *max_residual_norm,
            IncreasingProfit::Found(w) => w.residual_norm,
        }
    }
}

fn raw_snapshot(model: &MarketModel, point: &SamplePoint) -> Result<CoefficientSnapshot> {
    if point.state.len() != model.n_assets() {
        return Err(Error::Dimension(format!(
            "sample state has {} entries for {} assets",
            point.state.len(),
            model.n_assets()
        )));
    }
    let mut snap = model.snapshot_buffer();
    model.eval_into(point.t, &point.state, &mut snap);
    if !snap.is_finite() {
        return Err(Error::NonFinite(format!("coefficients at t={}", point.t)));
    }
    Ok(snap)
}

/// Looks for an increasing profit: excess return with a component in the kernel of
/// `sigma'`. Reports the sample point with the largest such component.
pub fn detect_increasing_profit(model: &MarketModel, points: &[SamplePoint]) -> Result<IncreasingProfit> {
    let mut best: Option<ProfitWitness> = None;
    let mut max_norm: f64 = 0.0;
    for point in points {
        let snap = raw_snapshot(model, point)?;
        let p = linalg::range_residual(&snap.sigma, &snap.excess_return());
        let norm = p.norm();
        max_norm = max_norm.max(norm);
        if norm > PROFIT_TOL && best.as_ref().map_or(true, |b| norm > b.residual_norm) {
            best = Some(ProfitWitness {
                point: point.clone(),
                residual: p.iter().copied().collect(),
                residual_norm: norm,
                weights: p.iter().map(|x| x / norm).collect(),
            });
        }
    }
    Ok(match best {
        Some(w) => IncreasingProfit::Found(w),
        None => IncreasingProfit::NoneDetected {
            max_residual_norm: max_norm,
        },
    })
}

/// Leverage applied to an increasing profit so that capital `v` dominates
/// `V̄^pi_T - 1`: `-(ln v + ln(1 - v)) / v`.
pub fn arbitrage_scaling(v: f64) -> Result<f64> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::param("v", "initial capital must lie in (0, 1)"));
    }
    Ok(-(v.ln() + (1.0 - v).ln()) / v)
}

/// Scales an increasing-profit strategy into an arbitrage of the first kind from
/// initial capital `v`.
pub fn exploit_increasing_profit(pi: &Strategy, v: f64) -> Result<Strategy> {
    let factor = arbitrage_scaling(v)?;
    Ok(pi.scaled(&format!("{}^v={v}", pi.label), factor))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViabilityKind {
    Viable,
    DivergentMprIntegral,
    Undetermined,
}

impl fmt::Display for ViabilityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViabilityKind::Viable => "viable",
            ViabilityKind::DivergentMprIntegral => "divergent_mpr_integral",
            ViabilityKind::Undetermined => "undetermined",
        })
    }
}

/// Refinement profile of `int_0^T |theta|² dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Viability {
    pub verdict: ViabilityKind,
    /// Mean Riemann sum over paths, one entry per refinement level (level 0 = bundle grid).
    pub profile: Vec<f64>,
    /// Successive differences of `profile`.
    pub increments: Vec<f64>,
    /// Per-path sums at the finest level.
    pub path_integrals: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Per-path `sum_k |theta(t_k, S_k)|² dt_k` on `grid`, re-simulating the assets from
/// `seed` when the coefficients depend on the state.
pub(crate) fn theta_square_sums(
    model: &MarketModel,
    seed: u64,
    grid: &SimulationGrid,
    n_paths: usize,
    scheme: SamplingScheme,
) -> Result<Vec<f64>> {
    let (n, d) = (model.n_assets(), model.n_drivers());
    let allow = model.rank_deficient_allowed();
    let noise = NoiseSource::new(seed);
    let q = match scheme {
        SamplingScheme::LogEuler => d,
        SamplingScheme::Exact => model
            .exact_law()
            .ok_or_else(|| Error::Config("exact scheme without exact law".into()))?
            .noise_dim(),
    };
    let state_free = model.has_state_independent_coefficients();
    let n_steps = grid.n_steps();
    let out: Result<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut snap = model.snapshot_buffer();
            let mut theta = vec![0.0; d];
            let mut state = model.initial_prices().to_vec();
            let mut incs = Vec::new();
            if !state_free {
                incs = vec![0.0; n_steps * q];
                let stream = match scheme {
                    SamplingScheme::LogEuler => Stream::Driver,
                    SamplingScheme::Exact => Stream::Exact,
                };
                brownian_increments(&noise, stream, grid, p, q, &mut incs);
            }
            let mut x3 = [state[0], 0.0, 0.0];
            let mut sum = 0.0;
            for k in 0..n_steps {
                let t = eval_time(model, grid, k);
                let dt = grid.dt(k);
                model.eval_into(t, &state, &mut snap);
                if !snap.is_finite() {
                    return Ok(f64::INFINITY);
                }
                risk::theta_into(&snap, t, allow, &mut theta)?;
                sum += theta.iter().map(|x| x * x).sum::<f64>() * dt;
                if state_free {
                    continue;
                }
                let inc = &incs[k * q..(k + 1) * q];
                match scheme {
                    SamplingScheme::LogEuler => {
                        for i in 0..n {
                            let mut var = 0.0;
                            let mut shock = 0.0;
                            for (j, w) in inc.iter().enumerate() {
                                var += snap.sigma[(i, j)] * snap.sigma[(i, j)];
                                shock += snap.sigma[(i, j)] * w;
                            }
                            state[i] *= ((snap.mu[i] - 0.5 * var) * dt + shock).exp();
                        }
                    }
                    SamplingScheme::Exact => {
                        for (xi, bi) in x3.iter_mut().zip(inc) {
                            *xi += bi;
                        }
                        state[0] = (x3[0] * x3[0] + x3[1] * x3[1] + x3[2] * x3[2]).sqrt();
                    }
                }
                if !state.iter().all(|s| s.is_finite() && *s > 0.0) {
                    return Err(Error::Numerical(format!("state escaped (0, inf) on path {p}")));
                }
            }
            Ok(sum)
        })
        .collect();
    out
}

/// Classifies the model by how `int |theta|² dt` responds to refining the grid near zero.
///
/// Level `l` splits the first base interval into `l` dyadic bands of
/// [`REFINE_SUBSTEPS`] steps each; all levels share the same Brownian path. The
/// verdict is `viable` when the mean integral changes by less than 1% at the last
/// level, `divergent_mpr_integral` when every level adds a positive amount at least
/// 0.9 times the previous one, and `undetermined` otherwise.
pub fn viability_check(model: &MarketModel, bundle: &PathBundle, refinement_levels: usize) -> Result<Viability> {
    if refinement_levels == 0 {
        return Err(Error::param("refinement_levels", "must be at least 1"));
    }
    let base_steps = match bundle.grid.spacing() {
        Spacing::Uniform => bundle.n_steps(),
        Spacing::RefinedNearZero { .. } => {
            return Err(Error::Config("viability profile needs a bundle on a uniform grid".into()))
        }
    };
    let horizon = bundle.grid.horizon();
    let mut profile = Vec::with_capacity(refinement_levels + 1);
    let mut last = Vec::new();
    for level in 0..=refinement_levels {
        let grid = SimulationGrid::refined_near_zero(horizon, base_steps, level, REFINE_SUBSTEPS)?;
        let sums = theta_square_sums(model, bundle.seed, &grid, bundle.n_paths, bundle.scheme)?;
        profile.push(stats::neumaier_sum(sums.iter().copied()) / sums.len() as f64);
        last = sums;
    }
    let increments: Vec<f64> = profile.windows(2).map(|w| w[1] - w[0]).collect();
    let finite = profile.iter().all(|x| x.is_finite());
    let final_inc = *increments.last().unwrap();
    let prev = profile[profile.len() - 2];
    let rel_change = if prev == 0.0 {
        final_inc.abs()
    } else {
        (final_inc / prev).abs()
    };
    let persistent = increments.iter().all(|&i| i > 0.0)
        && increments
            .windows(2)
            .all(|w| w[1] >= DIVERGENT_PERSISTENCE * w[0]);
    let verdict = if !finite {
        ViabilityKind::DivergentMprIntegral
    } else if rel_change < VIABLE_REL_CHANGE {
        ViabilityKind::Viable
    } else if persistent {
        ViabilityKind::DivergentMprIntegral
    } else {
        ViabilityKind::Undetermined
    };
    Ok(Viability {
        verdict,
        profile,
        increments,
        path_integrals: last,
        note: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapVerdict {
    TrueMartingaleConsistent,
    StrictLocalMartingale,
    Inconclusive,
}

impl fmt::Display for GapVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GapVerdict::TrueMartingaleConsistent => "true_martingale_consistent",
            GapVerdict::StrictLocalMartingale => "strict_local_martingale",
            GapVerdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MartingaleGap {
    pub verdict: GapVerdict,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

/// Compares the mean of terminal deflator samples with its initial value 1:
/// strict when `mean + 5 se < 1`, consistent with a true martingale when
/// `|mean - 1| <= 3 se`.
pub fn martingale_gap(samples: &[f64]) -> Result<MartingaleGap> {
    if samples.is_empty() {
        return Err(Error::InsufficientSamples { needed: MIN_MARTINGALE_SAMPLES, got: 0 });
    }
    if samples.len() < MIN_MARTINGALE_SAMPLES {
        return Err(Error::InsufficientSamples {
            needed: MIN_MARTINGALE_SAMPLES,
            got: samples.len(),
        });
    }
    let est = stats::mean_stderr(samples)?;
    let verdict = if est.mean + 5.0 * est.stderr < 1.0 {
        GapVerdict::StrictLocalMartingale
    } else if (est.mean - 1.0).abs() <= 3.0 * est.stderr {
        GapVerdict::TrueMartingaleConsistent
    } else {
        GapVerdict::Inconclusive
    };
    Ok(MartingaleGap {
        verdict,
        mean: est.mean,
        stderr: est.stderr,
        n: est.n,
    })
}

type GammaFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;

/// Candidate martingale deflator `D = E(-int gamma' dW)`.
#[derive(Clone)]
pub struct DeflatorSpec {
    gamma: Arc<GammaFn>,
    pub description: String,
}

impl fmt::Debug for DeflatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DeflatorSpec")
            .field("description", &self.description)
            .finish()
    }
}

impl DeflatorSpec {
    /// `gamma(t, state, out)` writes `d` values.
    pub fn new<F>(description: &str, gamma: F) -> Self
    where
        F: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            gamma: Arc::new(gamma),
            description: description.to_string(),
        }
    }

    /// The minimal deflator `gamma = theta` of `model`.
    pub fn minimal(model: &MarketModel) -> Self {
        let m = model.clone();
        Self::new("theta", move |t, s, out| {
            let mut snap = m.snapshot_buffer();
            m.eval_into(t, s, &mut snap);
            if risk::theta_into(&snap, t, m.rank_deficient_allowed(), out).is_err() {
                out.iter_mut().for_each(|x| *x = f64::NAN);
            }
        })
    }

    /// `theta + kernel_shift`, with `kernel_shift` constant.
    pub fn shifted(model: &MarketModel, shift: Vec<f64>) -> Self {
        let base = Self::minimal(model);
        let desc = format!("theta + {shift:?}");
        Self::new(&desc, move |t, s, out| {
            (base.gamma)(t, s, out);
            for (o, c) in out.iter_mut().zip(&shift) {
                *o += c;
            }
        })
    }

    pub fn eval(&self, t: f64, state: &[f64], out: &mut [f64]) {
        (self.gamma)(t, state, out)
    }
}

/// Drift check of `D V̄^pi` for one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftCheck {
    pub label: String,
    pub slope: f64,
    pub t_stat: f64,
    pub drift_free: bool,
}

#[derive(Debug, Clone)]
pub struct DeflatorReport {
    pub description: String,
    pub max_drift_residual: f64,
    /// `|gamma| >= |theta|` at every sampled point.
    pub norm_dominates_theta: bool,
    /// Smallest `|gamma| - |theta|` seen.
    pub min_norm_excess: f64,
    pub checks: Vec<DriftCheck>,
    pub deflator: PathTable,
}

impl DeflatorReport {
    pub fn all_drift_free(&self) -> bool {
        self.checks.iter().all(|c| c.drift_free)
    }
}

/// Paths whose nodes are used as sample points for pointwise checks.
const POINTWISE_PATHS: usize = 64;

/// Checks a candidate deflator: the drift equation `sigma gamma = mu - r 1` at
/// sampled points, the norm comparison with `theta`, and for each strategy a
/// regression of the increments of `D V̄^pi` on `dt` whose slope must be
/// statistically zero (`|t| < 4`).
pub fn validate_deflator(
    spec: &DeflatorSpec,
    model: &MarketModel,
    bundle: &PathBundle,
    strategies: &[Strategy],
) -> Result<DeflatorReport> {
    let (n, d) = (model.n_assets(), model.n_drivers());
    let grid = &bundle.grid;
    let mut gamma = vec![0.0; d];
    let mut theta = vec![0.0; d];
    let mut snap = model.snapshot_buffer();
    let mut max_resid: f64 = 0.0;
    let mut min_excess = f64::INFINITY;
    for p in 0..bundle.n_paths.min(POINTWISE_PATHS) {
        for k in 0..grid.n_steps() {
            let t = eval_time(model, grid, k);
            let state = bundle.assets.node(p, k);
            model.eval_into(t, state, &mut snap);
            spec.eval(t, state, &mut gamma);
            if gamma.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gamma at t={t}")));
            }
            let excess = snap.excess_return();
            let sg = &snap.sigma * DVector::from_column_slice(&gamma);
            let resid = (sg - &excess).norm();
            max_resid = max_resid.max(resid);
            if resid > DRIFT_EQ_TOL * (1.0 + excess.norm()) {
                return Err(Error::Assumption(format!(
                    "deflator `{}` violates sigma gamma = mu - r 1 at t={t} (residual {resid:e})",
                    spec.description
                )));
            }
            risk::theta_into(&snap, t, model.rank_deficient_allowed(), &mut theta)?;
            let g_norm = gamma.iter().map(|x| x * x).sum::<f64>().sqrt();
            let t_norm = theta.iter().map(|x| x * x).sum::<f64>().sqrt();
            min_excess = min_excess.min(g_norm - t_norm);
        }
    }
    let deflator = PathTable::build_paths(bundle.n_paths, grid.n_nodes(), 1, |p, out| {
        let mut gamma = vec![0.0; d];
        let mut log_d = 0.0;
        out[0] = 1.0;
        for k in 0..grid.n_steps() {
            let t = eval_time(model, grid, k);
            spec.eval(t, &bundle.assets.path(p)[k * n..(k + 1) * n], &mut gamma);
            let dw = bundle.drivers.node(p, k);
            let sq: f64 = gamma.iter().map(|x| x * x).sum();
            let shock: f64 = gamma.iter().zip(dw).map(|(a, b)| a * b).sum();
            log_d += -shock - 0.5 * sq * grid.dt(k);
            out[k + 1] = log_d.exp();
        }
        if out.iter().all(|x| x.is_finite() && *x > 0.0) {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("deflator exponential on path {p}")))
        }
    })?;
    let mut checks = Vec::with_capacity(strategies.len());
    for s in strategies {
        let v = sim::simulate_portfolio(model, s, 1.0, bundle)?;
        let product = deflator.zip_with(&v, |a, b| a * b)?;
        checks.push(drift_regression(&s.label, &product, grid));
    }
    Ok(DeflatorReport {
        description: spec.description.clone(),
        max_drift_residual: max_resid,
        norm_dominates_theta: min_excess >= -1e-12,
        min_norm_excess: min_excess,
        checks,
        deflator,
    })
}

/// OLS through the origin of the increments of `x` on the step lengths.
fn drift_regression(label: &str, x: &PathTable, grid: &SimulationGrid) -> DriftCheck {
    let n_paths = x.n_paths();
    let n_steps = grid.n_steps();
    let mut sxy = Vec::with_capacity(n_paths);
    let mut max_inc: f64 = 0.0;
    let mut max_level: f64 = 0.0;
    for p in 0..n_paths {
        let mut acc = 0.0;
        for k in 0..n_steps {
            let inc = x.value(p, k + 1) - x.value(p, k);
            acc += inc * grid.dt(k);
            max_inc = max_inc.max(inc.abs());
            max_level = max_level.max(x.value(p, k).abs());
        }
        sxy.push(acc);
    }
    let sxx: f64 = (0..n_steps).map(|k| grid.dt(k).powi(2)).sum::<f64>() * n_paths as f64;
    let slope = stats::neumaier_sum(sxy) / sxx;
    if max_inc <= 1e-12 * max_level.max(1.0) {
        // the product is constant to rounding
        return DriftCheck {
            label: label.to_string(),
            slope,
            t_stat: 0.0,
            drift_free: true,
        };
    }
    let rss = stats::neumaier_sum((0..n_paths).flat_map(|p| {
        (0..n_steps).map(move |k| {
            let inc = x.value(p, k + 1) - x.value(p, k);
            (inc - slope * grid.dt(k)).powi(2)
        })
    }));
    let dof = (n_paths * n_steps).saturating_sub(1).max(1) as f64;
    let se = (rss / dof / sxx).sqrt();
    let t_stat = if se > 0.0 { slope / se } else { 0.0 };
    DriftCheck {
        label: label.to_string(),
        slope,
        t_stat,
        drift_free: t_stat.abs() < DRIFT_T_BOUND,
    }
}

/// Settings for [`diagnose`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseOptions {
    pub seed: u64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub refinement_levels: usize,
}

impl Default for DiagnoseOptions {
    fn default() -> Self {
        Self {
            seed: 1,
            n_paths: 10_000,
            n_steps: sim::DEFAULT_STEPS,
            refinement_levels: 6,
        }
    }
}

/// Combined no-arbitrage diagnostics of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub model: String,
    pub rank_ok: bool,
    pub increasing_profit: IncreasingProfit,
    pub viability: Viability,
    pub deflator: MartingaleGap,
}

impl DiagnosticsReport {
    /// Assembles a report, forcing a non-viable verdict when an increasing profit exists.
    pub fn new(
        model: &str,
        rank_ok: bool,
        increasing_profit: IncreasingProfit,
        mut viability: Viability,
        deflator: MartingaleGap,
    ) -> Self {
        if increasing_profit.is_found() && viability.verdict == ViabilityKind::Viable {
            viability.verdict = ViabilityKind::Undetermined;
            viability.note = Some(
                "increasing profit present: mu - r 1 is outside the range of sigma, so no \
                 market price of risk solves the drift equation"
                    .into(),
            );
        }
        Self {
            model: model.to_string(),
            rank_ok,
            increasing_profit,
            viability,
            deflator,
        }
    }

    /// The documented JSON layout.
    pub fn to_json(&self) -> serde_json::Value {
        let ip = match &self.increasing_profit {
            IncreasingProfit::NoneDetected { max_residual_norm } => json!({
                "verdict": "none_detected",
                "residual_norm": max_residual_norm,
            }),
            IncreasingProfit::Found(w) => json!({
                "verdict": "found",
                "residual_norm": w.residual_norm,
                "weights": w.weights,
                "t": w.point.t,
                "state": w.point.state,
            }),
        };
        let mut viability = json!({
            "verdict": self.viability.verdict.to_string(),
            "profile": self.viability.profile,
            "increments": self.viability.increments,
        });
        if let Some(note) = &self.viability.note {
            viability["note"] = json!(note);
        }
        json!({
            "model": self.model,
            "rank_ok": self.rank_ok,
            "increasing_profit": ip,
            "viability": viability,
            "deflator": {
                "verdict": self.deflator.verdict.to_string(),
                "mean": self.deflator.mean,
                "stderr": self.deflator.stderr,
            },
        })
    }
}

/// Sample points: every step's evaluation point along the first `max_paths` paths.
pub fn bundle_sample_points(model: &MarketModel, bundle: &PathBundle, max_paths: usize) -> Vec<SamplePoint> {
    let mut pts = Vec::new();
    for p in 0..bundle.n_paths.min(max_paths) {
        for k in 0..bundle.n_steps() {
            pts.push(SamplePoint {
                t: eval_time(model, &bundle.grid, k),
                state: bundle.assets.node(p, k).to_vec(),
            });
        }
    }
    pts
}

/// Runs the full diagnostic battery on a freshly simulated bundle.
pub fn diagnose(model: &MarketModel, opts: &DiagnoseOptions) -> Result<DiagnosticsReport> {
    let grid = SimulationGrid::uniform(model.horizon(), opts.n_steps)?;
    let scheme = if model.exact_law().is_some() {
        SamplingScheme::Exact
    } else {
        SamplingScheme::LogEuler
    };
    let bundle = sim::simulate_bundle(model, opts.seed, &grid, opts.n_paths, scheme)?;
    diagnose_bundle(model, &bundle, opts.refinement_levels)
}

/// Diagnostics on an existing bundle.
pub fn diagnose_bundle(model: &MarketModel, bundle: &PathBundle, refinement_levels: usize) -> Result<DiagnosticsReport> {
    let points = bundle_sample_points(model, bundle, 16);
    let mut rank_ok = true;
    for pt in &points {
        let snap = raw_snapshot(model, pt)?;
        if crate::market::check_full_row_rank(&snap, pt.t).is_err() {
            rank_ok = false;
            break;
        }
    }
    let increasing_profit = detect_increasing_profit(model, &points)?;
    let viability = viability_check(model, bundle, refinement_levels)?;
    let deflator = martingale_gap(&bundle.deflator.terminal())?;
    Ok(DiagnosticsReport::new(
        model.name(),
        rank_ok,
        increasing_profit,
        viability,
        deflator,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn snap(r: f64, mu: Vec<f64>, sigma: DMatrix<f64>) -> CoefficientSnapshot {
        CoefficientSnapshot::new(r, mu, sigma).unwrap()
    }

    #[test]
    fn theta_black_scholes() {
        let s = snap(0.02, vec![0.1], DMatrix::from_element(1, 1, 0.2));
        let th = market_price_of_risk(&s, false).unwrap();
        assert!((th[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn theta_zero_without_excess_return() {
        let s = snap(0.05, vec![0.05, 0.05], DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 0.5, 0.0, 3.0]));
        let th = market_price_of_risk(&s, false).unwrap();
        assert!(th.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn theta_min_norm_two_drivers() {
        let s = snap(0.0, vec![1.0], DMatrix::from_row_slice(1, 2, &[1.0, 1.0]));
        let th = market_price_of_risk(&s, false).unwrap();
        assert!((th[0] - 0.5).abs() < 1e-14 && (th[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn theta_rank_failure() {
        let s = snap(0.0, vec![0.1, 0.2], DMatrix::from_row_slice(2, 1, &[1.0, 1.0]));
        assert!(matches!(market_price_of_risk(&s, false), Err(Error::RankDeficient { .. })));
        let th = market_price_of_risk(&s, true).unwrap();
        assert!((th[0] - 0.15).abs() < 1e-14);
    }

    #[test]
    fn arbitrage_scaling_values() {
        assert!((arbitrage_scaling(0.5).unwrap() - 4.0 * 2f64.ln()).abs() < 1e-14);
        assert!(arbitrage_scaling(1.0).is_err());
        assert!(arbitrage_scaling(0.0).is_err());
        assert!(arbitrage_scaling(0.999_999).unwrap() > 13.0);
    }

    #[test]
    fn gap_verdicts() {
        assert!(martingale_gap(&[]).is_err());
        assert!(martingale_gap(&[1.0; 10]).is_err());
        let g = martingale_gap(&vec![1.0; 2000]).unwrap();
        assert_eq!(g.verdict, GapVerdict::TrueMartingaleConsistent);
        assert_eq!(g.stderr, 0.0);
        let low: Vec<f64> = (0..2000).map(|i| 0.5 + 0.1 * ((i % 7) as f64 - 3.0) / 3.0).collect();
        assert_eq!(martingale_gap(&low).unwrap().verdict, GapVerdict::StrictLocalMartingale);
        let high = vec![1.2; 2000];
        assert_eq!(martingale_gap(&high).unwrap().verdict, GapVerdict::Inconclusive);
    }

    #[test]
    fn report_forces_consistency() {
        let ip = IncreasingProfit::Found(ProfitWitness {
            point: SamplePoint { t: 0.0, state: vec![1.0, 1.0] },
            residual: vec![-0.05, 0.05],
            residual_norm: 0.0707,
            weights: vec![-0.7071, 0.7071],
        });
        let viab = Viability {
            verdict: ViabilityKind::Viable,
            profile: vec![0.1, 0.1],
            increments: vec![0.0],
            path_integrals: vec![],
            note: None,
        };
        let gap = MartingaleGap { verdict: GapVerdict::TrueMartingaleConsistent, mean: 1.0, stderr: 0.0, n: 1000 };
        let r = DiagnosticsReport::new("m", false, ip, viab, gap);
        assert_ne!(r.viability.verdict, ViabilityKind::Viable);
        let j = r.to_json();
        assert_eq!(j["increasing_profit"]["verdict"], "found");
        assert_eq!(j["viability"]["verdict"], "undetermined");
        assert_eq!(j["deflator"]["verdict"], "true_martingale_consistent");
    }
}
