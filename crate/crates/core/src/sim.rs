//! Seeded path simulation.
//!
//! All positive processes (assets, savings account, portfolios, deflator, GOP) are
//! advanced in log space with coefficients frozen at the left end of each step, which
//! is the exact solution of the stochastic exponential for piecewise-constant
//! integrands. Every path depends only on `(seed, path index)`, so path ranges can be
//! simulated on any number of workers with identical results.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{CoefficientSnapshot, MarketModel};
use crate::risk;
use crate::rng::{NoiseSource, Stream};

/// Default number of uniform steps.
pub const DEFAULT_STEPS: usize = 256;

/// Node placement of a [`SimulationGrid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Spacing {
    Uniform,
    /// A uniform grid of `base_steps` whose first interval `[0, h]` is split into
    /// dyadic bands `[h 2^-l, h 2^-(l-1)]`, `l = 1..=levels`, each cut into
    /// `substeps` equal steps, plus a leading step `[0, h 2^-levels]`.
    RefinedNearZero {
        base_steps: usize,
        levels: usize,
        substeps: usize,
    },
}

/// Time discretization of `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationGrid {
    times: Vec<f64>,
    spacing: Spacing,
}

impl SimulationGrid {
    pub fn uniform(horizon: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::param("n_steps", "must be at least 1"));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::param("T", "horizon must be finite and positive"));
        }
        let times = (0..=n_steps)
            .map(|k| horizon * k as f64 / n_steps as f64)
            .collect();
        Ok(Self {
            times,
            spacing: Spacing::Uniform,
        })
    }

    pub fn refined_near_zero(
        horizon: f64,
        base_steps: usize,
        levels: usize,
        substeps: usize,
    ) -> Result<Self> {
        let base = Self::uniform(horizon, base_steps)?;
        if levels == 0 {
            return Ok(base);
        }
        if substeps == 0 {
            return Err(Error::param("substeps", "must be at least 1"));
        }
        if levels > 60 {
            return Err(Error::param("levels", "at most 60 dyadic levels"));
        }
        let h = base.times[1];
        let mut times = Vec::with_capacity(base_steps + levels * substeps + 1);
        times.push(0.0);
        times.push(h * 0.5f64.powi(levels as i32));
        for level in (1..=levels).rev() {
            let a = h * 0.5f64.powi(level as i32);
            for i in 1..=substeps {
                times.push(a + a * i as f64 / substeps as f64);
            }
        }
        // the last band ends exactly at h
        *times.last_mut().unwrap() = h;
        times.extend_from_slice(&base.times[2..]);
        Ok(Self {
            times,
            spacing: Spacing::RefinedNearZero {
                base_steps,
                levels,
                substeps,
            },
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn n_nodes(&self) -> usize {
        self.times.len()
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    #[inline]
    pub fn dt(&self, k: usize) -> f64 {
        self.times[k + 1] - self.times[k]
    }

    /// Node indices closest to the deciles of `[0, T]`, starting at node 0.
    pub fn decile_nodes(&self) -> Vec<usize> {
        let t_max = self.horizon();
        let mut nodes: Vec<usize> = (0..=10)
            .map(|q| {
                let target = t_max * q as f64 / 10.0;
                self.times
                    .iter()
                    .enumerate()
                    .min_by(|a, b| (a.1 - target).abs().total_cmp(&(b.1 - target).abs()))
                    .map(|(k, _)| k)
                    .unwrap()
            })
            .collect();
        nodes.dedup();
        nodes
    }

    /// Index of the node at time `t`, if `t` is (to rounding) a grid node.
    pub fn node_at(&self, t: f64) -> Option<usize> {
        let scale = self.horizon().max(1.0);
        self.times
            .iter()
            .position(|&x| (x - t).abs() <= 1e-12 * scale)
    }

    fn check_noise_layout(&self, q: usize) -> Result<()> {
        NoiseSource::check_layout(self.n_steps(), q)?;
        if let Spacing::RefinedNearZero { substeps, .. } = self.spacing {
            NoiseSource::check_layout(self.n_steps(), q * (substeps + 1))?;
        }
        Ok(())
    }
}

/// Per-path table of values on grid nodes (or steps), `width` values per entry.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTable {
    n_paths: usize,
    n_nodes: usize,
    width: usize,
    data: Vec<f64>,
}

impl PathTable {
    pub fn filled(n_paths: usize, n_nodes: usize, width: usize, value: f64) -> Self {
        Self {
            n_paths,
            n_nodes,
            width,
            data: vec![value; n_paths * n_nodes * width],
        }
    }

    pub fn from_vec(n_paths: usize, n_nodes: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_paths * n_nodes * width {
            return Err(Error::Dimension(format!(
                "table data has {} entries, expected {}",
                data.len(),
                n_paths * n_nodes * width
            )));
        }
        Ok(Self {
            n_paths,
            n_nodes,
            width,
            data,
        })
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    fn path_len(&self) -> usize {
        self.n_nodes * self.width
    }

    pub fn path(&self, p: usize) -> &[f64] {
        let len = self.path_len();
        &self.data[p * len..(p + 1) * len]
    }

    #[inline]
    pub fn node(&self, p: usize, k: usize) -> &[f64] {
        let start = (p * self.n_nodes + k) * self.width;
        &self.data[start..start + self.width]
    }

    #[inline]
    pub fn at(&self, p: usize, k: usize, i: usize) -> f64 {
        self.data[(p * self.n_nodes + k) * self.width + i]
    }

    /// Scalar value of a width-1 table.
    #[inline]
    pub fn value(&self, p: usize, k: usize) -> f64 {
        debug_assert_eq!(self.width, 1);
        self.data[p * self.n_nodes + k]
    }

    /// Values of entry `i` at node `k` across all paths.
    pub fn column(&self, k: usize, i: usize) -> Vec<f64> {
        (0..self.n_paths).map(|p| self.at(p, k, i)).collect()
    }

    pub fn terminal(&self) -> Vec<f64> {
        self.column(self.n_nodes - 1, 0)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> PathTable {
        PathTable {
            data: self.data.iter().map(|&x| f(x)).collect(),
            ..*self
        }
    }

    /// Elementwise combination of two equally shaped tables.
    pub fn zip_with(&self, other: &PathTable, f: impl Fn(f64, f64) -> f64) -> Result<PathTable> {
        if (self.n_paths, self.n_nodes, self.width) != (other.n_paths, other.n_nodes, other.width) {
            return Err(Error::Dimension("path tables differ in shape".into()));
        }
        Ok(PathTable {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            ..*self
        })
    }

    /// Builds a table path by path in parallel; `fill` writes one path's slice.
    pub(crate) fn build_paths<F>(n_paths: usize, n_nodes: usize, width: usize, fill: F) -> Result<Self>
    where
        F: Fn(usize, &mut [f64]) -> Result<()> + Sync + Send,
    {
        let len = n_nodes * width;
        let mut data = vec![0.0; n_paths * len];
        if len > 0 {
            data.par_chunks_mut(len)
                .enumerate()
                .try_for_each(|(p, chunk)| fill(p, chunk))?;
        }
        Ok(Self {
            n_paths,
            n_nodes,
            width,
            data,
        })
    }
}

/// Per-path, per-step Brownian increments (`n_steps` entries of width `d`).
pub type DriverTable = PathTable;

/// Which transition law is used for the risky assets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplingScheme {
    /// Log-space Euler with left-endpoint coefficients.
    #[default]
    LogEuler,
    /// The model's exact sampler; fails for models without one.
    Exact,
}

/// Writes the `q`-dimensional Brownian increments of one path on `grid`.
///
/// On a refined grid, increments after the first base interval are keyed exactly as on
/// the uniform base grid, and the first base interval is filled in by Brownian-bridge
/// interpolation, so refinements of one seed describe one and the same Brownian path.
pub(crate) fn brownian_increments(
    noise: &NoiseSource,
    stream: Stream,
    grid: &SimulationGrid,
    path: usize,
    q: usize,
    out: &mut [f64],
) {
    let p = path as u64;
    match grid.spacing {
        Spacing::Uniform => {
            for k in 0..grid.n_steps() {
                let sd = grid.dt(k).sqrt();
                for j in 0..q {
                    out[k * q + j] = sd * noise.normal(stream, p, k as u32, j as u32);
                }
            }
        }
        Spacing::RefinedNearZero {
            base_steps,
            levels,
            substeps,
        } => {
            let refine = match stream {
                Stream::Exact => Stream::RefineExact,
                _ => Stream::Refine,
            };
            let h = grid.horizon() / base_steps as f64;
            let sd_h = h.sqrt();
            let first_base = 1 + levels * substeps;
            for j in 0..q {
                let mut w_right = sd_h * noise.normal(stream, p, 0, j as u32);
                let stride = j * (substeps + 1);
                for level in 1..=levels {
                    let a = h * 0.5f64.powi(level as i32);
                    let w_left = 0.5 * w_right
                        + (0.5 * a).sqrt() * noise.normal(refine, p, level as u32, stride as u32);
                    let band_sd = (a / substeps as f64).sqrt();
                    let mut ys = Vec::with_capacity(substeps);
                    for i in 0..substeps {
                        ys.push(
                            band_sd * noise.normal(refine, p, level as u32, (stride + 1 + i) as u32),
                        );
                    }
                    let shift = (ys.iter().sum::<f64>() - (w_right - w_left)) / substeps as f64;
                    let base = 1 + (levels - level) * substeps;
                    for (i, y) in ys.into_iter().enumerate() {
                        out[(base + i) * q + j] = y - shift;
                    }
                    w_right = w_left;
                }
                out[j] = w_right;
                for b in 1..base_steps {
                    out[(first_base + b - 1) * q + j] =
                        sd_h * noise.normal(stream, p, b as u32, j as u32);
                }
            }
        }
    }
}

/// Gaussian driver increments with variance equal to the step length, keyed on
/// `(seed, path, step, driver)`.
pub fn simulate_drivers(
    seed: u64,
    grid: &SimulationGrid,
    n_paths: usize,
    n_drivers: usize,
) -> Result<DriverTable> {
    if n_paths == 0 {
        return Err(Error::param("n_paths", "must be at least 1"));
    }
    if n_drivers == 0 {
        return Err(Error::param("n_drivers", "must be at least 1"));
    }
    grid.check_noise_layout(n_drivers)?;
    let noise = NoiseSource::new(seed);
    PathTable::build_paths(n_paths, grid.n_steps(), n_drivers, |p, out| {
        brownian_increments(&noise, Stream::Driver, grid, p, n_drivers, out);
        Ok(())
    })
}

/// Time at which step `k`'s coefficients are evaluated.
#[inline]
pub(crate) fn eval_time(model: &MarketModel, grid: &SimulationGrid, k: usize) -> f64 {
    if k == 0 && model.singular_at_origin() {
        grid.times[1]
    } else {
        grid.times[k]
    }
}

fn check_state(state: &[f64], t: f64) -> Result<()> {
    if state.iter().all(|s| s.is_finite() && *s > 0.0) {
        Ok(())
    } else {
        Err(Error::Numerical(format!(
            "asset state escaped (0, inf) at t={t}"
        )))
    }
}

fn check_snapshot(snap: &CoefficientSnapshot, model: &MarketModel, t: f64) -> Result<()> {
    if snap.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "coefficients of `{}` at t={t}",
            model.name()
        )))
    }
}

/// Log-Euler asset paths driven by `drivers`; table of width `N` on grid nodes.
pub fn simulate_assets(
    model: &MarketModel,
    drivers: &DriverTable,
    grid: &SimulationGrid,
) -> Result<PathTable> {
    let (n, d) = (model.n_assets(), model.n_drivers());
    if drivers.width() != d || drivers.n_nodes() != grid.n_steps() {
        return Err(Error::Dimension(format!(
            "driver table is {} steps x {} drivers, model/grid need {} x {d}",
            drivers.n_nodes(),
            drivers.width(),
            grid.n_steps()
        )));
    }
    let s0 = model.initial_prices();
    PathTable::build_paths(drivers.n_paths(), grid.n_nodes(), n, |p, out| {
        let mut snap = model.snapshot_buffer();
        let mut log_s: Vec<f64> = s0.iter().map(|s| s.ln()).collect();
        out[..n].copy_from_slice(s0);
        for k in 0..grid.n_steps() {
            let t = eval_time(model, grid, k);
            let dt = grid.dt(k);
            model.eval_into(t, &out[k * n..(k + 1) * n], &mut snap);
            check_snapshot(&snap, model, t)?;
            let dw = drivers.node(p, k);
            for i in 0..n {
                let mut var = 0.0;
                let mut shock = 0.0;
                for (j, w) in dw.iter().enumerate() {
                    let s = snap.sigma[(i, j)];
                    var += s * s;
                    shock += s * w;
                }
                log_s[i] += (snap.mu[i] - 0.5 * var) * dt + shock;
                out[(k + 1) * n + i] = log_s[i].exp();
            }
            check_state(&out[(k + 1) * n..(k + 2) * n], grid.times[k + 1])?;
        }
        Ok(())
    })
}

/// Exact sampling for models that carry an [`ExactLaw`](crate::market::ExactLaw).
/// Returns `(assets, implied drivers)`.
fn simulate_assets_exact(
    model: &MarketModel,
    seed: u64,
    grid: &SimulationGrid,
    n_paths: usize,
) -> Result<(PathTable, DriverTable)> {
    let law = model.exact_law().ok_or_else(|| {
        Error::Config(format!("model `{}` has no exact sampler", model.name()))
    })?;
    let q = law.noise_dim();
    grid.check_noise_layout(q)?;
    let noise = NoiseSource::new(seed);
    let s0 = model.initial_prices()[0];
    let n_steps = grid.n_steps();
    // one table holding [S nodes..., dW steps...] per path keeps the fill parallel
    let joint = PathTable::build_paths(n_paths, 2 * n_steps + 1, 1, |p, out| {
        let mut db = vec![0.0; n_steps * q];
        brownian_increments(&noise, Stream::Exact, grid, p, q, &mut db);
        let mut x = [s0, 0.0, 0.0];
        let mut norm = s0;
        out[0] = s0;
        for k in 0..n_steps {
            let inc = &db[k * q..(k + 1) * q];
            out[n_steps + 1 + k] = (x[0] * inc[0] + x[1] * inc[1] + x[2] * inc[2]) / norm;
            for (xi, bi) in x.iter_mut().zip(inc) {
                *xi += bi;
            }
            norm = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
            out[k + 1] = norm;
        }
        check_state(&out[..=n_steps], grid.horizon())
    })?;
    let mut assets = Vec::with_capacity(n_paths * (n_steps + 1));
    let mut drivers = Vec::with_capacity(n_paths * n_steps);
    for p in 0..n_paths {
        let row = joint.path(p);
        assets.extend_from_slice(&row[..=n_steps]);
        drivers.extend_from_slice(&row[n_steps + 1..]);
    }
    Ok((
        PathTable::from_vec(n_paths, n_steps + 1, 1, assets)?,
        PathTable::from_vec(n_paths, n_steps, 1, drivers)?,
    ))
}

type StrategyFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;

/// Proportion-of-wealth trading strategy.
#[derive(Clone)]
pub enum StrategyKind {
    /// The same weights at every `(t, state)`.
    Constant(Vec<f64>),
    /// Weights computed from `(t, state)`; the closure writes `N` values.
    Functional(Arc<StrategyFn>),
    /// Per-path, per-step weights (`n_steps` entries of width `N`).
    Tabulated(Arc<PathTable>),
    /// The growth-optimal weights `(sigma sigma')⁻¹ sigma theta`.
    GrowthOptimal,
}

#[derive(Clone)]
pub struct Strategy {
    pub label: String,
    pub kind: StrategyKind,
    /// Multiplier applied to every weight.
    pub scale: f64,
}

impl fmt::Debug for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.kind {
            StrategyKind::Constant(w) => format!("Constant({w:?})"),
            StrategyKind::Functional(_) => "Functional".to_string(),
            StrategyKind::Tabulated(t) => format!("Tabulated({}x{})", t.n_paths(), t.n_nodes()),
            StrategyKind::GrowthOptimal => "GrowthOptimal".to_string(),
        };
        f.debug_struct("Strategy")
            .field("label", &self.label)
            .field("kind", &kind)
            .field("scale", &self.scale)
            .finish()
    }
}

impl Strategy {
    pub fn constant(label: &str, weights: Vec<f64>) -> Self {
        Self {
            label: label.to_string(),
            kind: StrategyKind::Constant(weights),
            scale: 1.0,
        }
    }

    /// Holds everything in the savings account.
    pub fn savings(n_assets: usize) -> Self {
        Self::constant("savings", vec![0.0; n_assets])
    }

    pub fn growth_optimal() -> Self {
        Self {
            label: "gop".to_string(),
            kind: StrategyKind::GrowthOptimal,
            scale: 1.0,
        }
    }

    pub fn functional<F>(label: &str, f: F) -> Self
    where
        F: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            label: label.to_string(),
            kind: StrategyKind::Functional(Arc::new(f)),
            scale: 1.0,
        }
    }

    pub fn tabulated(label: &str, table: PathTable) -> Self {
        Self {
            label: label.to_string(),
            kind: StrategyKind::Tabulated(Arc::new(table)),
            scale: 1.0,
        }
    }

    /// Same strategy with every weight multiplied by `factor`.
    pub fn scaled(&self, label: &str, factor: f64) -> Self {
        Self {
            label: label.to_string(),
            kind: self.kind.clone(),
            scale: self.scale * factor,
        }
    }

    /// Writes the weights for path `p`, step `k`.
    pub(crate) fn weights_into(
        &self,
        p: usize,
        k: usize,
        t: f64,
        state: &[f64],
        snap: &CoefficientSnapshot,
        theta: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        match &self.kind {
            StrategyKind::Constant(w) => out.copy_from_slice(w),
            StrategyKind::Functional(f) => f(t, state, out),
            StrategyKind::Tabulated(table) => out.copy_from_slice(table.node(p, k)),
            StrategyKind::GrowthOptimal => risk::gop_weights_into(snap, theta, t, out)?,
        }
        if self.scale != 1.0 {
            out.iter_mut().for_each(|x| *x *= self.scale);
        }
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "strategy `{}` at t={t}",
                self.label
            )));
        }
        Ok(())
    }

    fn check_shape(&self, n_assets: usize, n_paths: usize, n_steps: usize) -> Result<()> {
        match &self.kind {
            StrategyKind::Constant(w) if w.len() != n_assets => Err(Error::Dimension(format!(
                "strategy `{}` has {} weights for {} assets",
                self.label,
                w.len(),
                n_assets
            ))),
            StrategyKind::Tabulated(t)
                if (t.n_paths(), t.n_nodes(), t.width()) != (n_paths, n_steps, n_assets) =>
            {
                Err(Error::Dimension(format!(
                    "strategy table `{}` is {}x{}x{}, bundle needs {}x{}x{}",
                    self.label,
                    t.n_paths(),
                    t.n_nodes(),
                    t.width(),
                    n_paths,
                    n_steps,
                    n_assets
                )))
            }
            _ => Ok(()),
        }
    }

    fn needs_theta(&self) -> bool {
        matches!(self.kind, StrategyKind::GrowthOptimal)
    }
}

/// A simulated ensemble: drivers, assets, savings account, deflator and GOP, plus
/// any number of labelled portfolio tables.
#[derive(Debug, Clone)]
pub struct PathBundle {
    pub seed: u64,
    pub grid: SimulationGrid,
    pub n_paths: usize,
    pub scheme: SamplingScheme,
    pub drivers: DriverTable,
    pub assets: PathTable,
    /// Savings account `S^0` (undiscounted), width 1.
    pub savings: PathTable,
    /// `Z_t`, width 1.
    pub deflator: PathTable,
    /// Discounted GOP `V̄^{pi*}_t` with unit initial wealth, width 1.
    pub gop: PathTable,
    pub portfolios: BTreeMap<String, PathTable>,
}

impl PathBundle {
    pub fn n_steps(&self) -> usize {
        self.grid.n_steps()
    }

    pub fn n_nodes(&self) -> usize {
        self.grid.n_nodes()
    }

    pub fn terminal_node(&self) -> usize {
        self.grid.n_steps()
    }

    /// Undiscounted GOP value `V^{pi*}_t = S^0_t V̄^{pi*}_t`.
    pub fn gop_undiscounted(&self, p: usize, k: usize) -> f64 {
        self.savings.value(p, k) * self.gop.value(p, k)
    }

    pub fn insert_portfolio(&mut self, label: &str, table: PathTable) {
        self.portfolios.insert(label.to_string(), table);
    }

    /// Writes `(path, time, asset_1..N, deflator, gop)` rows, path-major.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.assets.width();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["path".to_string(), "time".to_string()];
        header.extend((1..=n).map(|i| format!("asset_{i}")));
        header.push("deflator".into());
        header.push("gop".into());
        w.write_record(&header)?;
        for p in 0..self.n_paths {
            for (k, t) in self.grid.times().iter().enumerate() {
                let mut row = vec![p.to_string(), fmt_f64(*t)];
                row.extend(self.assets.node(p, k).iter().map(|x| fmt_f64(*x)));
                row.push(fmt_f64(self.deflator.value(p, k)));
                row.push(fmt_f64(self.gop.value(p, k)));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Floating-point text with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Savings account `S^0_t = exp(int_0^t r du)` along each path.
pub(crate) fn simulate_savings(
    model: &MarketModel,
    assets: &PathTable,
    grid: &SimulationGrid,
) -> Result<PathTable> {
    let n = model.n_assets();
    if model.has_constant_coefficients() {
        let mut snap = model.snapshot_buffer();
        model.eval_into(0.0, model.initial_prices(), &mut snap);
        let r = snap.r;
        let row: Vec<f64> = grid.times().iter().map(|t| (r * t).exp()).collect();
        let mut data = Vec::with_capacity(assets.n_paths() * row.len());
        for _ in 0..assets.n_paths() {
            data.extend_from_slice(&row);
        }
        return PathTable::from_vec(assets.n_paths(), grid.n_nodes(), 1, data);
    }
    PathTable::build_paths(assets.n_paths(), grid.n_nodes(), 1, |p, out| {
        let mut snap = model.snapshot_buffer();
        let mut log_b = 0.0;
        out[0] = 1.0;
        for k in 0..grid.n_steps() {
            let t = eval_time(model, grid, k);
            model.eval_into(t, &assets.path(p)[k * n..(k + 1) * n], &mut snap);
            check_snapshot(&snap, model, t)?;
            log_b += snap.r * grid.dt(k);
            out[k + 1] = log_b.exp();
        }
        Ok(())
    })
}

/// Per-path walk over steps with the coefficient snapshot and `theta` at each
/// step's evaluation point and the current value. `step` returns the log-increment of
/// the tracked process.
fn log_walk<F>(
    model: &MarketModel,
    bundle_grid: &SimulationGrid,
    assets: &PathTable,
    drivers: &DriverTable,
    need_theta: bool,
    start: f64,
    step: F,
) -> Result<PathTable>
where
    F: Fn(usize, usize, f64, &[f64], &CoefficientSnapshot, &[f64], &[f64], f64, f64) -> Result<f64>
        + Sync
        + Send,
{
    let (n, d) = (model.n_assets(), model.n_drivers());
    let allow = model.rank_deficient_allowed();
    let constant = if model.has_constant_coefficients() {
        let mut snap = model.snapshot_buffer();
        model.eval_into(0.0, model.initial_prices(), &mut snap);
        check_snapshot(&snap, model, 0.0)?;
        let mut theta = vec![0.0; d];
        if need_theta {
            risk::theta_into(&snap, 0.0, allow, &mut theta)?;
        }
        Some((snap, theta))
    } else {
        None
    };
    PathTable::build_paths(assets.n_paths(), bundle_grid.n_nodes(), 1, |p, out| {
        let mut snap = model.snapshot_buffer();
        let mut theta = vec![0.0; d];
        let mut log_v = 0.0;
        out[0] = start;
        for k in 0..bundle_grid.n_steps() {
            let t = eval_time(model, bundle_grid, k);
            let state = &assets.path(p)[k * n..(k + 1) * n];
            let (snap_ref, theta_ref): (&CoefficientSnapshot, &[f64]) = match &constant {
                Some((s, th)) => (s, th),
                None => {
                    model.eval_into(t, state, &mut snap);
                    check_snapshot(&snap, model, t)?;
                    if need_theta {
                        risk::theta_into(&snap, t, allow, &mut theta)?;
                    }
                    (&snap, &theta)
                }
            };
            log_v += step(p, k, t, state, snap_ref, theta_ref, drivers.node(p, k), bundle_grid.dt(k), out[k])?;
            out[k + 1] = start * log_v.exp();
        }
        if !out.iter().all(|x| x.is_finite() && *x > 0.0) {
            return Err(Error::Numerical(format!(
                "positive process left (0, inf) on path {p}"
            )));
        }
        Ok(())
    })
}

fn check_bundle_shape(model: &MarketModel, bundle: &PathBundle) -> Result<()> {
    if bundle.assets.width() != model.n_assets()
        || bundle.drivers.width() != model.n_drivers()
        || bundle.assets.n_nodes() != bundle.grid.n_nodes()
        || bundle.drivers.n_nodes() != bundle.grid.n_steps()
    {
        return Err(Error::Dimension(
            "bundle tables do not match the model or grid".into(),
        ));
    }
    Ok(())
}

/// How weights set at a node are held over the following step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rebalancing {
    /// Fractions kept constant through the step (log-Euler wealth, always positive).
    #[default]
    Continuous,
    /// Shares bought at the node and held to the next one; wealth may turn negative.
    Discrete,
}

impl Rebalancing {
    /// Discrete for exactly sampled bundles, where only the node prices are exact and
    /// a log-Euler wealth step would reintroduce discretization error.
    pub fn for_scheme(scheme: SamplingScheme) -> Self {
        match scheme {
            SamplingScheme::Exact => Rebalancing::Discrete,
            SamplingScheme::LogEuler => Rebalancing::Continuous,
        }
    }
}

/// Per-path walk for discrete rebalancing: `V̄_{k+1} = V̄_k (1 + pi'(R - 1))` with `R` the
/// discounted asset gross returns over the step. `weights` gets the current wealth.
fn discrete_walk<F>(model: &MarketModel, bundle: &PathBundle, need_theta: bool, start: f64, weights: F) -> Result<PathTable>
where
    F: Fn(usize, usize, f64, &[f64], &CoefficientSnapshot, &[f64], f64, &mut [f64]) -> Result<()> + Sync + Send,
{
    let (n, d) = (model.n_assets(), model.n_drivers());
    let allow = model.rank_deficient_allowed();
    let grid = &bundle.grid;
    PathTable::build_paths(bundle.n_paths, grid.n_nodes(), 1, |p, out| {
        let mut snap = model.snapshot_buffer();
        let mut theta = vec![0.0; d];
        let mut pi = vec![0.0; n];
        let assets = bundle.assets.path(p);
        out[0] = start;
        for k in 0..grid.n_steps() {
            let t = eval_time(model, grid, k);
            let state = &assets[k * n..(k + 1) * n];
            if need_theta {
                model.eval_into(t, state, &mut snap);
                check_snapshot(&snap, model, t)?;
                risk::theta_into(&snap, t, allow, &mut theta)?;
            }
            weights(p, k, t, state, &snap, &theta, out[k], &mut pi)?;
            let growth = bundle.savings.value(p, k) / bundle.savings.value(p, k + 1);
            let excess: f64 = (0..n)
                .map(|i| pi[i] * (assets[(k + 1) * n + i] / state[i] * growth - 1.0))
                .sum();
            out[k + 1] = out[k] * (1.0 + excess);
            if !out[k + 1].is_finite() {
                return Err(Error::NonFinite(format!("wealth on path {p} at t={t}")));
            }
        }
        Ok(())
    })
}

/// [`simulate_portfolio`] with a choice of rebalancing between nodes.
pub fn simulate_portfolio_with(
    model: &MarketModel,
    strategy: &Strategy,
    v: f64,
    bundle: &PathBundle,
    rebalancing: Rebalancing,
) -> Result<PathTable> {
    if rebalancing == Rebalancing::Continuous {
        return simulate_portfolio(model, strategy, v, bundle);
    }
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::param("v", "initial capital must be finite and positive"));
    }
    check_bundle_shape(model, bundle)?;
    strategy.check_shape(model.n_assets(), bundle.n_paths, bundle.n_steps())?;
    let unit = discrete_walk(model, bundle, strategy.needs_theta(), 1.0, |p, k, t, state, snap, theta, _v, out| {
        strategy.weights_into(p, k, t, state, snap, theta, out)
    })?;
    Ok(if v == 1.0 { unit } else { unit.map(|x| v * x) })
}

/// Discounted portfolio `V̄^{v,pi}` along every path of `bundle`.
///
/// The log-wealth path is computed for unit capital and multiplied by `v` once, so
/// tables for different `v` are exact multiples of one another.
pub fn simulate_portfolio(
    model: &MarketModel,
    strategy: &Strategy,
    v: f64,
    bundle: &PathBundle,
) -> Result<PathTable> {
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::param("v", "initial capital must be finite and positive"));
    }
    check_bundle_shape(model, bundle)?;
    strategy.check_shape(model.n_assets(), bundle.n_paths, bundle.n_steps())?;
    let (n, d) = (model.n_assets(), model.n_drivers());
    let label = strategy.label.clone();
    let unit = log_walk(
        model,
        &bundle.grid,
        &bundle.assets,
        &bundle.drivers,
        strategy.needs_theta(),
        1.0,
        |p, k, t, state, snap, theta, dw, dt, _v| {
            let mut pi = vec![0.0; n];
            strategy.weights_into(p, k, t, state, snap, theta, &mut pi)?;
            wealth_increment(snap, &pi, dw, dt, d, &label, t)
        },
    )?;
    Ok(if v == 1.0 { unit } else { unit.map(|x| v * x) })
}

fn wealth_increment(
    snap: &CoefficientSnapshot,
    pi: &[f64],
    dw: &[f64],
    dt: f64,
    d: usize,
    label: &str,
    t: f64,
) -> Result<f64> {
    let mut expo = vec![0.0; d];
    risk::vol_exposure(snap, pi, &mut expo);
    let excess: f64 = pi.iter().zip(snap.mu.iter()).map(|(w, m)| w * (m - snap.r)).sum();
    let var: f64 = expo.iter().map(|e| e * e).sum();
    let shock: f64 = expo.iter().zip(dw).map(|(e, w)| e * w).sum();
    let inc = (excess - 0.5 * var) * dt + shock;
    if !inc.is_finite() {
        return Err(Error::NonFinite(format!(
            "integrand of strategy `{label}` at t={t} (not admissible on this path)"
        )));
    }
    Ok(inc)
}

/// Discounted wealth of a strategy whose weights may depend on the current wealth:
/// `rule(p, k, t, state, wealth, out)` writes the weights for step `k` given the
/// discounted wealth at node `k`. Returns the wealth table and the weights used
/// (`n_steps` entries per path), which can be replayed as a tabulated strategy.
pub fn simulate_feedback_portfolio<F>(
    model: &MarketModel,
    label: &str,
    v: f64,
    bundle: &PathBundle,
    rebalancing: Rebalancing,
    rule: F,
) -> Result<(PathTable, PathTable)>
where
    F: Fn(usize, usize, f64, &[f64], f64, &mut [f64]) -> Result<()> + Send + Sync,
{
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::param("v", "initial capital must be finite and positive"));
    }
    check_bundle_shape(model, bundle)?;
    let (n, d) = (model.n_assets(), model.n_drivers());
    let rule = &rule;
    let wealth = match rebalancing {
        Rebalancing::Continuous => log_walk(
            model,
            &bundle.grid,
            &bundle.assets,
            &bundle.drivers,
            false,
            v,
            |p, k, t, state, snap, _theta, dw, dt, current| {
                let mut pi = vec![0.0; n];
                rule(p, k, t, state, current, &mut pi)?;
                wealth_increment(snap, &pi, dw, dt, d, label, t)
            },
        )?,
        Rebalancing::Discrete => discrete_walk(model, bundle, false, v, |p, k, t, state, _snap, _theta, current, out| {
            rule(p, k, t, state, current, out)
        })?,
    };
    let grid = &bundle.grid;
    let weights = PathTable::build_paths(bundle.n_paths, grid.n_steps(), n, |p, out| {
        for k in 0..grid.n_steps() {
            let t = eval_time(model, grid, k);
            let state = bundle.assets.node(p, k);
            rule(p, k, t, state, wealth.value(p, k), &mut out[k * n..(k + 1) * n])?;
        }
        Ok(())
    })?;
    Ok((wealth, weights))
}

/// Martingale deflator `Z = E(-int theta' dW)` along every path.
///
/// Bundles sampled exactly use the model's closed-form deflator instead.
pub fn simulate_deflator(model: &MarketModel, bundle: &PathBundle) -> Result<PathTable> {
    check_bundle_shape(model, bundle)?;
    if bundle.scheme == SamplingScheme::Exact {
        return closed_form(model, bundle, false);
    }
    log_walk(
        model,
        &bundle.grid,
        &bundle.assets,
        &bundle.drivers,
        true,
        1.0,
        |_p, _k, _t, _state, _snap, theta, dw, dt, _v| {
            let sq: f64 = theta.iter().map(|x| x * x).sum();
            let shock: f64 = theta.iter().zip(dw).map(|(a, b)| a * b).sum();
            Ok(-shock - 0.5 * sq * dt)
        },
    )
}

/// Discounted GOP from the market price of risk:
/// `d log V̄ = |theta|²/2 dt + theta' dW`.
pub(crate) fn simulate_gop_paths(model: &MarketModel, bundle: &PathBundle) -> Result<PathTable> {
    check_bundle_shape(model, bundle)?;
    if bundle.scheme == SamplingScheme::Exact {
        return closed_form(model, bundle, true);
    }
    log_walk(
        model,
        &bundle.grid,
        &bundle.assets,
        &bundle.drivers,
        true,
        1.0,
        |_p, _k, _t, _state, _snap, theta, dw, dt, _v| {
            let sq: f64 = theta.iter().map(|x| x * x).sum();
            let shock: f64 = theta.iter().zip(dw).map(|(a, b)| a * b).sum();
            Ok(0.5 * sq * dt + shock)
        },
    )
}

fn closed_form(model: &MarketModel, bundle: &PathBundle, reciprocal: bool) -> Result<PathTable> {
    let law = model
        .exact_law()
        .ok_or_else(|| Error::Config("exact bundle for a model without exact law".into()))?;
    let s0 = model.initial_prices();
    let n = model.n_assets();
    PathTable::build_paths(bundle.n_paths, bundle.n_nodes(), 1, |p, out| {
        for (k, o) in out.iter_mut().enumerate() {
            let z = law.deflator(s0, &bundle.assets.path(p)[k * n..(k + 1) * n]);
            *o = if reciprocal { 1.0 / z } else { z };
        }
        Ok(())
    })
}

/// Simulates drivers, assets, savings account, deflator and GOP for one seed.
pub fn simulate_bundle(
    model: &MarketModel,
    seed: u64,
    grid: &SimulationGrid,
    n_paths: usize,
    scheme: SamplingScheme,
) -> Result<PathBundle> {
    if n_paths == 0 {
        return Err(Error::param("n_paths", "must be at least 1"));
    }
    if (grid.horizon() - model.horizon()).abs() > 1e-12 * model.horizon().max(1.0) {
        return Err(Error::Dimension(format!(
            "grid ends at {} but the model horizon is {}",
            grid.horizon(),
            model.horizon()
        )));
    }
    let (assets, drivers) = match scheme {
        SamplingScheme::LogEuler => {
            let drivers = simulate_drivers(seed, grid, n_paths, model.n_drivers())?;
            (simulate_assets(model, &drivers, grid)?, drivers)
        }
        SamplingScheme::Exact => simulate_assets_exact(model, seed, grid, n_paths)?,
    };
    let savings = simulate_savings(model, &assets, grid)?;
    let mut bundle = PathBundle {
        seed,
        grid: grid.clone(),
        n_paths,
        scheme,
        drivers,
        assets,
        savings,
        deflator: PathTable::filled(0, 0, 1, 0.0),
        gop: PathTable::filled(0, 0, 1, 0.0),
        portfolios: BTreeMap::new(),
    };
    bundle.deflator = simulate_deflator(model, &bundle)?;
    bundle.gop = simulate_gop_paths(model, &bundle)?;
    Ok(bundle)
}
