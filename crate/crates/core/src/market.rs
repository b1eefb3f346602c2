//! Market data abstraction and the built-in reference models.
//!
//! Every model is stored in relative form: `dS^i = S^i (mu^i dt + sum_j sigma^{ij} dW^j)`,
//! with a short rate `r` driving the savings account. Models whose natural dynamics
//! are additive (the Bessel market) are converted by dividing drift and volatility
//! by the current price.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::linalg;

/// Coefficients `(r, mu, sigma)` evaluated at one `(t, state)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSnapshot {
    pub r: f64,
    pub mu: DVector<f64>,
    /// `N x d` volatility matrix.
    pub sigma: DMatrix<f64>,
}

impl CoefficientSnapshot {
    pub fn zeros(n_assets: usize, n_drivers: usize) -> Self {
        Self {
            r: 0.0,
            mu: DVector::zeros(n_assets),
            sigma: DMatrix::zeros(n_assets, n_drivers),
        }
    }

    pub fn new(r: f64, mu: Vec<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        if mu.len() != sigma.nrows() {
            return Err(Error::Dimension(format!(
                "drift has {} entries but volatility has {} rows",
                mu.len(),
                sigma.nrows()
            )));
        }
        Ok(Self {
            r,
            mu: DVector::from_vec(mu),
            sigma,
        })
    }

    pub fn n_assets(&self) -> usize {
        self.mu.len()
    }

    pub fn n_drivers(&self) -> usize {
        self.sigma.ncols()
    }

    /// Excess return `mu - r 1`.
    pub fn excess_return(&self) -> DVector<f64> {
        self.mu.map(|m| m - self.r)
    }

    pub fn is_finite(&self) -> bool {
        self.r.is_finite() && self.mu.iter().all(|x| x.is_finite()) && self.sigma.iter().all(|x| x.is_finite())
    }
}

/// Source of the coefficient functions of a model. Implementations must be pure.
pub trait Coefficients: Send + Sync {
    /// Writes `(r, mu, sigma)` at `(t, state)` into `out`, whose shapes already match the model.
    fn eval(&self, t: f64, state: &[f64], out: &mut CoefficientSnapshot);

    /// True when the coefficients depend on neither time nor state.
    fn is_constant(&self) -> bool {
        false
    }

    /// True when the coefficients depend on time only.
    fn is_state_independent(&self) -> bool {
        self.is_constant()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ConstantCoefficients {
    r: f64,
    mu: Vec<f64>,
    sigma: DMatrix<f64>,
}

impl Coefficients for ConstantCoefficients {
    fn eval(&self, _t: f64, _state: &[f64], out: &mut CoefficientSnapshot) {
        out.r = self.r;
        out.mu.copy_from_slice(&self.mu);
        out.sigma.copy_from(&self.sigma);
    }

    fn is_constant(&self) -> bool {
        true
    }
}

/// `dS = dt / S + dW`, a Bessel process of dimension three.
#[derive(Debug, Clone, Copy)]
struct Bessel3Coefficients;

impl Coefficients for Bessel3Coefficients {
    fn eval(&self, _t: f64, state: &[f64], out: &mut CoefficientSnapshot) {
        let s = state[0];
        out.r = 0.0;
        out.mu[0] = 1.0 / (s * s);
        out.sigma[(0, 0)] = 1.0 / s;
    }
}

/// `dS = S (dt / sqrt(t) + dW)`; the drift is singular at `t = 0`.
#[derive(Debug, Clone, Copy)]
struct ExplodingMprCoefficients;

impl Coefficients for ExplodingMprCoefficients {
    fn eval(&self, t: f64, _state: &[f64], out: &mut CoefficientSnapshot) {
        out.r = 0.0;
        out.mu[0] = 1.0 / t.sqrt();
        out.sigma[(0, 0)] = 1.0;
    }

    fn is_state_independent(&self) -> bool {
        true
    }
}

type CoefficientFn = dyn Fn(f64, &[f64], &mut CoefficientSnapshot) + Send + Sync;

/// Coefficients given by a closure; for code-defined models.
pub struct FnCoefficients(Arc<CoefficientFn>);

impl FnCoefficients {
    pub fn new<F>(f: F) -> Self
    where
        F: Fn(f64, &[f64], &mut CoefficientSnapshot) + Send + Sync + 'static,
    {
        Self(Arc::new(f))
    }
}

impl Coefficients for FnCoefficients {
    fn eval(&self, t: f64, state: &[f64], out: &mut CoefficientSnapshot) {
        (self.0)(t, state, out)
    }
}

/// Transition laws that can be sampled exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExactLaw {
    /// `S_t = |(s, 0, 0) + B_t|` for a three-dimensional Brownian motion `B`.
    Bessel3,
}

impl ExactLaw {
    /// Gaussian draws consumed per step.
    pub fn noise_dim(self) -> usize {
        match self {
            ExactLaw::Bessel3 => 3,
        }
    }

    /// Closed-form martingale deflator `Z_t` as a function of the state, when known.
    pub fn deflator(self, initial: &[f64], state: &[f64]) -> f64 {
        match self {
            ExactLaw::Bessel3 => initial[0] / state[0],
        }
    }
}

/// JSON model description: `{"name": ..., "params": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default)]
    pub params: Map<String, Value>,
}

impl ModelConfig {
    pub fn new(name: &str, params: Value) -> Self {
        let params = match params {
            Value::Object(m) => m,
            _ => Map::new(),
        };
        Self {
            name: name.to_string(),
            params,
        }
    }

    pub fn build(&self) -> Result<MarketModel> {
        builtin_model(&self.name, &self.params)
    }
}

/// A diffusion market with `N` risky assets driven by `d` Brownian motions.
#[derive(Clone)]
pub struct MarketModel {
    name: String,
    n_assets: usize,
    n_drivers: usize,
    coefficients: Arc<dyn Coefficients>,
    initial_prices: Vec<f64>,
    horizon: f64,
    exact: Option<ExactLaw>,
    rank_deficient_allowed: bool,
    singular_at_origin: bool,
    config: Option<ModelConfig>,
}

impl fmt::Debug for MarketModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MarketModel")
            .field("name", &self.name)
            .field("n_assets", &self.n_assets)
            .field("n_drivers", &self.n_drivers)
            .field("initial_prices", &self.initial_prices)
            .field("horizon", &self.horizon)
            .field("exact", &self.exact)
            .field("rank_deficient_allowed", &self.rank_deficient_allowed)
            .finish()
    }
}

/// Builder for code-defined models.
pub struct MarketModelBuilder {
    name: String,
    n_assets: usize,
    n_drivers: usize,
    coefficients: Arc<dyn Coefficients>,
    initial_prices: Vec<f64>,
    horizon: f64,
    exact: Option<ExactLaw>,
    rank_deficient_allowed: bool,
    singular_at_origin: bool,
}

impl MarketModelBuilder {
    pub fn initial_prices(mut self, s: Vec<f64>) -> Self {
        self.initial_prices = s;
        self
    }

    pub fn horizon(mut self, t: f64) -> Self {
        self.horizon = t;
        self
    }

    pub fn exact_law(mut self, law: ExactLaw) -> Self {
        self.exact = Some(law);
        self
    }

    pub fn rank_deficient_allowed(mut self, allowed: bool) -> Self {
        self.rank_deficient_allowed = allowed;
        self
    }

    /// Marks a drift singularity at `t = 0`; the first interval then evaluates its
    /// coefficients at the right endpoint.
    pub fn singular_at_origin(mut self, singular: bool) -> Self {
        self.singular_at_origin = singular;
        self
    }

    pub fn build(self) -> Result<MarketModel> {
        if self.n_assets == 0 || self.n_drivers == 0 {
            return Err(Error::param("n_assets/n_drivers", "must be at least 1"));
        }
        if self.n_assets > self.n_drivers && !self.rank_deficient_allowed {
            return Err(Error::Assumption(format!(
                "{} assets but only {} drivers: volatility cannot have full row rank",
                self.n_assets, self.n_drivers
            )));
        }
        if self.initial_prices.len() != self.n_assets {
            return Err(Error::Dimension(format!(
                "{} initial prices for {} assets",
                self.initial_prices.len(),
                self.n_assets
            )));
        }
        if self
            .initial_prices
            .iter()
            .any(|s| !(s.is_finite() && *s > 0.0))
        {
            return Err(Error::param("s", "initial prices must be finite and strictly positive"));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::param("T", "horizon must be finite and positive"));
        }
        if let Some(ExactLaw::Bessel3) = self.exact {
            if self.n_assets != 1 || self.n_drivers != 1 {
                return Err(Error::Dimension("Bessel sampler needs N = d = 1".into()));
            }
        }
        Ok(MarketModel {
            name: self.name,
            n_assets: self.n_assets,
            n_drivers: self.n_drivers,
            coefficients: self.coefficients,
            initial_prices: self.initial_prices,
            horizon: self.horizon,
            exact: self.exact,
            rank_deficient_allowed: self.rank_deficient_allowed,
            singular_at_origin: self.singular_at_origin,
            config: None,
        })
    }
}

impl MarketModel {
    pub fn builder(
        name: &str,
        n_assets: usize,
        n_drivers: usize,
        coefficients: impl Coefficients + 'static,
    ) -> MarketModelBuilder {
        MarketModelBuilder {
            name: name.to_string(),
            n_assets,
            n_drivers,
            coefficients: Arc::new(coefficients),
            initial_prices: vec![1.0; n_assets],
            horizon: 1.0,
            exact: None,
            rank_deficient_allowed: false,
            singular_at_origin: false,
        }
    }

    /// Constant-coefficient model with `N` assets and `d` drivers.
    pub fn constant(
        name: &str,
        r: f64,
        mu: Vec<f64>,
        sigma: DMatrix<f64>,
        initial_prices: Vec<f64>,
        horizon: f64,
        rank_deficient_allowed: bool,
    ) -> Result<Self> {
        let n = sigma.nrows();
        let d = sigma.ncols();
        if mu.len() != n {
            return Err(Error::Dimension(format!(
                "drift has {} entries for {} assets",
                mu.len(),
                n
            )));
        }
        if !(r.is_finite() && mu.iter().all(|x| x.is_finite()) && sigma.iter().all(|x| x.is_finite())) {
            return Err(Error::NonFinite("constant coefficients".into()));
        }
        if !rank_deficient_allowed && linalg::min_norm_solve(&sigma, &DVector::zeros(n)).rank < n {
            return Err(Error::RankDeficient { t: 0.0, ratio: 0.0 });
        }
        MarketModel::builder(name, n, d, ConstantCoefficients { r, mu, sigma })
            .initial_prices(initial_prices)
            .horizon(horizon)
            .rank_deficient_allowed(rank_deficient_allowed)
            .build()
    }

    pub fn black_scholes(mu: f64, sigma: f64, r: f64, s: f64, horizon: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma != 0.0) {
            return Err(Error::param("sigma", "volatility must be finite and non-zero"));
        }
        MarketModel::constant(
            "black_scholes",
            r,
            vec![mu],
            DMatrix::from_element(1, 1, sigma),
            vec![s],
            horizon,
            false,
        )
    }

    pub fn bessel3(s: f64, horizon: f64) -> Result<Self> {
        MarketModel::builder("bessel3", 1, 1, Bessel3Coefficients)
            .initial_prices(vec![s])
            .horizon(horizon)
            .exact_law(ExactLaw::Bessel3)
            .build()
    }

    pub fn exploding_mpr(s: f64, horizon: f64) -> Result<Self> {
        MarketModel::builder("exploding_mpr", 1, 1, ExplodingMprCoefficients)
            .initial_prices(vec![s])
            .horizon(horizon)
            .singular_at_origin(true)
            .build()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_assets(&self) -> usize {
        self.n_assets
    }

    pub fn n_drivers(&self) -> usize {
        self.n_drivers
    }

    pub fn initial_prices(&self) -> &[f64] {
        &self.initial_prices
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn exact_law(&self) -> Option<ExactLaw> {
        self.exact
    }

    pub fn rank_deficient_allowed(&self) -> bool {
        self.rank_deficient_allowed
    }

    pub fn singular_at_origin(&self) -> bool {
        self.singular_at_origin
    }

    pub fn has_constant_coefficients(&self) -> bool {
        self.coefficients.is_constant()
    }

    pub fn has_state_independent_coefficients(&self) -> bool {
        self.coefficients.is_state_independent()
    }

    /// Complete market in the sense `d = N` (the filtration is always Brownian here).
    pub fn is_complete(&self) -> bool {
        self.n_assets == self.n_drivers
    }

    /// JSON description the model was built from, if any.
    pub fn config(&self) -> Option<&ModelConfig> {
        self.config.as_ref()
    }

    pub fn snapshot_buffer(&self) -> CoefficientSnapshot {
        CoefficientSnapshot::zeros(self.n_assets, self.n_drivers)
    }

    /// Unchecked evaluation into a reusable buffer; the simulation hot path.
    #[inline]
    pub(crate) fn eval_into(&self, t: f64, state: &[f64], out: &mut CoefficientSnapshot) {
        self.coefficients.eval(t, state, out)
    }

    /// Evaluates `(r_t, mu_t, sigma_t)` with full validation.
    pub fn eval_coefficients(&self, t: f64, state: &[f64]) -> Result<CoefficientSnapshot> {
        if state.len() != self.n_assets {
            return Err(Error::Dimension(format!(
                "state has {} entries for {} assets",
                state.len(),
                self.n_assets
            )));
        }
        if !(t >= 0.0 && t <= self.horizon * (1.0 + 1e-12)) {
            return Err(Error::param("t", format!("{t} outside [0, {}]", self.horizon)));
        }
        if state.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::param("state", "asset prices must be finite and strictly positive"));
        }
        let mut snap = self.snapshot_buffer();
        self.coefficients.eval(t, state, &mut snap);
        if !snap.is_finite() {
            return Err(Error::NonFinite(format!(
                "coefficients of `{}` at t={t}",
                self.name
            )));
        }
        if !self.rank_deficient_allowed {
            check_full_row_rank(&snap, t)?;
        }
        Ok(snap)
    }
}

pub(crate) fn check_full_row_rank(snap: &CoefficientSnapshot, t: f64) -> Result<()> {
    let n = snap.n_assets();
    let solve = linalg::min_norm_solve(&snap.sigma, &DVector::zeros(n));
    if solve.rank < n {
        return Err(Error::RankDeficient {
            t,
            ratio: solve.sv_ratio,
        });
    }
    Ok(())
}

fn get_f64(params: &Map<String, Value>, key: &str) -> Result<f64> {
    let v = params
        .get(key)
        .ok_or_else(|| Error::param(key, "missing"))?;
    v.as_f64()
        .ok_or_else(|| Error::param(key, "expected a number"))
}

fn get_f64_or(params: &Map<String, Value>, key: &str, default: f64) -> Result<f64> {
    if params.contains_key(key) {
        get_f64(params, key)
    } else {
        Ok(default)
    }
}

fn get_vec(params: &Map<String, Value>, key: &str, len: usize) -> Result<Vec<f64>> {
    match params.get(key) {
        None => Err(Error::param(key, "missing")),
        Some(Value::Number(x)) => Ok(vec![x.as_f64().unwrap_or(f64::NAN); len]),
        Some(Value::Array(xs)) => {
            let out: Option<Vec<f64>> = xs.iter().map(Value::as_f64).collect();
            let out = out.ok_or_else(|| Error::param(key, "expected numbers"))?;
            if out.len() != len {
                return Err(Error::Dimension(format!(
                    "`{key}` has {} entries, expected {len}",
                    out.len()
                )));
            }
            Ok(out)
        }
        Some(_) => Err(Error::param(key, "expected a number or an array")),
    }
}

fn get_matrix(params: &Map<String, Value>, key: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let rows_v = params
        .get(key)
        .and_then(Value::as_array)
        .ok_or_else(|| Error::param(key, "expected an array of rows"))?;
    if rows_v.len() != rows {
        return Err(Error::Dimension(format!(
            "`{key}` has {} rows, expected {rows}",
            rows_v.len()
        )));
    }
    let mut m = DMatrix::zeros(rows, cols);
    for (i, row) in rows_v.iter().enumerate() {
        let row = row
            .as_array()
            .ok_or_else(|| Error::param(key, "rows must be arrays"))?;
        if row.len() != cols {
            return Err(Error::Dimension(format!(
                "`{key}` row {i} has {} columns, expected {cols}",
                row.len()
            )));
        }
        for (j, x) in row.iter().enumerate() {
            m[(i, j)] = x
                .as_f64()
                .ok_or_else(|| Error::param(key, "expected numbers"))?;
        }
    }
    Ok(m)
}

fn get_count(params: &Map<String, Value>, key: &str) -> Result<usize> {
    let v = params
        .get(key)
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::param(key, "expected a positive integer"))?;
    if v == 0 {
        return Err(Error::param(key, "must be at least 1"));
    }
    Ok(v as usize)
}

/// Builds one of the named reference models from a parameter map.
///
/// | name            | params                                                         |
/// |-----------------|----------------------------------------------------------------|
/// | `black_scholes` | `mu`, `sigma`, `r` (default 0), `s`, `T`                        |
/// | `bessel3`       | `s`, `T`                                                       |
/// | `exploding_mpr` | `s` (default 1), `T`                                           |
/// | `custom_multi`  | `n_assets`, `n_drivers`, `mu`, `sigma`, `r`, `s`, `T`, `rank_deficient_allowed` |
pub fn builtin_model(name: &str, params: &Map<String, Value>) -> Result<MarketModel> {
    let mut model = match name {
        "black_scholes" => MarketModel::black_scholes(
            get_f64(params, "mu")?,
            get_f64(params, "sigma")?,
            get_f64_or(params, "r", 0.0)?,
            get_f64(params, "s")?,
            get_f64(params, "T")?,
        )?,
        "bessel3" => MarketModel::bessel3(get_f64(params, "s")?, get_f64(params, "T")?)?,
        "exploding_mpr" => MarketModel::exploding_mpr(
            get_f64_or(params, "s", 1.0)?,
            get_f64(params, "T")?,
        )?,
        "custom_multi" => {
            let n = get_count(params, "n_assets")?;
            let d = get_count(params, "n_drivers")?;
            let flagged = params
                .get("rank_deficient_allowed")
                .and_then(Value::as_bool)
                .unwrap_or(false);
            MarketModel::constant(
                "custom_multi",
                get_f64_or(params, "r", 0.0)?,
                get_vec(params, "mu", n)?,
                get_matrix(params, "sigma", n, d)?,
                if params.contains_key("s") {
                    get_vec(params, "s", n)?
                } else {
                    vec![1.0; n]
                },
                get_f64_or(params, "T", 1.0)?,
                flagged,
            )?
        }
        other => return Err(Error::UnknownModel(other.to_string())),
    };
    model.config = Some(ModelConfig {
        name: name.to_string(),
        params: params.clone(),
    });
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn params(v: Value) -> Map<String, Value> {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn black_scholes_coefficients_are_verbatim() {
        let m = builtin_model(
            "black_scholes",
            &params(json!({"mu": 0.1, "sigma": 0.2, "r": 0.02, "s": 100.0, "T": 1.0})),
        )
        .unwrap();
        assert_eq!((m.n_assets(), m.n_drivers()), (1, 1));
        for (t, s) in [(0.0, 100.0), (0.7, 3.0)] {
            let c = m.eval_coefficients(t, &[s]).unwrap();
            assert_eq!(c.r, 0.02);
            assert_eq!(c.mu.as_slice(), &[0.1]);
            assert_eq!(c.sigma[(0, 0)], 0.2);
        }
    }

    #[test]
    fn bessel_relative_coefficients() {
        let m = builtin_model("bessel3", &params(json!({"s": 1.0, "T": 1.0}))).unwrap();
        assert_eq!(m.exact_law(), Some(ExactLaw::Bessel3));
        let c = m.eval_coefficients(0.3, &[2.0]).unwrap();
        assert_eq!(c.r, 0.0);
        assert_eq!(c.mu[0], 0.25);
        assert_eq!(c.sigma[(0, 0)], 0.5);
    }

    #[test]
    fn exploding_drift() {
        let m = builtin_model("exploding_mpr", &params(json!({"T": 1.0}))).unwrap();
        assert!(m.singular_at_origin());
        let c = m.eval_coefficients(0.25, &[7.0]).unwrap();
        assert_eq!((c.r, c.mu[0], c.sigma[(0, 0)]), (0.0, 2.0, 1.0));
        assert!(matches!(m.eval_coefficients(0.0, &[1.0]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn custom_multi_full_rank() {
        let m = builtin_model(
            "custom_multi",
            &params(json!({"n_assets": 2, "n_drivers": 2, "mu": [0.1, 0.2],
                           "sigma": [[1.0, 0.0], [0.0, 2.0]], "r": 0.0, "s": 1.0, "T": 1.0})),
        )
        .unwrap();
        let c = m.eval_coefficients(0.5, &[1.0, 2.0]).unwrap();
        assert_eq!(c.sigma[(1, 1)], 2.0);
        assert!(m.is_complete());
    }

    #[test]
    fn rank_deficient_needs_flag() {
        let base = json!({"n_assets": 2, "n_drivers": 1, "mu": [0.1, 0.2],
                          "sigma": [[1.0], [1.0]], "r": 0.0, "s": 1.0, "T": 1.0});
        assert!(builtin_model("custom_multi", &params(base.clone())).is_err());
        let mut flagged = base;
        flagged["rank_deficient_allowed"] = json!(true);
        let m = builtin_model("custom_multi", &params(flagged)).unwrap();
        assert!(m.eval_coefficients(0.1, &[1.0, 1.0]).is_ok());
    }

    #[test]
    fn invalid_parameters() {
        assert!(matches!(
            builtin_model("heston", &Map::new()),
            Err(Error::UnknownModel(_))
        ));
        let zero_vol = params(json!({"mu": 0.1, "sigma": 0.0, "s": 1.0, "T": 1.0}));
        assert!(matches!(
            builtin_model("black_scholes", &zero_vol),
            Err(Error::InvalidParameter { .. })
        ));
        let missing = params(json!({"mu": 0.1, "s": 1.0, "T": 1.0}));
        assert!(builtin_model("black_scholes", &missing).is_err());
        let negative_s = params(json!({"s": -1.0, "T": 1.0}));
        assert!(builtin_model("bessel3", &negative_s).is_err());
        let zero_t = params(json!({"s": 1.0, "T": 0.0}));
        assert!(builtin_model("bessel3", &zero_t).is_err());
    }

    #[test]
    fn evaluation_domain_errors() {
        let m = MarketModel::black_scholes(0.1, 0.2, 0.0, 1.0, 1.0).unwrap();
        assert!(matches!(m.eval_coefficients(0.5, &[1.0, 2.0]), Err(Error::Dimension(_))));
        assert!(m.eval_coefficients(1.5, &[1.0]).is_err());
        assert!(m.eval_coefficients(0.5, &[0.0]).is_err());
    }

    #[test]
    fn functional_model_rank_check() {
        let m = MarketModel::builder(
            "fading",
            1,
            1,
            FnCoefficients::new(|t, _s, out| {
                out.r = 0.0;
                out.mu[0] = 0.1;
                out.sigma[(0, 0)] = 0.5 - t;
            }),
        )
        .build()
        .unwrap();
        assert!(m.eval_coefficients(0.2, &[1.0]).is_ok());
        assert!(matches!(
            m.eval_coefficients(0.5, &[1.0]),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn config_round_trip() {
        let cfg: ModelConfig = serde_json::from_str(
            r#"{"name": "black_scholes", "params": {"mu": 0.1, "sigma": 0.2, "s": 100, "T": 1}}"#,
        )
        .unwrap();
        let m = cfg.build().unwrap();
        assert_eq!(m.config().unwrap(), &cfg);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ModelConfig>(&text).unwrap(), cfg);
    }
}
