//! Expected-utility maximization through the inverse marginal utility, and
//! utility-indifference prices.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pricing::{Claim, Method, PriceEstimate, KURTOSIS_WARNING};
use crate::sim::PathBundle;
use crate::stats::{self, MeanEstimate};

/// Relative tolerance of the multiplier search: `|W(y) - v| <= LAGRANGE_TOL v`.
pub const LAGRANGE_TOL: f64 = 1e-8;
/// Doublings (or halvings) allowed while bracketing the multiplier.
pub const MAX_BRACKET_STEPS: usize = 200;
const ROUND_TRIP_TOL: f64 = 1e-9;

type ScalarFn = dyn Fn(f64) -> f64 + Send + Sync;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityKind {
    Log,
    Power(f64),
    Custom,
}

/// A utility `U` with its marginal `U'` and inverse marginal `I = (U')⁻¹`.
#[derive(Clone)]
pub struct UtilitySpec {
    pub kind: UtilityKind,
    label: String,
    value: Arc<ScalarFn>,
    marginal: Arc<ScalarFn>,
    inverse_marginal: Arc<ScalarFn>,
}

impl fmt::Debug for UtilitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UtilitySpec").field("label", &self.label).finish()
    }
}

impl fmt::Display for UtilitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

impl UtilitySpec {
    pub fn log() -> Self {
        Self {
            kind: UtilityKind::Log,
            label: "log".into(),
            value: Arc::new(f64::ln),
            marginal: Arc::new(|x| 1.0 / x),
            inverse_marginal: Arc::new(|y| 1.0 / y),
        }
    }

    /// `U(x) = x^a / a` for `a` in `(0, 1)`.
    pub fn power(a: f64) -> Result<Self> {
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::param("a", format!("power exponent {a} is outside (0, 1)")));
        }
        let spec = Self {
            kind: UtilityKind::Power(a),
            label: format!("power:{a}"),
            value: Arc::new(move |x| x.powf(a) / a),
            marginal: Arc::new(move |x| x.powf(a - 1.0)),
            inverse_marginal: Arc::new(move |y| y.powf(1.0 / (a - 1.0))),
        };
        spec.check_round_trip()?;
        Ok(spec)
    }

    /// A user-supplied utility. Checked for a positive, decreasing marginal, the
    /// round trip `I(U'(x)) = x` on `[1e-4, 1e4]` and the edge conditions
    /// `U'(1e-8) > 1e6`, `U'(1e8) < 1e-6`.
    pub fn custom<U, M, I>(label: &str, value: U, marginal: M, inverse_marginal: I) -> Result<Self>
    where
        U: Fn(f64) -> f64 + Send + Sync + 'static,
        M: Fn(f64) -> f64 + Send + Sync + 'static,
        I: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let spec = Self {
            kind: UtilityKind::Custom,
            label: label.to_string(),
            value: Arc::new(value),
            marginal: Arc::new(marginal),
            inverse_marginal: Arc::new(inverse_marginal),
        };
        spec.check_round_trip()?;
        let (lo, hi) = (spec.marginal(1e-8), spec.marginal(1e8));
        if !(lo > 1e6 && hi < 1e-6) {
            return Err(Error::param(
                "utility",
                format!("edge conditions fail: U'(1e-8) = {lo:e}, U'(1e8) = {hi:e}"),
            ));
        }
        Ok(spec)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn value(&self, x: f64) -> f64 {
        (self.value)(x)
    }

    pub fn marginal(&self, x: f64) -> f64 {
        (self.marginal)(x)
    }

    pub fn inverse_marginal(&self, y: f64) -> f64 {
        (self.inverse_marginal)(y)
    }

    fn check_round_trip(&self) -> Result<()> {
        let mut prev = f64::INFINITY;
        for j in 0..=80 {
            let x = 10f64.powf(-4.0 + 0.1 * j as f64);
            let m = self.marginal(x);
            if !(m > 0.0 && m < prev) {
                return Err(Error::param("utility", format!("marginal is not positive and decreasing at x = {x:e}")));
            }
            prev = m;
            let back = self.inverse_marginal(m);
            if (back - x).abs() > ROUND_TRIP_TOL * x.max(1.0) {
                return Err(Error::param(
                    "utility",
                    format!("I(U'(x)) = {back:e} for x = {x:e}"),
                ));
            }
        }
        Ok(())
    }
}

impl FromStr for UtilitySpec {
    type Err = Error;

    /// `log` or `power:a`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "log" {
            return Ok(Self::log());
        }
        if let Some(a) = s.strip_prefix("power:") {
            let a: f64 = a
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad power exponent `{a}`")))?;
            return Self::power(a).map_err(|e| Error::Config(e.to_string()));
        }
        Err(Error::Config(format!("unknown utility `{s}` (expected log or power:a)")))
    }
}

/// Terminal `(Z_T, v V̄*_T)` per path.
fn terminal_pairs(v: f64, bundle: &PathBundle) -> Result<Vec<(f64, f64)>> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::param("v", format!("initial wealth {v} must be positive")));
    }
    let k = bundle.terminal_node();
    Ok((0..bundle.n_paths)
        .map(|p| (bundle.deflator.value(p, k), v * bundle.gop.value(p, k)))
        .collect())
}

fn dual_samples(utility: &UtilitySpec, pairs: &[(f64, f64)], y: f64) -> Result<Vec<f64>> {
    let out: Vec<f64> = pairs
        .par_iter()
        .map(|(z, g)| z * utility.inverse_marginal(y / g))
        .collect();
    match out.iter().position(|x| !x.is_finite()) {
        Some(p) => Err(Error::NonFinite(format!("inverse marginal utility on path {p} at y = {y:e}"))),
        None => Ok(out),
    }
}

fn dual_mean(utility: &UtilitySpec, pairs: &[(f64, f64)], y: f64) -> Result<f64> {
    let s = dual_samples(utility, pairs, y)?;
    Ok(stats::neumaier_sum(s) / pairs.len() as f64)
}

/// Monte Carlo `W(y) = E[Z_T I(y / (v V̄*_T))]` on the bundle.
pub fn dual_value(utility: &UtilitySpec, v: f64, y: f64, bundle: &PathBundle) -> Result<f64> {
    if !(y > 0.0 && y.is_finite()) {
        return Err(Error::param("y", format!("multiplier {y} must be positive")));
    }
    dual_mean(utility, &terminal_pairs(v, bundle)?, y)
}

/// `W` along an increasing ladder of multipliers. Fails unless the values are
/// non-increasing and strictly decreasing while positive.
pub fn dual_ladder(utility: &UtilitySpec, v: f64, ys: &[f64], bundle: &PathBundle) -> Result<Vec<f64>> {
    if ys.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::param("y", "ladder must be strictly increasing"));
    }
    let pairs = terminal_pairs(v, bundle)?;
    let values = ys
        .iter()
        .map(|&y| dual_mean(utility, &pairs, y))
        .collect::<Result<Vec<_>>>()?;
    for w in values.windows(2) {
        if w[1] > w[0] || (w[1] == w[0] && w[0] > 0.0) {
            return Err(Error::Numerical(format!("dual function not decreasing: {} then {}", w[0], w[1])));
        }
    }
    Ok(values)
}

fn solve_on(utility: &UtilitySpec, v: f64, pairs: &[(f64, f64)]) -> Result<f64> {
    let w = |y: f64| dual_mean(utility, pairs, y);
    let close = |x: f64| (x - v).abs() <= LAGRANGE_TOL * v;
    let w1 = w(1.0)?;
    if close(w1) {
        return Ok(1.0);
    }
    // W is decreasing: too much wealth means the multiplier must grow.
    let grow = w1 > v;
    let (mut lo, mut hi) = (1.0f64, 1.0f64);
    let mut found = false;
    for _ in 0..MAX_BRACKET_STEPS {
        if grow {
            lo = hi;
            hi *= 2.0;
            let x = w(hi)?;
            if close(x) {
                return Ok(hi);
            }
            if x < v {
                found = true;
                break;
            }
        } else {
            hi = lo;
            lo *= 0.5;
            let x = w(lo)?;
            if close(x) {
                return Ok(lo);
            }
            if x > v {
                found = true;
                break;
            }
        }
    }
    if !found {
        return Err(Error::Numerical(format!(
            "no multiplier bracket within {MAX_BRACKET_STEPS} doublings"
        )));
    }
    loop {
        let mid = (lo * hi).sqrt();
        if !(mid > lo && mid < hi) {
            let (a, b) = (w(lo)? - v, w(hi)? - v);
            let best = if a.abs() <= b.abs() { (lo, a) } else { (hi, b) };
            if best.1.abs() <= LAGRANGE_TOL * v {
                return Ok(best.0);
            }
            return Err(Error::Numerical(format!(
                "multiplier search stalled with |W - v| = {:e}",
                best.1.abs()
            )));
        }
        let x = w(mid)?;
        if close(x) {
            return Ok(mid);
        }
        if x > v {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

/// The multiplier `y*` with `W(y*) = v` on the fixed sample.
pub fn solve_lagrange(utility: &UtilitySpec, v: f64, bundle: &PathBundle) -> Result<f64> {
    solve_on(utility, v, &terminal_pairs(v, bundle)?)
}

/// Optimal discounted terminal wealth `I(y* / (v V̄*_T))` per path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalWealth {
    pub utility: String,
    pub v: f64,
    pub y_star: f64,
    pub terminal: Vec<f64>,
    /// `E[Z_T X]`; equals `v` up to the multiplier tolerance.
    pub budget: f64,
    /// Kurtosis of `Z_T X`, the integrand of the dual function.
    pub integrand_kurtosis: f64,
    /// Set when the kurtosis is too large to trust that `W` is finite.
    pub note: Option<String>,
}

pub fn optimal_terminal_wealth(utility: &UtilitySpec, v: f64, bundle: &PathBundle) -> Result<OptimalWealth> {
    let pairs = terminal_pairs(v, bundle)?;
    let y_star = solve_on(utility, v, &pairs)?;
    let terminal: Vec<f64> = pairs
        .par_iter()
        .map(|(_, g)| utility.inverse_marginal(y_star / g))
        .collect();
    let integrand: Vec<f64> = pairs.iter().zip(&terminal).map(|((z, _), x)| z * x).collect();
    let budget = stats::neumaier_sum(integrand.iter().copied()) / pairs.len() as f64;
    let integrand_kurtosis = stats::kurtosis(&integrand);
    let note = (integrand_kurtosis >= KURTOSIS_WARNING)
        .then(|| "hypothesis not verifiable at this sample size".to_string());
    Ok(OptimalWealth {
        utility: utility.label().to_string(),
        v,
        y_star,
        terminal,
        budget,
        integrand_kurtosis,
        note,
    })
}

/// `E[U(X)]` with its standard error.
pub fn expected_utility(utility: &UtilitySpec, wealth: &[f64]) -> Result<MeanEstimate> {
    let u: Vec<f64> = wealth.iter().map(|x| utility.value(*x)).collect();
    stats::mean_stderr(&u)
}

fn discounted_claim(claim: &Claim, bundle: &PathBundle) -> Result<Vec<f64>> {
    let k = bundle.terminal_node();
    Ok(claim
        .evaluate(bundle)?
        .iter()
        .enumerate()
        .map(|(p, h)| h / bundle.savings.value(p, k))
        .collect())
}

/// `p(H) = E[U'(X) H̄] / E[U'(X) X / v]` for the optimal terminal wealth `X`,
/// with a delta-method standard error.
pub fn indifference_price(
    utility: &UtilitySpec,
    optimal: &OptimalWealth,
    claim: &Claim,
    bundle: &PathBundle,
) -> Result<PriceEstimate> {
    if optimal.terminal.len() != bundle.n_paths {
        return Err(Error::Dimension("optimal wealth and bundle differ in path count".into()));
    }
    let h = discounted_claim(claim, bundle)?;
    let mut num = Vec::with_capacity(h.len());
    let mut den = Vec::with_capacity(h.len());
    for (x, hb) in optimal.terminal.iter().zip(&h) {
        let m = utility.marginal(*x);
        num.push(m * hb);
        den.push(m * x / optimal.v);
    }
    let ratio = stats::ratio_of_means(&num, &den)?;
    Ok(PriceEstimate {
        value: ratio.mean,
        stderr: ratio.stderr,
        n_paths: ratio.n,
        method: Method::UtilityIndifference,
        kurtosis: stats::kurtosis(&num),
    })
}

/// Solves for the optimal wealth and prices the claim in one call.
pub fn indifference_price_for(
    utility: &UtilitySpec,
    v: f64,
    claim: &Claim,
    bundle: &PathBundle,
) -> Result<(OptimalWealth, PriceEstimate)> {
    let opt = optimal_terminal_wealth(utility, v, bundle)?;
    let price = indifference_price(utility, &opt, claim, bundle)?;
    Ok((opt, price))
}

/// Forward difference in `eps` of `E[U((v - eps) X / v + eps H̄ / p)]` with the optimal
/// terminal wealth held fixed: diverting `eps` of capital into the claim at price `p`.
/// Vanishes to first order at the indifference price.
pub fn marginal_utility_gain(
    utility: &UtilitySpec,
    optimal: &OptimalWealth,
    claim: &Claim,
    bundle: &PathBundle,
    price: f64,
    eps: f64,
) -> Result<f64> {
    if !(price > 0.0 && eps > 0.0 && eps < optimal.v) {
        return Err(Error::param("eps", "need price > 0 and 0 < eps < v"));
    }
    let h = discounted_claim(claim, bundle)?;
    let v = optimal.v;
    let diffs: Vec<f64> = optimal
        .terminal
        .iter()
        .zip(&h)
        .map(|(x, hb)| utility.value((v - eps) / v * x + eps * hb / price) - utility.value(*x))
        .collect();
    Ok(stats::neumaier_sum(diffs) / (bundle.n_paths as f64 * eps))
}
