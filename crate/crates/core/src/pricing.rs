//! Real-world prices, zero-coupon bonds, upper hedging prices and the comparison
//! with risk-neutral values.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{martingale_gap, GapVerdict, MartingaleGap};
use crate::error::{Error, Result};
use crate::market::MarketModel;
use crate::sim::PathBundle;
use crate::stats::{self, MeanEstimate};

/// Kurtosis above which a price estimate is flagged as heavy-tailed.
pub const KURTOSIS_WARNING: f64 = 100.0;

/// One simulated path as seen by a payoff.
#[derive(Debug, Clone, Copy)]
pub struct PathView<'a> {
    pub times: &'a [f64],
    /// Node-major asset prices, `n_nodes * n_assets` entries.
    pub assets: &'a [f64],
    pub n_assets: usize,
    /// Savings account `S^0_T`.
    pub savings: f64,
    /// Undiscounted GOP `V^{pi*}_T` with unit initial wealth.
    pub gop: f64,
}

impl PathView<'_> {
    pub fn terminal(&self, i: usize) -> f64 {
        self.assets[self.assets.len() - self.n_assets + i]
    }

    pub fn at(&self, k: usize, i: usize) -> f64 {
        self.assets[k * self.n_assets + i]
    }
}

type Payoff = dyn Fn(&PathView) -> f64 + Send + Sync;
pub type TerminalPayoff = dyn Fn(f64) -> f64 + Send + Sync;

/// A non-negative contingent claim paid at the horizon.
#[derive(Clone)]
pub struct Claim {
    pub label: String,
    pub path_dependent: bool,
    payoff: Arc<Payoff>,
    /// Set when the payoff is a function of the first asset's terminal price only.
    terminal: Option<Arc<TerminalPayoff>>,
}

impl fmt::Debug for Claim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Claim")
            .field("label", &self.label)
            .field("path_dependent", &self.path_dependent)
            .finish()
    }
}

impl Claim {
    pub fn new<F>(label: &str, path_dependent: bool, payoff: F) -> Self
    where
        F: Fn(&PathView) -> f64 + Send + Sync + 'static,
    {
        Self {
            label: label.to_string(),
            path_dependent,
            payoff: Arc::new(payoff),
            terminal: None,
        }
    }

    /// Claim paying `f(S_T)` on the first asset.
    pub fn terminal<F>(label: &str, f: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let f = Arc::new(f);
        let g = f.clone();
        Self {
            label: label.to_string(),
            path_dependent: false,
            payoff: Arc::new(move |v| g(v.terminal(0))),
            terminal: Some(f),
        }
    }

    pub fn call(strike: f64) -> Self {
        Self::terminal(&format!("call:{strike}"), move |s| (s - strike).max(0.0))
    }

    pub fn put(strike: f64) -> Self {
        Self::terminal(&format!("put:{strike}"), move |s| (strike - s).max(0.0))
    }

    /// One unit of currency at the horizon.
    pub fn zcb() -> Self {
        Self::terminal("zcb", |_| 1.0)
    }

    /// The savings account `S^0_T`.
    pub fn savings() -> Self {
        Self::new("savings", false, |v| v.savings)
    }

    pub fn stock() -> Self {
        Self::terminal("stock", |s| s)
    }

    /// The GOP itself, `V^{pi*}_T`.
    pub fn benchmark() -> Self {
        Self::new("benchmark", false, |v| v.gop)
    }

    /// `sum_j c_j S_T^j` on the first asset; negative values are reported as errors.
    pub fn polynomial(coeffs: Vec<f64>) -> Self {
        let label = format!(
            "poly:{}",
            coeffs.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
        );
        Self::terminal(&label, move |s| coeffs.iter().rev().fold(0.0, |acc, c| acc * s + c))
    }

    /// `a H_1 + b H_2`.
    pub fn combine(a: f64, h1: &Claim, b: f64, h2: &Claim) -> Self {
        let (p1, p2) = (h1.payoff.clone(), h2.payoff.clone());
        let terminal: Option<Arc<TerminalPayoff>> = match (&h1.terminal, &h2.terminal) {
            (Some(f1), Some(f2)) => {
                let (f1, f2) = (f1.clone(), f2.clone());
                Some(Arc::new(move |s| a * f1(s) + b * f2(s)))
            }
            _ => None,
        };
        Self {
            label: format!("{a}*{}+{b}*{}", h1.label, h2.label),
            path_dependent: h1.path_dependent || h2.path_dependent,
            payoff: Arc::new(move |v| a * p1(v) + b * p2(v)),
            terminal,
        }
    }

    pub fn payoff(&self, view: &PathView) -> f64 {
        (self.payoff)(view)
    }

    pub(crate) fn terminal_payoff_arc(&self) -> Option<Arc<TerminalPayoff>> {
        self.terminal.clone()
    }

    /// The payoff as a function of the first asset's terminal price, when it is one.
    pub fn terminal_payoff(&self) -> Option<&TerminalPayoff> {
        self.terminal.as_deref()
    }

    /// Payoff on every path of the bundle.
    pub fn evaluate(&self, bundle: &PathBundle) -> Result<Vec<f64>> {
        let node = bundle.terminal_node();
        let n = bundle.assets.width();
        let h: Vec<f64> = (0..bundle.n_paths)
            .into_par_iter()
            .map(|p| {
                self.payoff(&PathView {
                    times: bundle.grid.times(),
                    assets: bundle.assets.path(p),
                    n_assets: n,
                    savings: bundle.savings.value(p, node),
                    gop: bundle.gop_undiscounted(p, node),
                })
            })
            .collect();
        for (p, x) in h.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::NonFinite(format!("payoff of `{}` on path {p}", self.label)));
            }
            if *x < 0.0 {
                return Err(Error::param(
                    "claim",
                    format!("`{}` pays {x} < 0 on path {p}; claims must be non-negative", self.label),
                ));
            }
        }
        Ok(h)
    }
}

impl FromStr for Claim {
    type Err = Error;

    /// `call:K`, `put:K`, `zcb`, `savings`, `stock`, `benchmark` or `poly:c0,c1,...`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let number = |a: Option<&str>| -> Result<f64> {
            a.and_then(|x| x.parse::<f64>().ok())
                .filter(|x| x.is_finite() && *x >= 0.0)
                .ok_or_else(|| Error::Config(format!("claim `{s}` needs a non-negative strike")))
        };
        match kind {
            "call" => Ok(Claim::call(number(arg)?)),
            "put" => Ok(Claim::put(number(arg)?)),
            "zcb" => Ok(Claim::zcb()),
            "savings" => Ok(Claim::savings()),
            "stock" => Ok(Claim::stock()),
            "benchmark" => Ok(Claim::benchmark()),
            "poly" => {
                let coeffs = arg
                    .ok_or_else(|| Error::Config(format!("claim `{s}` needs coefficients")))?
                    .split(',')
                    .map(|c| c.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::Config(format!("claim `{s}`: {e}")))?;
                if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
                    return Err(Error::Config(format!("claim `{s}` has bad coefficients")));
                }
                Ok(Claim::polynomial(coeffs))
            }
            _ => Err(Error::Config(format!("unknown claim `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    RealWorld,
    RiskNeutralComparison,
    ActuarialZcb,
    UpperHedging,
    UtilityIndifference,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::RealWorld => "real_world",
            Method::RiskNeutralComparison => "risk_neutral_comparison",
            Method::ActuarialZcb => "actuarial_zcb",
            Method::UpperHedging => "upper_hedging",
            Method::UtilityIndifference => "utility_indifference",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub method: Method,
    /// Sample kurtosis of the per-path samples.
    pub kurtosis: f64,
}

impl PriceEstimate {
    pub(crate) fn from_samples(samples: &[f64], method: Method) -> Result<Self> {
        let e = stats::mean_stderr(samples)?;
        Ok(Self {
            value: e.mean,
            stderr: e.stderr,
            n_paths: e.n,
            method,
            kurtosis: stats::kurtosis(samples),
        })
    }

    pub fn heavy_tailed(&self) -> bool {
        self.kurtosis > KURTOSIS_WARNING
    }

    /// `|value - reference| <= k * stderr`.
    pub fn within(&self, reference: f64, k: f64) -> bool {
        (self.value - reference).abs() <= k * self.stderr
    }
}

fn check_ratios(samples: &[f64]) -> Result<()> {
    match samples.iter().position(|x| !x.is_finite()) {
        Some(p) => Err(Error::NonFinite(format!("discounted payoff on path {p}"))),
        None => Ok(()),
    }
}

/// Per-path `H / V^{pi*}_T`.
pub fn benchmarked_payoffs(claim: &Claim, bundle: &PathBundle) -> Result<Vec<f64>> {
    let h = claim.evaluate(bundle)?;
    let node = bundle.terminal_node();
    let out: Vec<f64> = h
        .iter()
        .enumerate()
        .map(|(p, x)| x / bundle.gop_undiscounted(p, node))
        .collect();
    check_ratios(&out)?;
    Ok(out)
}

/// Per-path `H Z_T / S^0_T`, the deflator form of the same samples.
pub fn deflated_payoffs(claim: &Claim, bundle: &PathBundle) -> Result<Vec<f64>> {
    let h = claim.evaluate(bundle)?;
    let node = bundle.terminal_node();
    let out: Vec<f64> = h
        .iter()
        .enumerate()
        .map(|(p, x)| x * bundle.deflator.value(p, node) / bundle.savings.value(p, node))
        .collect();
    check_ratios(&out)?;
    Ok(out)
}

/// `E[H / V^{pi*}_T]` at time zero.
pub fn real_world_price(claim: &Claim, bundle: &PathBundle) -> Result<PriceEstimate> {
    PriceEstimate::from_samples(&benchmarked_payoffs(claim, bundle)?, Method::RealWorld)
}

/// `P(0,T) = E[1 / V^{pi*}_T]` for a maturity `t` on the bundle grid.
pub fn zero_coupon_bond(bundle: &PathBundle, t: f64) -> Result<PriceEstimate> {
    let node = bundle
        .grid
        .node_at(t)
        .ok_or_else(|| Error::param("T", format!("maturity {t} is not a grid node")))?;
    let samples: Vec<f64> = (0..bundle.n_paths)
        .map(|p| 1.0 / bundle.gop_undiscounted(p, node))
        .collect();
    check_ratios(&samples)?;
    PriceEstimate::from_samples(&samples, Method::ActuarialZcb)
}

/// `E[Z_T H / S^0_T]`. Only meaningful in a complete market (`d == N`).
pub fn upper_hedging_price(model: &MarketModel, claim: &Claim, bundle: &PathBundle) -> Result<PriceEstimate> {
    if !model.is_complete() {
        return Err(Error::Assumption(format!(
            "upper hedging price needs a complete market with as many assets as drivers; `{}` has {} assets and {} drivers",
            model.name(),
            model.n_assets(),
            model.n_drivers()
        )));
    }
    let rw = real_world_price(claim, bundle)?;
    let deflated = PriceEstimate::from_samples(&deflated_payoffs(claim, bundle)?, Method::UpperHedging)?;
    let tol = 1e-12 * (1.0 + rw.value.abs());
    if (deflated.value - rw.value).abs() > tol {
        return Err(Error::Numerical(format!(
            "deflator form {} and benchmark form {} disagree beyond {tol:e}",
            deflated.value, rw.value
        )));
    }
    Ok(PriceEstimate {
        method: Method::UpperHedging,
        ..rw
    })
}

/// Real-world price next to what risk-neutral valuation would report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskNeutralReport {
    pub real_world: PriceEstimate,
    /// Martingale test of `Z_T`.
    pub gap: MartingaleGap,
    /// `E[Z_T H / S^0_T]`, reported when `Z` looks like a true martingale.
    pub reweighted: Option<PriceEstimate>,
    /// `1 - E[Z_T]`: the shortfall of the savings account's real-world price below
    /// its risk-neutral value of one.
    pub discrepancy: MeanEstimate,
    pub note: String,
}

pub fn risk_neutral_comparison(claim: &Claim, bundle: &PathBundle) -> Result<RiskNeutralReport> {
    let real_world = real_world_price(claim, bundle)?;
    let z = bundle.deflator.terminal();
    let gap = martingale_gap(&z)?;
    let discrepancy = MeanEstimate {
        mean: 1.0 - gap.mean,
        stderr: gap.stderr,
        n: gap.n,
    };
    let (reweighted, note) = match gap.verdict {
        GapVerdict::TrueMartingaleConsistent => {
            let rw = PriceEstimate::from_samples(
                &deflated_payoffs(claim, bundle)?,
                Method::RiskNeutralComparison,
            )?;
            (
                Some(rw),
                "deflator consistent with a true martingale: risk-neutral and real-world prices coincide".to_string(),
            )
        }
        GapVerdict::StrictLocalMartingale => (
            None,
            format!(
                "deflator is a strict local martingale: E[Z_T] = {:.4}, risk-neutral pricing overvalues the savings account by {:.4}",
                gap.mean, discrepancy.mean
            ),
        ),
        GapVerdict::Inconclusive => (None, "martingale test inconclusive".to_string()),
    };
    Ok(RiskNeutralReport {
        real_world,
        gap,
        reweighted,
        discrepancy,
        note,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate_bundle, SamplingScheme, SimulationGrid};

    fn bs_bundle(n_paths: usize) -> (MarketModel, PathBundle) {
        let m = MarketModel::black_scholes(0.07, 0.2, 0.02, 100.0, 1.0).unwrap();
        let g = SimulationGrid::uniform(1.0, 8).unwrap();
        let b = simulate_bundle(&m, 3, &g, n_paths, SamplingScheme::LogEuler).unwrap();
        (m, b)
    }

    #[test]
    fn parses_claims() {
        assert_eq!("call:100".parse::<Claim>().unwrap().label, "call:100");
        assert_eq!("poly:1,0,2".parse::<Claim>().unwrap().label, "poly:1,0,2");
        assert!("call".parse::<Claim>().is_err());
        assert!("call:-1".parse::<Claim>().is_err());
        assert!("swap:1".parse::<Claim>().is_err());
        assert!("poly:a".parse::<Claim>().is_err());
    }

    #[test]
    fn polynomial_payoff() {
        let assets = [1.0, 3.0];
        let v = PathView { times: &[0.0, 1.0], assets: &assets, n_assets: 1, savings: 1.0, gop: 1.0 };
        assert_eq!(Claim::polynomial(vec![1.0, 0.0, 2.0]).payoff(&v), 19.0);
    }

    #[test]
    fn benchmark_claim_prices_to_one() {
        let (_, b) = bs_bundle(200);
        let p = real_world_price(&Claim::benchmark(), &b).unwrap();
        assert_eq!(p.value, 1.0);
        assert_eq!(p.stderr, 0.0);
    }

    #[test]
    fn negative_payoff_is_rejected() {
        let (_, b) = bs_bundle(20);
        let bad = Claim::polynomial(vec![-1.0]);
        assert!(matches!(real_world_price(&bad, &b), Err(Error::InvalidParameter { .. })));
    }

    #[test]
    fn upper_hedging_needs_complete_market() {
        let m = MarketModel::constant(
            "wide",
            0.0,
            vec![0.1],
            nalgebra::DMatrix::from_row_slice(1, 2, &[0.2, 0.1]),
            vec![1.0],
            1.0,
            false,
        )
        .unwrap();
        let g = SimulationGrid::uniform(1.0, 4).unwrap();
        let b = simulate_bundle(&m, 1, &g, 10, SamplingScheme::LogEuler).unwrap();
        assert!(matches!(
            upper_hedging_price(&m, &Claim::zcb(), &b),
            Err(Error::Assumption(_))
        ));
    }

    #[test]
    fn zcb_requires_grid_maturity() {
        let (_, b) = bs_bundle(10);
        assert!(zero_coupon_bond(&b, 0.3).is_err());
        assert!(zero_coupon_bond(&b, 0.5).is_ok());
    }
}
