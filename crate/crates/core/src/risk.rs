//! Allocation-free evaluation of the market price of risk and the growth-optimal
//! weights at a single coefficient snapshot. The public, validated entry points
//! live in `diagnostics` and `gop`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, RANK_TOL};
use crate::market::CoefficientSnapshot;

/// Writes `theta = sigma⁺ (mu - r 1)` into `out`.
///
/// With `allow_deficient` false the volatility must have full row rank.
pub(crate) fn theta_into(
    snap: &CoefficientSnapshot,
    t: f64,
    allow_deficient: bool,
    out: &mut [f64],
) -> Result<()> {
    if snap.n_assets() == 1 && snap.n_drivers() == 1 {
        let s = snap.sigma[(0, 0)];
        if s == 0.0 {
            if !allow_deficient {
                return Err(Error::RankDeficient { t, ratio: 0.0 });
            }
            out[0] = 0.0;
        } else {
            out[0] = (snap.mu[0] - snap.r) / s;
        }
    } else {
        let solve = linalg::min_norm_solve(&snap.sigma, &snap.excess_return());
        if solve.rank < snap.n_assets() && !allow_deficient {
            return Err(Error::RankDeficient {
                t,
                ratio: solve.sv_ratio,
            });
        }
        out.copy_from_slice(solve.solution.as_slice());
    }
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("market price of risk at t={t}")));
    }
    Ok(())
}

/// Writes `pi* = (sigma sigma')⁻¹ sigma theta` into `out`.
pub(crate) fn gop_weights_into(
    snap: &CoefficientSnapshot,
    theta: &[f64],
    t: f64,
    out: &mut [f64],
) -> Result<()> {
    if snap.n_assets() == 1 && snap.n_drivers() == 1 {
        let s = snap.sigma[(0, 0)];
        if s == 0.0 {
            return Err(Error::RankDeficient { t, ratio: 0.0 });
        }
        out[0] = theta[0] / s;
    } else {
        let gram: DMatrix<f64> = &snap.sigma * snap.sigma.transpose();
        let rhs = &snap.sigma * DVector::from_column_slice(theta);
        let solve = linalg::min_norm_solve(&gram, &rhs);
        if solve.rank < snap.n_assets() || solve.sv_ratio <= RANK_TOL * RANK_TOL {
            return Err(Error::RankDeficient {
                t,
                ratio: solve.sv_ratio.sqrt(),
            });
        }
        out.copy_from_slice(linalg::spd_solve(&gram, &rhs).as_slice());
    }
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("growth-optimal weights at t={t}")));
    }
    Ok(())
}

/// `sigma' pi` as a `d`-vector.
#[inline]
pub(crate) fn vol_exposure(snap: &CoefficientSnapshot, pi: &[f64], out: &mut [f64]) {
    let (n, d) = snap.sigma.shape();
    for (j, o) in out.iter_mut().enumerate().take(d) {
        let mut acc = 0.0;
        for (i, p) in pi.iter().enumerate().take(n) {
            acc += snap.sigma[(i, j)] * p;
        }
        *o = acc;
    }
}
