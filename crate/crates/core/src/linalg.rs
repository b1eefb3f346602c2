//! Dense helpers around the singular value decomposition.

use nalgebra::{DMatrix, DVector};

/// Relative tolerance on singular values used for every numerical rank decision.
pub const RANK_TOL: f64 = 1e-10;

/// Minimum-norm least-squares solve of `a x = b`, plus the numerical rank of `a`.
#[derive(Debug, Clone)]
pub struct MinNormSolve {
    pub solution: DVector<f64>,
    pub rank: usize,
    /// Smallest over largest singular value (0 when `a` is rank deficient in shape).
    pub sv_ratio: f64,
}

pub fn min_norm_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> MinNormSolve {
    let (rows, cols) = a.shape();
    let svd = a.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let min_sv = svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let cutoff = RANK_TOL * max_sv;
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
    let sv_ratio = if max_sv > 0.0 && svd.singular_values.len() == rows.min(cols) {
        if rows <= cols {
            min_sv / max_sv
        } else {
            // more rows than columns: row rank is at most `cols`
            0.0
        }
    } else {
        0.0
    };
    let solution = if max_sv == 0.0 {
        DVector::zeros(cols)
    } else {
        svd.solve(b, cutoff)
            .expect("both singular vector sets were requested")
    };
    MinNormSolve {
        solution,
        rank,
        sv_ratio,
    }
}

/// `v - a a⁺ v`: the component of `v` orthogonal to the column space of `a`.
///
/// Equivalently, the orthogonal projection of `v` onto the kernel of `a'`.
pub fn range_residual(a: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    let x = min_norm_solve(a, v).solution;
    v - a * x
}

/// Solves the symmetric positive (semi)definite system `m x = b`, falling back to
/// the pseudo-inverse when a Cholesky factorization is not available.
pub fn spd_solve(m: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    match m.clone().cholesky() {
        Some(ch) => ch.solve(b),
        None => min_norm_solve(m, b).solution,
    }
}
