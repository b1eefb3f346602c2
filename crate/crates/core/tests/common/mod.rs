//! Independent reference values for the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

/// Composite Simpson rule on `[a, b]` with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal CDF by quadrature of the density.
pub fn normal_cdf(x: f64) -> f64 {
    let half = simpson(normal_pdf, 0.0, x.abs(), 4000);
    if x >= 0.0 {
        0.5 + half
    } else {
        0.5 - half
    }
}

/// Black–Scholes call with zero rate: price and share delta.
pub fn bs_call(s: f64, k: f64, sigma: f64, tau: f64) -> (f64, f64) {
    let v = sigma * tau.sqrt();
    let d1 = ((s / k).ln() + 0.5 * v * v) / v;
    let d2 = d1 - v;
    (s * normal_cdf(d1) - k * normal_cdf(d2), normal_cdf(d1))
}

/// `E[s / R_t]` for a three-dimensional Bessel process started at `s`, by quadrature
/// of its transition density `(y/s)(phi_t(y - s) - phi_t(y + s))` against `s/y`.
pub fn bessel_inverse_mean(s: f64, t: f64) -> f64 {
    let sd = t.sqrt();
    let phi = |x: f64| normal_pdf(x / sd) / sd;
    simpson(|y| phi(y - s) - phi(y + s), 0.0, s + 14.0 * sd, 20_000)
}

#[test]
fn oracles_self_check() {
    assert!((normal_cdf(1.0) - 0.841344746068543).abs() < 1e-12);
    assert!((bs_call(100.0, 100.0, 0.2, 1.0).0 - 7.965567455405804).abs() < 1e-9);
    assert!((bessel_inverse_mean(1.0, 1.0) - 0.682689492137086).abs() < 1e-10);
}
