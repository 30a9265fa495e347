//! Adaptive 1-D quadrature of log-integrands.
//!
//! Evidence oracles integrate products of densities whose magnitude varies by
//! hundreds of nats across θ, so the integrand is rescaled by its maximum
//! before adaptive Simpson refinement: the stated absolute tolerance applies
//! to the unit-scaled integrand, giving near-relative accuracy on the log.

use crate::error::{Error, Result};

/// Initial uniform panels; fine enough that unit-width features of the model
/// integrands cannot fall between samples.
const INITIAL_PANELS: usize = 64;
const MAX_DEPTH: usize = 48;

/// `log ∫_{lo}^{hi} exp(g(z)) dz` with absolute tolerance `tol` on the
/// max-scaled integrand.
pub fn log_integral(g: &dyn Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    assert!(hi > lo);
    // scale from a coarse scan
    let scan = 4 * INITIAL_PANELS;
    let mut gmax = f64::NEG_INFINITY;
    for i in 0..=scan {
        let z = lo + (hi - lo) * i as f64 / scan as f64;
        let v = g(z);
        if v > gmax {
            gmax = v;
        }
    }
    if gmax == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    if !gmax.is_finite() {
        return Err(Error::QuadratureFailed { lo, hi, tol });
    }
    // cap in case the scan undershot the true maximum of a narrow feature
    let h = |z: f64| (g(z) - gmax).min(700.0).exp();

    let mut total = 0.0;
    let width = (hi - lo) / INITIAL_PANELS as f64;
    for i in 0..INITIAL_PANELS {
        let a = lo + i as f64 * width;
        let b = a + width;
        let fa = h(a);
        let fm = h(0.5 * (a + b));
        let fb = h(b);
        let s = simpson(fa, fm, fb, b - a);
        total += adaptive(&h, a, b, fa, fm, fb, s, tol / INITIAL_PANELS as f64, MAX_DEPTH)
            .ok_or(Error::QuadratureFailed { lo, hi, tol })?;
    }
    if !(total > 0.0) {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(gmax + total.ln())
}

/// Convenience wrapper: integrate on `[centre - half, centre + half]`, and if
/// the integrand still carries mass at the endpoints, widen and retry before
/// giving up.
pub fn log_integral_widening(
    g: &dyn Fn(f64) -> f64,
    centre: f64,
    half_width: f64,
    tol: f64,
) -> Result<f64> {
    let mut half = half_width;
    for _ in 0..3 {
        let (lo, hi) = (centre - half, centre + half);
        let v = log_integral(g, lo, hi, tol)?;
        let edge = g(lo).max(g(hi));
        if !v.is_finite() || edge < v - 34.0 {
            // endpoint mass below ~1e-15 of the integral
            return Ok(v);
        }
        half *= 2.0;
    }
    Err(Error::QuadratureFailed { lo: centre - half, hi: centre + half, tol })
}

fn simpson(fa: f64, fm: f64, fb: f64, width: f64) -> f64 {
    width / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive(
    h: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    s: f64,
    tol: f64,
    depth: usize,
) -> Option<f64> {
    let m = 0.5 * (a + b);
    let fml = h(0.5 * (a + m));
    let fmr = h(0.5 * (m + b));
    let sl = simpson(fa, fml, fm, m - a);
    let sr = simpson(fm, fmr, fb, b - m);
    let err = sl + sr - s;
    if err.abs() <= 15.0 * tol || (b - a) < 1e-14 {
        return Some(sl + sr + err / 15.0);
    }
    if depth == 0 {
        return None;
    }
    let left = adaptive(h, a, m, fa, fml, fm, sl, tol / 2.0, depth - 1)?;
    let right = adaptive(h, m, b, fm, fmr, fb, sr, tol / 2.0, depth - 1)?;
    Some(left + right)
}
