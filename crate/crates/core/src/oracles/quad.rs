//! Adaptive composite Simpson quadrature.

use crate::error::{Error, Result};

/// Quadrature parameters for the Gaussian-mixture entropy integral.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureSpec {
    /// Absolute tolerance, split across panels as they subdivide.
    pub abs_tol: f64,
    /// Integration window half-width is `√P + window_sigmas·√t`; beyond 12
    /// standard deviations the Gaussian tails are below 1e-30.
    pub window_sigmas: f64,
    /// Maximum bisection depth before giving up.
    pub max_depth: u32,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            window_sigmas: 12.0,
            max_depth: 48,
        }
    }
}

fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
    h / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(Error::numeric(format!(
            "adaptive Simpson did not converge on [{a}, {b}] (residual {delta:e})"
        )));
    }
    let l = recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?;
    let r = recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?;
    Ok(l + r)
}

/// Integrate `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    tol: f64,
    max_depth: u32,
) -> Result<f64> {
    if !(b > a) {
        return Err(Error::input("integration bounds must satisfy a < b"));
    }
    if !(tol > 0.0) {
        return Err(Error::input("tolerance must be positive"));
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson(fa, fm, fb, b - a);
    recurse(f, a, b, fa, fm, fb, whole, tol, max_depth)
}
