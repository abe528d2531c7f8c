//! Adaptive Simpson quadrature.

use thiserror::Error;

pub const DEFAULT_TOL: f64 = 1e-10;
const MAX_DEPTH: u32 = 48;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("quadrature did not reach tolerance {tol:e}: estimate {estimate}, error bound {achieved:e}")]
pub struct QuadratureError {
    pub estimate: f64,
    pub achieved: f64,
    pub tol: f64,
}

/// `int_a^b f` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> Result<f64, QuadratureError> {
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let mut worst = 0.0;
    let v = step(&mut f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH, &mut worst);
    if worst > tol {
        Err(QuadratureError {
            estimate: v,
            achieved: worst,
            tol,
        })
    } else {
        Ok(v)
    }
}

#[allow(clippy::too_many_arguments)]
fn step<F: FnMut(f64) -> f64>(
    f: &mut F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    worst: &mut f64,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        if depth == 0 {
            *worst += delta.abs() / 15.0;
        }
        return left + right + delta / 15.0;
    }
    step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, worst)
        + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, worst)
}
