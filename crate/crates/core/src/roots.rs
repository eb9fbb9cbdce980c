//! Scalar root finders used by the contract solver.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub x: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// Bisection on a sign-changing bracket. Runs until the bracket cannot be
/// halved any further in floating point and returns the endpoint with the
/// smaller residual.
pub fn bisect<F>(mut f: F, mut lo: f64, mut hi: f64, max_iter: usize) -> Result<Root>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut f_lo = f(lo)?;
    let mut f_hi = f(hi)?;
    if f_lo == 0.0 {
        return Ok(Root { x: lo, residual: 0.0, iterations: 0 });
    }
    if f_hi == 0.0 {
        return Ok(Root { x: hi, residual: 0.0, iterations: 0 });
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::NoBracket(format!(
            "f({lo:.6e}) = {f_lo:.6e} and f({hi:.6e}) = {f_hi:.6e} have the same sign"
        )));
    }
    let mut iterations = 0;
    while iterations < max_iter {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        iterations += 1;
        let f_mid = f(mid)?;
        if f_mid == 0.0 {
            return Ok(Root { x: mid, residual: 0.0, iterations });
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
            f_hi = f_mid;
        }
    }
    Ok(if f_lo.abs() <= f_hi.abs() {
        Root { x: lo, residual: f_lo, iterations }
    } else {
        Root { x: hi, residual: f_hi, iterations }
    })
}

/// Newton's method kept inside a sign-changing bracket; any step that leaves
/// the bracket (or fails to shrink it fast enough) falls back to bisection.
/// `fdf` returns the value and derivative.
pub fn safeguarded_newton<F>(mut fdf: F, mut lo: f64, mut hi: f64, x_tol: f64, max_iter: usize) -> Result<Root>
where
    F: FnMut(f64) -> Result<(f64, f64)>,
{
    let (f_lo, _) = fdf(lo)?;
    let (f_hi, _) = fdf(hi)?;
    if f_lo == 0.0 {
        return Ok(Root { x: lo, residual: 0.0, iterations: 0 });
    }
    if f_hi == 0.0 {
        return Ok(Root { x: hi, residual: 0.0, iterations: 0 });
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::NoBracket(format!(
            "f({lo:.6e}) = {f_lo:.6e} and f({hi:.6e}) = {f_hi:.6e} have the same sign"
        )));
    }
    let lo_sign = f_lo.signum();
    let mut x = 0.5 * (lo + hi);
    let mut best = Root { x, residual: f64::INFINITY, iterations: 0 };
    for iterations in 1..=max_iter {
        let (fx, dfx) = fdf(x)?;
        if fx.abs() < best.residual.abs() {
            best = Root { x, residual: fx, iterations };
        }
        if fx == 0.0 {
            return Ok(best);
        }
        if fx.signum() == lo_sign {
            lo = x;
        } else {
            hi = x;
        }
        let width = hi - lo;
        let newton = x - fx / dfx;
        let next = if dfx.is_finite() && dfx != 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let step = (next - x).abs();
        if step <= x_tol * x.abs().max(1.0) || width <= x_tol * x.abs().max(1.0) {
            let (f_next, _) = fdf(next)?;
            if f_next.abs() < best.residual.abs() {
                best = Root { x: next, residual: f_next, iterations };
            }
            return Ok(best);
        }
        x = next;
    }
    Ok(best)
}
