//! One-dimensional searches: golden-section maximization and bisection.

use crate::error::{invalid, Error, Result};

/// 1 / phi, the golden-section contraction factor.
const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoldenSection {
    /// Absolute tolerance on the bracket width.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for GoldenSection {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iterations: 200,
        }
    }
}

/// Result of a bracketing search: the best abscissa and the final bracket.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracketed {
    pub x: f64,
    pub lo: f64,
    pub hi: f64,
    pub iterations: usize,
}

impl GoldenSection {
    /// Maximizes a unimodal `f` on `[lo, hi]`.
    pub fn maximize<F>(&self, f: F, lo: f64, hi: f64) -> Result<Bracketed>
    where
        F: Fn(f64) -> f64,
    {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(invalid(
                "bracket",
                format!("[{lo}, {hi}] is not a finite interval"),
            ));
        }
        if !(self.tolerance > 0.0) {
            return Err(invalid("tolerance", "must be positive"));
        }
        let (mut a, mut b) = (lo, hi);
        let mut x1 = b - INV_PHI * (b - a);
        let mut x2 = a + INV_PHI * (b - a);
        let mut f1 = f(x1);
        let mut f2 = f(x2);
        let mut iterations = 0;
        while b - a > self.tolerance {
            if iterations == self.max_iterations {
                return Err(Error::NoConvergence {
                    what: "golden-section search",
                    iterations,
                });
            }
            iterations += 1;
            if f1 >= f2 {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - INV_PHI * (b - a);
                f1 = f(x1);
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + INV_PHI * (b - a);
                f2 = f(x2);
            }
        }
        let x = if f1 >= f2 { x1 } else { x2 };
        Ok(Bracketed {
            x,
            lo: a,
            hi: b,
            iterations,
        })
    }
}

/// Finds a root of `f` in `[lo, hi]` by bisection. The endpoints must have
/// opposite signs (or one of them must be a root). Iterates until the
/// bracket collapses to adjacent floats.
pub fn bisect<F>(f: F, lo: f64, hi: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let (mut a, mut b) = (lo, hi);
    let mut fa = f(a);
    let fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() || fa.is_nan() || fb.is_nan() {
        return Err(invalid(
            "bracket",
            format!("f({a}) = {fa} and f({b}) = {fb} do not bracket a root"),
        ));
    }
    // 2100 halvings exhaust any finite f64 interval.
    for _ in 0..2100 {
        let mid = a + 0.5 * (b - a);
        if mid <= a || mid >= b {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    Ok(if fa.abs() <= f(b).abs() { a } else { b })
}
