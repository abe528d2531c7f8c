//! Real polynomials in ascending-coefficient form.

use alloc::vec::Vec;

/// Number of scan cells used to bracket sign changes.
pub const ROOT_SCAN_POINTS: usize = 10_000;

/// Absolute bracket width at which root refinement stops.
pub const ROOT_TOL: f64 = 1e-12;

/// `c_0 + c_1 x + c_2 x^2 + ...`
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        Self { coeffs }
    }

    pub fn zero() -> Self {
        Self { coeffs: Vec::new() }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(alloc::vec![c])
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn derivative(&self) -> Self {
        Self::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, &c)| c * k as f64)
                .collect(),
        )
    }

    /// Antiderivative vanishing at 0.
    pub fn antiderivative(&self) -> Self {
        let mut out = Vec::with_capacity(self.coeffs.len() + 1);
        out.push(0.0);
        out.extend(self.coeffs.iter().enumerate().map(|(k, &c)| c / (k as f64 + 1.0)));
        Self::new(out)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.coeffs.iter().map(|c| c * s).collect())
    }

    pub fn add(&self, other: &Self) -> Self {
        let n = self.coeffs.len().max(other.coeffs.len());
        Self::new(
            (0..n)
                .map(|k| self.coeffs.get(k).copied().unwrap_or(0.0) + other.coeffs.get(k).copied().unwrap_or(0.0))
                .collect(),
        )
    }

    /// Roots in the open interval `(lo, hi)` at which the polynomial changes
    /// sign, sorted ascending. Roots of even multiplicity are skipped.
    pub fn sign_change_roots(&self, lo: f64, hi: f64) -> Vec<f64> {
        let mut roots = Vec::new();
        if self.degree().unwrap_or(0) == 0 || !(lo < hi) {
            return roots;
        }
        let n = ROOT_SCAN_POINTS;
        let at = |i: usize| {
            if i == n {
                hi
            } else {
                lo + (hi - lo) * (i as f64) / (n as f64)
            }
        };
        // Sign of the last nonzero sample and where it was seen.
        let mut last: Option<(f64, f64)> = None;
        for i in 0..=n {
            let x = at(i);
            let v = self.eval(x);
            if v == 0.0 {
                continue;
            }
            if let Some((xl, vl)) = last {
                if (vl < 0.0) != (v < 0.0) {
                    roots.push(self.refine(xl, x));
                }
            }
            last = Some((x, v));
        }
        let tol = ROOT_TOL * (1.0 + lo.abs().max(hi.abs()));
        roots.retain(|&r| r > lo + tol && r < hi - tol);
        roots.dedup_by(|a, b| (*a - *b).abs() <= tol);
        roots
    }

    /// Bisection on a sign-change bracket followed by guarded Newton steps.
    fn refine(&self, mut a: f64, mut b: f64) -> f64 {
        let mut fa = self.eval(a);
        for _ in 0..200 {
            let tol = ROOT_TOL * (1.0 + a.abs().max(b.abs()));
            if b - a <= tol {
                break;
            }
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            let fm = self.eval(m);
            if fm == 0.0 {
                return m;
            }
            if (fa < 0.0) == (fm < 0.0) {
                a = m;
                fa = fm;
            } else {
                b = m;
            }
        }
        let mut x = 0.5 * (a + b);
        let d = self.derivative();
        for _ in 0..3 {
            let slope = d.eval(x);
            if slope == 0.0 {
                break;
            }
            let next = x - self.eval(x) / slope;
            if next < a || next > b {
                break;
            }
            x = next;
        }
        x
    }

    /// Minimum and maximum over `[lo, hi]` via endpoints and interior
    /// critical points.
    pub fn range_on(&self, lo: f64, hi: f64) -> (f64, f64) {
        let mut min = self.eval(lo).min(self.eval(hi));
        let mut max = self.eval(lo).max(self.eval(hi));
        for c in self.derivative().sign_change_roots(lo, hi) {
            let v = self.eval(c);
            min = min.min(v);
            max = max.max(v);
        }
        (min, max)
    }

    /// `sup |p|` over `[lo, hi]`.
    pub fn sup_abs_on(&self, lo: f64, hi: f64) -> f64 {
        let (a, b) = self.range_on(lo, hi);
        a.abs().max(b.abs())
    }
}
