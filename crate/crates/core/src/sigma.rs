//! Convex Lipschitz initial data `sigma`.
//!
//! Three input forms are supported: piecewise-linear profiles (optionally
//! smoothed by a Moreau envelope of radius `r`, which replaces each kink by
//! a parabola and adds `r |q|^2 / 2` to the conjugate), convex polynomials
//! restricted to an interval, and raw grid samples. In two dimensions the
//! profile forms combine additively, `sigma(x) = sum_k sigma_k(x_k)`.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::conjugate::{legendre_transform, ConjugateError, SampledFunction};
use crate::grid::{Axis, GridBox};
use crate::poly::Polynomial;

/// Relative tolerance of the second-difference convexity test.
pub const CONVEXITY_TOL: f64 = 1e-9;

/// Safety factor on the Lipschitz constant estimated from samples.
pub const SAMPLED_LIPSCHITZ_FACTOR: f64 = 1.001;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SigmaError {
    #[error("sigma not convex at node {node} (second difference {second_difference:e})")]
    NotConvex { node: usize, second_difference: f64 },
    #[error("sigma not convex: slope {index} decreases")]
    DecreasingSlope { index: usize },
    #[error("sigma is not differentiable at the kink x = {at}")]
    Kink { at: f64 },
    #[error("x = {x} is outside the domain of sigma")]
    OutsideDomain { x: f64 },
    #[error("invalid sigma: {0}")]
    Invalid(&'static str),
    #[error("point has dimension {got}, sigma has dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Conjugate(#[from] ConjugateError),
}

/// Convex piecewise-linear function on the whole line.
///
/// `slopes[0]` applies left of `breakpoints[0]`, `slopes[j]` between
/// `breakpoints[j-1]` and `breakpoints[j]`, and the last slope to the right
/// of the last breakpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    breakpoints: Vec<f64>,
    slopes: Vec<f64>,
    values: Vec<f64>,
    smoothing: Option<f64>,
}

impl PiecewiseLinear {
    pub fn new(breakpoints: Vec<f64>, slopes: Vec<f64>, value_at_first: f64) -> Result<Self, SigmaError> {
        if breakpoints.is_empty() || slopes.len() != breakpoints.len() + 1 {
            return Err(SigmaError::Invalid("need n breakpoints and n + 1 slopes, n >= 1"));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1]))
            || breakpoints.iter().chain(&slopes).any(|v| !v.is_finite())
            || !value_at_first.is_finite()
        {
            return Err(SigmaError::Invalid(
                "breakpoints must be finite and strictly increasing",
            ));
        }
        if let Some(index) = slopes.windows(2).position(|w| w[1] < w[0]) {
            return Err(SigmaError::DecreasingSlope { index: index + 1 });
        }
        let mut values = Vec::with_capacity(breakpoints.len());
        values.push(value_at_first);
        for j in 1..breakpoints.len() {
            let prev = values[j - 1];
            values.push(prev + slopes[j] * (breakpoints[j] - breakpoints[j - 1]));
        }
        Ok(Self {
            breakpoints,
            slopes,
            values,
            smoothing: None,
        })
    }

    /// `|x|`.
    pub fn abs() -> Self {
        Self::new(vec![0.0], vec![-1.0, 1.0], 0.0).expect("valid")
    }

    /// Moreau envelope with radius `r > 0` (Huber smoothing for `|x|`).
    pub fn smoothed(mut self, r: f64) -> Result<Self, SigmaError> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(SigmaError::Invalid("smoothing radius must be positive"));
        }
        self.smoothing = Some(r);
        Ok(self)
    }

    pub fn smoothing(&self) -> Option<f64> {
        self.smoothing
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn value_at_first(&self) -> f64 {
        self.values[0]
    }

    fn raw_value(&self, x: f64) -> f64 {
        let b = &self.breakpoints;
        if x <= b[0] {
            return self.values[0] + self.slopes[0] * (x - b[0]);
        }
        let j = b.partition_point(|&bj| bj < x) - 1;
        self.values[j] + self.slopes[j + 1] * (x - b[j])
    }

    /// Proximal point of `x` and the envelope gradient there.
    fn prox(&self, x: f64, r: f64) -> (f64, f64) {
        let b = &self.breakpoints;
        let s = &self.slopes;
        for j in 0..b.len() {
            if x < b[j] + r * s[j] {
                return (x - r * s[j], s[j]);
            }
            if x <= b[j] + r * s[j + 1] {
                return (b[j], (x - b[j]) / r);
            }
        }
        let m = s.len() - 1;
        (x - r * s[m], s[m])
    }

    pub fn value(&self, x: f64) -> f64 {
        match self.smoothing {
            None => self.raw_value(x),
            Some(r) => {
                let (z, _) = self.prox(x, r);
                self.raw_value(z) + (x - z) * (x - z) / (2.0 * r)
            }
        }
    }

    pub fn derivative(&self, x: f64) -> Result<f64, SigmaError> {
        match self.smoothing {
            Some(r) => Ok(self.prox(x, r).1),
            None => {
                let b = &self.breakpoints;
                let j = b.partition_point(|&bj| bj < x);
                if j < b.len() && b[j] == x && self.slopes[j] != self.slopes[j + 1] {
                    return Err(SigmaError::Kink { at: x });
                }
                if j < b.len() && b[j] == x {
                    return Ok(self.slopes[j]);
                }
                Ok(self.slopes[j])
            }
        }
    }

    pub fn lipschitz(&self) -> f64 {
        self.slopes[0].abs().max(self.slopes[self.slopes.len() - 1].abs())
    }

    /// Exact conjugate: `max_j (b_j q - sigma(b_j)) (+ r q^2 / 2)` on the
    /// slope range, `+inf` outside it.
    pub fn conjugate(&self, q: f64) -> f64 {
        let lo = self.slopes[0];
        let hi = self.slopes[self.slopes.len() - 1];
        let slack = 1e-12 * (1.0 + q.abs());
        if q < lo - slack || q > hi + slack {
            return f64::INFINITY;
        }
        let base = self
            .breakpoints
            .iter()
            .zip(&self.values)
            .map(|(b, v)| b * q - v)
            .fold(f64::NEG_INFINITY, f64::max);
        match self.smoothing {
            Some(r) => base + 0.5 * r * q * q,
            None => base,
        }
    }
}

/// Convex polynomial restricted to `domain` (`+inf` outside). The domain
/// node count sets the sampling used for the discrete conjugate.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexPolynomial {
    poly: Polynomial,
    domain: Axis,
}

impl ConvexPolynomial {
    /// `domain` nodes are also the samples behind the discrete conjugate and
    /// the convexity check.
    pub fn new(poly: Polynomial, domain: Axis) -> Result<Self, SigmaError> {
        let me = Self { poly, domain };
        me.validate()?;
        Ok(me)
    }

    pub fn poly(&self) -> &Polynomial {
        &self.poly
    }

    pub fn domain(&self) -> &Axis {
        &self.domain
    }

    fn validate(&self) -> Result<(), SigmaError> {
        let vals: Vec<f64> = self.domain.nodes().iter().map(|&x| self.poly.eval(x)).collect();
        check_second_differences(&vals, &|i| i)
    }

    pub fn value(&self, x: f64) -> f64 {
        if self.domain.contains(x) {
            self.poly.eval(x)
        } else {
            f64::INFINITY
        }
    }

    pub fn derivative(&self, x: f64) -> Result<f64, SigmaError> {
        if !self.domain.contains(x) {
            return Err(SigmaError::OutsideDomain { x });
        }
        Ok(self.poly.derivative().eval(x))
    }

    pub fn lipschitz(&self) -> f64 {
        self.poly.derivative().sup_abs_on(self.domain.lo, self.domain.hi)
    }

    fn samples(&self) -> SampledFunction {
        let grid = GridBox::new(vec![self.domain]).expect("valid axis");
        SampledFunction::from_fn(grid, |x| self.poly.eval(x[0])).expect("finite samples")
    }
}

/// One coordinate of a separable `sigma`.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    Pwl(PiecewiseLinear),
    Poly(ConvexPolynomial),
}

impl Profile {
    pub fn value(&self, x: f64) -> f64 {
        match self {
            Profile::Pwl(p) => p.value(x),
            Profile::Poly(p) => p.value(x),
        }
    }

    pub fn derivative(&self, x: f64) -> Result<f64, SigmaError> {
        match self {
            Profile::Pwl(p) => p.derivative(x),
            Profile::Poly(p) => p.derivative(x),
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match self {
            Profile::Pwl(p) => p.lipschitz(),
            Profile::Poly(p) => p.lipschitz(),
        }
    }

    fn conjugate_on(&self, axis: &Axis) -> Result<Vec<f64>, SigmaError> {
        match self {
            Profile::Pwl(p) => Ok(axis.nodes().iter().map(|&q| p.conjugate(q)).collect()),
            Profile::Poly(p) => {
                let dual = GridBox::new(vec![*axis]).expect("valid axis");
                Ok(legendre_transform(&p.samples(), &dual)?.values().to_vec())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialData {
    /// `sigma(x) = sum_k profile_k(x_k)`.
    Separable(Vec<Profile>),
    /// Grid samples, `+inf` outside the sampled box.
    Samples(SampledFunction),
}

impl InitialData {
    pub fn pwl(p: PiecewiseLinear) -> Self {
        InitialData::Separable(vec![Profile::Pwl(p)])
    }

    /// Validates convexity of sampled data.
    pub fn samples(f: SampledFunction) -> Result<Self, SigmaError> {
        if f.is_extended() {
            return Err(SigmaError::Invalid("sampled sigma must be finite at every node"));
        }
        let grid = f.grid().clone();
        let d = grid.dim();
        let mut idx = vec![0usize; d];
        for k in 0..d {
            let n = grid.axis(k).count;
            let stride: usize = grid.axes()[k + 1..].iter().map(|a| a.count).product();
            // Walk every line along axis k.
            for flat in 0..grid.len() {
                grid.unravel(flat, &mut idx);
                if idx[k] != 0 {
                    continue;
                }
                let line: Vec<f64> = (0..n).map(|i| f.values()[flat + i * stride]).collect();
                check_second_differences(&line, &|i| flat + i * stride)?;
            }
        }
        Ok(InitialData::Samples(f))
    }

    pub fn dim(&self) -> usize {
        match self {
            InitialData::Separable(ps) => ps.len(),
            InitialData::Samples(f) => f.dim(),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            InitialData::Separable(ps) => ps.iter().zip(x).map(|(p, &xk)| p.value(xk)).sum(),
            InitialData::Samples(f) => f.interpolate(x),
        }
    }

    /// Gradient; errors at kinks and outside the domain.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>, SigmaError> {
        if x.len() != self.dim() {
            return Err(SigmaError::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        match self {
            InitialData::Separable(ps) => ps.iter().zip(x).map(|(p, &xk)| p.derivative(xk)).collect(),
            InitialData::Samples(f) => {
                if !f.grid().contains(x) {
                    return Err(SigmaError::OutsideDomain { x: x[0] });
                }
                let mut out = vec![0.0; x.len()];
                for k in 0..x.len() {
                    let axis = f.grid().axis(k);
                    let (i, s) = axis.locate(x[k]);
                    if (s == 0.0 && i > 0) || (s == 1.0 && i + 2 < axis.count) {
                        return Err(SigmaError::Kink { at: x[k] });
                    }
                    let mut lo = x.to_vec();
                    let mut hi = x.to_vec();
                    lo[k] = axis.node(i);
                    hi[k] = axis.node(i + 1);
                    out[k] = (f.interpolate(&hi) - f.interpolate(&lo)) / (hi[k] - lo[k]);
                }
                Ok(out)
            }
        }
    }

    /// Lipschitz constant `L`; the default dual box is `[-L, L]^n`.
    pub fn lipschitz(&self) -> f64 {
        match self {
            InitialData::Separable(ps) => ps.iter().map(Profile::lipschitz).fold(0.0, f64::max),
            InitialData::Samples(f) => {
                let grid = f.grid();
                let d = grid.dim();
                let mut idx = vec![0usize; d];
                let mut best = 0.0f64;
                for flat in 0..grid.len() {
                    grid.unravel(flat, &mut idx);
                    for k in 0..d {
                        if idx[k] + 1 < grid.axis(k).count {
                            idx[k] += 1;
                            let next = grid.ravel(&idx);
                            idx[k] -= 1;
                            let slope = (f.values()[next] - f.values()[flat]) / grid.axis(k).spacing();
                            best = best.max(slope.abs());
                        }
                    }
                }
                best * SAMPLED_LIPSCHITZ_FACTOR
            }
        }
    }

    /// `[-L, L]^n` with `count` nodes per axis.
    pub fn default_dual_box(&self, count: usize) -> Result<GridBox, crate::grid::GridError> {
        let l = self.lipschitz();
        let l = if l > 0.0 { l } else { 1.0 };
        GridBox::cube(-l, l, count, self.dim())
    }

    /// `sigma*` on the nodes of `dual`. Piecewise-linear profiles are
    /// conjugated exactly, the other forms through the discrete transform.
    pub fn conjugate_on(&self, dual: &GridBox) -> Result<SampledFunction, SigmaError> {
        if dual.dim() != self.dim() {
            return Err(SigmaError::Dimension {
                expected: self.dim(),
                got: dual.dim(),
            });
        }
        match self {
            InitialData::Samples(f) => Ok(legendre_transform(f, dual)?),
            InitialData::Separable(ps) => {
                let per_axis: Vec<Vec<f64>> = ps
                    .iter()
                    .zip(dual.axes())
                    .map(|(p, a)| p.conjugate_on(a))
                    .collect::<Result<_, _>>()?;
                let d = dual.dim();
                let mut idx = vec![0usize; d];
                let values: Vec<f64> = (0..dual.len())
                    .map(|flat| {
                        dual.unravel(flat, &mut idx);
                        (0..d).map(|k| per_axis[k][idx[k]]).sum()
                    })
                    .collect();
                let extended = values.iter().any(|v: &f64| v.is_infinite());
                Ok(SampledFunction::new(dual.clone(), values, extended)?)
            }
        }
    }
}

fn check_second_differences(vals: &[f64], node: &dyn Fn(usize) -> usize) -> Result<(), SigmaError> {
    let scale = 1.0 + vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 1..vals.len().saturating_sub(1) {
        let second = vals[i - 1] - 2.0 * vals[i] + vals[i + 1];
        if second < -CONVEXITY_TOL * scale {
            return Err(SigmaError::NotConvex {
                node: node(i),
                second_difference: second,
            });
        }
    }
    Ok(())
}
