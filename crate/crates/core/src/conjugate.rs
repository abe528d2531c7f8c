//! Discrete Legendre-Fenchel transforms on uniform grids.
//!
//! All conjugates here are maxima over grid nodes:
//! `f*(q) = max_i { <x_i, q> - f(x_i) }`. In one dimension the transform
//! runs in `O(N + M)` after extracting the lower hull of the graph; in two
//! dimensions it factorizes into one-dimensional transforms along each axis.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::grid::GridBox;
use crate::hull::lower_hull;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConjugateError {
    #[error("conjugate of identically +inf")]
    IdenticallyInfinite,
    #[error("{expected} values expected for the grid, got {got}")]
    Length { expected: usize, got: usize },
    #[error("value at node {node} is {value}; only +inf is allowed, and only for extended functions")]
    BadValue { node: usize, value: f64 },
    #[error("operation supports dimension {supported} only, got {got}")]
    Dimension { supported: usize, got: usize },
    #[error("point has dimension {got}, function lives in dimension {expected}")]
    PointDimension { expected: usize, got: usize },
}

/// How close to the maximum a node must be to count as a maximizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TieTolerance {
    /// `tol * (1 + |max|)`.
    Relative(f64),
    Absolute(f64),
}

impl TieTolerance {
    #[inline]
    pub fn at(&self, value: f64) -> f64 {
        match *self {
            TieTolerance::Relative(r) => r * (1.0 + value.abs()),
            TieTolerance::Absolute(a) => a,
        }
    }
}

impl Default for TieTolerance {
    fn default() -> Self {
        TieTolerance::Relative(1e-9)
    }
}

/// Values of a scalar function at the nodes of a [`GridBox`].
///
/// When `extended` is set, `+inf` marks nodes outside the effective domain.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledFunction {
    grid: GridBox,
    values: Vec<f64>,
    extended: bool,
    coords: Vec<f64>,
}

impl SampledFunction {
    pub fn new(grid: GridBox, values: Vec<f64>, extended: bool) -> Result<Self, ConjugateError> {
        if values.len() != grid.len() {
            return Err(ConjugateError::Length {
                expected: grid.len(),
                got: values.len(),
            });
        }
        let mut any_finite = false;
        for (node, &value) in values.iter().enumerate() {
            if value.is_finite() {
                any_finite = true;
            } else if !(extended && value == f64::INFINITY) {
                return Err(ConjugateError::BadValue { node, value });
            }
        }
        if !any_finite {
            return Err(ConjugateError::IdenticallyInfinite);
        }
        let coords = grid.coords();
        Ok(Self {
            grid,
            values,
            extended,
            coords,
        })
    }

    pub fn from_fn(grid: GridBox, f: impl Fn(&[f64]) -> f64) -> Result<Self, ConjugateError> {
        let coords = grid.coords();
        let d = grid.dim();
        let values: Vec<f64> = coords.chunks(d).map(f).collect();
        let extended = values.contains(&f64::INFINITY);
        Self::new(grid, values, extended)
    }

    pub fn grid(&self) -> &GridBox {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_extended(&self) -> bool {
        self.extended
    }

    /// Flattened node coordinates.
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn node(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.coords[i * d..i * d + d]
    }

    /// New function on the same grid with `values + other`.
    pub fn add_values(&self, other: &[f64]) -> Result<Self, ConjugateError> {
        let v = self.values.iter().zip(other).map(|(a, b)| a + b).collect();
        Self::new(self.grid.clone(), v, self.extended)
    }

    /// Multilinear interpolation; `+inf` outside the box or next to an
    /// infinite node.
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        if !self.grid.contains(x) {
            return f64::INFINITY;
        }
        let d = self.dim();
        let mut cell = [0usize; 2];
        let mut frac = [0.0f64; 2];
        for k in 0..d {
            let (i, s) = self.grid.axis(k).locate(x[k]);
            cell[k] = i;
            frac[k] = s;
        }
        let mut acc = 0.0;
        let mut idx = [0usize; 2];
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            for k in 0..d {
                let up = (corner >> k) & 1 == 1;
                idx[k] = cell[k] + up as usize;
                w *= if up { frac[k] } else { 1.0 - frac[k] };
            }
            if w == 0.0 {
                continue;
            }
            let v = self.values[self.grid.ravel(&idx[..d])];
            if v == f64::INFINITY {
                return f64::INFINITY;
            }
            acc += w * v;
        }
        acc
    }
}

/// Maximizers of `q -> <x, q> - f(q)` over grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ArgmaxSet {
    dim: usize,
    nodes: Vec<usize>,
    coords: Vec<f64>,
    pub value: f64,
    pub diameter: f64,
}

impl ArgmaxSet {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Flat indices of the maximizing nodes.
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks(self.dim)
    }

    /// One-dimensional maximizers as plain numbers.
    pub fn scalars(&self) -> Vec<f64> {
        self.coords.clone()
    }

    /// Whether some member lies within `tol` (Euclidean) of `p`.
    pub fn contains_within(&self, p: &[f64], tol: f64) -> bool {
        self.points().any(|q| euclid(q, p) <= tol)
    }

    /// Mean of the members.
    pub fn centroid(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.dim];
        for q in self.points() {
            for (ck, qk) in c.iter_mut().zip(q) {
                *ck += qk;
            }
        }
        let n = self.len().max(1) as f64;
        c.iter_mut().for_each(|v| *v /= n);
        c
    }
}

#[inline]
pub(crate) fn euclid(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += (x - y) * (x - y);
    }
    libm::sqrt(s)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// Borrowed node coordinates plus kernel values; the common scanning core
/// of [`conjugate_eval_with_argmax`] and the solver.
#[derive(Clone, Copy)]
pub(crate) struct KernelView<'a> {
    pub dim: usize,
    pub coords: &'a [f64],
    pub values: &'a [f64],
}

impl<'a> KernelView<'a> {
    /// `max_i <x, q_i> - values_i`.
    #[inline]
    pub fn max(&self, x: &[f64]) -> f64 {
        let mut best = f64::NEG_INFINITY;
        if self.dim == 1 {
            let x0 = x[0];
            for (q, v) in self.coords.iter().zip(self.values) {
                let s = x0 * q - v;
                if s > best {
                    best = s;
                }
            }
        } else {
            for (q, v) in self.coords.chunks(self.dim).zip(self.values) {
                let s = dot(x, q) - v;
                if s > best {
                    best = s;
                }
            }
        }
        best
    }

    pub fn argmax(&self, x: &[f64], tie: TieTolerance) -> (f64, ArgmaxSet) {
        let best = self.max(x);
        let cut = best - tie.at(best);
        let d = self.dim;
        let mut nodes = Vec::new();
        let mut coords = Vec::new();
        for (i, (q, v)) in self.coords.chunks(d).zip(self.values).enumerate() {
            let s = if d == 1 { x[0] * q[0] - v } else { dot(x, q) - v };
            if s >= cut {
                nodes.push(i);
                coords.extend_from_slice(q);
            }
        }
        let diameter = set_diameter(d, &coords);
        (
            best,
            ArgmaxSet {
                dim: d,
                nodes,
                coords,
                value: best,
                diameter,
            },
        )
    }
}

fn set_diameter(d: usize, coords: &[f64]) -> f64 {
    if coords.is_empty() {
        return 0.0;
    }
    if d == 1 {
        let (lo, hi) = coords
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        return hi - lo;
    }
    let pts: Vec<(f64, f64)> = coords.chunks(2).map(|c| (c[0], c[1])).collect();
    let hull = crate::hull::convex_hull(&pts);
    let mut best = 0.0f64;
    for (i, a) in hull.iter().enumerate() {
        for b in &hull[i + 1..] {
            best = best.max(crate::hull::dist(*a, *b));
        }
    }
    best
}

/// `sup_i <x, q_i> - f(q_i)` together with every node within the tie
/// tolerance of the supremum.
pub fn conjugate_eval_with_argmax(
    f: &SampledFunction,
    x: &[f64],
    tie: TieTolerance,
) -> Result<(f64, ArgmaxSet), ConjugateError> {
    if x.len() != f.dim() {
        return Err(ConjugateError::PointDimension {
            expected: f.dim(),
            got: x.len(),
        });
    }
    let view = KernelView {
        dim: f.dim(),
        coords: &f.coords,
        values: &f.values,
    };
    Ok(view.argmax(x, tie))
}

/// One-dimensional transform of `(xs[i], fs[i])` (increasing `xs`) onto
/// increasing `qs`; nodes with `fs = +inf` are ignored. Returns `None` when
/// every node is infinite.
fn legendre_1d(xs: &[f64], fs: &[f64], qs: &[f64]) -> Option<Vec<f64>> {
    let finite = (0..xs.len()).filter(|&i| fs[i].is_finite());
    let hull = lower_hull(xs, fs, finite);
    if hull.is_empty() {
        return None;
    }
    let value = |k: usize, q: f64| xs[hull[k]] * q - fs[hull[k]];
    let mut k = 0;
    let out = qs
        .iter()
        .map(|&q| {
            while k + 1 < hull.len() && value(k + 1, q) >= value(k, q) {
                k += 1;
            }
            value(k, q)
        })
        .collect();
    Some(out)
}

/// `g(q) = max_x <x, q> - f(x)` on the nodes of `dual`.
pub fn legendre_transform(f: &SampledFunction, dual: &GridBox) -> Result<SampledFunction, ConjugateError> {
    let d = f.dim();
    if dual.dim() != d {
        return Err(ConjugateError::Dimension {
            supported: d,
            got: dual.dim(),
        });
    }
    let values = match d {
        1 => {
            let xs = f.grid.axis(0).nodes();
            let qs = dual.axis(0).nodes();
            legendre_1d(&xs, &f.values, &qs).ok_or(ConjugateError::IdenticallyInfinite)?
        }
        2 => {
            let (a1, a2) = (f.grid.axis(0), f.grid.axis(1));
            let (b1, b2) = (dual.axis(0), dual.axis(1));
            let x2 = a2.nodes();
            let q2 = b2.nodes();
            // Inner transform along the second axis, one row per x1 node.
            let mut inner = vec![f64::NEG_INFINITY; a1.count * b2.count];
            for i1 in 0..a1.count {
                let row = &f.values[i1 * a2.count..(i1 + 1) * a2.count];
                if let Some(r) = legendre_1d(&x2, row, &q2) {
                    inner[i1 * b2.count..(i1 + 1) * b2.count].copy_from_slice(&r);
                }
            }
            let x1 = a1.nodes();
            let q1 = b1.nodes();
            let mut out = vec![0.0; b1.count * b2.count];
            let mut column = vec![0.0; a1.count];
            for j2 in 0..b2.count {
                for i1 in 0..a1.count {
                    column[i1] = -inner[i1 * b2.count + j2];
                }
                let c = legendre_1d(&x1, &column, &q1).ok_or(ConjugateError::IdenticallyInfinite)?;
                for j1 in 0..b1.count {
                    out[j1 * b2.count + j2] = c[j1];
                }
            }
            out
        }
        _ => {
            return Err(ConjugateError::Dimension { supported: 2, got: d });
        }
    };
    SampledFunction::new(dual.clone(), values, false)
}

/// Greatest convex function below `f` on its own one-dimensional grid.
/// Nodes outside the hull of the effective domain stay `+inf`.
pub fn lower_convex_envelope(f: &SampledFunction) -> Result<SampledFunction, ConjugateError> {
    if f.dim() != 1 {
        return Err(ConjugateError::Dimension {
            supported: 1,
            got: f.dim(),
        });
    }
    let xs = f.grid.axis(0).nodes();
    let ys = &f.values;
    let hull = lower_hull(&xs, ys, (0..xs.len()).filter(|&i| ys[i].is_finite()));
    if hull.is_empty() {
        return Err(ConjugateError::IdenticallyInfinite);
    }
    let mut out = vec![f64::INFINITY; xs.len()];
    for w in hull.windows(2) {
        let (a, b) = (w[0], w[1]);
        out[a] = ys[a];
        let slope = (ys[b] - ys[a]) / (xs[b] - xs[a]);
        for i in a + 1..b {
            out[i] = ys[a] + slope * (xs[i] - xs[a]);
        }
    }
    let last = *hull.last().unwrap();
    out[last] = ys[last];
    let extended = out.iter().any(|v| v.is_infinite());
    SampledFunction::new(f.grid.clone(), out, extended)
}

/// `f**` through the intermediate grid `dual`, returned on `f`'s grid.
pub fn biconjugate(f: &SampledFunction, dual: &GridBox) -> Result<SampledFunction, ConjugateError> {
    let g = legendre_transform(f, dual)?;
    legendre_transform(&g, f.grid())
}
