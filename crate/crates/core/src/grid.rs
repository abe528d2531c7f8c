//! Uniform rectangular grids.

use alloc::vec::Vec;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("axis needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("degenerate axis [{lo}, {hi}]")]
    Degenerate { lo: f64, hi: f64 },
    #[error("grid dimension must be 1 or 2, got {0}")]
    Dimension(usize),
}

/// One uniform axis `lo = x_0 < x_1 < ... < x_{count-1} = hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, count: usize) -> Result<Self, GridError> {
        if count < 2 {
            return Err(GridError::TooFewNodes(count));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(GridError::Degenerate { lo, hi });
        }
        Ok(Self { lo, hi, count })
    }

    /// Node coordinate. Both ends are reproduced exactly.
    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.count {
            return self.hi;
        }
        self.lo + (i as f64) * (self.hi - self.lo) / ((self.count - 1) as f64)
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / ((self.count - 1) as f64)
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.node(i)).collect()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    /// Index of the cell `[x_i, x_{i+1}]` holding `x` (clamped) and the
    /// local coordinate in `[0, 1]`.
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let h = self.spacing();
        let s = (x - self.lo) / h;
        let max_cell = self.count - 2;
        let mut i = if s <= 0.0 { 0 } else { libm::floor(s) as usize };
        if i > max_cell {
            i = max_cell;
        }
        let frac = (x - self.node(i)) / h;
        (i, frac)
    }
}

/// Cartesian product of uniform axes; nodes are stored row-major with the
/// last axis varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridBox {
    axes: Vec<Axis>,
}

impl GridBox {
    pub fn new(axes: Vec<Axis>) -> Result<Self, GridError> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(GridError::Dimension(axes.len()));
        }
        for a in &axes {
            Axis::new(a.lo, a.hi, a.count)?;
        }
        Ok(Self { axes })
    }

    pub fn line(lo: f64, hi: f64, count: usize) -> Result<Self, GridError> {
        Self::new(alloc::vec![Axis::new(lo, hi, count)?])
    }

    /// Same axis repeated `dim` times.
    pub fn cube(lo: f64, hi: f64, count: usize, dim: usize) -> Result<Self, GridError> {
        let a = Axis::new(lo, hi, count)?;
        Self::new((0..dim).map(|_| a).collect())
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis(&self, k: usize) -> &Axis {
        &self.axes[k]
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Multi-index of a flat node index.
    pub fn unravel(&self, mut flat: usize, out: &mut [usize]) {
        for k in (0..self.dim()).rev() {
            let n = self.axes[k].count;
            out[k] = flat % n;
            flat /= n;
        }
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        let mut flat = 0;
        for (k, &i) in idx.iter().enumerate() {
            flat = flat * self.axes[k].count + i;
        }
        flat
    }

    pub fn node_into(&self, flat: usize, out: &mut [f64]) {
        let mut rest = flat;
        for k in (0..self.dim()).rev() {
            let n = self.axes[k].count;
            out[k] = self.axes[k].node(rest % n);
            rest /= n;
        }
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.dim()];
        self.node_into(flat, &mut out);
        out
    }

    /// All node coordinates, flattened (`dim` numbers per node).
    pub fn coords(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = alloc::vec![0.0; d * self.len()];
        for (flat, chunk) in out.chunks_mut(d).enumerate() {
            self.node_into(flat, chunk);
        }
        out
    }

    /// Largest axis spacing.
    pub fn max_spacing(&self) -> f64 {
        self.axes.iter().map(Axis::spacing).fold(0.0, f64::max)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && self.axes.iter().zip(x).all(|(a, &v)| a.contains(v))
    }
}

/// Time axis over `[0, T]` times a spatial box.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeGrid {
    pub time: Axis,
    pub space: GridBox,
}

impl SpaceTimeGrid {
    pub fn new(time: Axis, space: GridBox) -> Self {
        Self { time, space }
    }

    pub fn len(&self) -> usize {
        self.time.count * self.space.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
