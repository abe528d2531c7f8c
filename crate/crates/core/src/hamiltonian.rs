//! Time-layered Hamiltonians `H(t, p)`.
//!
//! A [`LayeredHamiltonian`] splits `[0, T]` at breakpoints
//! `0 = t_0 < t_1 < ... < t_k = T`. Layer `i` covers `(t_i, t_{i+1}]`
//! (layer 0 also owns `t = 0`) and carries a structural tag saying why the
//! Hopf formula is admissible on it: `H(t, .)` convex, concave, or of the
//! product form `g(t) h(p) + k(t)` with `g` of constant sign.
//!
//! Polynomial layers `sum_j g_j(t) h_j(p) + k(t)` have exact time integrals;
//! custom layers supply callbacks and are integrated with adaptive Simpson.

use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::grid::{Axis, GridBox};
use crate::poly::Polynomial;
use crate::quadrature::{adaptive_simpson, QuadratureError, DEFAULT_TOL};

/// Relative tolerance for matching layers at shared breakpoints.
pub const CONTINUITY_TOL: f64 = 1e-9;

/// Relative tolerance for the sampled second-difference sign test.
pub const CURVATURE_TOL: f64 = 1e-10;

/// Time samples per layer for the convexity/concavity test.
const CURVATURE_TIME_SAMPLES: usize = 11;

/// Time mesh per layer when `sup |H_t|` has to be sampled.
const SUP_TIME_SAMPLES: usize = 201;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HamError {
    #[error("time {t} outside [0, {horizon}]")]
    OutOfDomain { t: f64, horizon: f64 },
    #[error("momentum {p} outside sampled profile range [{lo}, {hi}]")]
    ProfileRange { p: f64, lo: f64, hi: f64 },
    #[error("momentum has dimension {got}, Hamiltonian expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("breakpoints must start at 0 and increase strictly, with one more entry than layers")]
    Breakpoints,
    #[error("layer {layer} on [{lo}, {hi}]: {reason}")]
    Structure {
        layer: usize,
        lo: f64,
        hi: f64,
        reason: String,
    },
    #[error("layers disagree at breakpoint t = {t}: gap {gap:e} at p = {p:?}")]
    Discontinuous { t: f64, gap: f64, p: Vec<f64> },
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// Structural tag of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    ConvexInP,
    ConcaveInP,
    Separable,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::ConvexInP => "convex",
            LayerKind::ConcaveInP => "concave",
            LayerKind::Separable => "separable",
        }
    }
}

/// Uniformly sampled one-dimensional profile, linearly interpolated.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledProfile {
    axis: Axis,
    values: Vec<f64>,
}

impl SampledProfile {
    pub fn new(axis: Axis, values: Vec<f64>) -> Result<Self, HamError> {
        if values.len() != axis.count || values.iter().any(|v| !v.is_finite()) {
            return Err(HamError::ProfileRange {
                p: f64::NAN,
                lo: axis.lo,
                hi: axis.hi,
            });
        }
        Ok(Self { axis, values })
    }

    pub fn axis(&self) -> &Axis {
        &self.axis
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn range_err(&self, p: f64) -> HamError {
        HamError::ProfileRange {
            p,
            lo: self.axis.lo,
            hi: self.axis.hi,
        }
    }

    pub fn eval(&self, p: f64) -> Result<f64, HamError> {
        if !self.axis.contains(p) {
            return Err(self.range_err(p));
        }
        let (i, s) = self.axis.locate(p);
        Ok(self.values[i] + s * (self.values[i + 1] - self.values[i]))
    }

    /// Centered difference with one node spacing; one-sided (flagged) when
    /// the stencil leaves the sampled range.
    pub fn derivative(&self, p: f64) -> Result<(f64, bool), HamError> {
        let h = self.axis.spacing();
        let lo = p - h;
        let hi = p + h;
        let a = self.axis.lo;
        let b = self.axis.hi;
        if lo >= a && hi <= b {
            Ok(((self.eval(hi)? - self.eval(lo)?) / (2.0 * h), false))
        } else if hi <= b {
            Ok(((self.eval(hi)? - self.eval(p)?) / h, true))
        } else if lo >= a {
            Ok(((self.eval(p)? - self.eval(lo)?) / h, true))
        } else {
            Err(self.range_err(p))
        }
    }

    /// Exact extremes of the interpolant over `[lo, hi]`.
    fn range_on(&self, lo: f64, hi: f64) -> Result<(f64, f64), HamError> {
        let mut min = self.eval(lo)?.min(self.eval(hi)?);
        let mut max = self.eval(lo)?.max(self.eval(hi)?);
        for (i, &v) in self.values.iter().enumerate() {
            let x = self.axis.node(i);
            if x > lo && x < hi {
                min = min.min(v);
                max = max.max(v);
            }
        }
        Ok((min, max))
    }
}

/// The momentum factor `h(p)` of a product term.
#[derive(Debug, Clone, PartialEq)]
pub enum MomentumProfile {
    /// `h(p) = sum_k poly_k(p_k)`, one polynomial per coordinate.
    Poly(Vec<Polynomial>),
    /// `h(p) = sum_k s(p_k)` for a sampled one-dimensional `s`.
    Sampled(SampledProfile),
}

impl MomentumProfile {
    /// Same polynomial on every coordinate.
    pub fn uniform(poly: Polynomial, dim: usize) -> Self {
        MomentumProfile::Poly(vec![poly; dim])
    }

    fn check_dim(&self, dim: usize) -> bool {
        match self {
            MomentumProfile::Poly(ps) => ps.len() == dim,
            MomentumProfile::Sampled(_) => true,
        }
    }

    pub fn eval(&self, p: &[f64]) -> Result<f64, HamError> {
        match self {
            MomentumProfile::Poly(ps) => Ok(ps.iter().zip(p).map(|(h, &x)| h.eval(x)).sum()),
            MomentumProfile::Sampled(s) => p.iter().map(|&x| s.eval(x)).sum(),
        }
    }

    /// Gradient into `out`; returns whether a one-sided difference was used.
    pub fn grad(&self, p: &[f64], out: &mut [f64]) -> Result<bool, HamError> {
        match self {
            MomentumProfile::Poly(ps) => {
                for ((o, h), &x) in out.iter_mut().zip(ps).zip(p) {
                    *o = h.derivative().eval(x);
                }
                Ok(false)
            }
            MomentumProfile::Sampled(s) => {
                let mut flagged = false;
                for (o, &x) in out.iter_mut().zip(p) {
                    let (d, one_sided) = s.derivative(x)?;
                    *o = d;
                    flagged |= one_sided;
                }
                Ok(flagged)
            }
        }
    }

    /// Exact range of `h` over a box.
    pub fn range_on(&self, p_box: &GridBox) -> Result<(f64, f64), HamError> {
        let mut lo = 0.0;
        let mut hi = 0.0;
        for (k, a) in p_box.axes().iter().enumerate() {
            let (l, h) = match self {
                MomentumProfile::Poly(ps) => ps[k].range_on(a.lo, a.hi),
                MomentumProfile::Sampled(s) => s.range_on(a.lo, a.hi)?,
            };
            lo += l;
            hi += h;
        }
        Ok((lo, hi))
    }
}

/// One product term `g(t) h(p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableTerm {
    pub g: Polynomial,
    pub h: MomentumProfile,
}

impl SeparableTerm {
    pub fn new(g: Polynomial, h: MomentumProfile) -> Self {
        Self { g, h }
    }
}

/// `H(t, p) = sum_j g_j(t) h_j(p) + k(t)` with polynomial `g_j`, `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialForm {
    terms: Vec<SeparableTerm>,
    k: Polynomial,
    g_anti: Vec<Polynomial>,
    g_dt: Vec<Polynomial>,
    k_anti: Polynomial,
    k_dt: Polynomial,
}

impl PolynomialForm {
    pub fn new(terms: Vec<SeparableTerm>, k: Polynomial) -> Self {
        let g_anti = terms.iter().map(|t| t.g.antiderivative()).collect();
        let g_dt = terms.iter().map(|t| t.g.derivative()).collect();
        let k_anti = k.antiderivative();
        let k_dt = k.derivative();
        Self {
            terms,
            k,
            g_anti,
            g_dt,
            k_anti,
            k_dt,
        }
    }

    /// `g(t) h(p)` with no time offset.
    pub fn product(g: Polynomial, h: MomentumProfile) -> Self {
        Self::new(vec![SeparableTerm::new(g, h)], Polynomial::zero())
    }

    pub fn terms(&self) -> &[SeparableTerm] {
        &self.terms
    }

    pub fn k(&self) -> &Polynomial {
        &self.k
    }

    fn value(&self, t: f64, p: &[f64]) -> Result<f64, HamError> {
        let mut v = self.k.eval(t);
        for term in &self.terms {
            let g = term.g.eval(t);
            if g != 0.0 {
                v += g * term.h.eval(p)?;
            }
        }
        Ok(v)
    }

    fn partial_t(&self, t: f64, p: &[f64]) -> Result<f64, HamError> {
        let mut v = self.k_dt.eval(t);
        for (term, dg) in self.terms.iter().zip(&self.g_dt) {
            let d = dg.eval(t);
            if d != 0.0 {
                v += d * term.h.eval(p)?;
            }
        }
        Ok(v)
    }

    /// Coefficients `int_a^b g_j` and `int_a^b k`, so that
    /// `int_a^b H(tau, p) dtau = sum_j w_j h_j(p) + w_k`.
    pub fn time_weights(&self, a: f64, b: f64) -> (Vec<f64>, f64) {
        let w = self.g_anti.iter().map(|gi| gi.eval(b) - gi.eval(a)).collect();
        (w, self.k_anti.eval(b) - self.k_anti.eval(a))
    }

    fn grad_p(&self, t: f64, p: &[f64], out: &mut [f64]) -> Result<bool, HamError> {
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut flagged = false;
        let mut buf = vec![0.0; p.len()];
        for term in &self.terms {
            let g = term.g.eval(t);
            flagged |= term.h.grad(p, &mut buf)?;
            for (o, b) in out.iter_mut().zip(&buf) {
                *o += g * b;
            }
        }
        Ok(flagged)
    }

    fn integral_grad_p(&self, a: f64, b: f64, p: &[f64], out: &mut [f64]) -> Result<(), HamError> {
        let (w, _) = self.time_weights(a, b);
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut buf = vec![0.0; p.len()];
        for (term, wj) in self.terms.iter().zip(w) {
            term.h.grad(p, &mut buf)?;
            for (o, b) in out.iter_mut().zip(&buf) {
                *o += wj * b;
            }
        }
        Ok(())
    }
}

/// Callback contract for a general `C^1` Hamiltonian.
pub trait HamiltonianFn: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, t: f64, p: &[f64]) -> f64;
    fn grad_p(&self, t: f64, p: &[f64], out: &mut [f64]);
    fn partial_t(&self, t: f64, p: &[f64]) -> f64;
}

#[derive(Clone)]
pub enum LayerForm {
    Polynomial(PolynomialForm),
    Custom(Arc<dyn HamiltonianFn>),
}

impl fmt::Debug for LayerForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerForm::Polynomial(p) => f.debug_tuple("Polynomial").field(p).finish(),
            LayerForm::Custom(c) => write!(f, "Custom(dim = {})", c.dim()),
        }
    }
}

/// One time layer: a structural tag plus the Hamiltonian on it.
#[derive(Debug, Clone)]
pub struct Layer {
    pub kind: LayerKind,
    pub form: LayerForm,
}

impl Layer {
    pub fn new(kind: LayerKind, form: LayerForm) -> Self {
        Self { kind, form }
    }

    pub fn polynomial(kind: LayerKind, form: PolynomialForm) -> Self {
        Self::new(kind, LayerForm::Polynomial(form))
    }

    pub fn value(&self, t: f64, p: &[f64]) -> Result<f64, HamError> {
        match &self.form {
            LayerForm::Polynomial(f) => f.value(t, p),
            LayerForm::Custom(c) => Ok(c.value(t, p)),
        }
    }

    pub fn grad_p(&self, t: f64, p: &[f64], out: &mut [f64]) -> Result<bool, HamError> {
        match &self.form {
            LayerForm::Polynomial(f) => f.grad_p(t, p, out),
            LayerForm::Custom(c) => {
                c.grad_p(t, p, out);
                Ok(false)
            }
        }
    }

    pub fn partial_t(&self, t: f64, p: &[f64]) -> Result<f64, HamError> {
        match &self.form {
            LayerForm::Polynomial(f) => f.partial_t(t, p),
            LayerForm::Custom(c) => Ok(c.partial_t(t, p)),
        }
    }

    /// `int_a^b H(tau, p) dtau` on this layer's form.
    pub fn integral(&self, a: f64, b: f64, p: &[f64]) -> Result<f64, HamError> {
        match &self.form {
            LayerForm::Polynomial(f) => {
                let (w, wk) = f.time_weights(a, b);
                let mut v = wk;
                for (term, wj) in f.terms.iter().zip(w) {
                    if wj != 0.0 {
                        v += wj * term.h.eval(p)?;
                    }
                }
                Ok(v)
            }
            LayerForm::Custom(c) => Ok(adaptive_simpson(|s| c.value(s, p), a, b, DEFAULT_TOL)?),
        }
    }

    /// `int_a^b H_p(tau, p) dtau` into `out`.
    pub fn integral_grad_p(&self, a: f64, b: f64, p: &[f64], out: &mut [f64]) -> Result<(), HamError> {
        match &self.form {
            LayerForm::Polynomial(f) => f.integral_grad_p(a, b, p, out),
            LayerForm::Custom(c) => {
                let mut buf = vec![0.0; p.len()];
                for k in 0..p.len() {
                    out[k] = adaptive_simpson(
                        |s| {
                            c.grad_p(s, p, &mut buf);
                            buf[k]
                        },
                        a,
                        b,
                        DEFAULT_TOL,
                    )?;
                }
                Ok(())
            }
        }
    }

    /// Structural admissibility on `[lo, hi]`, sampled over `p_grid`.
    fn check_structure(&self, index: usize, lo: f64, hi: f64, p_grid: &GridBox) -> Result<(), HamError> {
        let fail = |reason: String| HamError::Structure {
            layer: index,
            lo,
            hi,
            reason,
        };
        match self.kind {
            LayerKind::Separable => {
                let LayerForm::Polynomial(form) = &self.form else {
                    return Err(fail("separable layers need polynomial coefficients".to_string()));
                };
                let mut common_sign = 0.0;
                for (j, term) in form.terms.iter().enumerate() {
                    if term.g.is_zero() {
                        continue;
                    }
                    if let Some(r) = term.g.sign_change_roots(lo, hi).first() {
                        return Err(fail(alloc::format!("g_{j} changes sign at t = {r}")));
                    }
                    let s = dominant_sign(&term.g, lo, hi);
                    if s != 0.0 {
                        if common_sign != 0.0 && s != common_sign {
                            return Err(fail(
                                "time factors of a multi-term separable layer have different signs; tag it convex or concave"
                                    .to_string(),
                            ));
                        }
                        common_sign = s;
                    }
                }
                Ok(())
            }
            LayerKind::ConvexInP | LayerKind::ConcaveInP => {
                let sign = if self.kind == LayerKind::ConvexInP { 1.0 } else { -1.0 };
                self.check_curvature(sign, lo, hi, p_grid).map_err(fail)
            }
        }
    }

    fn check_curvature(&self, sign: f64, lo: f64, hi: f64, p_grid: &GridBox) -> Result<(), String> {
        let d = p_grid.dim();
        let coords = p_grid.coords();
        let mut idx = vec![0usize; d];
        for s in 0..CURVATURE_TIME_SAMPLES {
            let t = lo + (hi - lo) * s as f64 / (CURVATURE_TIME_SAMPLES - 1) as f64;
            let vals: Vec<f64> = coords
                .chunks(d)
                .map(|p| self.value(t, p))
                .collect::<Result<_, _>>()
                .map_err(|e| e.to_string())?;
            let scale = 1.0 + vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let tol = CURVATURE_TOL * scale;
            for flat in 0..vals.len() {
                p_grid.unravel(flat, &mut idx);
                for k in 0..d {
                    let n = p_grid.axis(k).count;
                    if idx[k] == 0 || idx[k] + 1 >= n {
                        continue;
                    }
                    idx[k] -= 1;
                    let left = vals[p_grid.ravel(&idx)];
                    idx[k] += 2;
                    let right = vals[p_grid.ravel(&idx)];
                    idx[k] -= 1;
                    let second = sign * (left - 2.0 * vals[flat] + right);
                    if second < -tol {
                        return Err(alloc::format!(
                            "H(t, .) is not {} at t = {t}, p = {:?} (second difference {:e})",
                            if sign > 0.0 { "convex" } else { "concave" },
                            &coords[flat * d..flat * d + d],
                            sign * second
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

fn dominant_sign(g: &Polynomial, lo: f64, hi: f64) -> f64 {
    let (a, b) = g.range_on(lo, hi);
    if b.abs() >= a.abs() {
        if b > 0.0 {
            1.0
        } else if b < 0.0 {
            -1.0
        } else {
            0.0
        }
    } else if a < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Gradient of `H` in `p`, with a flag for one-sided differences on sampled
/// profiles.
#[derive(Debug, Clone, PartialEq)]
pub struct GradP {
    pub grad: Vec<f64>,
    pub one_sided: bool,
}

/// Bound on `sup |H_t|`; `mesh` is set when it was found by sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupEstimate {
    pub value: f64,
    pub exact: bool,
    pub mesh: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct LayeredHamiltonian {
    dim: usize,
    breakpoints: Vec<f64>,
    layers: Vec<Layer>,
    continuous: bool,
}

impl LayeredHamiltonian {
    /// Checks breakpoint order, dimensions and value continuity at the
    /// breakpoints over a probe set in `[-1, 1]^dim`.
    pub fn new(dim: usize, breakpoints: Vec<f64>, layers: Vec<Layer>) -> Result<Self, HamError> {
        if layers.is_empty()
            || breakpoints.len() != layers.len() + 1
            || breakpoints[0] != 0.0
            || breakpoints.windows(2).any(|w| !(w[0] < w[1]))
            || breakpoints.iter().any(|b| !b.is_finite())
        {
            return Err(HamError::Breakpoints);
        }
        for layer in &layers {
            let ok = match &layer.form {
                LayerForm::Polynomial(f) => f.terms.iter().all(|t| t.h.check_dim(dim)),
                LayerForm::Custom(c) => c.dim() == dim,
            };
            if !ok {
                return Err(HamError::Dimension { expected: dim, got: 0 });
            }
        }
        let mut ham = Self {
            dim,
            breakpoints,
            layers,
            continuous: true,
        };
        ham.continuous = ham.continuity_gap_on(&probe_box(&ham)).is_none();
        Ok(ham)
    }

    /// One layer over `[0, horizon]`.
    pub fn single(dim: usize, horizon: f64, layer: Layer) -> Result<Self, HamError> {
        Self::new(dim, vec![0.0, horizon], vec![layer])
    }

    /// `H = 0`.
    pub fn zero(dim: usize, horizon: f64) -> Result<Self, HamError> {
        Self::single(
            dim,
            horizon,
            Layer::polynomial(
                LayerKind::Separable,
                PolynomialForm::new(Vec::new(), Polynomial::zero()),
            ),
        )
    }

    /// A single product form `g(t) h(p) + k(t)` on `[0, horizon]`, split
    /// where `g` changes sign. Every resulting layer is tagged separable.
    pub fn from_separable(dim: usize, horizon: f64, term: SeparableTerm, k: Polynomial) -> Result<Self, HamError> {
        if !(horizon > 0.0) {
            return Err(HamError::Breakpoints);
        }
        let cuts = detect_breakpoints(&term.g, horizon);
        let mut breakpoints = vec![0.0];
        breakpoints.extend(cuts);
        breakpoints.push(horizon);
        let form = PolynomialForm::new(vec![term], k);
        let layers = (0..breakpoints.len() - 1)
            .map(|_| Layer::polynomial(LayerKind::Separable, form.clone()))
            .collect();
        Self::new(dim, breakpoints, layers)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> &Layer {
        &self.layers[i]
    }

    /// Whether the layers matched at every breakpoint on the probe set.
    pub fn is_continuous(&self) -> bool {
        self.continuous
    }

    fn check_time(&self, t: f64) -> Result<(), HamError> {
        if !(t >= 0.0 && t <= self.horizon()) {
            return Err(HamError::OutOfDomain {
                t,
                horizon: self.horizon(),
            });
        }
        Ok(())
    }

    fn check_p(&self, p: &[f64]) -> Result<(), HamError> {
        if p.len() != self.dim {
            return Err(HamError::Dimension {
                expected: self.dim,
                got: p.len(),
            });
        }
        Ok(())
    }

    /// Layer owning `t`: `(t_i, t_{i+1}]`, with `t = 0` in layer 0.
    pub fn layer_index(&self, t: f64) -> Result<usize, HamError> {
        self.check_time(t)?;
        let n = self.layers.len();
        Ok((0..n).find(|&i| t <= self.breakpoints[i + 1]).unwrap_or(n - 1))
    }

    pub fn eval(&self, t: f64, p: &[f64]) -> Result<f64, HamError> {
        self.check_p(p)?;
        let i = self.layer_index(t)?;
        self.layers[i].value(t, p)
    }

    pub fn grad_p(&self, t: f64, p: &[f64]) -> Result<GradP, HamError> {
        self.check_p(p)?;
        let i = self.layer_index(t)?;
        let mut grad = vec![0.0; self.dim];
        let one_sided = self.layers[i].grad_p(t, p, &mut grad)?;
        Ok(GradP { grad, one_sided })
    }

    /// `H_t`; at an interior breakpoint this is the derivative of the layer
    /// ending there.
    pub fn partial_t(&self, t: f64, p: &[f64]) -> Result<f64, HamError> {
        self.check_p(p)?;
        let i = self.layer_index(t)?;
        self.layers[i].partial_t(t, p)
    }

    /// Calls `f(layer, lo, hi)` for each layer piece of `[a, b]`.
    fn for_pieces<E>(&self, a: f64, b: f64, mut f: impl FnMut(&Layer, f64, f64) -> Result<(), E>) -> Result<(), E> {
        for (i, layer) in self.layers.iter().enumerate() {
            let lo = a.max(self.breakpoints[i]);
            let hi = b.min(self.breakpoints[i + 1]);
            if lo < hi {
                f(layer, lo, hi)?;
            }
        }
        Ok(())
    }

    /// `int_a^b H(tau, p) dtau`, summed layer by layer.
    pub fn integral(&self, a: f64, b: f64, p: &[f64]) -> Result<f64, HamError> {
        self.check_p(p)?;
        self.check_time(a)?;
        self.check_time(b)?;
        if b < a {
            return Ok(-self.integral(b, a, p)?);
        }
        let mut total = 0.0;
        self.for_pieces(a, b, |layer, lo, hi| {
            total += layer.integral(lo, hi, p)?;
            Ok::<(), HamError>(())
        })?;
        Ok(total)
    }

    /// `int_a^b H_p(tau, p) dtau`.
    pub fn integral_grad_p(&self, a: f64, b: f64, p: &[f64]) -> Result<Vec<f64>, HamError> {
        self.check_p(p)?;
        self.check_time(a)?;
        self.check_time(b)?;
        if b < a {
            let mut v = self.integral_grad_p(b, a, p)?;
            v.iter_mut().for_each(|x| *x = -*x);
            return Ok(v);
        }
        let mut total = vec![0.0; self.dim];
        let mut buf = vec![0.0; self.dim];
        self.for_pieces(a, b, |layer, lo, hi| {
            layer.integral_grad_p(lo, hi, p, &mut buf)?;
            for (t, v) in total.iter_mut().zip(&buf) {
                *t += v;
            }
            Ok::<(), HamError>(())
        })?;
        Ok(total)
    }

    /// `M = sup |H_t(tau, p)|` over `tau in [0, T]`, `p` in `p_box`.
    ///
    /// Exact for polynomial layers with at most one product term (critical
    /// point enumeration, using that `H_t` is affine in the value of `h`);
    /// sampled on a `201 x p_box` mesh otherwise.
    pub fn sup_abs_ht(&self, p_box: &GridBox) -> Result<SupEstimate, HamError> {
        let mut best = 0.0f64;
        let mut exact = true;
        let mut mesh: Option<f64> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let lo = self.breakpoints[i];
            let hi = self.breakpoints[i + 1];
            let closed = match &layer.form {
                LayerForm::Polynomial(f) if f.terms.len() <= 1 => Some(f),
                _ => None,
            };
            if let Some(f) = closed {
                let v = if let Some(term) = f.terms.first() {
                    let (hmin, hmax) = term.h.range_on(p_box)?;
                    let dg = term.g.derivative();
                    [hmin, hmax]
                        .iter()
                        .map(|&h| dg.scale(h).add(&f.k_dt).sup_abs_on(lo, hi))
                        .fold(0.0, f64::max)
                } else {
                    f.k_dt.sup_abs_on(lo, hi)
                };
                best = best.max(v);
            } else {
                exact = false;
                let coords = p_box.coords();
                let d = p_box.dim();
                let dt = (hi - lo) / (SUP_TIME_SAMPLES - 1) as f64;
                mesh = Some(mesh.unwrap_or(0.0).max(dt.max(p_box.max_spacing())));
                for s in 0..SUP_TIME_SAMPLES {
                    let t = lo + dt * s as f64;
                    for p in coords.chunks(d) {
                        best = best.max(layer.partial_t(t, p)?.abs());
                    }
                }
            }
        }
        Ok(SupEstimate {
            value: best,
            exact,
            mesh,
        })
    }

    /// Largest layer mismatch at interior breakpoints over the nodes of
    /// `p_grid`, if it exceeds the continuity tolerance.
    pub fn continuity_gap_on(&self, p_grid: &GridBox) -> Option<(f64, f64, Vec<f64>)> {
        let coords = p_grid.coords();
        let d = p_grid.dim();
        let mut worst: Option<(f64, f64, Vec<f64>)> = None;
        for i in 1..self.layers.len() {
            let t = self.breakpoints[i];
            for p in coords.chunks(d) {
                let (Ok(a), Ok(b)) = (self.layers[i - 1].value(t, p), self.layers[i].value(t, p)) else {
                    continue;
                };
                let gap = (a - b).abs();
                if gap > CONTINUITY_TOL * (1.0 + a.abs().max(b.abs())) && worst.as_ref().is_none_or(|w| gap > w.1) {
                    worst = Some((t, gap, p.to_vec()));
                }
            }
        }
        worst
    }

    /// Structural admissibility of every layer plus continuity, sampled on
    /// the momentum grid that the solver will use.
    pub fn validate_on(&self, p_grid: &GridBox) -> Result<(), HamError> {
        if p_grid.dim() != self.dim {
            return Err(HamError::Dimension {
                expected: self.dim,
                got: p_grid.dim(),
            });
        }
        for (i, layer) in self.layers.iter().enumerate() {
            layer.check_structure(i, self.breakpoints[i], self.breakpoints[i + 1], p_grid)?;
        }
        if let Some((t, gap, p)) = self.continuity_gap_on(p_grid) {
            return Err(HamError::Discontinuous { t, gap, p });
        }
        Ok(())
    }
}

/// Probe momenta for the construction-time continuity flag: `[-1, 1]` per
/// axis, shrunk into the range of any sampled profile.
fn probe_box(ham: &LayeredHamiltonian) -> GridBox {
    let mut lo = -1.0f64;
    let mut hi = 1.0f64;
    for layer in &ham.layers {
        if let LayerForm::Polynomial(f) = &layer.form {
            for term in &f.terms {
                if let MomentumProfile::Sampled(s) = &term.h {
                    lo = lo.max(s.axis.lo);
                    hi = hi.min(s.axis.hi);
                }
            }
        }
    }
    if !(lo < hi) {
        lo = -1.0;
        hi = 1.0;
    }
    GridBox::cube(lo, hi, 9, ham.dim).expect("probe box is valid")
}

/// Interior times in `(0, horizon)` where `g` changes sign. These are the
/// layer breakpoints of a product Hamiltonian `g(t) h(p) + k(t)`. Roots of
/// even multiplicity do not split layers; `g = 0` yields none.
pub fn detect_breakpoints(g: &Polynomial, horizon: f64) -> Vec<f64> {
    g.sign_change_roots(0.0, horizon)
}
