//! Layered solution: construction, evaluation and verification.
//!
//! Layer `i` covers `(t_i, t_{i+1}]` (layer 0 also owns `t = 0`) and carries
//! a kernel `phi_i` on the dual grid:
//!
//! ```text
//! phi_0 = sigma*
//! phi_i = env(phi_{i-1} + int_{t_{i-1}}^{t_i} H)
//! u(t, x) = max_q { <x, q> - phi_i(q) - int_{t_i}^t H(tau, q) dtau }
//! ```
//!
//! `env` is the lower convex envelope in one dimension and a biconjugate
//! through an intermediate primal grid in two.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::conjugate::{
    biconjugate, dot, legendre_transform, lower_convex_envelope, ArgmaxSet, ConjugateError, KernelView,
    SampledFunction, TieTolerance,
};
use crate::grid::{Axis, GridBox, GridError, SpaceTimeGrid};
use crate::hamiltonian::{HamError, LayerForm, LayeredHamiltonian};
use crate::sigma::{InitialData, SigmaError};
use crate::singularity::{detect_singular_points, SingularPoint, SingularityError, SingularityOptions};

/// Relative scale of the numerical slack in the semiconvexity test.
pub const SEMICONVEXITY_NUM_TOL: f64 = 1e-7;

/// Margin on the primal box used for two-dimensional envelopes.
const ENVELOPE_BOX_FACTOR: f64 = 1.001;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error(transparent)]
    Sigma(#[from] SigmaError),
    #[error(transparent)]
    Hamiltonian(#[from] HamError),
    #[error(transparent)]
    Conjugate(#[from] ConjugateError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    Invalid(&'static str),
    #[error("singular-set detection failed: {0}")]
    Singularity(alloc::string::String),
}

impl From<SingularityError> for SolverError {
    fn from(e: SingularityError) -> Self {
        SolverError::Singularity(alloc::format!("{e}"))
    }
}

/// Viscosity solution assembled from per-layer conjugate kernels.
#[derive(Debug, Clone)]
pub struct LayeredSolution {
    ham: LayeredHamiltonian,
    sigma: InitialData,
    dual: GridBox,
    dual_coords: Vec<f64>,
    kernels: Vec<SampledFunction>,
    /// `h_j(q)` at every dual node, per polynomial layer and term.
    tables: Vec<Option<Vec<Vec<f64>>>>,
    tie: TieTolerance,
}

/// Validates the inputs on `dual` and chains the layer kernels.
pub fn build_layered_solution(
    sigma: InitialData,
    ham: LayeredHamiltonian,
    dual: GridBox,
) -> Result<LayeredSolution, SolverError> {
    if sigma.dim() != ham.dim() {
        return Err(SolverError::Dimension {
            expected: ham.dim(),
            got: sigma.dim(),
        });
    }
    if dual.dim() != ham.dim() {
        return Err(SolverError::Dimension {
            expected: ham.dim(),
            got: dual.dim(),
        });
    }
    ham.validate_on(&dual)?;
    let dual_coords = dual.coords();
    let d = dual.dim();
    let mut tables = Vec::with_capacity(ham.layers().len());
    for layer in ham.layers() {
        tables.push(match &layer.form {
            LayerForm::Polynomial(f) => Some(
                f.terms()
                    .iter()
                    .map(|term| {
                        dual_coords
                            .chunks(d)
                            .map(|q| term.h.eval(q))
                            .collect::<Result<Vec<_>, _>>()
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            ),
            LayerForm::Custom(_) => None,
        });
    }
    let mut sol = LayeredSolution {
        kernels: Vec::with_capacity(ham.layers().len()),
        ham,
        sigma,
        dual,
        dual_coords,
        tables,
        tie: TieTolerance::default(),
    };
    sol.kernels.push(sol.sigma.conjugate_on(&sol.dual)?);
    for i in 1..sol.ham.layers().len() {
        let bp = sol.ham.breakpoints();
        let step = sol.integral_table(bp[i - 1], bp[i])?;
        let acc = sol.kernels[i - 1].add_values(&step)?;
        let next = envelope(&acc)?;
        sol.kernels.push(next);
    }
    Ok(sol)
}

fn envelope(acc: &SampledFunction) -> Result<SampledFunction, SolverError> {
    if acc.dim() == 1 {
        return Ok(lower_convex_envelope(acc)?);
    }
    let grid = acc.grid();
    let d = grid.dim();
    let mut idx = vec![0usize; d];
    let mut slope = 0.0f64;
    for flat in 0..grid.len() {
        grid.unravel(flat, &mut idx);
        for k in 0..d {
            if idx[k] + 1 < grid.axis(k).count {
                idx[k] += 1;
                let next = grid.ravel(&idx);
                idx[k] -= 1;
                let (a, b) = (acc.values()[flat], acc.values()[next]);
                if a.is_finite() && b.is_finite() {
                    slope = slope.max(((b - a) / grid.axis(k).spacing()).abs());
                }
            }
        }
    }
    let s = if slope > 0.0 { slope * ENVELOPE_BOX_FACTOR } else { 1.0 };
    let axes = grid
        .axes()
        .iter()
        .map(|a| Axis::new(-s, s, a.count))
        .collect::<Result<Vec<_>, _>>()?;
    let primal = GridBox::new(axes)?;
    let bic = biconjugate(acc, &primal)?;
    let values: Vec<f64> = bic
        .values()
        .iter()
        .zip(acc.values())
        .map(|(&b, &a)| if a.is_finite() { b } else { f64::INFINITY })
        .collect();
    Ok(SampledFunction::new(grid.clone(), values, acc.is_extended())?)
}

impl LayeredSolution {
    pub fn ham(&self) -> &LayeredHamiltonian {
        &self.ham
    }

    pub fn sigma(&self) -> &InitialData {
        &self.sigma
    }

    pub fn dual(&self) -> &GridBox {
        &self.dual
    }

    pub fn dim(&self) -> usize {
        self.dual.dim()
    }

    pub fn horizon(&self) -> f64 {
        self.ham.horizon()
    }

    pub fn breakpoints(&self) -> &[f64] {
        self.ham.breakpoints()
    }

    /// `phi_i` on the dual grid.
    pub fn kernel(&self, i: usize) -> &SampledFunction {
        &self.kernels[i]
    }

    pub fn kernels(&self) -> &[SampledFunction] {
        &self.kernels
    }

    /// Largest dual-grid spacing.
    pub fn dual_spacing(&self) -> f64 {
        self.dual.max_spacing()
    }

    pub fn tie(&self) -> TieTolerance {
        self.tie
    }

    pub fn with_tie(mut self, tie: TieTolerance) -> Self {
        self.tie = tie;
        self
    }

    fn check_x(&self, x: &[f64]) -> Result<(), SolverError> {
        if x.len() != self.dim() {
            return Err(SolverError::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn check_t(&self, t: f64) -> Result<(), SolverError> {
        if !(t >= 0.0 && t <= self.horizon()) {
            return Err(HamError::OutOfDomain {
                t,
                horizon: self.horizon(),
            }
            .into());
        }
        Ok(())
    }

    /// `int_a^b H(tau, q) dtau` at every dual node.
    fn integral_table(&self, a: f64, b: f64) -> Result<Vec<f64>, SolverError> {
        self.check_t(a)?;
        self.check_t(b)?;
        let n = self.dual.len();
        let mut out = vec![0.0; n];
        if a == b {
            return Ok(out);
        }
        let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
        let bp = self.ham.breakpoints();
        let d = self.dim();
        for (i, layer) in self.ham.layers().iter().enumerate() {
            let pa = lo.max(bp[i]);
            let pb = hi.min(bp[i + 1]);
            if !(pa < pb) {
                continue;
            }
            match (&layer.form, &self.tables[i]) {
                (LayerForm::Polynomial(f), Some(tab)) => {
                    let (w, wk) = f.time_weights(pa, pb);
                    for (m, o) in out.iter_mut().enumerate() {
                        let mut v = wk;
                        for (wj, hj) in w.iter().zip(tab) {
                            v += wj * hj[m];
                        }
                        *o += sign * v;
                    }
                }
                _ => {
                    for (o, q) in out.iter_mut().zip(self.dual_coords.chunks(d)) {
                        *o += sign * layer.integral(pa, pb, q)?;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Kernel of layer `i` carried to time `t`:
    /// `phi_i + int_{t_i}^t H` on the dual grid.
    pub fn kernel_at(&self, i: usize, t: f64) -> Result<SampledFunction, SolverError> {
        if i >= self.kernels.len() {
            return Err(SolverError::Invalid("layer index out of range"));
        }
        let step = self.integral_table(self.ham.breakpoints()[i], t)?;
        Ok(self.kernels[i].add_values(&step)?)
    }

    /// Global Hopf kernel `sigma* + int_0^t H`.
    pub fn hopf_kernel_at(&self, t: f64) -> Result<SampledFunction, SolverError> {
        self.kernel_at(0, t)
    }

    fn layer_of(&self, t: f64) -> Result<usize, SolverError> {
        Ok(self.ham.layer_index(t)?)
    }

    /// `u(t, x)` with the maximizer set `l(t, x)` under the solution's tie
    /// tolerance.
    pub fn eval(&self, t: f64, x: &[f64]) -> Result<(f64, ArgmaxSet), SolverError> {
        self.eval_with_tie(t, x, self.tie)
    }

    pub fn eval_with_tie(&self, t: f64, x: &[f64], tie: TieTolerance) -> Result<(f64, ArgmaxSet), SolverError> {
        let i = self.layer_of(t)?;
        self.eval_on_layer(i, t, x, tie)
    }

    /// Evaluation with the kernel of layer `i`, whatever layer owns `t`.
    pub fn eval_on_layer(
        &self,
        i: usize,
        t: f64,
        x: &[f64],
        tie: TieTolerance,
    ) -> Result<(f64, ArgmaxSet), SolverError> {
        self.check_x(x)?;
        let k = self.kernel_at(i, t)?;
        Ok(self.view(&k).argmax(x, tie))
    }

    /// `u(t, x)` only.
    pub fn value(&self, t: f64, x: &[f64]) -> Result<f64, SolverError> {
        self.check_x(x)?;
        let i = self.layer_of(t)?;
        if let Some(v) = self.max_in_layer(i, t, x) {
            return Ok(v);
        }
        let k = self.kernel_at(i, t)?;
        Ok(self.view(&k).max(x))
    }

    /// Allocation-free `max_q <x, q> - psi(q)` for a polynomial layer `i`
    /// and `t` inside it. Same arithmetic as `kernel_at` followed by a scan.
    fn max_in_layer(&self, i: usize, t: f64, x: &[f64]) -> Option<f64> {
        let bp = self.ham.breakpoints();
        let (LayerForm::Polynomial(f), Some(tab)) = (&self.ham.layers()[i].form, &self.tables[i]) else {
            return None;
        };
        if !(t >= bp[i] && t <= bp[i + 1]) {
            return None;
        }
        let (w, wk) = if t == bp[i] {
            (vec![0.0; tab.len()], 0.0)
        } else {
            f.time_weights(bp[i], t)
        };
        let phi = self.kernels[i].values();
        let d = self.dim();
        let mut best = f64::NEG_INFINITY;
        for (m, q) in self.dual_coords.chunks(d).enumerate() {
            let mut v = wk;
            for (wj, hj) in w.iter().zip(tab) {
                v += wj * hj[m];
            }
            let psi = phi[m] + (0.0 + v);
            let s = if d == 1 { x[0] * q[0] - psi } else { dot(x, q) - psi };
            if s > best {
                best = s;
            }
        }
        Some(best)
    }

    /// `u_H(t, x)`: single-kernel Hopf formula ignoring the layers.
    pub fn hopf_eval(&self, t: f64, x: &[f64], tie: TieTolerance) -> Result<(f64, ArgmaxSet), SolverError> {
        self.eval_on_layer(0, t, x, tie)
    }

    pub fn hopf_value(&self, t: f64, x: &[f64]) -> Result<f64, SolverError> {
        self.check_x(x)?;
        let k = self.hopf_kernel_at(t)?;
        Ok(self.view(&k).max(x))
    }

    pub(crate) fn view<'a>(&'a self, k: &'a SampledFunction) -> KernelView<'a> {
        KernelView {
            dim: self.dim(),
            coords: &self.dual_coords,
            values: k.values(),
        }
    }

    /// `u(t, .)` on every node of `x_grid`.
    pub fn slice(&self, t: f64, x_grid: &GridBox) -> Result<SampledFunction, SolverError> {
        let k = self.kernel_at(self.layer_of(t)?, t)?;
        Ok(legendre_transform(&k, x_grid)?)
    }

    /// `u_H(t, .)` on every node of `x_grid`.
    pub fn hopf_slice(&self, t: f64, x_grid: &GridBox) -> Result<SampledFunction, SolverError> {
        Ok(legendre_transform(&self.hopf_kernel_at(t)?, x_grid)?)
    }

    /// Largest disagreement at interior breakpoints between the kernel that
    /// ends there and the one that starts there, over `x_grid`.
    pub fn gluing_error(&self, x_grid: &GridBox) -> Result<f64, SolverError> {
        let bp = self.ham.breakpoints();
        let mut worst = 0.0f64;
        for i in 1..self.kernels.len() {
            let left = legendre_transform(&self.kernel_at(i - 1, bp[i])?, x_grid)?;
            let right = legendre_transform(&self.kernels[i], x_grid)?;
            for (a, b) in left.values().iter().zip(right.values()) {
                worst = worst.max((a - b).abs());
            }
        }
        Ok(worst)
    }
}

/// Free-function form of [`LayeredSolution::hopf_eval`].
pub fn eval_hopf_global(
    sol: &LayeredSolution,
    t: f64,
    x: &[f64],
    tie: TieTolerance,
) -> Result<(f64, ArgmaxSet), SolverError> {
    sol.hopf_eval(t, x, tie)
}

/// One semiconvexity test: points are `(t, x_1, ..., x_n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
    pub lambda: f64,
    /// `u(mid) - lambda u(y1) - (1 - lambda) u(y2) - lambda (1 - lambda) C |y1 - y2|^2 / 2`.
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemiconvexityOptions {
    pub samples: usize,
    pub constant: f64,
    pub seed: u64,
    /// Sampling box in `(t, x)`; one interval per coordinate.
    pub space_box: Vec<(f64, f64)>,
    /// Triples tested in addition to the random ones.
    pub extra_triples: Vec<(Vec<f64>, Vec<f64>, f64)>,
}

impl SemiconvexityOptions {
    pub fn new(samples: usize, constant: f64, seed: u64, space_box: Vec<(f64, f64)>) -> Self {
        Self {
            samples,
            constant,
            seed,
            space_box,
            extra_triples: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemiconvexityReport {
    pub constant: f64,
    pub samples_tested: usize,
    pub num_tol: f64,
    pub violations: Vec<Violation>,
    /// Largest excess over all tested triples (negative when every test has
    /// slack).
    pub max_excess: f64,
}

/// Semiconvexity of an arbitrary function of `(t, x)`.
pub fn check_semiconvexity_fn<F>(mut f: F, opts: &SemiconvexityOptions) -> Result<SemiconvexityReport, SolverError>
where
    F: FnMut(&[f64]) -> Result<f64, SolverError>,
{
    if !(opts.constant >= 0.0) {
        return Err(SolverError::Invalid("semiconvexity constant must be nonnegative"));
    }
    let d = opts.space_box.len();
    if d == 0 || opts.space_box.iter().any(|(lo, hi)| !(lo <= hi)) {
        return Err(SolverError::Invalid(
            "semiconvexity box must have lo <= hi per coordinate",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut triples = Vec::with_capacity(opts.samples + opts.extra_triples.len());
    for _ in 0..opts.samples {
        let mut draw = || -> Vec<f64> {
            opts.space_box
                .iter()
                .map(|&(lo, hi)| if lo < hi { rng.gen_range(lo..=hi) } else { lo })
                .collect()
        };
        let y1 = draw();
        let y2 = draw();
        let lambda: f64 = rng.gen_range(0.0..=1.0);
        triples.push((y1, y2, lambda));
    }
    for t in &opts.extra_triples {
        if t.0.len() != d || t.1.len() != d {
            return Err(SolverError::Dimension {
                expected: d,
                got: t.0.len(),
            });
        }
        triples.push(t.clone());
    }

    let mut evals = Vec::with_capacity(triples.len());
    let mut scale = 0.0f64;
    let mut mid = vec![0.0; d];
    for (y1, y2, lambda) in &triples {
        for k in 0..d {
            mid[k] = lambda * y1[k] + (1.0 - lambda) * y2[k];
        }
        let (a, b, m) = (f(y1)?, f(y2)?, f(&mid)?);
        scale = scale.max(a.abs()).max(b.abs()).max(m.abs());
        evals.push((a, b, m));
    }
    let num_tol = SEMICONVEXITY_NUM_TOL * (1.0 + scale);

    let mut violations = Vec::new();
    let mut max_excess = f64::NEG_INFINITY;
    for ((y1, y2, lambda), (a, b, m)) in triples.iter().zip(evals) {
        let dist2: f64 = y1.iter().zip(y2).map(|(p, q)| (p - q) * (p - q)).sum();
        let excess = m - lambda * a - (1.0 - lambda) * b - lambda * (1.0 - lambda) * 0.5 * opts.constant * dist2;
        max_excess = max_excess.max(excess);
        if excess > num_tol {
            violations.push(Violation {
                y1: y1.clone(),
                y2: y2.clone(),
                lambda: *lambda,
                excess,
            });
        }
    }
    Ok(SemiconvexityReport {
        constant: opts.constant,
        samples_tested: triples.len(),
        num_tol,
        violations,
        max_excess,
    })
}

/// Semiconvexity of the layered solution over `[0, T] x box` samples.
pub fn check_semiconvexity(
    sol: &LayeredSolution,
    opts: &SemiconvexityOptions,
) -> Result<SemiconvexityReport, SolverError> {
    if opts.space_box.len() != sol.dim() + 1 {
        return Err(SolverError::Dimension {
            expected: sol.dim() + 1,
            got: opts.space_box.len(),
        });
    }
    check_semiconvexity_fn(|y| sol.value(y[0], &y[1..]), opts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualPoint {
    pub t: f64,
    pub x: Vec<f64>,
    pub residual: f64,
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualField {
    pub points: Vec<ResidualPoint>,
    /// Max and mean over included points.
    pub max: f64,
    pub mean: f64,
    pub included: usize,
    pub singular_points: usize,
}

/// `|u_t + H(t, D_x u)|` by centered differences (one-sided in `t` at 0 and
/// `T`) on the nodes of `grid`, skipping points within `exclusion_radius`
/// of a detected singular point.
pub fn check_pde_residual(
    sol: &LayeredSolution,
    grid: &SpaceTimeGrid,
    fd_step: f64,
    exclusion_radius: f64,
) -> Result<ResidualField, SolverError> {
    let singular = detect_singular_points(sol, grid, &SingularityOptions::for_solution(sol))?;
    check_pde_residual_with(sol, grid, fd_step, exclusion_radius, &singular)
}

/// As [`check_pde_residual`] with a precomputed singular set.
pub fn check_pde_residual_with(
    sol: &LayeredSolution,
    grid: &SpaceTimeGrid,
    fd_step: f64,
    exclusion_radius: f64,
    singular: &[SingularPoint],
) -> Result<ResidualField, SolverError> {
    if !(fd_step > 0.0) || !(exclusion_radius >= 0.0) {
        return Err(SolverError::Invalid(
            "fd_step must be positive and exclusion_radius nonnegative",
        ));
    }
    if grid.space.dim() != sol.dim() {
        return Err(SolverError::Dimension {
            expected: sol.dim(),
            got: grid.space.dim(),
        });
    }
    let d = sol.dim();
    let horizon = sol.horizon();
    let space = &grid.space;
    let shifted: Vec<(GridBox, GridBox)> = (0..d)
        .map(|k| {
            let shift = |s: f64| {
                let mut axes = space.axes().to_vec();
                axes[k] = Axis::new(axes[k].lo + s, axes[k].hi + s, axes[k].count)?;
                GridBox::new(axes)
            };
            Ok((shift(fd_step)?, shift(-fd_step)?))
        })
        .collect::<Result<_, GridError>>()?;

    let mut points = Vec::with_capacity(grid.len());
    let mut max = 0.0f64;
    let mut sum = 0.0;
    let mut included = 0usize;
    let mut x = vec![0.0; d];
    let mut ux = vec![0.0; d];
    for t in grid.time.nodes() {
        let tp = (t + fd_step).min(horizon);
        let tm = (t - fd_step).max(0.0);
        let up = sol.slice(tp, space)?;
        let um = sol.slice(tm, space)?;
        let dx: Vec<(SampledFunction, SampledFunction)> = shifted
            .iter()
            .map(|(p, m)| Ok((sol.slice(t, p)?, sol.slice(t, m)?)))
            .collect::<Result<_, SolverError>>()?;
        for n in 0..space.len() {
            space.node_into(n, &mut x);
            let excluded = singular.iter().any(|s| {
                let mut r2 = (s.t - t) * (s.t - t);
                for k in 0..d {
                    r2 += (s.x[k] - x[k]) * (s.x[k] - x[k]);
                }
                libm::sqrt(r2) <= exclusion_radius
            });
            let ut = (up.values()[n] - um.values()[n]) / (tp - tm);
            for k in 0..d {
                ux[k] = (dx[k].0.values()[n] - dx[k].1.values()[n]) / (2.0 * fd_step);
            }
            let residual = (ut + sol.ham().eval(t, &ux)?).abs();
            if !excluded {
                max = max.max(residual);
                sum += residual;
                included += 1;
            }
            points.push(ResidualPoint {
                t,
                x: x.clone(),
                residual,
                excluded,
            });
        }
    }
    Ok(ResidualField {
        points,
        max,
        mean: if included > 0 { sum / included as f64 } else { 0.0 },
        included,
        singular_points: singular.len(),
    })
}
