//! Characteristic strips in one space dimension.
//!
//! For `C^1` convex `sigma` the strip from `y` has constant momentum
//! `p = sigma'(y)` and
//!
//! ```text
//! x(t) = y + int_0^t H_p(tau, p) dtau
//! v(t) = sigma(y) + int_0^t (p H_p(tau, p) - H(tau, p)) dtau
//! ```
//!
//! A strip can also start at a layer breakpoint, in which case the same
//! formulas run from `(t_start, x_start, v_start)`.

use alloc::vec::Vec;

use thiserror::Error;

use crate::hamiltonian::{HamError, LayeredHamiltonian};
use crate::sigma::{InitialData, SigmaError};
use crate::singularity::DETECTION_TIE;
use crate::solver::{LayeredSolution, SolverError};

/// Default number of scan points in [`find_backward`].
pub const DEFAULT_SCAN_POINTS: usize = 4001;

/// `l`-diameter (in dual spacings) up to which `u(t_1, .)` counts as
/// differentiable at a junction.
pub const JUNCTION_SINGLETON_SPACINGS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CharacteristicType {
    /// The momentum belongs to `l(t0, x0)`.
    TypeI,
    TypeII,
}

impl CharacteristicType {
    pub fn name(self) -> &'static str {
        match self {
            CharacteristicType::TypeI => "I",
            CharacteristicType::TypeII => "II",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CharacteristicError {
    #[error(transparent)]
    Sigma(#[from] SigmaError),
    #[error(transparent)]
    Hamiltonian(#[from] HamError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("characteristics support dimension 1, got {0}")]
    Dimension(usize),
    #[error("u({t}, .) is not differentiable at x = {x} (l-diameter {diameter:e})")]
    NondifferentiableJunction { t: f64, x: f64, diameter: f64 },
    #[error("characteristic with momentum {p} is of type II at (t = {t}, x = {x})")]
    NotTypeI { t: f64, x: f64, p: f64 },
    #[error("t = {0} is not an interior layer breakpoint")]
    NotBreakpoint(f64),
    #[error("invalid argument: {0}")]
    Invalid(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveSample {
    pub t: f64,
    pub x: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Characteristic {
    pub p: f64,
    pub t_start: f64,
    pub x_start: f64,
    pub v_start: f64,
    /// End of the validated time range.
    pub t_end: f64,
    /// Breakpoints the strip was carried across.
    pub junctions: Vec<f64>,
}

impl Characteristic {
    pub fn x_at(&self, ham: &LayeredHamiltonian, t: f64) -> Result<f64, HamError> {
        Ok(self.x_start + ham.integral_grad_p(self.t_start, t, &[self.p])?[0])
    }

    pub fn v_at(&self, ham: &LayeredHamiltonian, t: f64) -> Result<f64, HamError> {
        let dx = ham.integral_grad_p(self.t_start, t, &[self.p])?[0];
        Ok(self.v_start + self.p * dx - ham.integral(self.t_start, t, &[self.p])?)
    }

    /// Position at `t = 0`.
    pub fn origin(&self, ham: &LayeredHamiltonian) -> Result<f64, HamError> {
        self.x_at(ham, 0.0)
    }

    pub fn sample(&self, ham: &LayeredHamiltonian, times: &[f64]) -> Result<Vec<CurveSample>, HamError> {
        times
            .iter()
            .map(|&t| {
                Ok(CurveSample {
                    t,
                    x: self.x_at(ham, t)?,
                    v: self.v_at(ham, t)?,
                })
            })
            .collect()
    }
}

fn require_1d(dim: usize) -> Result<(), CharacteristicError> {
    if dim != 1 {
        return Err(CharacteristicError::Dimension(dim));
    }
    Ok(())
}

/// Strip of `(H, sigma)` from `y`, valid on `[0, T]` as a solution of the
/// characteristic equations.
pub fn emit_characteristic(
    sigma: &InitialData,
    ham: &LayeredHamiltonian,
    y: f64,
) -> Result<Characteristic, CharacteristicError> {
    require_1d(sigma.dim())?;
    let p = sigma.gradient(&[y])?[0];
    Ok(Characteristic {
        p,
        t_start: 0.0,
        x_start: y,
        v_start: sigma.value(&[y]),
        t_end: ham.horizon(),
        junctions: Vec::new(),
    })
}

/// Strip from `y` carried forward through the layers as long as it is of
/// type I at each breakpoint and `u(t_i, .)` is differentiable where it
/// arrives; `t_end` marks the first breakpoint where that fails.
pub fn emit_layered(sol: &LayeredSolution, y: f64, momentum_tol: f64) -> Result<Characteristic, CharacteristicError> {
    let mut c = emit_characteristic(sol.sigma(), sol.ham(), y)?;
    let bp = sol.breakpoints();
    c.t_end = bp[1];
    for i in 1..bp.len() - 1 {
        let t1 = bp[i];
        let x1 = c.x_at(sol.ham(), t1)?;
        let (_, arriving) = sol.eval_on_layer(i - 1, t1, &[x1], DETECTION_TIE)?;
        if !arriving.contains_within(&[c.p], momentum_tol) || junction_diameter(sol, i, x1)? > junction_limit(sol) {
            break;
        }
        c.junctions.push(t1);
        c.t_end = bp[i + 1];
    }
    Ok(c)
}

fn junction_limit(sol: &LayeredSolution) -> f64 {
    JUNCTION_SINGLETON_SPACINGS * sol.dual_spacing()
}

/// `l`-diameter of `u(t_i, .)` at `x` as initial data of layer `i`.
fn junction_diameter(sol: &LayeredSolution, i: usize, x: f64) -> Result<f64, CharacteristicError> {
    let (_, l) = sol.eval_on_layer(i, sol.breakpoints()[i], &[x], DETECTION_TIE)?;
    Ok(l.diameter)
}

/// Type of a strip with momentum `p` through `(t0, x0)`.
pub fn classify(
    sol: &LayeredSolution,
    p: f64,
    t0: f64,
    x0: f64,
    momentum_tol: f64,
) -> Result<CharacteristicType, CharacteristicError> {
    require_1d(sol.dim())?;
    let (_, l) = sol.eval(t0, &[x0])?;
    Ok(if l.contains_within(&[p], momentum_tol) {
        CharacteristicType::TypeI
    } else {
        CharacteristicType::TypeII
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardCandidate {
    pub y: f64,
    pub p: f64,
    /// `|x(t0, y) - x0|`.
    pub residual: f64,
    pub kind: Option<CharacteristicType>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardSearchResult {
    pub t0: f64,
    pub x0: f64,
    pub candidates: Vec<BackwardCandidate>,
}

impl BackwardSearchResult {
    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Fills in the type of every candidate.
    pub fn classify(&mut self, sol: &LayeredSolution, momentum_tol: f64) -> Result<(), CharacteristicError> {
        for c in &mut self.candidates {
            c.kind = Some(classify(sol, c.p, self.t0, self.x0, momentum_tol)?);
        }
        Ok(())
    }
}

/// All `y` in `[lo, hi]` whose strip reaches `x0` at `t0`, within `tol`.
///
/// Scans `scan_points` values of `y`, keeps exact zeros and refines every
/// sign change of `x(t0, y) - x0` by bisection. Brackets across a jump of
/// `sigma'` are dropped by the residual check. Kinks of `sigma` are skipped.
pub fn find_backward(
    sigma: &InitialData,
    ham: &LayeredHamiltonian,
    t0: f64,
    x0: f64,
    (lo, hi): (f64, f64),
    tol: f64,
    scan_points: usize,
) -> Result<BackwardSearchResult, CharacteristicError> {
    require_1d(sigma.dim())?;
    if !(lo < hi) || scan_points < 2 || !(tol > 0.0) {
        return Err(CharacteristicError::Invalid(
            "need lo < hi, two scan points and tol > 0",
        ));
    }
    let miss = |y: f64| -> Result<Option<(f64, f64)>, CharacteristicError> {
        match sigma.gradient(&[y]) {
            Ok(g) => Ok(Some((y + ham.integral_grad_p(0.0, t0, &g)?[0] - x0, g[0]))),
            Err(SigmaError::Kink { .. }) | Err(SigmaError::OutsideDomain { .. }) => Ok(None),
            Err(e) => Err(e.into()),
        }
    };
    let ys: Vec<f64> = (0..scan_points)
        .map(|i| lo + (hi - lo) * i as f64 / (scan_points - 1) as f64)
        .collect();
    let fs = ys.iter().map(|&y| miss(y)).collect::<Result<Vec<_>, _>>()?;
    let mut candidates = Vec::new();
    for i in 0..scan_points {
        let Some((fi, pi)) = fs[i] else { continue };
        if fi == 0.0 {
            candidates.push(BackwardCandidate {
                y: ys[i],
                p: pi,
                residual: 0.0,
                kind: None,
            });
            continue;
        }
        let Some(Some((fj, _))) = fs.get(i + 1) else { continue };
        if *fj == 0.0 || fi.signum() == fj.signum() {
            continue;
        }
        let (mut a, mut b) = (ys[i], ys[i + 1]);
        let mut fa = fi;
        let mut best: Option<(f64, f64, f64)> = None;
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            let Some((fm, pm)) = miss(m)? else { break };
            if best.is_none_or(|(_, r, _)| fm.abs() < r) {
                best = Some((m, fm.abs(), pm));
            }
            if fm == 0.0 || (b - a) <= f64::EPSILON * (1.0 + m.abs()) {
                break;
            }
            if fm.signum() == fa.signum() {
                a = m;
                fa = fm;
            } else {
                b = m;
            }
        }
        if let Some((y, residual, p)) = best {
            if residual <= tol {
                candidates.push(BackwardCandidate {
                    y,
                    p,
                    residual,
                    kind: None,
                });
            }
        }
    }
    Ok(BackwardSearchResult { t0, x0, candidates })
}

/// Carries a strip across the interior breakpoint `t1`.
///
/// Forward: a type I strip of the problem started at 0 becomes a strip of
/// the problem restarted at `t1` with data `u(t1, .)`, same momentum.
/// Backward: a strip starting at `(t1, x1)` is extended to `t = 0` with its
/// momentum. Both require `u(t1, .)` differentiable at the junction.
pub fn extend_across_layer(
    c: &Characteristic,
    sol: &LayeredSolution,
    t1: f64,
    direction: Direction,
    momentum_tol: f64,
) -> Result<Characteristic, CharacteristicError> {
    require_1d(sol.dim())?;
    let bp = sol.breakpoints();
    let i = (1..bp.len() - 1)
        .find(|&i| bp[i] == t1)
        .ok_or(CharacteristicError::NotBreakpoint(t1))?;
    let ham = sol.ham();
    let x1 = c.x_at(ham, t1)?;
    let diameter = junction_diameter(sol, i, x1)?;
    if diameter > junction_limit(sol) {
        return Err(CharacteristicError::NondifferentiableJunction { t: t1, x: x1, diameter });
    }
    match direction {
        Direction::Forward => {
            let (_, arriving) = sol.eval_on_layer(i - 1, t1, &[x1], DETECTION_TIE)?;
            if !arriving.contains_within(&[c.p], momentum_tol) {
                return Err(CharacteristicError::NotTypeI { t: t1, x: x1, p: c.p });
            }
            let mut junctions = c.junctions.clone();
            junctions.push(t1);
            Ok(Characteristic {
                p: c.p,
                t_start: t1,
                x_start: x1,
                v_start: c.v_at(ham, t1)?,
                t_end: c.t_end.max(bp[i + 1]),
                junctions,
            })
        }
        Direction::Backward => {
            if c.t_start != t1 {
                return Err(CharacteristicError::Invalid(
                    "backward extension needs a strip starting at the breakpoint",
                ));
            }
            Ok(Characteristic {
                p: c.p,
                t_start: 0.0,
                x_start: c.x_at(ham, 0.0)?,
                v_start: c.v_at(ham, 0.0)?,
                t_end: c.t_end,
                junctions: c.junctions.clone(),
            })
        }
    }
}
