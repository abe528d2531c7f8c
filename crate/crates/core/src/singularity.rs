//! Singular set of the layered solution.
//!
//! A point is singular when the maximizer set `l(t, x)` is not a singleton,
//! measured by its diameter. Kinks that fall between grid nodes show up as
//! jumps of the maximizer between neighbouring points and are located by
//! bisection (one dimension only). Reachable gradients, the propagation
//! predicate and arc tracing are one-dimensional.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::characteristics::Direction;
use crate::conjugate::{KernelView, TieTolerance};
use crate::grid::SpaceTimeGrid;
use crate::hamiltonian::HamError;
use crate::hull::convex_hull;
use crate::solver::{LayeredSolution, SolverError};

/// Default singularity threshold in dual-grid spacings.
pub const DEFAULT_THRESHOLD_SPACINGS: f64 = 3.0;

/// Default tie tolerance for singularity queries. Tighter than the
/// evaluation default so that nearly flat kernels do not produce spurious
/// ties.
pub const DETECTION_TIE: TieTolerance = TieTolerance::Relative(1e-12);

/// Level-set tolerance of the propagation predicate.
pub const LEVEL_TOL: f64 = 1e-9;

/// Samples per hull edge in the propagation predicate.
pub const EDGE_SAMPLES: usize = 101;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SingularityError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Hamiltonian(#[from] HamError),
    #[error("singularity analysis supports dimension 1, got {0}")]
    Dimension(usize),
    #[error("anchor (t = {t}, x = {x}) is not singular (l-diameter {diameter:e})")]
    NotSingular { t: f64, x: f64, diameter: f64 },
    #[error("invalid argument: {0}")]
    Invalid(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularityOptions {
    pub diam_threshold: f64,
    pub tie: TieTolerance,
    /// Width below which jump bisection stops.
    pub bisection_tol: f64,
    /// Locate kinks between grid nodes (one dimension).
    pub locate_jumps: bool,
}

impl SingularityOptions {
    pub fn for_solution(sol: &LayeredSolution) -> Self {
        Self {
            diam_threshold: DEFAULT_THRESHOLD_SPACINGS * sol.dual_spacing(),
            tie: DETECTION_TIE,
            bisection_tol: 1e-10,
            locate_jumps: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingularPoint {
    pub t: f64,
    pub x: Vec<f64>,
    /// `l`-diameter, or the maximizer jump across the final bisection
    /// bracket for points found between nodes.
    pub diameter: f64,
    pub on_grid: bool,
}

/// Diameter and centroid of `l` at `x` for one kernel.
struct Probe<'a> {
    view: KernelView<'a>,
    tie: TieTolerance,
}

impl Probe<'_> {
    fn at(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let (_, l) = self.view.argmax(x, self.tie);
        (l.diameter, l.centroid())
    }

    /// Bisects `[xa, xb]` (1D) for a maximizer jump larger than `thr`.
    fn locate_jump(
        &self,
        mut xa: f64,
        mut ca: f64,
        mut xb: f64,
        mut cb: f64,
        thr: f64,
        tol: f64,
    ) -> Option<(f64, f64)> {
        loop {
            if xb - xa <= tol {
                return Some((0.5 * (xa + xb), (cb - ca).abs()));
            }
            let m = 0.5 * (xa + xb);
            let (dm, cm) = self.at(&[m]);
            if dm > thr {
                return Some((m, dm));
            }
            let cm = cm[0];
            if (cm - ca).abs() > thr {
                xb = m;
                cb = cm;
            } else if (cb - cm).abs() > thr {
                xa = m;
                ca = cm;
            } else {
                return None;
            }
        }
    }
}

/// Singular points of `u` on (and, in 1D, between) the nodes of `grid`.
pub fn detect_singular_points(
    sol: &LayeredSolution,
    grid: &SpaceTimeGrid,
    opts: &SingularityOptions,
) -> Result<Vec<SingularPoint>, SingularityError> {
    let d = sol.dim();
    if grid.space.dim() != d {
        return Err(SolverError::Dimension {
            expected: d,
            got: grid.space.dim(),
        }
        .into());
    }
    let thr = opts.diam_threshold;
    let mut out = Vec::new();
    let mut x = vec![0.0; d];
    for t in grid.time.nodes() {
        let layer = sol.ham().layer_index(t)?;
        let kernel = sol.kernel_at(layer, t)?;
        let probe = Probe {
            view: sol.view(&kernel),
            tie: opts.tie,
        };
        let mut prev: Option<(f64, f64, f64)> = None;
        for n in 0..grid.space.len() {
            grid.space.node_into(n, &mut x);
            let (diam, center) = probe.at(&x);
            if diam > thr {
                out.push(SingularPoint {
                    t,
                    x: x.clone(),
                    diameter: diam,
                    on_grid: true,
                });
            }
            if d == 1 && opts.locate_jumps {
                if let Some((xp, dp, cp)) = prev {
                    if dp <= thr && diam <= thr && (center[0] - cp).abs() > thr {
                        if let Some((xs, cert)) = probe.locate_jump(xp, cp, x[0], center[0], thr, opts.bisection_tol) {
                            out.push(SingularPoint {
                                t,
                                x: vec![xs],
                                diameter: cert,
                                on_grid: false,
                            });
                        }
                    }
                }
                prev = Some((x[0], diam, center[0]));
            }
        }
    }
    Ok(out)
}

/// `D*u` and `D^-u` at a point, in the `(p, q) = (u_t, u_x)` plane.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSets {
    /// `(-H(t0, q), q)` for `q` in `l(t0, x0)`.
    pub d_star: Vec<(f64, f64)>,
    /// Hull vertices of `d_star`, counter-clockwise.
    pub d_minus: Vec<(f64, f64)>,
    /// Whether `D^-u` has points outside `D*u` (the hull of two or more
    /// distinct points always does).
    pub boundary_minus_dstar_nonempty: bool,
    /// `H(t0, .)` is not strictly convex or concave on the dual grid (some
    /// second difference vanishes), so the hypothesis behind `D*u = H` is
    /// violated there.
    pub strictness_fails: bool,
}

impl GradientSets {
    pub fn is_singleton(&self) -> bool {
        self.d_minus.len() <= 1
    }
}

fn require_1d(sol: &LayeredSolution) -> Result<(), SingularityError> {
    if sol.dim() != 1 {
        return Err(SingularityError::Dimension(sol.dim()));
    }
    Ok(())
}

pub fn reachable_gradients(
    sol: &LayeredSolution,
    t0: f64,
    x0: f64,
    tie: TieTolerance,
) -> Result<GradientSets, SingularityError> {
    require_1d(sol)?;
    let (_, l) = sol.eval_with_tie(t0, &[x0], tie)?;
    let ham = sol.ham();
    let d_star = l
        .scalars()
        .into_iter()
        .map(|q| Ok((-ham.eval(t0, &[q])?, q)))
        .collect::<Result<Vec<_>, HamError>>()?;
    let d_minus = convex_hull(&d_star);
    let qs = sol.dual().axis(0).nodes();
    let hs = qs.iter().map(|&q| ham.eval(t0, &[q])).collect::<Result<Vec<_>, _>>()?;
    let scale = 1.0 + hs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let strictness_fails = hs
        .windows(3)
        .any(|w| (w[0] - 2.0 * w[1] + w[2]).abs() <= crate::hamiltonian::CURVATURE_TOL * scale);
    Ok(GradientSets {
        boundary_minus_dstar_nonempty: d_minus.len() >= 2,
        d_star,
        d_minus,
        strictness_fails,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationReport {
    pub sets: GradientSets,
    /// `max g` over the hull, `g(p, q) = p + H(t0, q)`.
    pub alpha: f64,
    /// Some hull edge lies in `{g = 0}`.
    pub vanishing_segment: bool,
    pub predicted: bool,
}

/// Whether a singular arc is predicted to emanate from `(t0, x0)`.
pub fn check_propagation_condition(
    sol: &LayeredSolution,
    t0: f64,
    x0: f64,
    tie: TieTolerance,
) -> Result<PropagationReport, SingularityError> {
    let sets = reachable_gradients(sol, t0, x0, tie)?;
    let ham = sol.ham();
    let g = |(p, q): (f64, f64)| -> Result<f64, HamError> { Ok(p + ham.eval(t0, &[q])?) };
    let hull = &sets.d_minus;
    let mut alpha = f64::NEG_INFINITY;
    for &v in hull {
        alpha = alpha.max(g(v)?);
    }
    let edges = match hull.len() {
        0 | 1 => 0,
        2 => 1,
        n => n,
    };
    let mut vanishing_segment = false;
    for e in 0..edges {
        let a = hull[e];
        let b = hull[(e + 1) % hull.len()];
        let mut all_zero = true;
        for s in 0..EDGE_SAMPLES {
            let w = s as f64 / (EDGE_SAMPLES - 1) as f64;
            let v = g((a.0 + w * (b.0 - a.0), a.1 + w * (b.1 - a.1)))?;
            alpha = alpha.max(v);
            all_zero &= v.abs() <= LEVEL_TOL;
        }
        vanishing_segment |= all_zero;
    }
    let predicted = alpha > 0.0 && !vanishing_segment && !sets.is_singleton();
    Ok(PropagationReport {
        sets,
        alpha,
        vanishing_segment,
        predicted,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArcSample {
    pub t: f64,
    pub x: f64,
    /// Singularity certificate, see [`SingularPoint::diameter`].
    pub diameter: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// No singular point within the search window at the next step.
    NotFound,
    /// The next step would leave `[0, T]`.
    TimeBoundary,
    MaxSteps,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::NotFound => "not_found",
            Termination::TimeBoundary => "time_boundary",
            Termination::MaxSteps => "max_steps",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingularArc {
    pub anchor: (f64, f64),
    pub direction: Direction,
    /// Starts with the anchor.
    pub samples: Vec<ArcSample>,
    pub termination: Termination,
    /// Speed bound `K = sup |H_p|` over the dual box, which sizes the
    /// search window.
    pub lipschitz_bound: f64,
    /// Largest `|dx| / |dt|` between consecutive samples.
    pub max_ratio: f64,
}

/// Scan resolution of the search window, in points per half-window.
const WINDOW_POINTS: usize = 64;

/// Smallest half-window, so that stationary arcs are still followed.
const MIN_WINDOW: f64 = 1e-3;

/// Follows singular points from `(t0, x0)` in steps of `dt`.
pub fn trace_singular_arc(
    sol: &LayeredSolution,
    t0: f64,
    x0: f64,
    direction: Direction,
    dt: f64,
    max_steps: usize,
    opts: &SingularityOptions,
) -> Result<SingularArc, SingularityError> {
    require_1d(sol)?;
    if !(dt > 0.0) {
        return Err(SingularityError::Invalid("time step must be positive"));
    }
    let thr = opts.diam_threshold;
    let (_, l) = sol.eval_with_tie(t0, &[x0], opts.tie)?;
    if l.diameter <= thr {
        return Err(SingularityError::NotSingular {
            t: t0,
            x: x0,
            diameter: l.diameter,
        });
    }
    let speed = speed_bound(sol)?;
    let mut samples = vec![ArcSample {
        t: t0,
        x: x0,
        diameter: l.diameter,
    }];
    let mut max_ratio = 0.0f64;
    let sign = match direction {
        Direction::Forward => 1.0,
        Direction::Backward => -1.0,
    };
    let horizon = sol.horizon();
    let mut termination = Termination::MaxSteps;
    for step in 1..=max_steps {
        let t = t0 + sign * dt * step as f64;
        if t < -1e-12 * horizon || t > horizon * (1.0 + 1e-12) {
            termination = Termination::TimeBoundary;
            break;
        }
        let t = t.clamp(0.0, horizon);
        let prev = *samples.last().expect("anchor present");
        let half = (speed * (t - prev.t).abs()).max(MIN_WINDOW);
        match nearest_singular(sol, t, prev.x, half, opts)? {
            Some((x, diameter)) => {
                max_ratio = max_ratio.max((x - prev.x).abs() / (t - prev.t).abs());
                samples.push(ArcSample { t, x, diameter });
            }
            None => {
                termination = Termination::NotFound;
                break;
            }
        }
    }
    Ok(SingularArc {
        anchor: (t0, x0),
        direction,
        samples,
        termination,
        lipschitz_bound: speed,
        max_ratio,
    })
}

/// Singular point nearest to `center` within `center +- half`, searching
/// windows of a quarter, a half and the full width in turn.
fn nearest_singular(
    sol: &LayeredSolution,
    t: f64,
    center: f64,
    half: f64,
    opts: &SingularityOptions,
) -> Result<Option<(f64, f64)>, SingularityError> {
    let layer = sol.ham().layer_index(t)?;
    let kernel = sol.kernel_at(layer, t)?;
    let probe = Probe {
        view: sol.view(&kernel),
        tie: opts.tie,
    };
    let thr = opts.diam_threshold;
    for frac in [0.25, 0.5, 1.0] {
        let w = half * frac;
        let n = 2 * WINDOW_POINTS + 1;
        let xs: Vec<f64> = (0..n)
            .map(|i| center - w + 2.0 * w * i as f64 / (n - 1) as f64)
            .collect();
        let probes: Vec<(f64, f64)> = xs
            .iter()
            .map(|&x| {
                let (d, c) = probe.at(&[x]);
                (d, c[0])
            })
            .collect();
        let mut best: Option<(f64, f64)> = None;
        let mut consider = |x: f64, d: f64| {
            if best.is_none_or(|(bx, _)| (x - center).abs() < (bx - center).abs()) {
                best = Some((x, d));
            }
        };
        for (i, &x) in xs.iter().enumerate() {
            let (d, c) = probes[i];
            if d > thr {
                consider(x, d);
            } else if i > 0 && opts.locate_jumps {
                let (dp, cp) = probes[i - 1];
                if dp <= thr && (c - cp).abs() > thr {
                    if let Some((xj, cert)) = probe.locate_jump(xs[i - 1], cp, x, c, thr, opts.bisection_tol) {
                        consider(xj, cert);
                    }
                }
            }
        }
        if best.is_some() {
            return Ok(best);
        }
    }
    Ok(None)
}

/// `sup |H_p|` over the dual nodes at the layer breakpoints and 201
/// interior times.
fn speed_bound(sol: &LayeredSolution) -> Result<f64, SingularityError> {
    let ham = sol.ham();
    let horizon = ham.horizon();
    let qs = sol.dual().axis(0).nodes();
    let mut times: Vec<f64> = (0..=200).map(|i| horizon * i as f64 / 200.0).collect();
    times.extend_from_slice(ham.breakpoints());
    let mut best = 0.0f64;
    for t in times {
        for &q in &qs {
            best = best.max(ham.grad_p(t, &[q])?.grad[0].abs());
        }
    }
    Ok(best)
}
