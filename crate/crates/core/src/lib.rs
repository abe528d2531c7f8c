//! Layered viscosity solutions of `u_t + H(t, D_x u) = 0, u(0, .) = sigma`.
//!
//! The solution is represented by conjugate kernels on a dual (momentum)
//! grid. On each time layer the Hopf-type formula
//!
//! ```text
//! u(t, x) = max_q { <x, q> - phi_i(q) - int_{t_i}^t H(tau, q) dtau }
//! ```
//!
//! is evaluated, and consecutive layers are glued by replacing the kernel
//! with the lower convex envelope (biconjugate) of the accumulated kernel.
//! Around that core the crate offers characteristic strips, semiconvexity
//! and PDE-residual checks, and singular-set analysis (reachable gradients,
//! propagation predicate, arc tracing).
//!
//! The crate is `no_std` and only needs `alloc`; file formats and the
//! command line live in the `hopflayer-cli` companion crate.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod characteristics;
pub mod conjugate;
pub mod grid;
pub mod hamiltonian;
pub mod hull;
pub mod poly;
pub mod quadrature;
pub mod sigma;
pub mod singularity;
pub mod solver;

pub use characteristics::{
    classify, emit_characteristic, emit_layered, extend_across_layer, find_backward, BackwardCandidate,
    BackwardSearchResult, Characteristic, CharacteristicError, CharacteristicType, CurveSample, Direction,
};
pub use conjugate::{
    biconjugate, conjugate_eval_with_argmax, legendre_transform, lower_convex_envelope, ArgmaxSet, ConjugateError,
    SampledFunction, TieTolerance,
};
pub use grid::{Axis, GridBox, GridError, SpaceTimeGrid};
pub use hamiltonian::{
    detect_breakpoints, GradP, HamError, HamiltonianFn, Layer, LayerForm, LayerKind, LayeredHamiltonian,
    MomentumProfile, PolynomialForm, SampledProfile, SeparableTerm, SupEstimate,
};
pub use poly::Polynomial;
pub use sigma::{ConvexPolynomial, InitialData, PiecewiseLinear, Profile, SigmaError};
pub use singularity::{
    check_propagation_condition, detect_singular_points, reachable_gradients, trace_singular_arc, ArcSample,
    GradientSets, PropagationReport, SingularArc, SingularPoint, SingularityError, SingularityOptions, Termination,
    DETECTION_TIE,
};
pub use solver::{
    build_layered_solution, check_pde_residual, check_pde_residual_with, check_semiconvexity, check_semiconvexity_fn,
    eval_hopf_global, LayeredSolution, ResidualField, ResidualPoint, SemiconvexityOptions, SemiconvexityReport,
    SolverError, Violation,
};
