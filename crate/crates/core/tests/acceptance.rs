//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Tolerances are pinned below.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use hopflayer::{
    biconjugate, build_layered_solution, check_pde_residual_with, check_semiconvexity, check_semiconvexity_fn,
    classify, conjugate_eval_with_argmax, detect_singular_points, emit_characteristic, emit_layered,
    extend_across_layer, find_backward, legendre_transform, reachable_gradients, trace_singular_arc, Axis,
    CharacteristicType, Direction, GridBox, InitialData, LayeredHamiltonian, LayeredSolution, MomentumProfile,
    PiecewiseLinear, Polynomial, SampledFunction, SemiconvexityOptions, SeparableTerm, SingularityOptions,
    SpaceTimeGrid, TieTolerance, DETECTION_TIE,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DUAL_NODES: usize = 2001;
const GOLDEN_TOL: f64 = 1e-3;
const RUNTIME_LIMIT: Duration = Duration::from_secs(10);
const SLICE_TOL: f64 = 1e-6;
const DOMINATION_TOL: f64 = 1e-9;
const GAP_EXPECTED: f64 = 0.25;
const GAP_TOL: f64 = 1e-3;
const SEMICONVEXITY_SAMPLES: usize = 100_000;
const SEMICONVEXITY_SEED: u64 = 20_240_601;
const RESIDUAL_TOL: f64 = 1e-2;
const FD_STEP: f64 = 1e-3;
const GRID_STEP: f64 = 0.01;
const EXCLUSION_SPACINGS: f64 = 3.0;
const GRADIENT_TOL: f64 = 1e-6;
const ARC_REACH: f64 = 0.05;
const CONJUGATE_INSTANCES: usize = 100;
const TRIPLE_TOL: f64 = 1e-9;
const ROUNDING_ULPS: f64 = 16.0;
const CHAR_VALUE_TOL: f64 = 1e-4;
const HUBER_RADIUS: f64 = 0.05;
const BACKWARD_TOL: f64 = 1e-10;
const ROUND_TRIP_TOL: f64 = 1e-8;

fn golden_ham() -> LayeredHamiltonian {
    let term = SeparableTerm::new(
        Polynomial::new(vec![-1.0, 2.0]),
        MomentumProfile::uniform(Polynomial::new(vec![0.0, 0.0, 1.0]), 1),
    );
    LayeredHamiltonian::from_separable(1, 2.0, term, Polynomial::zero()).expect("golden Hamiltonian")
}

fn golden_solution(sigma: InitialData) -> LayeredSolution {
    build_layered_solution(sigma, golden_ham(), GridBox::line(-1.0, 1.0, DUAL_NODES).unwrap()).expect("golden solution")
}

fn closed_form(t: f64, x: f64) -> f64 {
    let s = t - 0.5;
    if t > 0.5 && x.abs() <= 2.0 * s * s {
        x * x / (4.0 * s * s) + 0.25
    } else {
        x.abs() - s * s + 0.25
    }
}

fn time_axis() -> Axis {
    Axis::new(0.0, 2.0, 201).unwrap()
}

fn space_grid() -> GridBox {
    GridBox::line(-3.0, 3.0, 601).unwrap()
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let sol = golden_solution(InitialData::pwl(PiecewiseLinear::abs()));
    let xs = space_grid();
    let mut worst = 0.0f64;
    for t in time_axis().nodes() {
        let slice = sol.slice(t, &xs).unwrap();
        for (x, u) in xs.axis(0).nodes().into_iter().zip(slice.values()) {
            worst = worst.max((u - closed_form(t, x)).abs());
        }
    }
    // Pointwise spot check that the slices agree with direct evaluation.
    let mut spot = 0.0f64;
    for &(t, x) in &[
        (0.0, -2.5),
        (0.37, 0.0),
        (0.5, 1.0),
        (0.73, 0.02),
        (2.0, 0.0),
        (2.0, 2.75),
    ] {
        spot = spot.max((sol.value(t, &[x]).unwrap() - closed_form(t, x)).abs());
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= GOLDEN_TOL && spot <= GOLDEN_TOL && elapsed <= RUNTIME_LIMIT,
        format!(
            "max |u - closed form| = {worst:.3e} (spot {spot:.3e}, tol {GOLDEN_TOL:e}), build + grid {:.2} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_2() -> Outcome {
    let sol = golden_solution(InitialData::pwl(PiecewiseLinear::abs()));
    let xs = space_grid();
    let mut worst = 0.0f64;
    for x in xs.axis(0).nodes() {
        worst = worst.max((sol.value(0.5, &[x]).unwrap() - (x.abs() + 0.25)).abs());
    }
    outcome(
        worst <= SLICE_TOL,
        format!("max |u(1/2, x) - |x| - 1/4| = {worst:.3e} (tol {SLICE_TOL:e})"),
    )
}

type Criterion = fn() -> Outcome;

fn criterion_3() -> Outcome {
    let sol = golden_solution(InitialData::pwl(PiecewiseLinear::abs()));
    let xs = space_grid();
    let mut excess = f64::NEG_INFINITY;
    for t in time_axis().nodes() {
        let u = sol.slice(t, &xs).unwrap();
        let h = sol.hopf_slice(t, &xs).unwrap();
        for (a, b) in u.values().iter().zip(h.values()) {
            excess = excess.max(b - a);
        }
    }
    let gap = sol.value(2.0, &[0.0]).unwrap() - sol.hopf_value(2.0, &[0.0]).unwrap();
    outcome(
        excess <= DOMINATION_TOL && (gap - GAP_EXPECTED).abs() <= GAP_TOL,
        format!("max(u_H - u) = {excess:.3e} (tol {DOMINATION_TOL:e}); u(2,0) - u_H(2,0) = {gap:.6} (expected {GAP_EXPECTED} +- {GAP_TOL:e})"),
    )
}

fn criterion_4() -> Outcome {
    let sol = golden_solution(InitialData::pwl(PiecewiseLinear::abs()));
    let m = golden_ham().sup_abs_ht(sol.dual()).unwrap();
    let c = 4.0 * m.value;
    let opts = SemiconvexityOptions::new(
        SEMICONVEXITY_SAMPLES,
        c,
        SEMICONVEXITY_SEED,
        vec![(0.0, 2.0), (-3.0, 3.0)],
    );
    let report = check_semiconvexity(&sol, &opts).unwrap();
    let mut control_opts = opts.clone();
    control_opts.extra_triples = vec![(vec![1.0, -0.01], vec![1.0, 0.01], 0.5)];
    let control = check_semiconvexity_fn(|y| Ok(-y[1].abs()), &control_opts).unwrap();
    outcome(
        m.value == 2.0 && report.violations.is_empty() && !control.violations.is_empty(),
        format!(
            "M = {}, C = {c}: {} violations in {} triples (max excess {:.3e}, num tol {:.1e}); -|x| control: {} violations",
            m.value,
            report.violations.len(),
            report.samples_tested,
            report.max_excess,
            report.num_tol,
            control.violations.len()
        ),
    )
}

fn criterion_5() -> Outcome {
    let sol = golden_solution(InitialData::pwl(PiecewiseLinear::abs()));
    let grid = SpaceTimeGrid::new(time_axis(), space_grid());
    let opts = SingularityOptions::for_solution(&sol);
    let singular = detect_singular_points(&sol, &grid, &opts).unwrap();
    let field = check_pde_residual_with(&sol, &grid, FD_STEP, EXCLUSION_SPACINGS * GRID_STEP, &singular).unwrap();
    outcome(
        field.max <= RESIDUAL_TOL,
        format!(
            "max residual {:.3e} over {} points (mean {:.3e}, {} excluded near {} singular points, tol {RESIDUAL_TOL:e})",
            field.max,
            field.included,
            field.mean,
            field.points.len() - field.included,
            field.singular_points
        ),
    )
}

fn criterion_6() -> Outcome {
    let sol = golden_solution(InitialData::pwl(PiecewiseLinear::abs()));
    let opts = SingularityOptions::for_solution(&sol);
    let grid = SpaceTimeGrid::new(time_axis(), space_grid());
    let pts = detect_singular_points(&sol, &grid, &opts).unwrap();
    let mut ok = true;
    let mut notes = Vec::new();

    let early: Vec<f64> = time_axis()
        .nodes()
        .into_iter()
        .filter(|&t| t > 0.0 && t <= 0.5)
        .collect();
    let missing = early
        .iter()
        .filter(|&&t| !pts.iter().any(|p| p.t == t && p.x[0] == 0.0))
        .count();
    let late = pts.iter().filter(|p| p.t > 0.6).count();
    let stray = pts.iter().filter(|p| p.x[0] != 0.0).count();
    ok &= missing == 0 && late == 0;
    notes.push(format!(
        "{} detections, {missing} of {} early times missing, {late} after t = 0.6, {stray} off x = 0",
        pts.len(),
        early.len()
    ));

    let g = reachable_gradients(&sol, 0.5, 0.0, DETECTION_TIE).unwrap();
    let expected = [(0.0, -1.0), (0.0, 1.0)];
    let dstar_ok = g.d_star.len() == 2
        && g.d_star
            .iter()
            .zip(expected)
            .all(|(a, b)| (a.0 - b.0).abs() <= GRADIENT_TOL && (a.1 - b.1).abs() <= GRADIENT_TOL);
    let mut hull = g.d_minus.clone();
    hull.sort_by(|a, b| a.1.total_cmp(&b.1));
    let dminus_ok = hull.len() == 2
        && hull
            .iter()
            .zip(expected)
            .all(|(a, b)| (a.0 - b.0).abs() <= GRADIENT_TOL && (a.1 - b.1).abs() <= GRADIENT_TOL)
        && g.boundary_minus_dstar_nonempty;
    ok &= dstar_ok && dminus_ok;
    notes.push(format!("D* = {:?}, D- vertices = {:?}", g.d_star, hull));

    let back = trace_singular_arc(&sol, 0.5, 0.0, Direction::Backward, GRID_STEP, 1000, &opts).unwrap();
    let fwd = trace_singular_arc(&sol, 0.5, 0.0, Direction::Forward, GRID_STEP, 1000, &opts).unwrap();
    let reach = back.samples.last().unwrap().t;
    ok &= reach <= ARC_REACH && fwd.samples.len() <= 2;
    notes.push(format!(
        "backward arc reaches t = {reach:.3} ({}), forward arc has {} step(s) ({})",
        back.termination.name(),
        fwd.samples.len() - 1,
        fwd.termination.name()
    ));
    outcome(ok, notes.join("; "))
}

fn brute_conjugate(f: &SampledFunction, dual: &GridBox) -> Vec<f64> {
    let xs = f.grid().axis(0).nodes();
    dual.axis(0)
        .nodes()
        .into_iter()
        .map(|q| {
            xs.iter()
                .zip(f.values())
                .filter(|(_, v)| v.is_finite())
                .map(|(x, v)| x * q - v)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0usize;
    let mut above = 0usize;
    let mut triple_err = 0.0f64;
    let mut yf_fail = 0usize;
    for _ in 0..CONJUGATE_INSTANCES {
        let n = rng.gen_range(5..200);
        let m = rng.gen_range(5..200);
        let lo = rng.gen_range(-5.0..0.0);
        let hi = lo + rng.gen_range(0.5..6.0);
        let grid = GridBox::line(lo, hi, n).unwrap();
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let f = SampledFunction::new(grid.clone(), values, false).unwrap();
        let qa = rng.gen_range(-4.0..0.0);
        let dual = GridBox::line(qa, qa + rng.gen_range(0.5..8.0), m).unwrap();

        let fast = legendre_transform(&f, &dual).unwrap();
        if fast.values() != brute_conjugate(&f, &dual).as_slice() {
            mismatches += 1;
        }

        let fss = biconjugate(&f, &dual).unwrap();
        // Each transform rounds `x q - f` once; allow that much above f.
        let term = lo.abs().max(hi.abs()) * dual.axis(0).lo.abs().max(dual.axis(0).hi.abs());
        above += fss
            .values()
            .iter()
            .zip(f.values())
            .filter(|(a, b)| **a > **b + ROUNDING_ULPS * f64::EPSILON * (1.0 + b.abs() + term))
            .count();

        let fsss = legendre_transform(&fss, &dual).unwrap();
        let interior = 1..m - 1;
        for j in interior {
            triple_err = triple_err.max((fsss.values()[j] - fast.values()[j]).abs());
        }

        for (j, q) in dual.axis(0).nodes().into_iter().enumerate() {
            let tie = TieTolerance::default();
            let (value, l) = conjugate_eval_with_argmax(&f, &[q], tie).unwrap();
            if value != fast.values()[j] {
                yf_fail += 1;
            }
            for (i, x) in grid.axis(0).nodes().into_iter().enumerate() {
                let slack = f.values()[i] + value - x * q;
                let member = l.nodes().contains(&i);
                if slack < -1e-12 || (member && slack > tie.at(value)) || (!member && slack <= 0.0) {
                    yf_fail += 1;
                }
            }
        }
    }
    outcome(
        mismatches == 0 && above == 0 && triple_err <= TRIPLE_TOL && yf_fail == 0,
        format!(
            "{CONJUGATE_INSTANCES} instances: fast != brute in {mismatches}, f** > f beyond rounding at {above} nodes, max |f*** - f*| = {triple_err:.2e} (tol {TRIPLE_TOL:e}), Young-Fenchel failures {yf_fail}"
        ),
    )
}

fn criterion_8() -> Outcome {
    let sigma = InitialData::pwl(PiecewiseLinear::abs().smoothed(HUBER_RADIUS).unwrap());
    let sol = golden_solution(sigma.clone());
    let ham = sol.ham();
    let mtol = sol.dual_spacing();
    let singleton = 2.0 * sol.dual_spacing();
    let mut checked = 0usize;
    let mut worst = 0.0f64;
    for k in 0..=80 {
        let y = -2.0 + 0.05 * k as f64;
        let c = emit_layered(&sol, y, mtol).unwrap();
        let steps = (c.t_end / 0.02).round() as usize;
        for s in 0..=steps {
            let t = (0.02 * s as f64).min(c.t_end);
            let x = c.x_at(ham, t).unwrap();
            let (u, l) = sol.eval_with_tie(t, &[x], DETECTION_TIE).unwrap();
            if l.diameter > singleton || classify(&sol, c.p, t, x, mtol).unwrap() != CharacteristicType::TypeI {
                continue;
            }
            checked += 1;
            worst = worst.max((u - c.v_at(ham, t).unwrap()).abs());
        }
    }

    let mut backward_ok = true;
    for &x0 in &[-2.5, -0.7, -0.03, 0.0, 0.01, 0.4, 1.9] {
        let r = find_backward(&sigma, ham, 1.0, x0, (-4.0, 4.0), BACKWARD_TOL, 4001).unwrap();
        backward_ok &= !r.is_empty() && r.candidates.iter().all(|c| (c.y - x0).abs() <= BACKWARD_TOL);
    }

    let mut trip = 0.0f64;
    let mut trips = 0usize;
    for k in 0..=40 {
        let y = -2.0 + 0.1 * k as f64;
        let c = emit_characteristic(&sigma, ham, y).unwrap();
        let Ok(fwd) = extend_across_layer(&c, &sol, 0.5, Direction::Forward, mtol) else {
            continue;
        };
        let back = extend_across_layer(&fwd, &sol, 0.5, Direction::Backward, mtol).unwrap();
        trip = trip.max((back.x_start - y).abs()).max((back.p - c.p).abs());
        trips += 1;
    }
    outcome(
        checked > 0 && worst <= CHAR_VALUE_TOL && backward_ok && trips > 0 && trip <= ROUND_TRIP_TOL,
        format!(
            "max |u - v| = {worst:.3e} over {checked} type I samples (tol {CHAR_VALUE_TOL:e}); backward search at t = 1 {}; {trips} round trips, max error {trip:.2e} (tol {ROUND_TRIP_TOL:e})",
            if backward_ok { "returns y = x0" } else { "FAILED" }
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, Criterion); 8] = [
        ("golden example reproduction", criterion_1),
        ("boundary slice u(1/2, x)", criterion_2),
        ("layered vs Hopf gap", criterion_3),
        ("semiconvexity", criterion_4),
        ("PDE residual", criterion_5),
        ("singularity suite", criterion_6),
        ("conjugate properties", criterion_7),
        ("characteristics consistency", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        println!(
            "{} criterion {} ({name}): {}",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion/criteria failed");
        ExitCode::FAILURE
    }
}
