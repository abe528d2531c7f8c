//! The four commands.

use std::path::Path;

use anyhow::{Context, Result};
use hopflayer::{
    build_layered_solution, check_pde_residual_with, check_propagation_condition, check_semiconvexity, classify,
    detect_singular_points, emit_layered, find_backward, trace_singular_arc, Direction, LayeredSolution,
    PropagationReport, SemiconvexityOptions, SingularityError, SingularityOptions, SpaceTimeGrid, DETECTION_TIE,
};
use serde_json::{json, Value};

use crate::emit::{json_num, Cell, Csv, RunReport};
use crate::spec::{Problem, SigmaSpec, ValidationError};

fn solve_problem(p: &Problem) -> Result<LayeredSolution> {
    let sol = build_layered_solution(p.sigma.clone(), p.ham.clone(), p.dual.clone())
        .context("building the layered solution")?;
    Ok(sol.with_tie(p.tie))
}

fn space_header(d: usize) -> Vec<&'static str> {
    if d == 1 {
        vec!["x"]
    } else {
        vec!["x", "y"]
    }
}

fn report_for(command: &'static str, p: &Problem) -> RunReport {
    RunReport::new(command, p.spec.digest(), p.seed())
}

fn singularity_options(p: &Problem, sol: &LayeredSolution) -> SingularityOptions {
    let mut opts = SingularityOptions::for_solution(sol);
    opts.diam_threshold = p.tol().diam_threshold.expect("resolved");
    opts
}

pub fn solve(p: &Problem, out: &Path) -> Result<RunReport> {
    let sol = solve_problem(p)?;
    let d = p.space.dim();
    let mut header = vec!["t"];
    header.extend(space_header(d));
    header.extend(["u", "l_diam"]);
    let mut csv = Csv::new(&header);
    let mut x = vec![0.0; d];
    let mut max_abs = 0.0f64;
    for t in p.time.nodes() {
        for flat in 0..p.space.len() {
            p.space.node_into(flat, &mut x);
            let (u, l) = sol.eval(t, &x)?;
            max_abs = max_abs.max(u.abs());
            let mut row = vec![Cell::Num(t)];
            row.extend(x.iter().map(|&v| Cell::Num(v)));
            row.extend([Cell::Num(u), Cell::Num(l.diameter)]);
            csv.row(&row);
        }
    }
    let mut report = report_for("solve", p);
    report.emit(out, "solution.csv", &csv)?;
    report.metric("rows", p.time.count * p.space.len());
    report.metric("layers", sol.kernels().len());
    report.metric(
        "breakpoints",
        p.ham.breakpoints().iter().map(|&b| json_num(b)).collect::<Vec<_>>(),
    );
    report.metric("max_abs_u", json_num(max_abs));
    report.metric("gluing_error", json_num(sol.gluing_error(&p.space)?));
    Ok(report)
}

pub fn verify(p: &Problem, out: &Path) -> Result<RunReport> {
    let sol = solve_problem(p)?;
    let tol = p.tol();
    let d = p.space.dim();
    let mut report = report_for("verify", p);

    // Hopf comparison on the (t, x) grid.
    let mut domination = f64::NEG_INFINITY;
    let mut gap = (f64::NEG_INFINITY, 0.0, Vec::new());
    let mut final_gap = (f64::NEG_INFINITY, Vec::new());
    for t in p.time.nodes() {
        let u = sol.slice(t, &p.space)?;
        let h = sol.hopf_slice(t, &p.space)?;
        for (i, (a, b)) in u.values().iter().zip(h.values()).enumerate() {
            domination = domination.max(b - a);
            if a - b > gap.0 {
                gap = (a - b, t, p.space.node(i));
            }
            if t == p.spec.horizon && a - b > final_gap.0 {
                final_gap = (a - b, p.space.node(i));
            }
        }
    }
    let domination_tol = tol.domination_tol.expect("resolved");
    report.metric("max_hopf_excess", json_num(domination));
    report.metric("max_hopf_gap", json_num(gap.0));
    let mut at = vec![json_num(gap.1)];
    at.extend(gap.2.iter().map(|&v| json_num(v)));
    report.metric("max_hopf_gap_at", at);
    report.metric("final_hopf_gap", json_num(final_gap.0));
    report.metric(
        "final_hopf_gap_at",
        final_gap.1.iter().map(|&v| json_num(v)).collect::<Vec<_>>(),
    );
    if domination > domination_tol {
        report
            .failures
            .push(format!("max(u_H - u) = {domination:e} exceeds {domination_tol:e}"));
    }

    // Semiconvexity in (t, x) with C = 4 sup |H_t|.
    let m = p.ham.sup_abs_ht(&p.dual)?;
    let constant = 4.0 * m.value;
    let mut space_box = vec![(0.0, p.spec.horizon)];
    space_box.extend(p.space.axes().iter().map(|a| (a.lo, a.hi)));
    let opts = SemiconvexityOptions::new(
        tol.semiconvexity_samples.expect("resolved"),
        constant,
        p.seed(),
        space_box,
    );
    let semi = check_semiconvexity(&sol, &opts)?;
    let coords = |prefix: &str| -> Vec<String> {
        let mut v = vec![format!("{prefix}_t")];
        v.extend(space_header(d).iter().map(|c| format!("{prefix}_{c}")));
        v
    };
    let mut header: Vec<String> = coords("a");
    header.extend(coords("b"));
    header.extend(["lambda".to_owned(), "excess".to_owned()]);
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut csv = Csv::new(&header_refs);
    for v in &semi.violations {
        let mut row: Vec<Cell> = v.y1.iter().chain(&v.y2).map(|&c| Cell::Num(c)).collect();
        row.extend([Cell::Num(v.lambda), Cell::Num(v.excess)]);
        csv.row(&row);
    }
    report.emit(out, "semiconvexity_violations.csv", &csv)?;
    report.metric("sup_abs_ht", json_num(m.value));
    report.metric("semiconvexity_constant", json_num(constant));
    report.metric("semiconvexity_samples", semi.samples_tested);
    report.metric("semiconvexity_violations", semi.violations.len());
    report.metric("semiconvexity_max_excess", json_num(semi.max_excess));
    if !semi.violations.is_empty() {
        report.failures.push(format!(
            "{} semiconvexity violations at C = {constant}",
            semi.violations.len()
        ));
    }

    // PDE residual away from the singular set.
    let grid = SpaceTimeGrid::new(p.time, p.space.clone());
    let singular = detect_singular_points(&sol, &grid, &singularity_options(p, &sol))?;
    let radius = tol.exclusion_spacings.expect("resolved") * p.space.max_spacing();
    let field = check_pde_residual_with(&sol, &grid, tol.fd_step.expect("resolved"), radius, &singular)?;
    let mut header = vec!["t"];
    header.extend(space_header(d));
    header.extend(["residual", "excluded"]);
    let mut csv = Csv::new(&header);
    for r in &field.points {
        let mut row = vec![Cell::Num(r.t)];
        row.extend(r.x.iter().map(|&v| Cell::Num(v)));
        row.extend([Cell::Num(r.residual), Cell::Bool(r.excluded)]);
        csv.row(&row);
    }
    report.emit(out, "residual.csv", &csv)?;
    let residual_tol = tol.residual_tol.expect("resolved");
    report.metric("max_residual", json_num(field.max));
    report.metric("mean_residual", json_num(field.mean));
    report.metric("residual_points", field.included);
    report.metric("singular_points", singular.len());
    if field.max > residual_tol {
        report
            .failures
            .push(format!("max PDE residual {:e} exceeds {residual_tol:e}", field.max));
    }

    let gluing = sol.gluing_error(&p.space)?;
    let gluing_tol = tol.gluing_tol.expect("resolved");
    report.metric("gluing_error", json_num(gluing));
    if gluing > gluing_tol {
        report
            .failures
            .push(format!("gluing error {gluing:e} exceeds {gluing_tol:e}"));
    }
    report.metric("passed", report.failures.is_empty());
    Ok(report)
}

fn has_unsmoothed_kinks(s: &SigmaSpec) -> bool {
    match s {
        SigmaSpec::Pwl { smoothing, .. } => smoothing.is_none(),
        SigmaSpec::Separable { profiles } => profiles.iter().any(has_unsmoothed_kinks),
        SigmaSpec::Polynomial { .. } => false,
        SigmaSpec::Samples { .. } => true,
    }
}

pub fn chars(p: &Problem, out: &Path) -> Result<RunReport> {
    let Some(c) = &p.spec.characteristics else {
        return Err(ValidationError("chars needs a characteristics section".into()).into());
    };
    if has_unsmoothed_kinks(&p.spec.sigma) {
        return Err(ValidationError("chars needs differentiable sigma; set sigma.smoothing".into()).into());
    }
    let sol = solve_problem(p)?;
    let mtol = c.momentum_tol.expect("resolved");
    let mut report = report_for("chars", p);

    let mut csv = Csv::new(&["curve_id", "t", "x", "v", "p", "type"]);
    let mut curves = Vec::new();
    for (id, &y) in c.y.iter().enumerate() {
        let ch = emit_layered(&sol, y, mtol).with_context(|| format!("strip from y = {y}"))?;
        let times: Vec<f64> = p.time.nodes().into_iter().filter(|&t| t <= ch.t_end).collect();
        for s in ch.sample(&p.ham, &times)? {
            let kind = classify(&sol, ch.p, s.t, s.x, mtol)?;
            csv.row(&[
                Cell::Int(id as u64),
                Cell::Num(s.t),
                Cell::Num(s.x),
                Cell::Num(s.v),
                Cell::Num(ch.p),
                Cell::Text(kind.name()),
            ]);
        }
        curves.push(json!({
            "id": id,
            "y": json_num(y),
            "p": json_num(ch.p),
            "t_end": json_num(ch.t_end),
            "junctions": ch.junctions.iter().map(|&t| json_num(t)).collect::<Vec<_>>(),
        }));
    }
    report.emit(out, "curves.csv", &csv)?;

    let [lo, hi] = c.search.expect("resolved");
    let mut csv = Csv::new(&["target_id", "t0", "x0", "y", "p", "residual", "type"]);
    let mut found = Vec::new();
    for (id, &[t0, x0]) in c.targets.iter().enumerate() {
        let mut r = find_backward(
            &p.sigma,
            &p.ham,
            t0,
            x0,
            (lo, hi),
            c.backward_tol.expect("resolved"),
            c.scan_points.expect("resolved"),
        )
        .with_context(|| format!("backward search from ({t0}, {x0})"))?;
        r.classify(&sol, mtol)?;
        for cand in &r.candidates {
            csv.row(&[
                Cell::Int(id as u64),
                Cell::Num(t0),
                Cell::Num(x0),
                Cell::Num(cand.y),
                Cell::Num(cand.p),
                Cell::Num(cand.residual),
                Cell::Text(cand.kind.map_or("", |k| k.name())),
            ]);
        }
        found.push(r.candidates.len());
    }
    report.emit(out, "backward.csv", &csv)?;
    report.metric("curves", curves);
    report.metric("backward_candidates", found);
    Ok(report)
}

fn anchor_row(csv: &mut Csv, id: usize, t: f64, x: f64, r: &PropagationReport) {
    let qs: Vec<f64> = r.sets.d_star.iter().map(|&(_, q)| q).collect();
    let q_min = qs.iter().copied().fold(f64::INFINITY, f64::min);
    let q_max = qs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    csv.row(&[
        Cell::Int(id as u64),
        Cell::Num(t),
        Cell::Num(x),
        Cell::Int(qs.len() as u64),
        Cell::Num(q_min),
        Cell::Num(q_max),
        Cell::Int(r.sets.d_minus.len() as u64),
        Cell::Num(r.alpha),
        Cell::Bool(r.vanishing_segment),
        Cell::Bool(r.predicted),
        Cell::Bool(r.sets.strictness_fails),
    ]);
}

pub fn singular(p: &Problem, out: &Path) -> Result<RunReport> {
    let sol = solve_problem(p)?;
    let d = p.space.dim();
    let opts = singularity_options(p, &sol);
    let mut report = report_for("singular", p);

    let grid = SpaceTimeGrid::new(p.time, p.space.clone());
    let points = detect_singular_points(&sol, &grid, &opts)?;
    let mut header = vec!["t"];
    header.extend(space_header(d));
    header.extend(["diameter", "on_grid"]);
    let mut csv = Csv::new(&header);
    for s in &points {
        let mut row = vec![Cell::Num(s.t)];
        row.extend(s.x.iter().map(|&v| Cell::Num(v)));
        row.extend([Cell::Num(s.diameter), Cell::Bool(s.on_grid)]);
        csv.row(&row);
    }
    report.emit(out, "singular_points.csv", &csv)?;
    report.metric("singular_points", points.len());
    report.metric("diam_threshold", json_num(opts.diam_threshold));
    if d != 1 {
        return Ok(report);
    }

    let section = p.spec.singular.clone().unwrap_or_default();
    let anchors: Vec<(f64, f64)> = if section.anchors.is_empty() {
        points.iter().map(|s| (s.t, s.x[0])).collect()
    } else {
        section.anchors.iter().map(|&[t, x]| (t, x)).collect()
    };
    let mut csv = Csv::new(&[
        "anchor_id",
        "t",
        "x",
        "d_star_count",
        "q_min",
        "q_max",
        "hull_vertices",
        "alpha",
        "vanishing_segment",
        "predicted",
        "strictness_fails",
    ]);
    let mut predicted = 0usize;
    for (id, &(t, x)) in anchors.iter().enumerate() {
        let r = check_propagation_condition(&sol, t, x, DETECTION_TIE)?;
        predicted += r.predicted as usize;
        anchor_row(&mut csv, id, t, x, &r);
    }
    report.emit(out, "anchors.csv", &csv)?;
    report.metric("anchors", anchors.len());
    report.metric("propagation_predicted", predicted);

    if section.anchors.is_empty() {
        return Ok(report);
    }
    let dt = section.dt.unwrap_or(0.5 * p.spec.horizon / (p.time.count - 1) as f64);
    let max_steps = section.max_steps.unwrap_or(1000);
    let mut csv = Csv::new(&["anchor_id", "direction", "step", "t", "x", "diameter"]);
    let mut arcs = Vec::new();
    for (id, &(t, x)) in anchors.iter().enumerate() {
        for direction in [Direction::Backward, Direction::Forward] {
            let termination = match trace_singular_arc(&sol, t, x, direction, dt, max_steps, &opts) {
                Ok(arc) => {
                    for (step, s) in arc.samples.iter().enumerate() {
                        csv.row(&[
                            Cell::Int(id as u64),
                            Cell::Text(direction.name()),
                            Cell::Int(step as u64),
                            Cell::Num(s.t),
                            Cell::Num(s.x),
                            Cell::Num(s.diameter),
                        ]);
                    }
                    json!({
                        "anchor_id": id,
                        "direction": direction.name(),
                        "steps": arc.samples.len() - 1,
                        "termination": arc.termination.name(),
                        "lipschitz_bound": json_num(arc.lipschitz_bound),
                        "max_ratio": json_num(arc.max_ratio),
                    })
                }
                Err(SingularityError::NotSingular { diameter, .. }) => json!({
                    "anchor_id": id,
                    "direction": direction.name(),
                    "steps": 0,
                    "termination": "anchor_not_singular",
                    "anchor_diameter": json_num(diameter),
                }),
                Err(e) => return Err(e.into()),
            };
            arcs.push(termination);
        }
    }
    report.emit(out, "arcs.csv", &csv)?;
    report.metric("arcs", Value::Array(arcs));
    Ok(report)
}
