use hopflayer::{
    biconjugate, conjugate_eval_with_argmax, legendre_transform, lower_convex_envelope, GridBox, SampledFunction,
    TieTolerance,
};
use proptest::prelude::*;

fn brute_1d(f: &SampledFunction, dual: &GridBox) -> Vec<f64> {
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

prop_compose! {
    fn sampled_1d()(n in 3usize..120, lo in -5.0f64..0.0, width in 0.5f64..6.0)
        (values in prop::collection::vec(-3.0f64..3.0, n), lo in Just(lo), width in Just(width))
        -> SampledFunction {
        let grid = GridBox::line(lo, lo + width, values.len()).unwrap();
        SampledFunction::new(grid, values, false).unwrap()
    }
}

prop_compose! {
    fn dual_1d()(m in 3usize..120, lo in -4.0f64..0.0, width in 0.5f64..8.0) -> GridBox {
        GridBox::line(lo, lo + width, m).unwrap()
    }
}

proptest! {
    #[test]
    fn fast_transform_equals_brute_force(f in sampled_1d(), dual in dual_1d()) {
        let fast = legendre_transform(&f, &dual).unwrap();
        let brute = brute_1d(&f, &dual);
        prop_assert_eq!(fast.values(), brute.as_slice());
    }

    #[test]
    fn order_reversal(f in sampled_1d(), dual in dual_1d(), bumps in prop::collection::vec(0.0f64..1.0, 120)) {
        let g_values: Vec<f64> = f.values().iter().zip(&bumps).map(|(a, b)| a + b).collect();
        let g = SampledFunction::new(f.grid().clone(), g_values, false).unwrap();
        let fs = legendre_transform(&f, &dual).unwrap();
        let gs = legendre_transform(&g, &dual).unwrap();
        for (a, b) in gs.values().iter().zip(fs.values()) {
            prop_assert!(a <= b);
        }
    }

    #[test]
    fn triple_conjugate(f in sampled_1d(), dual in dual_1d()) {
        let fs = legendre_transform(&f, &dual).unwrap();
        let fss = biconjugate(&f, &dual).unwrap();
        let fsss = legendre_transform(&fss, &dual).unwrap();
        let m = fs.values().len();
        for j in 1..m - 1 {
            prop_assert!((fsss.values()[j] - fs.values()[j]).abs() <= 1e-9);
        }
    }

    #[test]
    fn conjugate_is_convex(f in sampled_1d(), dual in dual_1d()) {
        let g = legendre_transform(&f, &dual).unwrap();
        let v = g.values();
        let scale = 1.0 + v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for w in v.windows(3) {
            prop_assert!(w[0] - 2.0 * w[1] + w[2] >= -1e-12 * scale);
        }
    }

    #[test]
    fn young_fenchel(f in sampled_1d(), dual in dual_1d()) {
        let fs = legendre_transform(&f, &dual).unwrap();
        let xs = f.grid().axis(0).nodes();
        let tie = TieTolerance::default();
        for (j, q) in dual.axis(0).nodes().into_iter().enumerate() {
            let (value, l) = conjugate_eval_with_argmax(&f, &[q], tie).unwrap();
            prop_assert_eq!(value, fs.values()[j]);
            for (i, &x) in xs.iter().enumerate() {
                let slack = f.values()[i] + value - x * q;
                prop_assert!(slack >= -1e-12);
                if l.nodes().contains(&i) {
                    prop_assert!(slack <= tie.at(value));
                }
            }
        }
    }

    #[test]
    fn envelope_is_below_convex_and_idempotent(f in sampled_1d()) {
        let e = lower_convex_envelope(&f).unwrap();
        for (a, b) in e.values().iter().zip(f.values()) {
            prop_assert!(a <= b);
        }
        let scale = 1.0 + f.values().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for w in e.values().windows(3) {
            prop_assert!(w[0] - 2.0 * w[1] + w[2] >= -1e-12 * scale);
        }
        let ee = lower_convex_envelope(&e).unwrap();
        for (a, b) in ee.values().iter().zip(e.values()) {
            prop_assert!((a - b).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn two_dimensional_transform_matches_brute_force(
        n1 in 2usize..9, n2 in 2usize..9,
        values in prop::collection::vec(-2.0f64..2.0, 64),
        m1 in 2usize..9, m2 in 2usize..9,
    ) {
        let grid = GridBox::new(vec![
            hopflayer::Axis::new(-1.0, 1.5, n1).unwrap(),
            hopflayer::Axis::new(-2.0, 0.5, n2).unwrap(),
        ]).unwrap();
        let f = SampledFunction::new(grid.clone(), values[..n1 * n2].to_vec(), false).unwrap();
        let dual = GridBox::new(vec![
            hopflayer::Axis::new(-3.0, 2.0, m1).unwrap(),
            hopflayer::Axis::new(-1.0, 4.0, m2).unwrap(),
        ]).unwrap();
        let g = legendre_transform(&f, &dual).unwrap();
        for j in 0..dual.len() {
            let q = dual.node(j);
            let brute = (0..grid.len())
                .map(|i| {
                    let x = grid.node(i);
                    x[0] * q[0] + x[1] * q[1] - f.values()[i]
                })
                .fold(f64::NEG_INFINITY, f64::max);
            prop_assert!((g.values()[j] - brute).abs() <= 1e-12 * (1.0 + brute.abs()));
        }
    }
}

#[test]
fn sine_envelope_matches_chord_oracle() {
    let n = 101;
    let grid = GridBox::line(0.0, 2.0 * std::f64::consts::PI, n).unwrap();
    let f = SampledFunction::from_fn(grid.clone(), |x| x[0].sin()).unwrap();
    let e = lower_convex_envelope(&f).unwrap();
    let xs = grid.axis(0).nodes();
    let ys = f.values();
    for k in 0..n {
        let mut best = ys[k];
        for i in 0..=k {
            for j in k..n {
                if i == j {
                    continue;
                }
                let w = (xs[k] - xs[i]) / (xs[j] - xs[i]);
                best = best.min(ys[i] + w * (ys[j] - ys[i]));
            }
        }
        assert!((e.values()[k] - best).abs() < 1e-12, "node {k}");
    }
}

#[test]
fn convex_function_is_its_own_biconjugate() {
    let grid = GridBox::line(-2.0, 2.0, 81).unwrap();
    let f = SampledFunction::from_fn(grid, |x| 0.5 * x[0] * x[0] + 0.3 * x[0]).unwrap();
    // The dual box covers every discrete slope.
    let dual = GridBox::line(-3.0, 3.0, 601).unwrap();
    let fss = biconjugate(&f, &dual).unwrap();
    for (a, b) in fss.values().iter().zip(f.values()).skip(1).take(79) {
        assert!((a - b).abs() < 1e-9);
    }
}
