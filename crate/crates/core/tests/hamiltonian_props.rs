use hopflayer::{
    detect_breakpoints, GridBox, LayerForm, LayeredHamiltonian, MomentumProfile, Polynomial, SeparableTerm,
};
use proptest::prelude::*;

const HORIZON: f64 = 3.0;

/// `g(t) h(p) + k(t)` with `g` linear so that breakpoints exist in most
/// draws.
fn separable(g: Vec<f64>, h: Vec<f64>, k: Vec<f64>) -> LayeredHamiltonian {
    let term = SeparableTerm::new(Polynomial::new(g), MomentumProfile::uniform(Polynomial::new(h), 1));
    LayeredHamiltonian::from_separable(1, HORIZON, term, Polynomial::new(k)).unwrap()
}

prop_compose! {
    fn random_ham()(
        g in prop::collection::vec(-2.0f64..2.0, 2..4),
        h in prop::collection::vec(-2.0f64..2.0, 1..5),
        k in prop::collection::vec(-2.0f64..2.0, 1..3),
    ) -> LayeredHamiltonian {
        separable(g, h, k)
    }
}

proptest! {
    #[test]
    fn integral_is_additive(ham in random_ham(), a in 0.0f64..HORIZON, b in 0.0f64..HORIZON, c in 0.0f64..HORIZON, p in -2.0f64..2.0) {
        let mut v = [a, b, c];
        v.sort_by(f64::total_cmp);
        let [a, b, c] = v;
        let whole = ham.integral(a, c, &[p]).unwrap();
        let split = ham.integral(a, b, &[p]).unwrap() + ham.integral(b, c, &[p]).unwrap();
        prop_assert!((whole - split).abs() <= 1e-12 * (1.0 + whole.abs()));
    }

    #[test]
    fn derivatives_match_finite_differences(ham in random_ham(), t in 0.01f64..2.99, p in -2.0f64..2.0) {
        let eps = 1e-4;
        let fd_p = (ham.eval(t, &[p + eps]).unwrap() - ham.eval(t, &[p - eps]).unwrap()) / (2.0 * eps);
        let gp = ham.grad_p(t, &[p]).unwrap().grad[0];
        prop_assert!((fd_p - gp).abs() <= 1e-6 * (1.0 + gp.abs()));
        // Stay inside one layer for the time difference.
        let bp = ham.breakpoints();
        prop_assume!(bp.iter().all(|&b| (b - t).abs() > 2.0 * eps));
        let fd_t = (ham.eval(t + eps, &[p]).unwrap() - ham.eval(t - eps, &[p]).unwrap()) / (2.0 * eps);
        let ht = ham.partial_t(t, &[p]).unwrap();
        prop_assert!((fd_t - ht).abs() <= 1e-6 * (1.0 + ht.abs()));
    }

    #[test]
    fn separable_layers_keep_sign(ham in random_ham()) {
        let bp = ham.breakpoints().to_vec();
        for (i, layer) in ham.layers().iter().enumerate() {
            let LayerForm::Polynomial(form) = &layer.form else { unreachable!() };
            for term in form.terms() {
                let (a, b) = (bp[i], bp[i + 1]);
                let mid = term.g.eval(0.5 * (a + b));
                for k in 1..64 {
                    let t = a + (b - a) * k as f64 / 64.0;
                    prop_assert!(term.g.eval(t) * mid >= -1e-9);
                }
            }
        }
        prop_assert!(ham.validate_on(&GridBox::line(-2.0, 2.0, 41).unwrap()).is_ok());
    }

    #[test]
    fn reversed_limits_negate(ham in random_ham(), a in 0.0f64..HORIZON, b in 0.0f64..HORIZON, p in -2.0f64..2.0) {
        prop_assert_eq!(ham.integral(a, b, &[p]).unwrap(), -ham.integral(b, a, &[p]).unwrap());
    }
}

#[test]
fn quadratic_g_has_two_breakpoints() {
    let g = Polynomial::new(vec![0.75, -2.0, 1.0]);
    let roots = detect_breakpoints(&g, 2.0);
    assert_eq!(roots.len(), 2);
    assert!((roots[0] - 0.5).abs() < 1e-12 && (roots[1] - 1.5).abs() < 1e-12);
    assert!(detect_breakpoints(&Polynomial::constant(1.0), 2.0).is_empty());
    assert!(detect_breakpoints(&Polynomial::zero(), 2.0).is_empty());
}

#[test]
fn golden_examples() {
    let ham = separable(vec![-1.0, 2.0], vec![0.0, 0.0, 1.0], vec![0.0]);
    assert_eq!(ham.eval(0.0, &[1.0]).unwrap(), -1.0);
    assert_eq!(ham.eval(0.5, &[3.0]).unwrap(), 0.0);
    assert_eq!(ham.grad_p(1.0, &[1.0]).unwrap().grad, vec![2.0]);
    assert_eq!(ham.partial_t(0.3, &[1.0]).unwrap(), 2.0);
    assert_eq!(ham.integral(0.0, 1.0, &[0.7]).unwrap(), 0.0);
    let t: f64 = 1.7;
    assert!((ham.integral(0.0, t, &[1.5]).unwrap() - (t * t - t) * 2.25).abs() < 1e-14);
    assert_eq!(
        ham.sup_abs_ht(&GridBox::line(-1.0, 1.0, 3).unwrap()).unwrap().value,
        2.0
    );
    assert_eq!(
        ham.sup_abs_ht(&GridBox::line(-2.0, 2.0, 3).unwrap()).unwrap().value,
        8.0
    );
    assert!(ham.eval(3.5, &[0.0]).is_err());
}
