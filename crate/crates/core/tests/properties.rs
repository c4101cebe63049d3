use std::sync::Arc;

use proptest::prelude::*;

use superlab::calculus::{apply_bold_l, apply_l_n, apply_limit_generator, CylindricalFunction, ExpOuter, LinearOuter, SineOuter};
use superlab::hjb_solver::{solve_w, value_of_measure, GridSpec};
use superlab::measure_space::{distance, pair, AtomicMeasure, SeparatingFamily, TestFunction};
use superlab::model::{generator_l, CoefficientSpec, Coefficients, ControlSet, FeedbackPolicy, ScalarCoefficient};
use superlab::oracles::riccati_w;
use superlab::particle_sim::{simulate, Observable, Recorded, SimConfig};

fn atoms() -> impl Strategy<Value = Vec<(f64, u64)>> {
    prop::collection::vec((-3.0f64..3.0, 1u64..6), 1..6)
}

fn measure(level: u64, a: &[(f64, u64)]) -> AtomicMeasure {
    AtomicMeasure::from_atoms(level, 1, a.iter().map(|(x, k)| (vec![*x], *k))).unwrap()
}

fn affine_coeffs(b0: f64, b1: f64, s0: f64, g0: f64) -> Coefficients {
    Coefficients::scalar(
        ScalarCoefficient::from(CoefficientSpec::Affine {
            constant: b0,
            x: vec![b1],
            action: vec![],
            features: vec![],
        }),
        ScalarCoefficient::constant(s0),
        ScalarCoefficient::constant(g0),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pairing_with_one_is_mass_and_scales(a in atoms(), level in 1u64..20, c in 1u64..5) {
        let lam = measure(level, &a);
        let one = TestFunction::constant(1, 1.0);
        prop_assert!((pair(&one, &lam).unwrap() - lam.total_mass()).abs() < 1e-12);
        let phi = TestFunction::gaussian(1.3, vec![0.2], 0.8);
        let scaled = pair(&phi, &lam.scale(c)).unwrap();
        prop_assert!((scaled - c as f64 * pair(&phi, &lam).unwrap()).abs() < 1e-12 * (1.0 + scaled.abs()));
    }

    #[test]
    fn distance_is_a_pseudometric(a in atoms(), b in atoms(), c in atoms()) {
        let fam = SeparatingFamily::default_1d();
        let (x, y, z) = (measure(3, &a), measure(5, &b), measure(2, &c));
        let dxy = distance(&x, &y, &fam).unwrap();
        prop_assert!(dxy >= 0.0);
        prop_assert!((dxy - distance(&y, &x, &fam).unwrap()).abs() < 1e-15);
        prop_assert_eq!(distance(&x, &x, &fam).unwrap(), 0.0);
        prop_assert!(dxy <= distance(&x, &z, &fam).unwrap() + distance(&z, &y, &fam).unwrap() + 1e-12);
    }

    #[test]
    fn generator_is_linear_and_kills_constants(
        p in prop::collection::vec(-1.0f64..1.0, 4),
        q in prop::collection::vec(-1.0f64..1.0, 4),
        alpha in -2.0f64..2.0, beta in -2.0f64..2.0,
        x in -2.0f64..2.0, b0 in -1.0f64..1.0, b1 in -1.0f64..1.0, s0 in 0.0f64..2.0,
        a in atoms(), other in atoms(),
    ) {
        let c = affine_coeffs(b0, b1, s0, 1.0);
        let mu = measure(4, &a);
        let combo: Vec<f64> = p.iter().zip(&q).map(|(u, v)| alpha * u + beta * v).collect();
        let l = |coef: &[f64], m: &AtomicMeasure| generator_l(&TestFunction::polynomial(coef.to_vec()), &[x], m, &[0.0], &c).unwrap();
        let lhs = l(&combo, &mu);
        let rhs = alpha * l(&p, &mu) + beta * l(&q, &mu);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
        prop_assert_eq!(generator_l(&TestFunction::constant(1, 2.5), &[x], &mu, &[0.0], &c).unwrap(), 0.0);
        prop_assert_eq!(l(&p, &mu), l(&p, &measure(7, &other)));
    }

    #[test]
    fn bold_l_on_pairing_cylinders_is_the_limit_generator(
        w in -1.0f64..1.0, off in -1.0f64..1.0, centre in -1.0f64..1.0, scale in 0.5f64..2.0,
        x in -2.0f64..2.0, b0 in -1.0f64..1.0, b1 in -1.0f64..1.0, s0 in 0.0f64..2.0, g0 in 0.0f64..2.0,
        a in atoms(), sine in any::<bool>(),
    ) {
        let phi = TestFunction::gaussian(1.0, vec![centre], scale);
        let outer: Arc<dyn superlab::calculus::OuterFunction> = if sine {
            Arc::new(SineOuter { scale: 1.0, offset: off, weights: vec![w] })
        } else {
            Arc::new(ExpOuter { scale: 1.0, offset: off, weights: vec![w] })
        };
        let c = affine_coeffs(b0, b1, s0, g0);
        let lam = measure(6, &a);
        let u = CylindricalFunction::of_pairing(outer.clone(), phi.clone()).unwrap();
        let bold = apply_bold_l(&u, &[x], &lam, &[0.0], &c).unwrap();
        let limit = apply_limit_generator(outer.as_ref(), &phi, &[x], &lam, &[0.0], &c).unwrap();
        prop_assert!((bold - limit).abs() <= 1e-12 * (1.0 + limit.abs()));
    }

    #[test]
    fn intrinsic_derivative_is_gradient_of_flat_derivative(
        w in prop::collection::vec(-1.0f64..1.0, 2), x in -2.0f64..2.0, a in atoms(),
    ) {
        let inner = vec![TestFunction::gaussian(1.0, vec![0.3], 1.2), TestFunction::polynomial(vec![0.1, -0.2, 0.05])];
        let u = CylindricalFunction::new(Arc::new(ExpOuter { scale: 1.0, offset: 0.0, weights: w }), inner).unwrap();
        let lam = measure(4, &a);
        let h = 1e-4;
        let fd = (u.flat_derivative(&lam, &[x + h]).unwrap() - u.flat_derivative(&lam, &[x - h]).unwrap()) / (2.0 * h);
        let exact = u.intrinsic_derivative(&lam, &[x]).unwrap()[0];
        prop_assert!((exact - fd).abs() <= 1e-4 * exact.abs().max(1e-6), "{} vs {}", exact, fd);
    }

    #[test]
    fn level_generator_with_linear_outer_is_level_free(
        w in -2.0f64..2.0, x in -2.0f64..2.0, s0 in 0.0f64..2.0, g0 in 0.0f64..2.0, a in atoms(), n in 1u64..200,
    ) {
        let phi = TestFunction::gaussian(1.0, vec![0.5], 1.0);
        let outer = LinearOuter { offset: 0.3, weights: vec![w] };
        let c = affine_coeffs(0.2, -0.4, s0, g0);
        let lam = measure(5, &a);
        let ln = apply_l_n(&outer, &phi, &[x], &lam, &[0.0], n, &c).unwrap();
        let expected = w * generator_l(&phi, &[x], &lam, &[0.0], &c).unwrap();
        prop_assert!((ln - expected).abs() <= 1e-9 * (1.0 + expected.abs()));
    }

    #[test]
    fn log_value_is_additive_over_splits(a in atoms(), b in atoms()) {
        let c = Coefficients::constant_1d(0.0, 0.6, 1.0);
        let g = GridSpec::new(-4.0, 4.0, 81, 0.0, 1.0, 201).unwrap();
        let s = solve_w(&c, &TestFunction::gaussian(1.0, vec![0.0], 1.0), &g, &ControlSet::singleton(1)).unwrap();
        let (x, y) = (measure(3, &a), measure(3, &b));
        let joint = x.union(&y).unwrap();
        let lhs = value_of_measure(&s, 0.0, &joint).unwrap().ln();
        let rhs = value_of_measure(&s, 0.0, &x).unwrap().ln() + value_of_measure(&s, 0.0, &y).unwrap().ln();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }
}

#[test]
fn riccati_error_is_first_order_in_dt() {
    let c = Coefficients::constant_1d(0.0, 0.0, 1.0);
    let h = TestFunction::constant(1, 3.0);
    let errors: Vec<f64> = [11, 21, 41, 81]
        .iter()
        .map(|&nt| {
            let g = GridSpec::new(-1.0, 1.0, 3, 0.0, 1.0, nt).unwrap();
            let s = solve_w(&c, &h, &g, &ControlSet::singleton(1)).unwrap();
            (0..nt)
                .map(|k| (s.w_at(k, 1) - riccati_w(3.0, 1.0, 1.0 - g.t(k))).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    // the linearly implicit update is exact for this equation
    assert!(errors.iter().all(|e| *e < 1e-12), "{errors:?}");
}

#[test]
fn heat_error_is_first_order_in_dt_at_fixed_dx() {
    let c = Coefficients::constant_1d(0.0, 1.0, 0.0);
    let h = TestFunction::gaussian(1.0, vec![0.0], 0.7);
    let fine = GridSpec::new(-6.0, 6.0, 121, 0.0, 1.0, 3201).unwrap();
    let reference = solve_w(&c, &h, &fine, &ControlSet::singleton(1)).unwrap();
    let err = |nt: usize| {
        let g = GridSpec::new(-6.0, 6.0, 121, 0.0, 1.0, nt).unwrap();
        let s = solve_w(&c, &h, &g, &ControlSet::singleton(1)).unwrap();
        (0..g.nx).map(|i| (s.w_at(0, i) - reference.w_at(0, i)).abs()).fold(0.0, f64::max)
    };
    let (e1, e2) = (err(201), err(401));
    let ratio = e1 / e2;
    assert!((1.6..=2.4).contains(&ratio), "{e1} {e2} {ratio}");
}

#[test]
fn identical_seed_gives_identical_trajectories_for_permuted_input() {
    let c = Coefficients::constant_1d(0.1, 0.7, 1.0);
    let cfg = SimConfig::new(6, 1e-2, 0.0, 1.0, 42, 1)
        .with_record(Recorded::sample("mass", Observable::Mass))
        .with_record(Recorded::sample("bump", Observable::Pairing(TestFunction::gaussian(1.0, vec![0.0], 1.0))));
    let a = AtomicMeasure::from_atoms(6, 1, [(vec![-1.0], 2), (vec![0.5], 3), (vec![2.0], 1)]).unwrap();
    let b = AtomicMeasure::from_atoms(6, 1, [(vec![2.0], 1), (vec![-1.0], 2), (vec![0.5], 3)]).unwrap();
    let one = ControlSet::singleton(1);
    for r in 0..5 {
        let x = simulate(&a, &FeedbackPolicy::Constant(0), &one, &cfg, &c, r).unwrap();
        let y = simulate(&b, &FeedbackPolicy::Constant(0), &one, &cfg, &c, r).unwrap();
        let z = simulate(&a, &FeedbackPolicy::Constant(0), &one, &cfg, &c, r).unwrap();
        assert_eq!(x.values, y.values);
        assert_eq!(x.values, z.values);
        assert_eq!(x.final_measure, z.final_measure);
    }
}
