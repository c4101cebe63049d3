//! Finite atomic measures, test functions, pairings and the weighted
//! weak* metric
//!
//! ```text
//! d(l, l') = sum_{k<K} 2^{-k} / q_k * |<phi_k, l> - <phi_k, l'>|
//! ```
//!
//! truncated at `K` members of a separating family.

mod family;
mod function;
mod measure;

pub use family::{BumpConfig, FamilyConfig, SeparatingFamily};
pub use function::{
    ClosureFunction, Constant, GaussianBump, NormBox, Polynomial, SmoothFunction, TestFunction,
};
pub use measure::{discretize, AtomicMeasure, GridDensity, MeasureSpec, WeightedAtom};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("function is not finite ({value}) at {location:?}")]
    InvalidFunction { location: Vec<f64>, value: f64 },
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("parse error: {0}")]
    Parse(String),
}

/// `<phi, lambda>`, exact for atomic measures.
pub fn pair(phi: &TestFunction, lambda: &AtomicMeasure) -> Result<f64, MeasureError> {
    if phi.dim() != lambda.dim() && !lambda.is_zero() {
        return Err(MeasureError::DimensionMismatch {
            expected: phi.dim(),
            found: lambda.dim(),
        });
    }
    lambda.pair_with(|x| phi.eval(x))
}

pub fn distance(
    lambda: &AtomicMeasure,
    other: &AtomicMeasure,
    family: &SeparatingFamily,
) -> Result<f64, MeasureError> {
    let a = family.pairings(lambda)?;
    let b = family.pairings(other)?;
    Ok(family.distance_from_pairings(&a, &b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn half_half() -> AtomicMeasure {
        AtomicMeasure::from_atoms(2, 1, [(vec![0.0], 1), (vec![1.0], 1)]).unwrap()
    }

    #[test]
    fn pair_examples() {
        let one = TestFunction::constant(1, 1.0);
        assert_eq!(pair(&one, &half_half()).unwrap(), 1.0);
        let g = TestFunction::gaussian(1.0, vec![0.0], 1.0);
        let delta0 = AtomicMeasure::dirac(1, vec![0.0], 1).unwrap();
        assert_eq!(pair(&g, &delta0).unwrap(), 1.0);
        // hand oracle: 0.5 * e^0 + 0.5 * e^-1
        let oracle = 0.5 * 1.0 + 0.5 * (-1.0f64).exp();
        assert!((pair(&g, &half_half()).unwrap() - oracle).abs() < 1e-15);
        assert!((oracle - 0.68394).abs() < 1e-5);
    }

    #[test]
    fn pair_rejects_non_finite_values() {
        let m = half_half();
        let r = m.pair_with(|x| 1.0 / x[0]);
        assert!(matches!(r, Err(MeasureError::InvalidFunction { .. })));
    }

    #[test]
    fn distance_examples() {
        let zero = AtomicMeasure::zero(1, 1);
        let delta0 = AtomicMeasure::dirac(1, vec![0.0], 1).unwrap();
        let only_one = SeparatingFamily::new(vec![TestFunction::constant(1, 1.0)]).unwrap();
        assert_eq!(distance(&delta0, &delta0, &only_one).unwrap(), 0.0);
        assert_eq!(distance(&delta0, &zero, &only_one).unwrap(), 1.0);

        // q_1 by an independent grid maximization of the analytic derivatives
        let mut dmax = 0.0f64;
        let mut d2max = 0.0f64;
        for i in 0..=200_000 {
            let x = -10.0 + 20.0 * i as f64 / 200_000.0;
            let e = (-x * x).exp();
            dmax = dmax.max((2.0 * x * e).abs());
            d2max = d2max.max(((4.0 * x * x - 2.0) * e).abs());
        }
        let q1 = 1.0f64.max(dmax).max(d2max);
        assert_eq!(q1, 2.0);
        let expected = 1.0 + 0.5 / q1 * 1.0;
        let fam = SeparatingFamily::new(vec![
            TestFunction::constant(1, 1.0),
            TestFunction::gaussian(1.0, vec![0.0], 1.0),
        ])
        .unwrap();
        assert!((fam.members()[1].q() - q1).abs() < 1e-12);
        assert!((distance(&delta0, &zero, &fam).unwrap() - 1.25).abs() < 1e-12);
        assert!((expected - 1.25).abs() < 1e-12);
    }

    #[test]
    fn empty_family_is_a_configuration_error() {
        assert!(matches!(
            SeparatingFamily::new(vec![]),
            Err(MeasureError::Configuration(_))
        ));
    }

    #[test]
    fn family_requires_constant_first_member() {
        let r = SeparatingFamily::new(vec![TestFunction::gaussian(1.0, vec![0.0], 1.0)]);
        assert!(r.is_err());
        let r = SeparatingFamily::new(vec![
            TestFunction::constant(1, 1.0),
            TestFunction::gaussian(2.0, vec![0.0], 1.0),
        ]);
        assert!(r.is_err(), "sup-norm above 1 must be rejected");
    }

    #[test]
    fn default_family_weights() {
        let fam = SeparatingFamily::default_1d();
        assert_eq!(fam.truncation(), 8);
        for (k, (w, m)) in fam.weights().iter().zip(fam.members()).enumerate() {
            assert_eq!(*w, 0.5f64.powi(k as i32) / m.q());
            assert!(m.q() >= 1.0);
        }
        assert_eq!(fam.fingerprint(), SeparatingFamily::default_1d().fingerprint());
    }

    #[test]
    fn discretization_converges_at_rate_one_over_n() {
        // smooth density: hat on [-1, 1]
        let spec = MeasureSpec::Density {
            marginals: vec![GridDensity {
                xs: vec![-1.0, 0.0, 1.0],
                values: vec![0.0, 1.0, 0.0],
            }],
        };
        let fam = SeparatingFamily::default_1d();
        // exact pairings by fine midpoint quadrature
        let exact: Vec<f64> = fam
            .members()
            .iter()
            .map(|phi| {
                let m = 200_000;
                (0..m)
                    .map(|i| {
                        let x = -1.0 + 2.0 * (i as f64 + 0.5) / m as f64;
                        (1.0 - x.abs()) * phi.eval(&[x]) * 2.0 / m as f64
                    })
                    .sum()
            })
            .collect();
        for n in [4u64, 16, 64, 256] {
            let lam = discretize(&spec, n).unwrap();
            let p = fam.pairings(&lam).unwrap();
            for (k, (a, b)) in p.iter().zip(&exact).enumerate() {
                let lip = fam.members()[k].gradient_sup().max(1e-3);
                assert!(
                    (a - b).abs() <= 2.0 * lip / n as f64 + 1e-9,
                    "member {k} n={n}: {a} vs {b}"
                );
            }
        }
    }

    fn arb_measure() -> impl Strategy<Value = AtomicMeasure> {
        (1u64..8, prop::collection::vec((-4.0f64..4.0, 1u64..6), 0..12)).prop_map(|(n, atoms)| {
            AtomicMeasure::from_atoms(n, 1, atoms.into_iter().map(|(x, m)| (vec![x], m))).unwrap()
        })
    }

    proptest! {
        #[test]
        fn pairing_one_is_total_mass(m in arb_measure()) {
            let one = TestFunction::constant(1, 1.0);
            prop_assert!((pair(&one, &m).unwrap() - m.total_mass()).abs() <= 1e-12 * (1.0 + m.total_mass()));
        }

        #[test]
        fn distance_is_a_pseudometric(a in arb_measure(), b in arb_measure(), c in arb_measure()) {
            let fam = SeparatingFamily::default_1d();
            let ab = distance(&a, &b, &fam).unwrap();
            let ba = distance(&b, &a, &fam).unwrap();
            let bc = distance(&b, &c, &fam).unwrap();
            let ac = distance(&a, &c, &fam).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() < 1e-14);
            prop_assert!(ac <= ab + bc + 1e-12);
            prop_assert_eq!(distance(&a, &a, &fam).unwrap(), 0.0);
        }

        #[test]
        fn pairing_is_homogeneous(m in arb_measure(), c in 1u64..5, center in -2.0f64..2.0) {
            let phi = TestFunction::gaussian(1.0, vec![center], 1.0);
            let lhs = pair(&phi, &m.scale(c)).unwrap();
            let rhs = c as f64 * pair(&phi, &m).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }
    }
}
