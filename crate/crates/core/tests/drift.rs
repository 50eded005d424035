use std::f64::consts::PI;

use proptest::prelude::*;
use spdelab_core::drift::{running_max, MollifiedDrift};
use spdelab_core::spectral::{Boundary, Field, GridSpec, SpectralOperator};
use spdelab_core::{
    empirical_holder_seminorm, fejer_projection, mollify_drift, HolderDrift, PolynomialReaction,
    ScalarHolder,
};

fn operator() -> SpectralOperator {
    SpectralOperator::new(&GridSpec::new(31, Boundary::Dirichlet, 16).unwrap()).unwrap()
}

fn nodal(scale: f64) -> impl Strategy<Value = Field> {
    prop::collection::vec(-1.0..1.0f64, 33).prop_map(move |v| Field::new(v).unwrap().scale(scale))
}

fn scalar() -> impl Strategy<Value = ScalarHolder> {
    prop_oneof![
        Just(ScalarHolder::ClampedSine),
        (0.05..1.0f64).prop_map(|alpha| ScalarHolder::PowerSign { alpha }),
        (0.05..1.0f64).prop_map(|alpha| ScalarHolder::DistToIntegers { alpha }),
    ]
}

fn drift(op: &SpectralOperator) -> impl Strategy<Value = HolderDrift> {
    let g = Field::from_fn(op.grid(), |s| 2.0 * (PI * s).sin() - 0.5);
    (scalar(), 0usize..4, 0.0..1.0f64).prop_map(move |(b, v, xi0)| match v {
        0 => HolderDrift::PointEval { b, xi0, g: g.clone() },
        1 => HolderDrift::RunningMax { b },
        2 => HolderDrift::RunningMaxAbs { b },
        _ => HolderDrift::Pointwise { b },
    })
}

/// Brute-force prefix maximum.
fn prefix_max(x: &[f64]) -> Vec<f64> {
    (0..x.len()).map(|i| x[..=i].iter().cloned().fold(f64::NEG_INFINITY, f64::max)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn max_inequality(x in nodal(3.0), y in nodal(3.0), eps in -8.0..0.0f64) {
        let y = &x + &y.scale(10f64.powf(eps));
        prop_assert!((&running_max(&x) - &running_max(&y)).sup_norm() <= (&x - &y).sup_norm());
    }

    #[test]
    fn running_max_matches_brute_force(x in nodal(5.0)) {
        prop_assert_eq!(running_max(&x).values().to_vec(), prefix_max(x.values()));
    }

    #[test]
    fn drifts_are_bounded(b in drift(&operator()), x in nodal(10.0)) {
        let g_norm = match &b {
            HolderDrift::PointEval { g, .. } => g.sup_norm(),
            _ => 1.0,
        };
        prop_assert!(b.apply(&x).sup_norm() <= b.scalar().sup() * g_norm.max(1.0) * (1.0 + 1e-12));
        prop_assert!(b.apply(&x).sup_norm() <= b.sup_bound() * (1.0 + 1e-12));
    }

    #[test]
    fn holder_bound_holds_pairwise(b in drift(&operator()), x in nodal(2.0), z in nodal(1.0), eps in -6.0..0.0f64) {
        let y = &x + &z.scale(10f64.powf(eps));
        let d = (&x - &y).sup_norm();
        prop_assume!(d > 1e-12);
        let ratio = (&b.apply(&x) - &b.apply(&y)).sup_norm() / d.powf(b.exponent());
        prop_assert!(ratio <= b.holder_bound() * (1.0 + 1e-9), "{} > {}", ratio, b.holder_bound());
    }

    #[test]
    fn scalar_holder_quotient(b in scalar(), s in -3.0..3.0f64, t in -3.0..3.0f64) {
        prop_assume!(s != t);
        let q = (b.eval(s) - b.eval(t)).abs() / (s - t).abs().powf(b.exponent());
        prop_assert!(q <= b.holder_constant() * (1.0 + 1e-9));
        prop_assert!(b.eval(s).abs() <= b.sup());
    }

    #[test]
    fn cubic_is_odd_and_dissipative(s in -1e3..1e3f64, h in -1e3..1e3f64) {
        let f = PolynomialReaction::cubic();
        prop_assert_eq!(f.f(0, -s).to_bits(), (-f.f(0, s)).to_bits());
        let d = f.dissipativity().unwrap();
        let lhs = (f.f(0, s + h) - f.f(0, s)) * h;
        prop_assert!(lhs <= -d.alpha0 * h.abs().powf(d.gamma) + d.c * (1.0 + s.abs().powf(d.gamma)));
    }

    #[test]
    fn fejer_projection_is_a_near_contraction(c in prop::collection::vec(-1.0..1.0f64, 16), m in 1usize..=16) {
        let op = operator();
        let x = op.synthesize(&c);
        prop_assume!(x.sup_norm() > 1e-9);
        prop_assert!(fejer_projection(&op, m, &x).unwrap().sup_norm() <= 1.1 * x.sup_norm());
    }
}

#[test]
fn fejer_of_first_mode_is_itself() {
    let op = operator();
    let e1 = op.eigenfunction(0);
    let p = fejer_projection(&op, 3, &e1).unwrap();
    assert!((&p - &e1).sup_norm() <= 1e-14);
}

#[test]
fn fejer_weights_are_cesaro() {
    // P_hat_m e_k = (m - k + 1) / m e_k for k <= m, 0 beyond
    let op = operator();
    for m in [1, 4, 7] {
        for k in 1..=10usize {
            let p = fejer_projection(&op, m, &op.eigenfunction(k - 1)).unwrap();
            let w = if k <= m { (m - k + 1) as f64 / m as f64 } else { 0.0 };
            assert!((&p - &op.eigenfunction(k - 1).scale(w)).sup_norm() <= 1e-13, "m {m} k {k}");
        }
    }
}

#[test]
fn mollified_constant_drift_is_exact() {
    let op = operator();
    let b = HolderDrift::Pointwise { b: ScalarHolder::Constant { value: 0.3 } };
    let bm = mollify_drift(&b, &op, 4, 16, 1).unwrap();
    let x = Field::from_fn(op.grid(), |s| 3.0 * (2.0 * PI * s).sin());
    assert_eq!(bm.apply(&x), b.apply(&x));
}

#[test]
fn mollification_shift_stays_in_the_support_bound() {
    let op = operator();
    let b = HolderDrift::RunningMax { b: ScalarHolder::PowerSign { alpha: 0.5 } };
    for m in [1, 2, 4, 8, 16] {
        let md = MollifiedDrift::new(b.clone(), &op, m, 64, 3).unwrap();
        assert!(md.max_shift() <= md.shift_bound(), "m = {m}");
        // |B_m(x) - B(P_hat_m x)|_E <= M shift^alpha
        let x = op.eigenfunction(1).scale(0.7);
        let mut out = vec![0.0; x.values().len()];
        md.apply_into(x.values(), &mut out);
        let gap = (&Field::new(out).unwrap() - &md.apply_unshifted(&x)).sup_norm();
        assert!(gap <= b.holder_bound() * md.shift_bound().powf(0.5), "m = {m}: {gap}");
    }
}

#[test]
fn mollification_rejects_bad_arguments() {
    let op = operator();
    let b = HolderDrift::Pointwise { b: ScalarHolder::ClampedSine };
    assert!(mollify_drift(&b, &op, 0, 4, 1).is_err());
    assert!(mollify_drift(&b, &op, 17, 4, 1).is_err());
    assert!(mollify_drift(&b, &op, 4, 0, 1).is_err());
    let bm = mollify_drift(&b, &op, 4, 4, 1).unwrap();
    assert!(mollify_drift(&bm, &op, 4, 4, 1).is_err());
}

#[test]
fn mollified_family_is_equi_holder() {
    let op = operator();
    let pairs: Vec<(Field, Field)> = (0..40)
        .map(|q| {
            let x = Field::from_fn(op.grid(), |s| 2.0 * (PI * s * (1.0 + q as f64 % 5.0)).sin());
            let y = &x + &op.eigenfunction(q % 7).scale(10f64.powf(-(q as f64) / 8.0));
            (x, y)
        })
        .collect();
    for b in [
        HolderDrift::RunningMax { b: ScalarHolder::PowerSign { alpha: 0.5 } },
        HolderDrift::Pointwise { b: ScalarHolder::ClampedSine },
    ] {
        for m in [2, 4, 8, 16] {
            let bm = mollify_drift(&b, &op, m, 16, 9).unwrap();
            let est = empirical_holder_seminorm(&bm, &pairs, b.exponent()).unwrap();
            assert!(est.value <= 1.5 * b.holder_bound(), "m = {m}: {}", est.value);
            assert_eq!(est.used, 40);
        }
    }
}

#[test]
fn degenerate_pairs_are_skipped() {
    let op = operator();
    let x = op.eigenfunction(0);
    let b = HolderDrift::Pointwise { b: ScalarHolder::ClampedSine };
    let est = empirical_holder_seminorm(&b, &[(x.clone(), x.clone()), (x.clone(), x.scale(2.0))], 1.0).unwrap();
    assert_eq!((est.used, est.skipped), (1, 1));
}

#[test]
fn point_eval_seminorm_reaches_m_times_g() {
    // b = identity-like power on small arguments, pair differing only at xi0
    let op = operator();
    let g = Field::from_fn(op.grid(), |s| 1.0 + s);
    let b = HolderDrift::PointEval { b: ScalarHolder::PowerSign { alpha: 1.0 }, xi0: 0.5, g: g.clone() };
    let x = op.zero_field();
    let y = Field::constant(op.n_nodes(), 0.25);
    let est = empirical_holder_seminorm(&b, &[(x, y)], 1.0).unwrap();
    assert!((est.value - g.sup_norm()).abs() <= 1e-12, "{}", est.value);
    assert!(est.value <= b.holder_bound());
}
