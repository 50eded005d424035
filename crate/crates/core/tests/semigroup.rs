use proptest::prelude::*;
use spdelab_core::semigroup::{chapman_kolmogorov, finite_difference_pt, ResolventOptions};
use spdelab_core::spectral::{Boundary, Field, GridSpec, SpectralOperator};
use spdelab_core::{
    bismut_elworthy_derivative, estimate_pt, estimate_resolvent, vectorial_pt, HolderDrift, Model,
    PolynomialReaction, ScalarHolder, ScalarMap, TestFunctional,
};

fn operator() -> SpectralOperator {
    SpectralOperator::new(&GridSpec::new(15, Boundary::Dirichlet, 8).unwrap()).unwrap()
}

fn tanh1() -> TestFunctional {
    TestFunctional::BoundedComposite {
        map: ScalarMap::Tanh { scale: 1.0 },
        k: 1,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn bounded_functionals_stay_bounded(seed in any::<u64>(), amp in -5.0..5.0f64, sign in any::<bool>()) {
        let op = operator();
        let m = Model::new(op.clone(), PolynomialReaction::cubic(), 1e-3, seed);
        let phi = if sign {
            TestFunctional::BoundedComposite { map: ScalarMap::Sign, k: 2 }
        } else {
            tanh1()
        };
        let r = estimate_pt(&m, &phi, &op.eigenfunction(0).scale(amp), 0.02, 64).unwrap();
        prop_assert!(r.mean.abs() <= phi.sup_bound().unwrap());
    }

    /// Scaling the direction by a power of two or by -1 scales the estimate
    /// bit for bit.
    #[test]
    fn derivative_is_linear_in_the_direction(seed in any::<u64>(), e in -3i32..4, neg in any::<bool>(), c in prop::collection::vec(-1.0..1.0f64, 8)) {
        let op = operator();
        let m = Model::new(op.clone(), PolynomialReaction::cubic(), 1e-3, seed);
        let h = op.synthesize(&c);
        let factor = if neg { -(2f64.powi(e)) } else { 2f64.powi(e) };
        let x = op.eigenfunction(0).scale(0.5);
        let base = bismut_elworthy_derivative(&m, &tanh1(), &x, &h, 0.02, 32).unwrap();
        let scaled = bismut_elworthy_derivative(&m, &tanh1(), &x, &h.scale(factor), 0.02, 32).unwrap();
        prop_assert_eq!(scaled.mean.to_bits(), (factor * base.mean).to_bits());
    }

    #[test]
    fn worker_count_does_not_change_estimates(seed in any::<u64>(), workers in 2usize..6) {
        let op = operator();
        let m = Model::new(op.clone(), PolynomialReaction::cubic(), 1e-3, seed);
        let x = op.eigenfunction(0);
        let one = estimate_pt(&m, &tanh1(), &x, 0.02, 40).unwrap();
        let many = estimate_pt(&m.clone().with_workers(workers), &tanh1(), &x, 0.02, 40).unwrap();
        prop_assert_eq!(one.mean.to_bits(), many.mean.to_bits());
        prop_assert_eq!(one.stderr.to_bits(), many.stderr.to_bits());
    }
}

#[test]
fn zero_time_evaluates_the_functional() {
    let op = operator();
    let m = Model::new(op.clone(), PolynomialReaction::cubic(), 1e-3, 1);
    let x = op.eigenfunction(0).scale(0.3);
    let r = estimate_pt(&m, &tanh1(), &x, 0.0, 10).unwrap();
    assert_eq!(r.mean, (0.3f64).tanh());
    assert_eq!(r.stderr, 0.0);
}

#[test]
fn empty_ensembles_are_rejected() {
    let op = operator();
    let m = Model::new(op.clone(), PolynomialReaction::cubic(), 1e-3, 1);
    assert!(estimate_pt(&m, &tanh1(), &op.zero_field(), 0.01, 0).is_err());
    assert!(estimate_pt(&m, &TestFunctional::ModeCoefficient { k: 99 }, &op.zero_field(), 0.01, 4).is_err());
}

#[test]
fn linear_mode_mean_decays_exponentially() {
    // F = 0: E <X(t), e_k> = e^{mu_k t} <x, e_k>
    let op = operator();
    let m = Model::new(op.clone(), PolynomialReaction::zero(), 1e-3, 3);
    let x = &op.eigenfunction(0).scale(0.8) + &op.eigenfunction(1).scale(-0.4);
    for (k, c) in [(1, 0.8), (2, -0.4)] {
        let r = estimate_pt(&m, &TestFunctional::ModeCoefficient { k }, &x, 0.05, 4000).unwrap();
        let exact = c * (op.eigenvalues()[k - 1] * 0.05).exp();
        assert!((r.mean - exact).abs() <= 4.0 * r.stderr, "k = {k}: {} vs {exact}", r.mean);
    }
}

#[test]
fn linear_derivative_matches_closed_form() {
    // F = 0, phi = <x, e_1>: D P_t phi(x) h = e^{mu_1 t} <h, e_1>
    let op = operator();
    let m = Model::new(op.clone(), PolynomialReaction::zero(), 1e-3, 4);
    let phi = TestFunctional::ModeCoefficient { k: 1 };
    let h = op.eigenfunction(0);
    let exact = (op.eigenvalues()[0] * 0.05).exp();
    let b = bismut_elworthy_derivative(&m, &phi, &op.zero_field(), &h, 0.05, 4000).unwrap();
    assert!((b.mean - exact).abs() <= 4.0 * b.stderr, "{} vs {exact}", b.mean);
    let d = finite_difference_pt(&m, &phi, &op.zero_field(), &h, 1e-3, 0.05, 200).unwrap();
    assert!((d.mean - exact).abs() <= 1e-9, "{} vs {exact}", d.mean);
}

#[test]
fn chapman_kolmogorov_agrees() {
    let op = operator();
    let m = Model::new(op.clone(), PolynomialReaction::cubic(), 1e-3, 5);
    let (direct, staged) = chapman_kolmogorov(&m, &tanh1(), &op.eigenfunction(0), 0.03, 0.03, 4000).unwrap();
    let z = (direct.mean - staged.mean).abs() / direct.stderr.hypot(staged.stderr);
    assert!(z <= 4.0, "z = {z}");
}

#[test]
fn resolvent_of_a_linear_mode() {
    let op = operator();
    let m = Model::new(op.clone(), PolynomialReaction::zero(), 1e-3, 6);
    let x = op.eigenfunction(0).scale(0.7);
    for lambda in [10.0, 100.0] {
        let opts = ResolventOptions {
            tol: 1e-3,
            phi_bound: Some(0.7),
            ..Default::default()
        };
        let r = estimate_resolvent(&m, &TestFunctional::ModeCoefficient { k: 1 }, &x, lambda, &opts, 500).unwrap();
        let exact = 0.7 / (lambda - op.eigenvalues()[0]);
        assert!((r.estimate.mean - exact).abs() <= r.budget, "lambda {lambda}: {} vs {exact}", r.estimate.mean);
        assert!(r.tail <= 1e-3);
    }
}

#[test]
fn resolvent_needs_a_bound_for_unbounded_functionals() {
    let op = operator();
    let m = Model::new(op.clone(), PolynomialReaction::zero(), 1e-3, 6);
    let opts = ResolventOptions {
        tol: 1e-3,
        ..Default::default()
    };
    assert!(estimate_resolvent(&m, &TestFunctional::SupNorm, &op.zero_field(), 10.0, &opts, 10).is_err());
}

#[test]
fn vectorial_semigroup_of_a_constant_map_is_exact() {
    let op = operator();
    let m = Model::new(op.clone(), PolynomialReaction::cubic(), 1e-3, 7);
    let phi = HolderDrift::Pointwise { b: ScalarHolder::Constant { value: 0.25 } };
    let r = vectorial_pt(&m, &phi, &op.eigenfunction(0), 0.02, 50).unwrap();
    assert_eq!(r.mean, Field::constant(op.n_nodes(), 0.25));
    assert_eq!(r.stderr.sup_norm(), 0.0);
}

#[test]
fn vectorial_semigroup_respects_the_bound() {
    let op = operator();
    let m = Model::new(op.clone(), PolynomialReaction::cubic(), 1e-3, 8);
    let phi = HolderDrift::RunningMax { b: ScalarHolder::ClampedSine };
    let r = vectorial_pt(&m, &phi, &op.eigenfunction(0).scale(2.0), 0.02, 100).unwrap();
    assert!(r.mean.sup_norm() <= phi.sup_bound());
}
