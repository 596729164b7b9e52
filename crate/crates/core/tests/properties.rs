//! Property tests for the structural invariants: convexity bounds, rate
//! positivity, Bernstein alternation, semigroup composition, quantile round
//! trips and solver agreement under randomized mechanisms and parameters.

use proptest::prelude::*;

use csbp::exponent::{euler_phi, ExactSolver};
use csbp::gml::MittagLefflerLaw;
use csbp::mechanism::{moment_functional, AtomicMeasure, BranchingMechanism, JumpMeasure};
use csbp::numeric::{bernstein_sign_probe, SignProbe};

#[test]
fn core_types_are_shareable() {
    fn check<T: Send + Sync>() {}
    check::<BranchingMechanism>();
    check::<csbp::ExactSolver>();
    check::<csbp::ExponentFlow>();
    check::<MittagLefflerLaw>();
    check::<csbp::CsbpSampler>();
    check::<csbp::MeasureView>();
    check::<csbp::SelfSimilarFamily>();
}

fn arb_atoms() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.05f64..5.0, 0.05f64..2.0), 0..3)
}

fn arb_critical_mechanism() -> impl Strategy<Value = BranchingMechanism> {
    (0.0f64..2.0, arb_atoms())
        .prop_filter("degenerate", |(beta, atoms)| {
            *beta > 0.0 || !atoms.is_empty()
        })
        .prop_map(|(beta, atoms)| {
            let pi = if atoms.is_empty() {
                None
            } else {
                Some(JumpMeasure::Atomic(atoms))
            };
            BranchingMechanism::new(0.0, beta, pi).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn convexity_sandwich(mech in arb_critical_mechanism(), u in 1e-3f64..1e3) {
        let p = mech.psi(u).unwrap();
        let dp = mech.psi_derivative(u, 1).unwrap();
        prop_assert!(dp >= p / u * (1.0 - 1e-10));
        prop_assert!(dp <= 2.0 * p / u * (1.0 + 1e-10));
    }

    #[test]
    fn merge_rates_nonnegative(mech in arb_critical_mechanism(), k in 2u32..=20, rho in 1e-3f64..1e3) {
        prop_assert!(mech.merge_rate(rho, k).unwrap() >= 0.0);
    }

    #[test]
    fn continuity_bound_increases(mech in arb_critical_mechanism(), m in 1e-3f64..1e2, factor in 1.01f64..10.0) {
        let k1 = mech.continuity_bound(m).unwrap();
        let k2 = mech.continuity_bound(m * factor).unwrap();
        prop_assert!(k1 > 0.0);
        prop_assert!(k2 > k1);
    }

    #[test]
    fn derivative_matches_central_difference(mech in arb_critical_mechanism(), u in 0.1f64..10.0) {
        let h = 1e-5 * (1.0 + u);
        let fd = (mech.psi(u + h).unwrap() - mech.psi(u - h).unwrap()) / (2.0 * h);
        let exact = mech.psi_derivative(u, 1).unwrap();
        prop_assert!((fd - exact).abs() <= 1e-7 * (1.0 + exact.abs()));
    }

    #[test]
    fn mechanism_derivative_is_bernstein(mech in arb_critical_mechanism(), q0 in 0.01f64..1.0) {
        let probes = bernstein_sign_probe(|u| mech.psi_derivative(u, 1).unwrap(), q0, 2.0, 6);
        prop_assert!(probes.iter().all(|p| *p != SignProbe::Violated));
    }

    #[test]
    fn mass_moment_functional_vanishes(atoms in prop::collection::vec((0.05f64..5.0, 0.05f64..2.0), 1..4), k in 2u32..=4) {
        let nu = AtomicMeasure::new(atoms).unwrap();
        let v = moment_functional(&nu, |x| x, k).unwrap();
        prop_assert!(v.abs() <= 1e-12 * nu.total().powi(k as i32).max(1.0));
    }

    #[test]
    fn gml_quantile_round_trip(gamma in 1.1f64..=2.0, rho in 0.1f64..=1.0, p in 0.01f64..0.99) {
        let law = MittagLefflerLaw::standard(gamma, rho).unwrap();
        let x = law.quantile(p).unwrap();
        prop_assert!((law.cdf(x) - p).abs() <= 1e-10);
    }

    #[test]
    fn gml_cdf_monotone(gamma in 1.1f64..=2.0, rho in 0.1f64..=1.0, a in 0.01f64..50.0, factor in 1.001f64..4.0) {
        let law = MittagLefflerLaw::standard(gamma, rho).unwrap();
        let (fa, fb) = (law.cdf(a), law.cdf(a * factor));
        prop_assert!(fb >= fa - 1e-10, "cdf({a}) = {fa} vs cdf({}) = {fb}", a * factor);
        prop_assert!((0.0..=1.0).contains(&fa) && (0.0..=1.0).contains(&fb));
    }

    #[test]
    fn gml_transform_within_unit_interval(gamma in 1.1f64..=2.0, rho in 0.1f64..=1.0, q in 1e-3f64..1e3) {
        let law = MittagLefflerLaw::standard(gamma, rho).unwrap();
        let v = law.laplace_functional(q);
        prop_assert!(v > 0.0 && v < 1.0);
    }
}

proptest! {
    // solver-backed cases are heavier
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn semigroup_on_homogeneous_flows(gamma in 1.2f64..=2.0, t in 0.05f64..3.0, s in 0.05f64..3.0, q in 0.05f64..10.0) {
        let solver = ExactSolver::build(BranchingMechanism::homogeneous(gamma).unwrap(), 1e-9).unwrap();
        let joint = solver.phi(t + s, q).unwrap();
        let nested = solver.phi(t, solver.phi(s, q).unwrap()).unwrap();
        prop_assert!((joint - nested).abs() <= 5e-9 * (1.0 + joint.abs()));
    }

    #[test]
    fn euler_tracks_exact_flow(t in 0.1f64..2.0, q in 0.1f64..4.0) {
        let mech = BranchingMechanism::quadratic(1.0).unwrap();
        let solver = ExactSolver::build(mech.clone(), 1e-9).unwrap();
        let approx_v = euler_phi(&mech, t, q, 20_000).unwrap();
        let exact_v = solver.phi(t, q).unwrap();
        prop_assert!((approx_v - exact_v).abs() <= 1e-3 * (1.0 + q));
    }

    #[test]
    fn flow_decreasing_in_time(gamma in 1.2f64..=2.0, t in 0.05f64..3.0, dt in 0.05f64..2.0, q in 0.05f64..10.0) {
        let solver = ExactSolver::build(BranchingMechanism::homogeneous(gamma).unwrap(), 1e-9).unwrap();
        prop_assert!(solver.phi(t + dt, q).unwrap() < solver.phi(t, q).unwrap());
    }
}
