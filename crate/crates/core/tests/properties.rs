//! Invariants over randomized instances.

use nofob::algorithms::{build_solver, AlgorithmConfig, AlgorithmKind};
use nofob::diagnostics::{check_fejer, check_mu_bounds, check_separation, check_short_step, MuBounds};
use nofob::four_op::{
    conservative_delta, fbs_theta, gamma_bound_conservative, gamma_bound_long, mu_pair, FourOpSolver, KernelSpec,
};
use nofob::nofob::{nofob_halfspace_iterate, nofob_iterate, Schedule, Status, DEFAULT_EPS_THETA};
use nofob::operators::{separable_nonlinear_resolvent, NonlinearKernel, ProxOperator, ScalarKernel};
use nofob::problems::{make_problem, make_regularized_quadratic, make_rotation_vi, ProblemParams, Split};
use nofob::projective::{ps_explicit_iterate, ps_resolvent_iterate, PdPoint};
use nofob::Point;
use proptest::prelude::*;

fn split() -> impl Strategy<Value = Split> {
    prop_oneof![Just(Split::Fbs), Just(Split::Fbhf), Just(Split::Fbf), Just(Split::Full)]
}

fn point(n: usize) -> impl Strategy<Value = Point> {
    prop::collection::vec(-5.0..5.0f64, n).prop_map(Point::from_vec)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn explicit_step_is_relaxed_halfspace_projection(seed in 0u64..500, s in split(), x in point(8), theta in 0.1..1.9f64) {
        let inst = make_regularized_quadratic(8, 0.1, seed, s).unwrap();
        let prob = &inst.problem;
        let gamma = 0.9 * gamma_bound_long(prob.beta_e(), prob.l_d(), 0.05).unwrap();
        let view = FourOpSolver::new(prob.clone(), KernelSpec::ScalarStep(Schedule::Constant(gamma))).unwrap();
        let rec = nofob_iterate(&view, 0, &x, theta).unwrap();
        let half = nofob_halfspace_iterate(&view, 0, &x, theta).unwrap();
        prop_assert!((rec.x_next - half).amax() <= 1e-10 * (1.0 + x.amax()));
    }

    #[test]
    fn runs_are_fejer_and_separating(seed in 0u64..500, s in split()) {
        let inst = make_regularized_quadratic(10, 0.1, seed, s).unwrap();
        for kind in [AlgorithmKind::FbhfLong, AlgorithmKind::Fbhf, AlgorithmKind::FourOp] {
            let solver = build_solver(kind, &inst, &AlgorithmConfig::default()).unwrap();
            let t = solver.run(&inst.default_x0(), 1e-10, 20_000).unwrap();
            prop_assert_eq!(t.status, Status::Converged);
            prop_assert!(check_fejer(&t, &inst.oracle, solver.metric_s()).unwrap().passed);
            prop_assert!(check_separation(&t, &solver.view, &inst.oracle).unwrap().passed);
            prop_assert!(check_mu_bounds(&t, &MuBounds::from_view(&solver.view)).unwrap().passed);
            prop_assert!(check_short_step(&t).unwrap().passed);
            prop_assert!((&t.final_x - &inst.oracle).norm() <= 1e-7);
        }
    }

    #[test]
    fn conservative_step_never_exceeds_mu(seed in 0u64..500, s in split(), frac in 0.05..1.0f64, x in point(6), y in point(6)) {
        let inst = make_regularized_quadratic(6, 0.1, seed, s).unwrap();
        let prob = &inst.problem;
        let bound = gamma_bound_conservative(prob.beta_e(), prob.l_d(), prob.k_norm(), 0.05).unwrap();
        let gamma = frac * bound;
        let (_, delta) = conservative_delta(prob, gamma).unwrap();
        prop_assume!((&x - &y).norm() > 1e-9);
        prop_assert!(gamma / (2.0 - delta) <= mu_pair(prob, gamma, &x, &y) + 1e-10);
    }

    #[test]
    fn rotation_long_step_contracts(angle in 5.0..=90.0f64, scale in 0.2..3.0f64) {
        let inst = make_rotation_vi(angle, scale, 4).unwrap();
        let solver = build_solver(AlgorithmKind::FbhfLong, &inst, &AlgorithmConfig::default()).unwrap();
        let t = solver.run(&inst.default_x0(), 1e-9, 20_000).unwrap();
        prop_assert_eq!(t.status, Status::Converged);
        prop_assert!(check_fejer(&t, &inst.oracle, solver.metric_s()).unwrap().passed);
    }

    #[test]
    fn projective_forms_agree(seed in 0u64..200, theta in 0.2..1.8f64) {
        let inst = make_problem("saddle", &ProblemParams { n: Some(5), m: Some(4), seed, ..Default::default() }).unwrap();
        let ps = inst.ps.clone().unwrap();
        let mut a = PdPoint::unstack(&ps, &inst.default_x0()).unwrap();
        let mut b = a.clone();
        for k in 0..40 {
            a = ps_explicit_iterate(&ps, k, &a, theta).unwrap().0;
            b = ps_resolvent_iterate(&ps, k, &b, theta).unwrap().0;
            prop_assert!((a.stack() - b.stack()).amax() <= 1e-10);
        }
    }

    #[test]
    fn fbs_theta_is_admissible(beta in 0.01..10.0f64, frac in 0.01..0.999f64) {
        let gamma = frac * 4.0 / beta;
        let theta = fbs_theta(beta, gamma, DEFAULT_EPS_THETA);
        prop_assert!((DEFAULT_EPS_THETA..=2.0 - DEFAULT_EPS_THETA).contains(&theta));
        // the realized relaxation of the plain FB map never exceeds 1
        prop_assert!(theta * (1.0 - beta * gamma / 4.0) <= 1.0 + 1e-12);
    }

    #[test]
    fn separable_resolvent_solves_inclusion(y in point(6), weight in 0.0..2.0f64, slope in 0.1..3.0f64) {
        let n = 6;
        let b = ProxOperator::L1Affine { weight, diag: Point::from_element(n, 0.5), offset: Point::zeros(n) };
        let kernel = NonlinearKernel::uniform(n, ScalarKernel::Arctan { slope }).unwrap();
        let parts = b.scalar_parts(n).unwrap();
        let x = separable_nonlinear_resolvent(&kernel, &parts, &y, 1e-12).unwrap();
        let gap = b.distance_to_image(&x, &(y - kernel.apply(&x))).unwrap();
        prop_assert!(gap <= 1e-11);
    }
}
