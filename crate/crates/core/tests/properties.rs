use diffgame::feedback::CuttingFunction;
use diffgame::game_model::{
    check_dissipativity, eval_drift, eval_jacobian, lie_derivative, CubicDrift, Drift,
    LyapunovCandidate, PolynomialDrift, PolynomialTerm, SignConvention,
};
use diffgame::gradient_field::{
    apply_jump, conflicting_rhs, hamiltonian_min_on_grid, lambda_and_delta, p_rhs,
    reconstruct_u, GradientPair, RhsKind,
};
use diffgame::master::{
    integrate_master, linearize_scalar, master_value, solve_lambda_root, MasterProblem,
    RootOptions,
};
use proptest::prelude::*;

fn pair(range: f64) -> impl Strategy<Value = GradientPair<f64>> {
    (-range..range, -range..range).prop_map(|(a, b)| GradientPair::new(a, b))
}

fn convention() -> impl Strategy<Value = SignConvention> {
    prop_oneof![Just(SignConvention::Literal), Just(SignConvention::Stabilized)]
}

fn polynomial_drift() -> impl Strategy<Value = PolynomialDrift<f64>> {
    (1usize..=3).prop_flat_map(|dim| {
        let term = (0..dim, prop::collection::vec(0u32..=3, dim), -1.0..1.0f64).prop_map(
            |(component, exponents, coefficient)| PolynomialTerm {
                component,
                exponents,
                coefficient,
            },
        );
        prop::collection::vec(term, 1..8)
            .prop_map(move |terms| PolynomialDrift::new(dim, terms).unwrap())
    })
}

fn central_difference<D: Drift<f64>>(d: &D, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut jac = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        let fp = eval_drift(d, &xp).unwrap();
        let fm = eval_drift(d, &xm).unwrap();
        for i in 0..n {
            jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn interaction_determinant_bounds(p in pair(100.0)) {
        let (lam, delta) = lambda_and_delta(p);
        let sq = p.p1 * p.p1 + p.p2 * p.p2;
        let slack = 1e-12 * sq;
        prop_assert!(0.5 * sq <= delta + slack);
        prop_assert!(delta <= 2.0 * sq + slack);
        if sq > 0.0 {
            prop_assert!(delta > 0.0);
        }
        prop_assert!((lam.determinant() - delta).abs() <= 1e-9 * (1.0 + sq));
    }

    #[test]
    fn cutting_function_is_a_sawtooth(tau in 1e-4..1.0f64, t in 0.0..100.0f64) {
        let cut = CuttingFunction::new(tau).unwrap();
        let theta = cut.theta(t);
        prop_assert!((0.0..=tau).contains(&theta));
        prop_assert!((theta + cut.eta(t) - tau).abs() <= 1e-9 * tau.max(t));
        let phase = t / tau - (t / tau).floor();
        if phase > 1e-6 && phase < 1.0 - 1e-6 {
            prop_assert!((cut.theta(t + tau) - theta).abs() <= 1e-9 * (t + tau));
            prop_assert!((theta - ((t / tau).ceil() * tau - t)).abs() <= 1e-9 * (t + tau));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn full_field_is_reduced_over_delta(p in pair(50.0), h1 in -10.0..10.0f64, h2 in -10.0..10.0f64) {
        let (_, delta) = lambda_and_delta(p);
        prop_assume!(delta >= 1e-10);
        let full = p_rhs(p, h1, h2, RhsKind::Full, 1e-10).unwrap();
        let reduced = p_rhs(p, h1, h2, RhsKind::Reduced, 1e-10).unwrap();
        for (f, r) in [(full.p1, reduced.p1), (full.p2, reduced.p2)] {
            prop_assert!((f - r / delta).abs() <= 1e-12 * (r / delta).abs().max(1e-300));
        }
    }

    #[test]
    fn jump_is_an_involution_where_both_sides_allow_it(a in -100.0..100.0f64) {
        let p = GradientPair::new(a, -a);
        let back = apply_jump(apply_jump(p).unwrap()).unwrap();
        prop_assert_eq!(back, p);
    }

    #[test]
    fn jump_maps_to_the_symmetric_point(p in pair(10.0)) {
        match apply_jump(p) {
            Ok(q) => {
                prop_assert!(p.sum() >= 0.0);
                prop_assert_eq!(q, GradientPair::new(-p.p1, -p.p2));
            }
            Err(_) => prop_assert!(p.sum() < 0.0),
        }
    }

    #[test]
    fn conflicting_field_matches_generic_field(
        p in pair(5.0),
        x in -3.0..3.0f64,
        a1 in -3.0..3.0f64,
        a2 in -3.0..3.0f64,
        n in 2u32..=4,
    ) {
        let h1p = -(x - a1).powi(n as i32 - 1);
        let h2p = (x - a2).powi(n as i32 - 1);
        let generic = p_rhs(p, h1p, h2p, RhsKind::Reduced, 1e-10).unwrap();
        let direct = conflicting_rhs(p, x, a1, a2, n);
        prop_assert!((generic.p1 - direct.p1).abs() <= 1e-12 * (1.0 + generic.p1.abs()));
        prop_assert!((generic.p2 - direct.p2).abs() <= 1e-12 * (1.0 + generic.p2.abs()));
    }

    #[test]
    fn cubic_jacobian_is_the_linearised_coefficient(
        gamma in -5.0..5.0f64,
        kappa in -5.0..5.0f64,
        lambda in -10.0..10.0f64,
    ) {
        let drift = CubicDrift::literal(gamma, kappa).unwrap();
        let jac = eval_jacobian(&drift, &[lambda]).unwrap()[(0, 0)];
        prop_assert_eq!(jac, linearize_scalar(gamma, kappa, lambda).coefficient);
        let written = -3.0 * gamma * lambda * lambda + 2.0 * kappa * lambda;
        prop_assert!((jac - written).abs() <= 1e-12 * (1.0 + written.abs()));
    }

    #[test]
    fn half_square_lie_derivative_is_a_dot_product(
        gamma in -3.0..3.0f64,
        kappa in -3.0..3.0f64,
        conv in convention(),
        x in -10.0..10.0f64,
    ) {
        let drift = CubicDrift::new(gamma, kappa, conv).unwrap();
        let lie = lie_derivative(&LyapunovCandidate::HalfSquareNorm, &drift, &[x]).unwrap();
        prop_assert_eq!(lie, x * drift.value(x));
    }

    #[test]
    fn linearisation_shift_identity(
        gamma in -3.0..3.0f64,
        kappa in -3.0..3.0f64,
        lambda in -3.0..3.0f64,
        w in -5.0..5.0f64,
        controls in -2.0..2.0f64,
    ) {
        let g = linearize_scalar(gamma, kappa, lambda);
        let lhs = g.z_rhs(w - lambda, controls);
        let rhs = g.w_rhs(w, controls);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn polynomial_jacobian_matches_central_differences(
        drift in polynomial_drift(),
        seed in prop::collection::vec(-3.0..3.0f64, 3),
    ) {
        let x = &seed[..drift.dim()];
        let analytic = eval_jacobian(&drift, x).unwrap();
        let numeric = central_difference(&drift, x, 1e-5);
        for i in 0..drift.dim() {
            for j in 0..drift.dim() {
                prop_assert!((analytic[(i, j)] - numeric[i][j]).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn cubic_jacobian_matches_central_differences(
        gamma in -3.0..3.0f64,
        kappa in -3.0..3.0f64,
        conv in convention(),
        x in -3.0..3.0f64,
    ) {
        let drift = CubicDrift::new(gamma, kappa, conv).unwrap();
        let numeric = central_difference(&drift, &[x], 1e-5)[0][0];
        prop_assert!((drift.jacobian_at(&[x])[(0, 0)] - numeric).abs() <= 1e-6);
    }

    #[test]
    fn dissipativity_is_monotone_in_the_rate(
        gamma in -2.0..2.0f64,
        kappa in -2.0..2.0f64,
        c in 0.01..5.0f64,
        shrink in 0.01..1.0f64,
        r in 0.0..3.0f64,
    ) {
        let drift = CubicDrift::literal(gamma, kappa).unwrap();
        let v = LyapunovCandidate::HalfSquareNorm;
        let strong = check_dissipativity(&drift, &v, c, r, r + 5.0, 64).unwrap();
        let weak = check_dissipativity(&drift, &v, c * shrink, r, r + 5.0, 64).unwrap();
        if strong.holds {
            prop_assert!(weak.holds);
        }
        prop_assert!(weak.worst_margin <= strong.worst_margin);
    }

    #[test]
    fn hamiltonian_grid_minimum_recovers_the_value(
        x in -5.0..5.0f64,
        p in pair(5.0),
        k1 in -2.0..2.0f64,
        k2 in -2.0..2.0f64,
    ) {
        let (h1, h2) = (k1 * x, k2 * x);
        let (u1, u2) = reconstruct_u(p, h1, h2);
        let (m1, a1) = hamiltonian_min_on_grid(p.p1, p.p2, h1, (-10.0, 10.0), 1e-3);
        let (m2, a2) = hamiltonian_min_on_grid(p.p2, p.p1, h2, (-10.0, 10.0), 1e-3);
        prop_assert!((m1 - u1).abs() <= 1e-5 && (m2 - u2).abs() <= 1e-5);
        prop_assert!((a1 + p.p1).abs() <= 1e-3 && (a2 + p.p2).abs() <= 1e-3);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn scalar_master_matches_closed_form(
        gamma in -2.0..2.0f64,
        kappa in -2.0..2.0f64,
        lambda in -2.0..2.0f64,
        x0 in -3.0..3.0f64,
    ) {
        let drift = CubicDrift::literal(gamma, kappa).unwrap();
        let a = drift.derivative(lambda);
        let horizon = 1.0;
        prop_assume!(a.abs() * horizon <= 5.0);
        let mp = MasterProblem::new(drift, vec![lambda], vec![x0], horizon).unwrap();
        let sol = integrate_master(&mp, 1e-3).unwrap();
        prop_assert_eq!(sol.values[0][0], x0 - lambda);
        let closed = sol.closed_form.as_ref().unwrap();
        for (u, c) in sol.values.iter().zip(closed) {
            prop_assert!((u[0] - c).abs() <= 1e-8);
        }
    }

    #[test]
    fn lambda_roots_reintegrate_to_zero(
        gamma in 0.1..2.0f64,
        kappa in -1.0..1.0f64,
        x0 in -3.0..3.0f64,
        t in 0.1..1.0f64,
    ) {
        let drift = CubicDrift::literal(gamma, kappa).unwrap();
        let tol = 1e-10;
        let opts = RootOptions::default();
        let root = solve_lambda_root(&drift, &[x0], t, &[x0], tol, &opts).unwrap();
        let u = master_value(&drift, &[x0], &root.lambda, t, opts.dt).unwrap();
        prop_assert!(u[0].abs() <= 10.0 * tol);
    }
}
