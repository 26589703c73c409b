use diffgame::game_model::{CostSign, RunningCost};
use diffgame::gradient_field::{
    check_admissible, integrate_p_field, reconstruct_values, GradientPair, PFieldOptions,
    PFieldSolution, RhsKind,
};

fn sweep(costs: [RunningCost<f64>; 2], x0: f64, p0: (f64, f64), range: (f64, f64), kind: RhsKind) -> PFieldSolution<f64> {
    let opts = PFieldOptions {
        kind,
        ..PFieldOptions::default()
    };
    integrate_p_field(
        |x| costs[0].derivative(x),
        |x| costs[1].derivative(x),
        x0,
        GradientPair::new(p0.0, p0.1),
        range,
        &opts,
    )
    .unwrap()
}

/// Largest gap between a centred difference of the reconstructed values and
/// the field itself, relative to `1 + |p|`.
fn derivative_mismatch(field: &PFieldSolution<f64>, costs: &[RunningCost<f64>; 2]) -> f64 {
    let values = reconstruct_values(field, costs);
    let x = &values.x_grid;
    let mut worst = 0.0_f64;
    for k in 1..x.len() - 1 {
        let h = x[k + 1] - x[k - 1];
        let d1 = (values.u1[k + 1] - values.u1[k - 1]) / h;
        let d2 = (values.u2[k + 1] - values.u2[k - 1]) / h;
        let p = field.p_values[k];
        worst = worst
            .max((d1 - p.p1).abs() / (1.0 + p.p1.abs()))
            .max((d2 - p.p2).abs() / (1.0 + p.p2.abs()));
    }
    worst
}

#[test]
fn linear_costs_give_a_constant_field() {
    let costs = [RunningCost::Linear { k: 1.0 }, RunningCost::Linear { k: 2.0 }];
    for kind in [RhsKind::Reduced, RhsKind::Full] {
        let field = sweep(costs, 0.0, (1.0, 2.0), (-10.0, 10.0), kind);
        assert!(!field.is_truncated());
        assert_eq!(field.x_grid.len(), 20_001);
        for p in &field.p_values {
            assert!((p.p1 - 1.0).abs() <= 1e-9 && (p.p2 - 2.0).abs() <= 1e-9);
        }
    }
}

#[test]
fn full_field_values_differentiate_back_to_the_field() {
    let cubic = RunningCost::power(0.0, 3, CostSign::Plus).unwrap();
    let cases = [
        ([cubic, cubic], (4.0, 4.0)),
        (
            [
                RunningCost::power(1.0, 3, CostSign::Minus).unwrap(),
                RunningCost::power(-3.0, 3, CostSign::Plus).unwrap(),
            ],
            (4.0, 0.0),
        ),
        ([RunningCost::Linear { k: 0.5 }, RunningCost::Linear { k: -0.25 }], (0.5, -0.25)),
    ];
    for (costs, p0) in cases {
        let field = sweep(costs, 0.0, p0, (-0.5, 0.5), RhsKind::Full);
        assert!(!field.is_truncated());
        let gap = derivative_mismatch(&field, &costs);
        assert!(gap <= 1e-6, "{costs:?}: {gap}");
    }
}

#[test]
fn admissibility_of_the_linear_equilibrium() {
    let costs = [RunningCost::Linear { k: 1.0 }, RunningCost::Zero];
    let field = sweep(costs, 0.0, (1.0, 0.0), (-10.0, 10.0), RhsKind::Reduced);
    let values = reconstruct_values(&field, &costs);
    for (&x, &u1) in values.x_grid.iter().zip(&values.u1) {
        assert!((u1 - (x - 0.5)).abs() <= 1e-9);
    }
    assert!(values.u2.iter().all(|&u| u.abs() <= 1e-12));
    let report = check_admissible(&values, &field, &costs).unwrap();
    assert!(report.sublinear);
    assert!(report.growth_constant <= 1.5);
    assert!(report.jump_ok);
}

#[test]
fn quadratic_growth_is_rejected() {
    let costs = [RunningCost::Zero, RunningCost::Zero];
    let field = sweep(costs, 0.0, (0.0, 0.0), (-10.0, 10.0), RhsKind::Reduced);
    let mut values = reconstruct_values(&field, &costs);
    for (u, &x) in values.u1.iter_mut().zip(&values.x_grid) {
        *u = -0.5 * x * x;
    }
    let report = check_admissible(&values, &field, &costs).unwrap();
    assert!(!report.sublinear);
    assert!(report.outer_ratio > report.inner_ratio);
}

#[test]
fn zero_solution_is_admissible() {
    let costs = [RunningCost::Zero, RunningCost::Zero];
    let field = sweep(costs, 0.0, (0.0, 0.0), (-5.0, 5.0), RhsKind::Reduced);
    let values = reconstruct_values(&field, &costs);
    let report = check_admissible(&values, &field, &costs).unwrap();
    assert!(report.sublinear && report.jump_ok);
    assert_eq!(report.growth_constant, 0.0);
}

#[test]
fn full_field_refuses_the_singular_point() {
    let opts = PFieldOptions {
        kind: RhsKind::Full,
        ..PFieldOptions::default()
    };
    let r = integrate_p_field(|_| 0.0, |_| 0.0, 0.0, GradientPair::new(0.0, 0.0), (-1.0, 1.0), &opts);
    assert!(r.is_err());
}

#[test]
fn identical_power_costs_keep_the_players_symmetric() {
    let cubic = RunningCost::power(0.0, 3, CostSign::Plus).unwrap();
    let field = sweep([cubic, cubic], 0.0, (4.0, 4.0), (-1.0, 1.0), RhsKind::Reduced);
    assert!(field.p_values.iter().all(|p| p.p1 == p.p2));
}

#[test]
fn conflicting_costs_split_the_players() {
    let costs = [
        RunningCost::power(1.0, 3, CostSign::Minus).unwrap(),
        RunningCost::power(-3.0, 3, CostSign::Plus).unwrap(),
    ];
    let field = sweep(costs, 0.0, (4.0, 0.0), (-0.5, 0.5), RhsKind::Reduced);
    let spread = field
        .p_values
        .iter()
        .fold(0.0_f64, |m, p| m.max((p.p1 - p.p2).abs()));
    assert!(spread > 1.0);
    // The initial slope is fixed by the field at the seed point.
    let k = field.x_grid.iter().position(|&x| x == 0.0).unwrap();
    let slope = field.slopes[k];
    let (h1, h2) = (costs[0].derivative(0.0), costs[1].derivative(0.0));
    assert!((slope.p1 - (h1 * 4.0 - 4.0 * (h2 + 4.0))).abs() <= 1e-12);
    assert!((slope.p2 - h2 * 4.0).abs() <= 1e-12);
}
