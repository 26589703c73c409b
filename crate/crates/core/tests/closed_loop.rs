use diffgame::feedback::{
    evaluate_cost, feedback_control, nash_deviation_test, pointwise_bellman_check,
    simulate_dde, tau_ladder_costs, DelayedFeedback, GradientSource, NashOptions,
    PlayerControl, SignMode, SimulationOptions,
};
use diffgame::game_model::{CubicDrift, GameSpec, RunningCost, SignConvention};
use diffgame::gradient_field::Player;
use diffgame::linear_reduction::linear_game_closed_forms;

fn quadratic_game(drift: CubicDrift<f64>, y: f64) -> GameSpec<f64> {
    GameSpec::new(drift, [RunningCost::Zero, RunningCost::Zero], None, y).unwrap()
}

/// First player's law for the game with `u_1 = -x^2 / 2`, `u_2 = 0`.
fn quadratic_law(drift: CubicDrift<f64>, tau: f64, mode: SignMode) -> PlayerControl<f64> {
    PlayerControl::Delayed(DelayedFeedback {
        player: Player::First,
        stored_gradient: GradientSource::Affine { slope: 1.0, intercept: 0.0 },
        value_gradient: GradientSource::Affine { slope: -1.0, intercept: 0.0 },
        drift,
        cut: diffgame::feedback::CuttingFunction::new(tau).unwrap(),
        sign_mode: mode,
    })
}

fn linear_cost_game(k1: f64, k2: f64, y: f64) -> GameSpec<f64> {
    GameSpec::new(
        CubicDrift::literal(0.0, 0.0).unwrap(),
        [RunningCost::Linear { k: k1 }, RunningCost::Linear { k: k2 }],
        None,
        y,
    )
    .unwrap()
}

fn constant_law(k: f64) -> PlayerControl<f64> {
    PlayerControl::Instantaneous(GradientSource::Affine { slope: 0.0, intercept: k })
}

#[test]
fn tau_ladder_cost_differences_contract() {
    let drift = CubicDrift::literal(0.1, 0.0).unwrap();
    let game = quadratic_game(drift, 1.0);
    let reports = tau_ladder_costs(
        &game,
        |tau| Ok([quadratic_law(drift, tau, SignMode::GradientDescent), PlayerControl::Zero]),
        &[1e-2, 1e-3, 1e-4],
        1,
        30.0,
    )
    .unwrap();
    let u: Vec<f64> = reports.iter().map(|r| r.costs[0]).collect();
    let (d1, d2) = ((u[1] - u[0]).abs(), (u[2] - u[1]).abs());
    assert!(d1 > d2, "costs {u:?}");
    assert!(reports.iter().all(|r| r.costs[1] == 0.0 && !r.divergent));
}

#[test]
fn truncation_error_is_within_the_tail_bound() {
    let drift = CubicDrift::literal(0.1, 0.0).unwrap();
    let game = quadratic_game(drift, 1.0);
    let law = quadratic_law(drift, 1e-2, SignMode::GradientDescent);
    let traj = simulate_dde(&game, [&law, &PlayerControl::Zero], &SimulationOptions::new(40.0, 1e-3)).unwrap();
    let short = evaluate_cost(&traj, 30.0).unwrap();
    let long = evaluate_cost(&traj, 40.0).unwrap();
    assert!(short.tail_bound[0] > 0.0);
    assert!((long.costs[0] - short.costs[0]).abs() < short.tail_bound[0]);
}

#[test]
fn second_player_cost_vanishes_identically() {
    for y in [-5.0, -1.0, 0.5, 3.0] {
        for conv in SignConvention::ALL {
            let drift = CubicDrift::new(-0.1, 1.0, conv).unwrap();
            let game = quadratic_game(drift, y);
            let law = quadratic_law(drift, 1e-2, SignMode::PaperLiteral);
            let traj =
                simulate_dde(&game, [&law, &PlayerControl::Zero], &SimulationOptions::new(5.0, 1e-3)).unwrap();
            assert!(traj.samples.iter().all(|s| s.cumulative_cost[1] == 0.0 && s.alpha[1] == 0.0));
        }
    }
}

#[test]
fn linear_game_costs_match_the_discounted_integral() {
    let (k1, k2, y) = (1.0, 0.5, 2.0);
    let game = linear_cost_game(k1, k2, y);
    let traj = simulate_dde(
        &game,
        [&constant_law(k1), &constant_law(k2)],
        &SimulationOptions::new(30.0, 1e-3),
    )
    .unwrap();
    let closed = linear_game_closed_forms(k1, k2, y).unwrap();
    for s in traj.samples.iter().step_by(1000) {
        assert!((s.x - (y - (k1 + k2) * s.t)).abs() < 1e-9);
    }
    let report = evaluate_cost(&traj, 30.0).unwrap();
    for i in 0..2 {
        assert!(
            (report.costs[i] - closed.discounted_costs[i]).abs() <= 1e-6,
            "player {i}: {} vs {}",
            report.costs[i],
            closed.discounted_costs[i]
        );
        assert!((closed.discounted_costs[i] - closed.values[i]).abs() < 1e-12);
    }
}

#[test]
fn constant_solution_survives_unilateral_deviations() {
    let game = linear_cost_game(1.0, 0.0, 2.0);
    let opts = NashOptions {
        n_perturbations: 50,
        seed: 17,
        ..NashOptions::default()
    };
    let v = nash_deviation_test(&game, [&constant_law(1.0), &constant_law(0.0)], &opts).unwrap();
    assert!(v.passed, "{v:?}");
    assert!(v.worst_improvement.iter().all(|&w| w >= -1e-3));
    assert_eq!(v.exploded_runs, [0, 0]);
}

#[test]
fn hamiltonian_inequality_along_the_equilibrium() {
    let game = linear_cost_game(1.0, 0.0, 2.0);
    let traj = simulate_dde(
        &game,
        [&constant_law(1.0), &constant_law(0.0)],
        &SimulationOptions::new(10.0, 1e-2),
    )
    .unwrap();
    let g1 = GradientSource::Affine { slope: 0.0, intercept: 1.0 };
    let g2 = GradientSource::Zero;
    let check = pointwise_bellman_check(&traj, [&g1, &g2], &game.costs, 100, 100, 9).unwrap();
    assert!(check.min_margin >= -1e-6);
}

#[test]
fn delayed_law_tends_to_the_plain_gradient() {
    let drift = CubicDrift::literal(-1.0, -1.0).unwrap();
    let (t, x) = (0.37_f64, -2.0_f64);
    let gaps: Vec<f64> = [1e-2, 1e-3, 1e-4, 1e-5]
        .iter()
        .map(|&tau| {
            let law = DelayedFeedback::from_gradient(
                Player::First,
                GradientSource::Affine { slope: -1.0, intercept: 0.0 },
                drift,
                tau,
            )
            .unwrap();
            (feedback_control(&law, t + 0.3 * tau, x, None).unwrap() - x).abs()
        })
        .collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]));
    assert!(gaps[3] < 1e-3);
}

#[test]
fn bounded_controls_are_clamped() {
    let drift = CubicDrift::literal(1.0, 0.0).unwrap();
    let game = GameSpec::new(drift, [RunningCost::Zero, RunningCost::Zero], Some(0.5), 3.0).unwrap();
    let law = quadratic_law(drift, 1e-2, SignMode::GradientDescent);
    let traj = simulate_dde(&game, [&law, &PlayerControl::Zero], &SimulationOptions::new(1.0, 1e-3)).unwrap();
    assert!(traj.clamp_events > 0);
    assert!(traj.samples.iter().all(|s| s.alpha[0].abs() <= 0.5));
}

#[test]
fn reruns_are_bitwise_identical() {
    let drift = CubicDrift::literal(-0.1, -1.0).unwrap();
    let game = quadratic_game(drift, -5.0);
    let law = quadratic_law(drift, 1e-3, SignMode::PaperLiteral);
    let opts = SimulationOptions::new(5.0, 1e-4);
    let a = simulate_dde(&game, [&law, &PlayerControl::Zero], &opts).unwrap();
    let b = simulate_dde(&game, [&law, &PlayerControl::Zero], &opts).unwrap();
    assert_eq!(a, b);
}

#[test]
fn first_example_has_a_bounded_reading() {
    let bounded = SignConvention::ALL.iter().any(|&conv| {
        SignMode::ALL.iter().any(|&mode| {
            let drift = CubicDrift::new(-1.0, -1.0, conv).unwrap();
            let game = quadratic_game(drift, -5.0);
            let law = quadratic_law(drift, 1e-2, mode);
            let traj =
                simulate_dde(&game, [&law, &PlayerControl::Zero], &SimulationOptions::new(30.0, 1e-3)).unwrap();
            if traj.exploded {
                return false;
            }
            let tail = &traj.samples[traj.samples.len() - 1000..];
            tail.iter().all(|s| (s.x - tail[0].x).abs() < 1e-6)
        })
    });
    assert!(bounded);
}
