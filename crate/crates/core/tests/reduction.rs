use diffgame::linear_reduction::{
    cauchy_matrix, fundamental_matrix, reduce, uniform_grid, verify_reduction, LinearGameSpec,
    MatrixFn,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn rotation(angle: f64) -> DMatrix<f64> {
    let (s, c) = angle.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

#[test]
fn cauchy_matrix_obeys_the_semigroup_law() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let a = MatrixFn::Polynomial(vec![random_matrix(&mut rng, 3, 3), random_matrix(&mut rng, 3, 3)]);
    let grid = uniform_grid(0.0, 1.0, 100);
    let phi = cauchy_matrix(&a, 1.0, &grid, 1e-3).unwrap();
    assert!(phi.warning.is_none());
    assert!(phi.spot_check_error <= 1e-8);
    for (i, j) in [(0, 50), (10, 90), (37, 38), (0, 100)] {
        let hop = fundamental_matrix(&a, grid[i], grid[j], 1e-3).unwrap();
        let composed = &phi.phi[j] * hop;
        assert!(max_abs(&(composed - &phi.phi[i])) <= 1e-7, "nodes {i} {j}");
    }
}

#[test]
fn random_games_reduce_faithfully() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dt = 1e-3;
    for case in 0..20 {
        let game = LinearGameSpec::new(
            MatrixFn::Constant(random_matrix(&mut rng, 3, 3)),
            MatrixFn::Constant(random_matrix(&mut rng, 3, 2)),
            MatrixFn::Constant(random_matrix(&mut rng, 3, 1)),
            random_matrix(&mut rng, 2, 3),
            DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0)),
            0.0,
            1.0,
        )
        .unwrap();
        let grid = uniform_grid(0.0, 1.0, 2000);
        let reduced = reduce(&game, &grid).unwrap();
        let report = verify_reduction(
            &game,
            &reduced,
            |t: f64| DVector::from_vec(vec![t.sin(), (3.0 * t).sin()]),
            |t: f64| DVector::from_vec(vec![(2.0 * t).cos()]),
            dt,
        )
        .unwrap();
        assert!(report.terminal_gap <= 1e-6, "case {case}: {report:?}");
        assert!(report.path_gap <= 1e-6, "case {case}: {report:?}");
    }
}

#[test]
fn stiff_decay_matches_the_exponential() {
    let n = 3;
    let a = MatrixFn::Constant(DMatrix::<f64>::identity(n, n) * -50.0);
    let grid = uniform_grid(0.0, 1.0, 100);
    let phi = cauchy_matrix(&a, 1.0, &grid, 1e-4).unwrap();
    for (t, p) in grid.iter().zip(&phi.phi) {
        let exact = DMatrix::<f64>::identity(n, n) * (-50.0 * (1.0 - t)).exp();
        assert!(max_abs(&(p - exact)) <= 1e-5);
    }
}

#[test]
fn rotation_cauchy_matrix_is_a_rotation() {
    let a = MatrixFn::Constant(DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]));
    let grid = uniform_grid(0.0, 2.0, 40);
    let phi = cauchy_matrix(&a, 2.0, &grid, 1e-3).unwrap();
    for (&t, p) in grid.iter().zip(&phi.phi) {
        assert!(max_abs(&(p - rotation(2.0 - t))) <= 1e-10);
    }
}

#[test]
fn time_varying_scalar_coefficient() {
    // x' = t x, so Phi(T, t) = exp((T^2 - t^2) / 2).
    let a = MatrixFn::Polynomial(vec![DMatrix::zeros(1, 1), DMatrix::identity(1, 1)]);
    let grid = uniform_grid(0.0, 1.5, 30);
    let phi = cauchy_matrix(&a, 1.5, &grid, 1e-3).unwrap();
    for (&t, p) in grid.iter().zip(&phi.phi) {
        let exact = ((1.5_f64 * 1.5 - t * t) / 2.0).exp();
        assert!((p[(0, 0)] - exact).abs() <= 1e-10 * exact);
    }
}

#[test]
fn zero_controls_leave_the_free_motion() {
    let game = LinearGameSpec::new(
        MatrixFn::Constant(DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])),
        MatrixFn::Constant(DMatrix::from_element(2, 1, 1.0)),
        MatrixFn::Constant(DMatrix::from_element(2, 1, -1.0)),
        DMatrix::identity(2, 2),
        DVector::from_vec(vec![1.0, 0.0]),
        0.0,
        1.0,
    )
    .unwrap();
    let reduced = reduce(&game, &uniform_grid(0.0, 1.0, 200)).unwrap();
    let free = rotation(1.0) * &game.x0;
    assert!((&reduced.y0 - &free).norm() <= 1e-10);
    let zero = |_: f64| DVector::zeros(1);
    let report = verify_reduction(&game, &reduced, zero, zero, 1e-2).unwrap();
    assert!(report.terminal_gap <= 1e-9 && report.path_gap <= 1e-9);
}

#[test]
fn uncontrolled_game_has_zero_kernels() {
    let game = LinearGameSpec::new(
        MatrixFn::Constant(DMatrix::from_row_slice(2, 2, &[-1.0, 0.3, 0.0, -0.5])),
        MatrixFn::Constant(DMatrix::zeros(2, 2)),
        MatrixFn::Constant(DMatrix::zeros(2, 1)),
        DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
        DVector::from_vec(vec![2.0, -1.0]),
        0.0,
        1.0,
    )
    .unwrap();
    let reduced = reduce(&game, &uniform_grid(0.0, 1.0, 100)).unwrap();
    assert!(reduced.control_kernel_u.iter().all(|k| k.iter().all(|&v| v == 0.0)));
    assert!(reduced.control_kernel_v.iter().all(|k| k.iter().all(|&v| v == 0.0)));
    let report = verify_reduction(
        &game,
        &reduced,
        |t: f64| DVector::from_vec(vec![t, 1.0]),
        |t: f64| DVector::from_vec(vec![t.cos()]),
        2e-2,
    )
    .unwrap();
    assert!(report.terminal_gap <= 1e-6);
}

#[test]
fn mismatched_grids_are_rejected() {
    let game = LinearGameSpec::new(
        MatrixFn::Constant(DMatrix::zeros(1, 1)),
        MatrixFn::Constant(DMatrix::identity(1, 1)),
        MatrixFn::Constant(DMatrix::identity(1, 1)),
        DMatrix::identity(1, 1),
        DVector::from_vec(vec![0.0]),
        0.0,
        1.0,
    )
    .unwrap();
    assert!(reduce(&game, &uniform_grid(0.0, 0.9, 10)).is_err());
    let reduced = reduce(&game, &uniform_grid(0.0, 1.0, 10)).unwrap();
    let one = |_: f64| DVector::from_vec(vec![1.0]);
    assert!(verify_reduction(&game, &reduced, one, one, 1e-2).is_err());
}
