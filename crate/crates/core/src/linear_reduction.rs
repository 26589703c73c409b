//! Linear games `x' = A(t) x + B(t) u + C(t) v` reduced through the Cauchy
//! matrix to `y' = X(T,t) u + Y(T,t) v`, plus the closed forms of the scalar
//! game with linear running costs.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gradient_field::{reconstruct_u, GradientPair};
use crate::linalg::{condition_number, max_abs, norm, right_divide};
use crate::ode::{rk4_step, step_count};
use crate::{Error, Result, Scalar};

/// Condition numbers of `X(t)` above this attach a warning to the spot check.
pub const CONDITION_WARNING: f64 = 1e12;
const SPOT_CHECK_NODES: usize = 5;
const SPOT_CHECK_SEED: u64 = 0xCA0C_u64;

/// Matrix-valued coefficient of time.
#[derive(Debug, Clone, PartialEq)]
pub enum MatrixFn<T: Scalar> {
    Constant(DMatrix<T>),
    /// `sum_k coefficients[k] t^k`; all coefficients share one shape.
    Polynomial(Vec<DMatrix<T>>),
}

impl<T: Scalar> MatrixFn<T> {
    pub fn eval(&self, t: T) -> DMatrix<T> {
        match self {
            MatrixFn::Constant(m) => m.clone(),
            MatrixFn::Polynomial(cs) => {
                let mut acc = DMatrix::zeros(cs[0].nrows(), cs[0].ncols());
                for c in cs.iter().rev() {
                    acc = acc * t + c;
                }
                acc
            }
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            MatrixFn::Constant(m) => m.shape(),
            MatrixFn::Polynomial(cs) => cs[0].shape(),
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if let MatrixFn::Polynomial(cs) = self {
            if cs.is_empty() {
                return Err(Error::invalid(format!("{name}: polynomial needs a coefficient")));
            }
            if cs.iter().any(|c| c.shape() != cs[0].shape()) {
                return Err(Error::invalid(format!("{name}: coefficient shapes differ")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGameSpec<T: Scalar> {
    pub a: MatrixFn<T>,
    pub b: MatrixFn<T>,
    pub c: MatrixFn<T>,
    /// Terminal weighting; the payoff is `|M x(T)|`.
    pub m: DMatrix<T>,
    pub x0: DVector<T>,
    pub t0: T,
    pub t_final: T,
}

impl<T: Scalar> LinearGameSpec<T> {
    pub fn new(
        a: MatrixFn<T>,
        b: MatrixFn<T>,
        c: MatrixFn<T>,
        m: DMatrix<T>,
        x0: DVector<T>,
        t0: T,
        t_final: T,
    ) -> Result<Self> {
        a.validate("A")?;
        b.validate("B")?;
        c.validate("C")?;
        let n = x0.len();
        let mismatch = |expected, got| Err(Error::DimensionMismatch { expected, got });
        if a.shape() != (n, n) {
            return mismatch(n, a.shape().0.max(a.shape().1));
        }
        if b.shape().0 != n {
            return mismatch(n, b.shape().0);
        }
        if c.shape().0 != n {
            return mismatch(n, c.shape().0);
        }
        if m.ncols() != n {
            return mismatch(n, m.ncols());
        }
        if !(t_final > t0) {
            return Err(Error::invalid("terminal time must exceed the initial time"));
        }
        Ok(Self {
            a,
            b,
            c,
            m,
            x0,
            t0,
            t_final,
        })
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }
}

/// `n + 1` equally spaced nodes on `[t0, t1]`.
pub fn uniform_grid<T: Scalar>(t0: T, t1: T, n: usize) -> Vec<T> {
    let n = n.max(1);
    let h = (t1 - t0) / T::from_usize_lossy(n);
    (0..=n)
        .map(|k| if k == n { t1 } else { t0 + h * T::from_usize_lossy(k) })
        .collect()
}

fn check_grid<T: Scalar>(grid: &[T]) -> Result<()> {
    if grid.len() < 2 || !grid.windows(2).all(|w| w[1] > w[0]) {
        return Err(Error::invalid("grid needs at least two strictly increasing nodes"));
    }
    Ok(())
}

fn propagate<T: Scalar>(a: &MatrixFn<T>, from: T, to: T, init: DMatrix<T>, max_step: T) -> DMatrix<T> {
    let n = step_count(to - from, max_step);
    let h = (to - from) / T::from_usize_lossy(n);
    let mut x = init;
    for k in 0..n {
        let t = from + h * T::from_usize_lossy(k);
        x = rk4_step(&mut |s, x: &DMatrix<T>| a.eval(s) * x, t, &x, h);
    }
    x
}

/// `X(t1)` for `X' = A(t) X`, `X(t0) = I`.
pub fn fundamental_matrix<T: Scalar>(a: &MatrixFn<T>, t0: T, t1: T, dt: T) -> Result<DMatrix<T>> {
    a.validate("A")?;
    let (n, k) = a.shape();
    if n != k {
        return Err(Error::DimensionMismatch { expected: n, got: k });
    }
    if !(dt > T::zero()) {
        return Err(Error::invalid("dt must be positive"));
    }
    if t0 == t1 {
        return Ok(DMatrix::identity(n, n));
    }
    Ok(propagate(a, t0, t1, DMatrix::identity(n, n), dt))
}

/// `Phi(T, t)` on a grid, from the adjoint equation `d/dt Phi = -Phi A(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CauchyMatrix<T: Scalar> {
    pub times: Vec<T>,
    pub t_final: T,
    pub phi: Vec<DMatrix<T>>,
    /// Largest deviation from `X(T) X(t)^{-1}` at the spot-check nodes.
    pub spot_check_error: T,
    pub max_condition: f64,
    pub warning: Option<String>,
}

impl<T: Scalar> CauchyMatrix<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Integrates the adjoint equation backward from `Phi(T, T) = I` through every
/// grid node (sub-stepping so no step exceeds `max_step`) and spot-checks the
/// result against inverted fundamental matrices.
pub fn cauchy_matrix<T: Scalar>(
    a: &MatrixFn<T>,
    t_final: T,
    grid: &[T],
    max_step: T,
) -> Result<CauchyMatrix<T>> {
    a.validate("A")?;
    check_grid(grid)?;
    let (n, k) = a.shape();
    if n != k {
        return Err(Error::DimensionMismatch { expected: n, got: k });
    }
    if grid[grid.len() - 1] > t_final {
        return Err(Error::invalid("grid extends past the terminal time"));
    }
    if !(max_step > T::zero()) {
        return Err(Error::invalid("max_step must be positive"));
    }

    let adjoint = |from: T, to: T, init: DMatrix<T>| {
        let steps = step_count(to - from, max_step);
        let h = (to - from) / T::from_usize_lossy(steps);
        let mut phi = init;
        for j in 0..steps {
            let t = from + h * T::from_usize_lossy(j);
            phi = rk4_step(&mut |s, p: &DMatrix<T>| -(p * a.eval(s)), t, &phi, h);
        }
        phi
    };

    let last = grid.len() - 1;
    let mut phi = vec![DMatrix::identity(n, n); grid.len()];
    if grid[last] < t_final {
        phi[last] = adjoint(t_final, grid[last], DMatrix::identity(n, n));
    }
    for i in (0..last).rev() {
        phi[i] = adjoint(grid[i + 1], grid[i], phi[i + 1].clone());
    }

    // Forward fundamental matrices from the first node for the spot check.
    let mut forward = Vec::with_capacity(grid.len());
    forward.push(DMatrix::identity(n, n));
    for i in 0..last {
        let next = propagate(a, grid[i], grid[i + 1], forward[i].clone(), max_step);
        forward.push(next);
    }
    let x_final = if grid[last] < t_final {
        propagate(a, grid[last], t_final, forward[last].clone(), max_step)
    } else {
        forward[last].clone()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(SPOT_CHECK_SEED);
    let mut spot_check_error = T::zero();
    let mut max_condition: f64 = 1.0;
    for _ in 0..SPOT_CHECK_NODES {
        let i = rng.random_range(0..grid.len());
        max_condition = max_condition.max(condition_number(&forward[i]));
        let Some(check) = right_divide(&x_final, &forward[i]) else {
            max_condition = f64::INFINITY;
            continue;
        };
        spot_check_error = spot_check_error.max(max_abs(&(&check - &phi[i])));
    }
    let warning = (max_condition > CONDITION_WARNING).then(|| {
        format!("fundamental matrix condition estimate {max_condition:.3e}; spot check unreliable")
    });

    Ok(CauchyMatrix {
        times: grid.to_vec(),
        t_final,
        phi,
        spot_check_error,
        max_condition,
        warning,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedLinearGame<T: Scalar> {
    pub times: Vec<T>,
    /// `M Phi(T, t) B(t)` per node.
    pub control_kernel_u: Vec<DMatrix<T>>,
    /// `M Phi(T, t) C(t)` per node.
    pub control_kernel_v: Vec<DMatrix<T>>,
    /// `M Phi(T, t)` per node.
    pub state_map: Vec<DMatrix<T>>,
    /// `y(T, t0) = M Phi(T, t0) x(t0)`
    pub y0: DVector<T>,
    pub cauchy: CauchyMatrix<T>,
}

/// Assembles the kernels on `grid`, which must run from `t0` to `T`.
pub fn reduce<T: Scalar>(game: &LinearGameSpec<T>, grid: &[T]) -> Result<ReducedLinearGame<T>> {
    check_grid(grid)?;
    let tol = T::lit(1e-12) * T::one().max(game.t_final.abs());
    if (grid[0] - game.t0).abs() > tol || (grid[grid.len() - 1] - game.t_final).abs() > tol {
        return Err(Error::invalid("reduction grid must span [t0, T]"));
    }
    let max_step = grid
        .windows(2)
        .fold(T::infinity(), |m, w| m.min(w[1] - w[0]));
    let cauchy = cauchy_matrix(&game.a, game.t_final, grid, max_step)?;
    let state_map: Vec<DMatrix<T>> = cauchy.phi.iter().map(|p| &game.m * p).collect();
    let control_kernel_u = state_map
        .iter()
        .zip(grid)
        .map(|(mp, &t)| mp * game.b.eval(t))
        .collect();
    let control_kernel_v = state_map
        .iter()
        .zip(grid)
        .map(|(mp, &t)| mp * game.c.eval(t))
        .collect();
    let y0 = &state_map[0] * &game.x0;
    Ok(ReducedLinearGame {
        times: grid.to_vec(),
        control_kernel_u,
        control_kernel_v,
        state_map,
        y0,
        cauchy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReductionReport<T> {
    /// `| |M x(T)| - |y(T, T)| |`
    pub terminal_gap: T,
    /// `max_t |M Phi(T, t) x(t) - y(T, t)|` over the coarse grid.
    pub path_gap: T,
}

/// Simulates the original system with step `dt` and the reduced system with
/// Simpson's rule on the kernels, which must live on a grid of spacing `dt / 2`.
pub fn verify_reduction<T, U, V>(
    game: &LinearGameSpec<T>,
    reduced: &ReducedLinearGame<T>,
    u: U,
    v: V,
    dt: T,
) -> Result<ReductionReport<T>>
where
    T: Scalar,
    U: Fn(T) -> DVector<T>,
    V: Fn(T) -> DVector<T>,
{
    if !(dt > T::zero()) {
        return Err(Error::invalid("dt must be positive"));
    }
    let n_steps = step_count(game.t_final - game.t0, dt);
    if reduced.times.len() != 2 * n_steps + 1 {
        return Err(Error::invalid(format!(
            "reduced game needs {} nodes (spacing dt / 2), has {}",
            2 * n_steps + 1,
            reduced.times.len()
        )));
    }
    let (mu, mv) = (game.b.shape().1, game.c.shape().1);
    let check_len = |w: &DVector<T>, expected: usize| {
        if w.len() == expected {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected, got: w.len() })
        }
    };
    check_len(&u(game.t0), mu)?;
    check_len(&v(game.t0), mv)?;

    let h = (game.t_final - game.t0) / T::from_usize_lossy(n_steps);
    let forcing = |k: usize| -> DVector<T> {
        let t = reduced.times[k];
        &reduced.control_kernel_u[k] * u(t) + &reduced.control_kernel_v[k] * v(t)
    };
    let six = T::lit(6.0);
    let four = T::lit(4.0);

    let mut x = game.x0.clone();
    let mut y = reduced.y0.clone();
    let mut path_gap = norm(&(&reduced.state_map[0] * &x - &y));
    for k in 0..n_steps {
        let t = game.t0 + h * T::from_usize_lossy(k);
        x = rk4_step(
            &mut |s, x: &DVector<T>| game.a.eval(s) * x + game.b.eval(s) * u(s) + game.c.eval(s) * v(s),
            t,
            &x,
            h,
        );
        let (f0, f1, f2) = (forcing(2 * k), forcing(2 * k + 1), forcing(2 * k + 2));
        y += (f0 + f1 * four + f2) * (h / six);
        path_gap = path_gap.max(norm(&(&reduced.state_map[2 * k + 2] * &x - &y)));
    }
    let terminal_gap = (norm(&(&game.m * &x)) - norm(&y)).abs();
    Ok(ReductionReport {
        terminal_gap,
        path_gap,
    })
}

/// Quantities of the scalar game `x' = a_1 + a_2` with `h_i(x) = k_i x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearClosedForms<T> {
    pub gradient: GradientPair<T>,
    /// `alpha_i = -k_i`
    pub alpha_star: [T; 2],
    /// `u_i(y) = k_i y - k_1 k_2 - k_i^2 / 2`, from the stationary system.
    pub values: [T; 2],
    /// `k_i y + k_1 k_2 + k_i^2 / 2`, the sign variant kept for comparison.
    pub values_sign_variant: [T; 2],
    /// `int_0^inf e^{-t} [k_i (y - (k_1 + k_2) t) + k_i^2 / 2] dt`
    pub discounted_costs: [T; 2],
}

pub fn linear_game_closed_forms<T: Scalar>(k1: T, k2: T, y: T) -> Result<LinearClosedForms<T>> {
    if k1 + k2 < T::zero() {
        return Err(Error::invalid("normalisation requires k1 + k2 >= 0"));
    }
    let half = T::lit(0.5);
    let (u1, u2) = reconstruct_u(GradientPair::new(k1, k2), k1 * y, k2 * y);
    let variant = |k: T| k * y + k1 * k2 + half * k * k;
    let cost = |k: T| k * y - k * (k1 + k2) + half * k * k;
    Ok(LinearClosedForms {
        gradient: GradientPair::new(k1, k2),
        alpha_star: [-k1, -k2],
        values: [u1, u2],
        values_sign_variant: [variant(k1), variant(k2)],
        discounted_costs: [cost(k1), cost(k2)],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn fundamental_closed_forms() {
        let z = MatrixFn::Constant(DMatrix::<f64>::zeros(2, 2));
        assert_eq!(fundamental_matrix(&z, 0.0, 1.0, 1e-2).unwrap(), DMatrix::identity(2, 2));
        let a = MatrixFn::Constant(scalar(-0.7));
        let x = fundamental_matrix(&a, 0.5, 2.0, 1e-3).unwrap();
        assert!((x[(0, 0)] - (-0.7f64 * 1.5).exp()).abs() < 1e-8);
        let rot = MatrixFn::Constant(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]));
        let x = fundamental_matrix(&rot, 0.0, std::f64::consts::FRAC_PI_2, 1e-3).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!((x - expected).abs().max() < 1e-6);
    }

    #[test]
    fn polynomial_coefficients() {
        let a = MatrixFn::Polynomial(vec![scalar(1.0), scalar(0.0), scalar(2.0)]);
        assert_eq!(a.eval(3.0)[(0, 0)], 19.0);
        assert!(MatrixFn::<f64>::Polynomial(vec![]).validate("A").is_err());
        // X' = t X  =>  X(1) = e^{1/2}
        let a = MatrixFn::Polynomial(vec![scalar(0.0), scalar(1.0)]);
        let x = fundamental_matrix(&a, 0.0, 1.0, 1e-3).unwrap();
        assert!((x[(0, 0)] - 0.5f64.exp()).abs() < 1e-10);
    }

    #[test]
    fn cauchy_scalar_closed_form() {
        let a = MatrixFn::Constant(scalar(0.8));
        let grid = uniform_grid(0.0, 1.0, 100);
        let c = cauchy_matrix(&a, 1.0, &grid, 1e-2).unwrap();
        assert_eq!(c.phi[100], DMatrix::identity(1, 1));
        for (t, p) in c.times.iter().zip(&c.phi) {
            assert!((p[(0, 0)] - (0.8 * (1.0 - t)).exp()).abs() < 1e-9);
        }
        assert!(c.spot_check_error < 1e-9);
        assert!(c.warning.is_none());
    }

    #[test]
    fn reduction_kernels_with_identity_transition() {
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let cm = DMatrix::from_row_slice(2, 1, &[-1.0, 0.5]);
        let game = LinearGameSpec::new(
            MatrixFn::Constant(DMatrix::zeros(2, 2)),
            MatrixFn::Constant(b.clone()),
            MatrixFn::Constant(cm.clone()),
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![1.0, -1.0]),
            0.0,
            1.0,
        )
        .unwrap();
        let r = reduce(&game, &uniform_grid(0.0, 1.0, 10)).unwrap();
        assert!(r.control_kernel_u.iter().all(|k| *k == b));
        assert!(r.control_kernel_v.iter().all(|k| *k == cm));
    }

    #[test]
    fn scalar_reduction_and_free_motion() {
        let game = LinearGameSpec::new(
            MatrixFn::Constant(scalar(-0.5)),
            MatrixFn::Constant(scalar(1.0)),
            MatrixFn::Constant(scalar(1.0)),
            scalar(1.0),
            DVector::from_vec(vec![2.0]),
            0.0,
            1.0,
        )
        .unwrap();
        let dt = 1e-2;
        let r = reduce(&game, &uniform_grid(0.0, 1.0, 200)).unwrap();
        for (t, k) in r.times.iter().zip(&r.control_kernel_u) {
            assert!((k[(0, 0)] - (-0.5 * (1.0 - t)).exp()).abs() < 1e-10);
        }
        let zero = |_| DVector::from_vec(vec![0.0]);
        let rep = verify_reduction(&game, &r, zero, zero, dt).unwrap();
        assert!(rep.terminal_gap <= 1e-8 && rep.path_gap <= 1e-8);
        let wrong = reduce(&game, &uniform_grid(0.0, 1.0, 100)).unwrap();
        assert!(verify_reduction(&game, &wrong, zero, zero, dt).is_err());
    }

    #[test]
    fn dimension_checks() {
        let bad = LinearGameSpec::new(
            MatrixFn::Constant(DMatrix::<f64>::zeros(2, 2)),
            MatrixFn::Constant(DMatrix::zeros(3, 1)),
            MatrixFn::Constant(DMatrix::zeros(2, 1)),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            0.0,
            1.0,
        );
        assert!(matches!(bad, Err(Error::DimensionMismatch { expected: 2, got: 3 })));
    }

    #[test]
    fn closed_form_values() {
        let z = linear_game_closed_forms(0.0, 0.0, 3.0).unwrap();
        assert_eq!(z.values, [0.0, 0.0]);
        assert_eq!(z.alpha_star, [-0.0, -0.0]);
        let f = linear_game_closed_forms(1.0, 0.0, 2.0).unwrap();
        assert_eq!(f.values[0], 1.5);
        assert_eq!(f.values_sign_variant[0], 2.5);
        assert_eq!(f.discounted_costs[0], f.values[0]);
        assert!(linear_game_closed_forms(-1.0, 0.0, 0.0).is_err());
    }
}
