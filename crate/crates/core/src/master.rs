//! Linear master equation `U' = J[b](lambda) U + b(lambda)` obtained by
//! freezing the drift Jacobian at a reference point, and the root condition
//! `U(t, lambda) = 0`.

use nalgebra::{DMatrix, DVector};

use crate::game_model::{eval_drift, eval_jacobian, CubicDrift, Drift};
use crate::ode::{rk4_step, step_count};
use crate::linalg::{self, norm, norm_squared};
use crate::{Error, Result, Scalar};

/// Initial condition of the master trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MasterInit {
    /// `U(t_start) = x0 - lambda`
    #[default]
    ShiftedByLambda,
    /// `U(t_start) = x0` (game form)
    Direct,
}

#[derive(Debug, Clone)]
pub struct MasterProblem<T, D> {
    pub drift: D,
    pub lambda: Vec<T>,
    pub x0: Vec<T>,
    pub t_start: T,
    pub duration: T,
    pub init: MasterInit,
}

impl<T: Scalar, D: Drift<T>> MasterProblem<T, D> {
    pub fn new(drift: D, lambda: Vec<T>, x0: Vec<T>, duration: T) -> Result<Self> {
        let n = drift.dim();
        for v in [&lambda, &x0] {
            if v.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: v.len() });
            }
        }
        if !(duration >= T::zero()) {
            return Err(Error::invalid("master horizon must be non-negative"));
        }
        Ok(Self {
            drift,
            lambda,
            x0,
            t_start: T::zero(),
            duration,
            init: MasterInit::ShiftedByLambda,
        })
    }

    fn initial_value(&self) -> DVector<T> {
        let x0 = DVector::from_column_slice(&self.x0);
        match self.init {
            MasterInit::ShiftedByLambda => x0 - DVector::from_column_slice(&self.lambda),
            MasterInit::Direct => x0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MasterSolution<T> {
    pub times: Vec<T>,
    pub values: Vec<DVector<T>>,
    pub jacobian_at_lambda: DMatrix<T>,
    pub forcing: DVector<T>,
    /// `|U(t_end)|^2`
    pub terminal_payoff: T,
    /// Scalar problems only: the exponential closed form on `times`.
    pub closed_form: Option<Vec<T>>,
}

impl<T: Scalar> MasterSolution<T> {
    pub fn terminal(&self) -> &DVector<T> {
        self.values.last().expect("at least one node")
    }
}

/// `e^{a s} u0 + (b / a)(e^{a s} - 1)`, or `u0 + b s` when `a = 0`.
pub fn scalar_master_closed_form<T: Scalar>(a: T, b: T, u0: T, s: T) -> T {
    if a == T::zero() {
        u0 + b * s
    } else {
        (a * s).exp() * u0 + b / a * (a * s).exp_m1()
    }
}

/// Fixed-step fourth-order integration of the master equation.
pub fn integrate_master<T: Scalar, D: Drift<T>>(
    mp: &MasterProblem<T, D>,
    dt: T,
) -> Result<MasterSolution<T>> {
    if !(dt > T::zero()) {
        return Err(Error::invalid("dt must be positive"));
    }
    let jac = eval_jacobian(&mp.drift, &mp.lambda)?;
    let forcing = eval_drift(&mp.drift, &mp.lambda)?;
    let u0 = mp.initial_value();

    let n = if mp.duration == T::zero() { 0 } else { step_count(mp.duration, dt) };
    let h = if n == 0 { T::zero() } else { mp.duration / T::from_usize_lossy(n) };
    let mut rhs = |_t: T, u: &DVector<T>| &jac * u + &forcing;

    let mut times = Vec::with_capacity(n + 1);
    let mut values = Vec::with_capacity(n + 1);
    times.push(mp.t_start);
    values.push(u0.clone());
    let mut u = u0.clone();
    for k in 1..=n {
        let t = mp.t_start + h * T::from_usize_lossy(k - 1);
        u = rk4_step(&mut rhs, t, &u, h);
        times.push(mp.t_start + h * T::from_usize_lossy(k));
        values.push(u.clone());
    }

    let closed_form = (mp.drift.dim() == 1).then(|| {
        times
            .iter()
            .map(|&t| scalar_master_closed_form(jac[(0, 0)], forcing[0], u0[0], t - mp.t_start))
            .collect()
    });
    let terminal_payoff = norm_squared(&u);
    Ok(MasterSolution {
        times,
        values,
        jacobian_at_lambda: jac,
        forcing,
        terminal_payoff,
        closed_form,
    })
}

/// `U(t, lambda)` for the shifted initial condition, terminal value only.
pub fn master_value<T: Scalar, D: Drift<T>>(
    drift: &D,
    x0: &[T],
    lambda: &[T],
    t: T,
    dt: T,
) -> Result<DVector<T>> {
    let jac = eval_jacobian(drift, lambda)?;
    let forcing = eval_drift(drift, lambda)?;
    if x0.len() != lambda.len() {
        return Err(Error::DimensionMismatch { expected: lambda.len(), got: x0.len() });
    }
    let mut u = DVector::from_column_slice(x0) - DVector::from_column_slice(lambda);
    if t == T::zero() {
        return Ok(u);
    }
    let n = step_count(t, dt);
    let h = t / T::from_usize_lossy(n);
    let mut rhs = |_t: T, u: &DVector<T>| &jac * u + &forcing;
    for k in 0..n {
        u = rk4_step(&mut rhs, h * T::from_usize_lossy(k), &u, h);
    }
    Ok(u)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RootOptions<T> {
    /// Step used for the master integration inside each residual evaluation.
    pub dt: T,
    pub max_iterations: usize,
    /// Forward-difference step for the residual Jacobian.
    pub fd_step: T,
    /// Bracket for the scalar bisection fallback; searched for when absent.
    pub bracket: Option<(T, T)>,
}

impl<T: Scalar> Default for RootOptions<T> {
    fn default() -> Self {
        Self {
            dt: T::lit(1e-3),
            max_iterations: 100,
            fd_step: T::lit(1e-6),
            bracket: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RootMethod {
    Newton,
    Bisection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaRoot<T> {
    pub lambda: Vec<T>,
    pub residual: T,
    pub iterations: usize,
    pub method: RootMethod,
}

/// Finds `lambda` with `|U(t, lambda)| <= tol`: damped Newton with a
/// finite-difference Jacobian, then bisection for scalar problems.
pub fn solve_lambda_root<T: Scalar, D: Drift<T>>(
    drift: &D,
    x0: &[T],
    t: T,
    initial_guess: &[T],
    tol: T,
    opts: &RootOptions<T>,
) -> Result<LambdaRoot<T>> {
    if !(tol > T::zero()) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let residual = |lambda: &[T]| master_value(drift, x0, lambda, t, opts.dt);

    let mut lambda = DVector::from_column_slice(initial_guess);
    let mut r = residual(lambda.as_slice())?;
    let mut iterations = 0;
    let n = lambda.len();

    while iterations < opts.max_iterations {
        if norm(&r) <= tol {
            return Ok(LambdaRoot {
                lambda: lambda.as_slice().to_vec(),
                residual: norm(&r),
                iterations,
                method: RootMethod::Newton,
            });
        }
        iterations += 1;

        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut shifted = lambda.clone();
            shifted[j] += opts.fd_step;
            let rj = residual(shifted.as_slice())?;
            jac.set_column(j, &((rj - &r) / opts.fd_step));
        }
        let Some(delta) = linalg::solve(&jac, &(-&r)) else {
            break;
        };

        // Halve the step while the residual grows.
        let mut scale = T::one();
        let mut accepted = None;
        for _ in 0..30 {
            let candidate = &lambda + &delta * scale;
            let rc = residual(candidate.as_slice())?;
            if norm(&rc).is_finite() && norm(&rc) < norm(&r) {
                accepted = Some((candidate, rc));
                break;
            }
            scale /= T::lit(2.0);
        }
        match accepted {
            Some((l, rc)) => {
                lambda = l;
                r = rc;
            }
            None => break,
        }
    }

    if norm(&r) <= tol {
        return Ok(LambdaRoot {
            lambda: lambda.as_slice().to_vec(),
            residual: norm(&r),
            iterations,
            method: RootMethod::Newton,
        });
    }
    if n != 1 {
        return Err(Error::NoConvergence { iterations, residual: norm(&r).as_f64() });
    }

    let scalar = |l: T| -> Result<T> { Ok(residual(&[l])?[0]) };
    let (mut a, mut b) = match opts.bracket {
        Some(br) => br,
        None => find_bracket(&scalar, lambda[0])?,
    };
    let (mut fa, fb) = (scalar(a)?, scalar(b)?);
    if fa == T::zero() {
        return Ok(bisection_root(a, fa, iterations));
    }
    if fb == T::zero() {
        return Ok(bisection_root(b, fb, iterations));
    }
    if fa.signum() == fb.signum() {
        return Err(Error::NoBracket { residual: fa.abs().min(fb.abs()).as_f64() });
    }
    let mut best = (a, fa);
    for _ in 0..200 {
        iterations += 1;
        let m = a + (b - a) / T::lit(2.0);
        let fm = scalar(m)?;
        if fm.abs() < best.1.abs() {
            best = (m, fm);
        }
        if fm.abs() <= tol {
            return Ok(bisection_root(m, fm, iterations));
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
        if (b - a).abs() <= T::epsilon() * (T::one() + a.abs()) {
            break;
        }
    }
    Err(Error::NoConvergence { iterations, residual: best.1.abs().as_f64() })
}

fn bisection_root<T: Scalar>(l: T, f: T, iterations: usize) -> LambdaRoot<T> {
    LambdaRoot {
        lambda: vec![l],
        residual: f.abs(),
        iterations,
        method: RootMethod::Bisection,
    }
}

fn find_bracket<T: Scalar>(f: &dyn Fn(T) -> Result<T>, center: T) -> Result<(T, T)> {
    let f0 = f(center)?;
    let mut width = T::lit(0.1) * (T::one() + center.abs());
    let mut best = f0.abs();
    for _ in 0..60 {
        for end in [center - width, center + width] {
            let fe = f(end)?;
            if fe.is_finite() {
                best = best.min(fe.abs());
                if fe.signum() != f0.signum() {
                    return Ok(if end < center { (end, center) } else { (center, end) });
                }
            }
        }
        width *= T::lit(2.0);
    }
    Err(Error::NoBracket { residual: best.as_f64() })
}

/// Affine linearisation of a scalar cubic game at `lambda`.
///
/// z-form: `z' = a z + f(lambda) + a_1 + a_2` with `z = w - lambda`;
/// w-form: `w' = a w + (f(lambda) - a lambda) + a_1 + a_2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarLinearizedGame<T> {
    pub lambda: T,
    /// `f'(lambda)`
    pub coefficient: T,
    pub z_offset: T,
    pub w_offset: T,
}

impl<T: Scalar> ScalarLinearizedGame<T> {
    pub fn from_cubic(drift: &CubicDrift<T>, lambda: T) -> Self {
        let coefficient = drift.derivative(lambda);
        let z_offset = drift.value(lambda);
        Self {
            lambda,
            coefficient,
            z_offset,
            w_offset: z_offset - coefficient * lambda,
        }
    }

    pub fn z_rhs(&self, z: T, control_sum: T) -> T {
        self.coefficient * z + self.z_offset + control_sum
    }

    pub fn w_rhs(&self, w: T, control_sum: T) -> T {
        self.coefficient * w + self.w_offset + control_sum
    }

    /// First player's shifted control `a_1 + w_offset`.
    pub fn shifted_control(&self, alpha1: T) -> T {
        alpha1 + self.w_offset
    }
}

/// Linearisation of `-gamma x^3 + kappa x^2` at `lambda`.
pub fn linearize_scalar<T: Scalar>(gamma: T, kappa: T, lambda: T) -> ScalarLinearizedGame<T> {
    let drift = CubicDrift {
        gamma,
        kappa,
        convention: crate::game_model::SignConvention::Literal,
    };
    ScalarLinearizedGame::from_cubic(&drift, lambda)
}
