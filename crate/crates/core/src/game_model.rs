//! Problem definitions: drifts, running costs, Lyapunov candidates and the
//! dissipativity / Jacobian primitives built on them.
//!
//! All drifts are autonomous. Routines that conceptually take a time argument
//! accept it and ignore it.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result, Scalar};

/// Which sign reading of the cubic drift is in force.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum SignConvention {
    /// `f(x) = -gamma x^3 + kappa x^2`
    #[default]
    Literal,
    /// `f(x) = gamma x^3 + kappa x^2`
    Stabilized,
}

impl SignConvention {
    pub const ALL: [SignConvention; 2] = [SignConvention::Literal, SignConvention::Stabilized];

    pub fn label(self) -> &'static str {
        match self {
            SignConvention::Literal => "literal",
            SignConvention::Stabilized => "stabilized",
        }
    }
}

/// A (possibly vector valued) autonomous drift `b: R^n -> R^n`.
pub trait Drift<T: Scalar>: Send + Sync {
    fn dim(&self) -> usize;

    /// Writes `b(x)` into `out`. Dimensions are the caller's responsibility.
    fn eval_into(&self, x: &[T], out: &mut [T]);

    /// Analytic Jacobian `db_i/dx_j` at `x`.
    fn jacobian_at(&self, x: &[T]) -> DMatrix<T>;

    /// Analytic verdict on the behaviour for `|x| -> infinity`, when the drift
    /// family admits one.
    fn leading_term_dissipative(&self) -> Option<bool> {
        None
    }
}

/// Scalar cubic drift `f(x) = -+gamma x^3 + kappa x^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicDrift<T> {
    pub gamma: T,
    pub kappa: T,
    pub convention: SignConvention,
}

impl<T: Scalar> CubicDrift<T> {
    pub fn new(gamma: T, kappa: T, convention: SignConvention) -> Result<Self> {
        if !gamma.is_finite() || !kappa.is_finite() {
            return Err(Error::invalid("cubic drift coefficients must be finite"));
        }
        Ok(Self {
            gamma,
            kappa,
            convention,
        })
    }

    pub fn literal(gamma: T, kappa: T) -> Result<Self> {
        Self::new(gamma, kappa, SignConvention::Literal)
    }

    /// Signed cubic coefficient under the active convention.
    fn cubic(&self) -> T {
        match self.convention {
            SignConvention::Literal => -self.gamma,
            SignConvention::Stabilized => self.gamma,
        }
    }

    pub fn value(&self, x: T) -> T {
        self.cubic() * x * x * x + self.kappa * x * x
    }

    /// `f'(x)`; under `Literal` this is `-3 gamma x^2 + 2 kappa x`.
    pub fn derivative(&self, x: T) -> T {
        T::lit(3.0) * self.cubic() * x * x + T::lit(2.0) * self.kappa * x
    }
}

impl<T: Scalar> Drift<T> for CubicDrift<T> {
    fn dim(&self) -> usize {
        1
    }

    fn eval_into(&self, x: &[T], out: &mut [T]) {
        out[0] = self.value(x[0]);
    }

    fn jacobian_at(&self, x: &[T]) -> DMatrix<T> {
        DMatrix::from_element(1, 1, self.derivative(x[0]))
    }

    fn leading_term_dissipative(&self) -> Option<bool> {
        // x f(x) ~ c x^4 with c the signed cubic coefficient.
        // Without a cubic term x f(x) = kappa x^3 cannot dominate -C x^2 / 2.
        Some(self.cubic() < T::zero())
    }
}

/// One monomial `coefficient * x^exponents` contributing to component `component`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialTerm<T> {
    /// Zero-based output component.
    pub component: usize,
    pub exponents: Vec<u32>,
    pub coefficient: T,
}

/// Polynomial drift `b_i(x) = sum_alpha b_alpha^i x^alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialDrift<T> {
    dim: usize,
    terms: Vec<PolynomialTerm<T>>,
}

impl<T: Scalar> PolynomialDrift<T> {
    pub fn new(dim: usize, terms: Vec<PolynomialTerm<T>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("polynomial drift dimension must be positive"));
        }
        for term in &terms {
            if term.exponents.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: term.exponents.len(),
                });
            }
            if term.component >= dim {
                return Err(Error::invalid(format!(
                    "component index {} out of range for dimension {dim}",
                    term.component
                )));
            }
            if !term.coefficient.is_finite() {
                return Err(Error::invalid("polynomial coefficient must be finite"));
            }
        }
        Ok(Self { dim, terms })
    }

    /// `b ≡ 0` in `dim` dimensions.
    pub fn zero(dim: usize) -> Result<Self> {
        Self::new(dim, Vec::new())
    }

    /// Linear drift `b(x) = A x`.
    pub fn linear(a: &DMatrix<T>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::invalid("linear drift matrix must be square"));
        }
        let n = a.nrows();
        let mut terms = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if a[(i, j)] != T::zero() {
                    let mut exponents = vec![0; n];
                    exponents[j] = 1;
                    terms.push(PolynomialTerm {
                        component: i,
                        exponents,
                        coefficient: a[(i, j)],
                    });
                }
            }
        }
        Self::new(n, terms)
    }

    /// One-dimensional polynomial `sum_k coefficients[k] x^k`.
    pub fn univariate(coefficients: &[T]) -> Result<Self> {
        let terms = coefficients
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != T::zero())
            .map(|(k, c)| PolynomialTerm {
                component: 0,
                exponents: vec![k as u32],
                coefficient: *c,
            })
            .collect();
        Self::new(1, terms)
    }

    pub fn terms(&self) -> &[PolynomialTerm<T>] {
        &self.terms
    }
}

impl<T: Scalar> Drift<T> for PolynomialDrift<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_into(&self, x: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|v| *v = T::zero());
        for term in &self.terms {
            let mono = term
                .exponents
                .iter()
                .zip(x)
                .fold(T::one(), |acc, (&e, &xi)| acc * xi.powi(e as i32));
            out[term.component] += term.coefficient * mono;
        }
    }

    fn jacobian_at(&self, x: &[T]) -> DMatrix<T> {
        let mut jac = DMatrix::zeros(self.dim, self.dim);
        for term in &self.terms {
            for j in 0..self.dim {
                let ej = term.exponents[j];
                if ej == 0 {
                    continue;
                }
                let mut d = term.coefficient * T::from_u32(ej).unwrap();
                for (k, (&e, &xk)) in term.exponents.iter().zip(x).enumerate() {
                    let e = if k == j { e - 1 } else { e };
                    d *= xk.powi(e as i32);
                }
                jac[(term.component, j)] += d;
            }
        }
        jac
    }
}

fn check_dim<T: Scalar, D: Drift<T> + ?Sized>(d: &D, x: &[T]) -> Result<()> {
    if x.len() != d.dim() {
        return Err(Error::DimensionMismatch {
            expected: d.dim(),
            got: x.len(),
        });
    }
    Ok(())
}

/// Evaluates the drift at `x`.
pub fn eval_drift<T: Scalar, D: Drift<T> + ?Sized>(d: &D, x: &[T]) -> Result<DVector<T>> {
    check_dim(d, x)?;
    let mut out = DVector::zeros(d.dim());
    d.eval_into(x, out.as_mut_slice());
    Ok(out)
}

/// Analytic Jacobian of the drift at `lambda`.
pub fn eval_jacobian<T: Scalar, D: Drift<T> + ?Sized>(d: &D, lambda: &[T]) -> Result<DMatrix<T>> {
    check_dim(d, lambda)?;
    Ok(d.jacobian_at(lambda))
}

/// Running cost `h_i(x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunningCost<T> {
    /// `h(x) = k x`
    Linear { k: T },
    /// `h(x) = sign (x - a)^exponent / exponent`
    Power { a: T, exponent: u32, sign: CostSign },
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostSign {
    Plus,
    Minus,
}

impl CostSign {
    fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            CostSign::Plus => v,
            CostSign::Minus => -v,
        }
    }
}

impl<T: Scalar> RunningCost<T> {
    pub fn power(a: T, exponent: u32, sign: CostSign) -> Result<Self> {
        if exponent < 2 {
            return Err(Error::invalid("power cost exponent must be at least 2"));
        }
        Ok(RunningCost::Power { a, exponent, sign })
    }

    pub fn value(&self, x: T) -> T {
        match *self {
            RunningCost::Linear { k } => k * x,
            RunningCost::Power { a, exponent, sign } => {
                sign.apply((x - a).powi(exponent as i32) / T::from_u32(exponent).unwrap())
            }
            RunningCost::Zero => T::zero(),
        }
    }

    pub fn derivative(&self, x: T) -> T {
        match *self {
            RunningCost::Linear { k } => k,
            RunningCost::Power { a, exponent, sign } => {
                sign.apply((x - a).powi(exponent as i32 - 1))
            }
            RunningCost::Zero => T::zero(),
        }
    }
}

/// Scalar two-player game with cubic dynamics `x' = f(x) + a_1 + a_2`.
#[derive(Debug, Clone, PartialEq)]
pub struct GameSpec<T> {
    pub drift: CubicDrift<T>,
    pub costs: [RunningCost<T>; 2],
    /// Admissible controls are `[-bound, bound]` when present.
    pub control_bound: Option<T>,
    pub initial_state: T,
}

impl<T: Scalar> GameSpec<T> {
    pub fn new(
        drift: CubicDrift<T>,
        costs: [RunningCost<T>; 2],
        control_bound: Option<T>,
        initial_state: T,
    ) -> Result<Self> {
        if let Some(b) = control_bound {
            if !(b > T::zero()) {
                return Err(Error::invalid("control bound must be positive"));
            }
        }
        if let Some(RunningCost::Power { exponent, .. }) =
            costs.iter().find(|c| matches!(c, RunningCost::Power { exponent, .. } if *exponent < 2))
        {
            return Err(Error::invalid(format!("power cost exponent {exponent} < 2")));
        }
        if !initial_state.is_finite() {
            return Err(Error::invalid("initial state must be finite"));
        }
        Ok(Self {
            drift,
            costs,
            control_bound,
            initial_state,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LyapunovCandidate {
    /// `V(x) = |x|^2 / 2`
    #[default]
    HalfSquareNorm,
}

impl LyapunovCandidate {
    pub fn value<T: Scalar>(&self, x: &[T]) -> T {
        match self {
            LyapunovCandidate::HalfSquareNorm => {
                x.iter().fold(T::zero(), |acc, &v| acc + v * v) / T::lit(2.0)
            }
        }
    }

    pub fn gradient<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        match self {
            LyapunovCandidate::HalfSquareNorm => x.to_vec(),
        }
    }

    /// `inf_{|x| > r} V(x) -> infinity`, known analytically per form.
    pub fn radially_unbounded(&self) -> bool {
        match self {
            LyapunovCandidate::HalfSquareNorm => true,
        }
    }
}

/// `V'(x; f) = grad V(x) . f(x)`.
pub fn lie_derivative<T: Scalar, D: Drift<T> + ?Sized>(
    v: &LyapunovCandidate,
    d: &D,
    x: &[T],
) -> Result<T> {
    let f = eval_drift(d, x)?;
    let grad = v.gradient(x);
    Ok(grad
        .iter()
        .zip(f.iter())
        .fold(T::zero(), |acc, (&g, &fi)| acc + g * fi))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DissipativityReport<T> {
    /// `V' + C V <= 0` at every sample.
    pub holds: bool,
    /// Largest sampled value of `V' + C V`.
    pub worst_margin: T,
    /// Sample attaining `worst_margin`.
    pub witness: Vec<T>,
    pub samples: usize,
    pub radially_unbounded: bool,
    /// Analytic verdict on the far field, when the drift family has one.
    pub leading_term: Option<bool>,
}

const DISSIPATIVITY_SEED: u64 = 0x0d15_5195;

/// Samples the shell `R <= |x| <= r_max` deterministically and checks
/// `V'(x; f) <= -C V(x)` there.
pub fn check_dissipativity<T: Scalar, D: Drift<T> + ?Sized>(
    d: &D,
    v: &LyapunovCandidate,
    c: T,
    r: T,
    r_max: T,
    n_samples: usize,
) -> Result<DissipativityReport<T>> {
    if !(c > T::zero()) || r < T::zero() {
        return Err(Error::invalid("dissipativity requires C > 0 and R >= 0"));
    }
    if !(r_max > r) {
        return Err(Error::invalid("r_max must exceed R"));
    }
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be at least 1"));
    }

    let radius = |k: usize| -> T {
        if n_samples == 1 {
            r
        } else {
            r + (r_max - r) * T::from_usize_lossy(k) / T::from_usize_lossy(n_samples - 1)
        }
    };

    let dim = d.dim();
    let mut points: Vec<Vec<T>> = Vec::with_capacity(2 * n_samples);
    if dim == 1 {
        for k in 0..n_samples {
            let rk = radius(k);
            points.push(vec![rk]);
            points.push(vec![-rk]);
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(DISSIPATIVITY_SEED);
        for k in 0..n_samples {
            let rk = radius(k);
            let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            points.push(dir.iter().map(|v| T::lit(v / norm) * rk).collect());
        }
    }

    let mut worst = T::neg_infinity();
    let mut witness = points[0].clone();
    for x in &points {
        let margin = lie_derivative(v, d, x)? + c * v.value(x);
        if margin > worst || margin.is_nan() {
            worst = margin;
            witness = x.clone();
        }
    }

    Ok(DissipativityReport {
        holds: worst <= T::zero(),
        worst_margin: worst,
        witness,
        samples: points.len(),
        radially_unbounded: v.radially_unbounded(),
        leading_term: d.leading_term_dissipative(),
    })
}
