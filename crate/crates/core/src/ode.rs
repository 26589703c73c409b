//! Fixed-step classical Runge-Kutta stepping over the state shapes used in
//! the crate (scalars, pairs, vectors, matrices).

use nalgebra::{DMatrix, DVector};

use crate::Scalar;

/// A state that supports the linear combinations RK4 needs.
pub trait OdeState<T: Scalar>: Clone {
    /// `self + h * k`
    fn axpy(&self, h: T, k: &Self) -> Self;
    /// `self + h/6 * (k1 + 2 k2 + 2 k3 + k4)`
    fn rk4_combine(&self, h: T, k1: &Self, k2: &Self, k3: &Self, k4: &Self) -> Self;
}

impl<T: Scalar> OdeState<T> for T {
    fn axpy(&self, h: T, k: &Self) -> Self {
        *self + h * *k
    }

    fn rk4_combine(&self, h: T, k1: &Self, k2: &Self, k3: &Self, k4: &Self) -> Self {
        let two = T::lit(2.0);
        *self + h / T::lit(6.0) * (*k1 + two * *k2 + two * *k3 + *k4)
    }
}

impl<T: Scalar> OdeState<T> for [T; 2] {
    fn axpy(&self, h: T, k: &Self) -> Self {
        [self[0] + h * k[0], self[1] + h * k[1]]
    }

    fn rk4_combine(&self, h: T, k1: &Self, k2: &Self, k3: &Self, k4: &Self) -> Self {
        [
            self[0].rk4_combine(h, &k1[0], &k2[0], &k3[0], &k4[0]),
            self[1].rk4_combine(h, &k1[1], &k2[1], &k3[1], &k4[1]),
        ]
    }
}

impl<T: Scalar> OdeState<T> for DVector<T> {
    fn axpy(&self, h: T, k: &Self) -> Self {
        self + k * h
    }

    fn rk4_combine(&self, h: T, k1: &Self, k2: &Self, k3: &Self, k4: &Self) -> Self {
        let two = T::lit(2.0);
        self + (k1 + k2 * two + k3 * two + k4) * (h / T::lit(6.0))
    }
}

impl<T: Scalar> OdeState<T> for DMatrix<T> {
    fn axpy(&self, h: T, k: &Self) -> Self {
        self + k * h
    }

    fn rk4_combine(&self, h: T, k1: &Self, k2: &Self, k3: &Self, k4: &Self) -> Self {
        let two = T::lit(2.0);
        self + (k1 + k2 * two + k3 * two + k4) * (h / T::lit(6.0))
    }
}

/// One classical fourth-order step of `y' = f(t, y)` from `(t, y)` with step `h`
/// (negative `h` integrates backward).
pub fn rk4_step<T, S, F>(f: &mut F, t: T, y: &S, h: T) -> S
where
    T: Scalar,
    S: OdeState<T>,
    F: FnMut(T, &S) -> S,
{
    let half = h / T::lit(2.0);
    let k1 = f(t, y);
    let k2 = f(t + half, &y.axpy(half, &k1));
    let k3 = f(t + half, &y.axpy(half, &k2));
    let k4 = f(t + h, &y.axpy(h, &k3));
    y.rk4_combine(h, &k1, &k2, &k3, &k4)
}

/// Number of uniform steps of size at most `max_step` covering `span`.
pub(crate) fn step_count<T: Scalar>(span: T, max_step: T) -> usize {
    let n = (span.abs() / max_step).ceil();
    // Guard against ratios like 1000.0000000001 produced by rounding.
    let rounded = n - T::one();
    let n = if rounded > T::zero() && (span.abs() / max_step - rounded).abs() < T::lit(1e-9) {
        rounded
    } else {
        n
    };
    n.to_usize().unwrap_or(0).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk4_exponential() {
        let mut y = 1.0_f64;
        let mut t = 0.0;
        let h = 0.01;
        for _ in 0..100 {
            y = rk4_step(&mut |_, y: &f64| *y, t, &y, h);
            t += h;
        }
        assert!((y - std::f64::consts::E).abs() < 1e-9);
    }

    #[test]
    fn rk4_backward_matches_inverse() {
        let y = rk4_step(&mut |_, y: &f64| -2.0 * *y, 0.0, &1.0, -0.001);
        assert!((y - (0.002f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn step_count_is_robust_to_rounding() {
        assert_eq!(step_count(1.0_f64, 1e-3), 1000);
        assert_eq!(step_count(0.3_f64, 0.1), 3);
        assert_eq!(step_count(0.35_f64, 0.1), 4);
        assert_eq!(step_count(0.0_f64, 0.1), 1);
    }
}
