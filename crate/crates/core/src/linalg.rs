//! Dense solves and conditioning estimates, carried out in `f64`.

use nalgebra::{DMatrix, DVector};

use crate::Scalar;

fn widen<T: Scalar>(a: &DMatrix<T>) -> DMatrix<f64> {
    a.map(|v| v.as_f64())
}

pub(crate) fn solve<T: Scalar>(a: &DMatrix<T>, b: &DVector<T>) -> Option<DVector<T>> {
    let x = widen(a).lu().solve(&b.map(|v| v.as_f64()))?;
    x.iter().all(|v| v.is_finite()).then(|| x.map(T::lit))
}

/// `a * b^{-1}` via a transposed solve.
pub(crate) fn right_divide<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> Option<DMatrix<T>> {
    let bt = widen(b).transpose();
    let x = bt.lu().solve(&widen(a).transpose())?;
    Some(x.transpose().map(T::lit))
}

pub(crate) fn norm_squared<T: Scalar>(v: &DVector<T>) -> T {
    v.iter().fold(T::zero(), |acc, &x| acc + x * x)
}

pub(crate) fn norm<T: Scalar>(v: &DVector<T>) -> T {
    norm_squared(v).sqrt()
}

/// Largest absolute entry.
pub(crate) fn max_abs<T: Scalar>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, &x| acc.max(x.abs()))
}

/// 2-norm condition number from singular values.
pub(crate) fn condition_number<T: Scalar>(a: &DMatrix<T>) -> f64 {
    let sv = widen(a).singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}
