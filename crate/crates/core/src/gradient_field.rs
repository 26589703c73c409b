//! Value-gradient ODE fields derived from the stationary two-player
//! Hamilton-Jacobi system with quadratic control costs.
//!
//! With `p_i = u_i'` the stationary system
//!
//! ```text
//! u_i(x) = h_i(x) - p_1 p_2 - p_i^2 / 2
//! ```
//!
//! differentiates to `Lambda(p) p' = h' - p`. The reduced field drops the
//! factor `1 / det Lambda(p)` and is therefore free of singularities; the
//! full field keeps it.

use std::cell::RefCell;

use crate::game_model::RunningCost;
use crate::ode::rk4_step;
use crate::{Error, Result, Scalar};

/// `(p_1, p_2) = (u_1', u_2')`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradientPair<T> {
    pub p1: T,
    pub p2: T,
}

impl<T: Scalar> GradientPair<T> {
    pub fn new(p1: T, p2: T) -> Self {
        Self { p1, p2 }
    }

    pub fn sum(&self) -> T {
        self.p1 + self.p2
    }

    pub fn sup_norm(&self) -> T {
        self.p1.abs().max(self.p2.abs())
    }

    pub fn is_finite(&self) -> bool {
        self.p1.is_finite() && self.p2.is_finite()
    }

    pub fn get(&self, player: Player) -> T {
        match player {
            Player::First => self.p1,
            Player::Second => self.p2,
        }
    }

    fn as_array(&self) -> [T; 2] {
        [self.p1, self.p2]
    }

    fn from_array(a: [T; 2]) -> Self {
        Self { p1: a[0], p2: a[1] }
    }
}

/// Player index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Player {
    First,
    Second,
}

impl Player {
    pub const BOTH: [Player; 2] = [Player::First, Player::Second];

    pub fn index(self) -> usize {
        match self {
            Player::First => 0,
            Player::Second => 1,
        }
    }

    pub fn other(self) -> Player {
        match self {
            Player::First => Player::Second,
            Player::Second => Player::First,
        }
    }
}

/// `Lambda(p) = [[p1 + p2, p1], [p2, p1 + p2]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteractionMatrix<T> {
    pub entries: [[T; 2]; 2],
}

impl<T: Scalar> InteractionMatrix<T> {
    pub fn determinant(&self) -> T {
        let m = &self.entries;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }
}

/// Builds `Lambda(p)` and returns it with `Delta(p) = (p1 + p2)^2 - p1 p2`.
pub fn lambda_and_delta<T: Scalar>(p: GradientPair<T>) -> (InteractionMatrix<T>, T) {
    let s = p.sum();
    let m = InteractionMatrix {
        entries: [[s, p.p1], [p.p2, s]],
    };
    (m, s * s - p.p1 * p.p2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RhsKind {
    /// Divided by `Delta(p)`; singular at the origin.
    Full,
    /// Numerator only.
    #[default]
    Reduced,
}

pub const DEFAULT_DELTA_MIN: f64 = 1e-10;

/// Right-hand side of the gradient field given `h_1'(x)`, `h_2'(x)`.
pub fn p_rhs<T: Scalar>(
    p: GradientPair<T>,
    h1p: T,
    h2p: T,
    kind: RhsKind,
    delta_min: T,
) -> Result<GradientPair<T>> {
    let reduced = GradientPair {
        // (h1' - h2') p1 + h1' p2 - p1^2, grouped so p = (h1', h2') is an exact zero.
        p1: h1p * p.sum() - p.p1 * (h2p + p.p1),
        p2: h2p * p.sum() - p.p2 * (h1p + p.p2),
    };
    match kind {
        RhsKind::Reduced => Ok(reduced),
        RhsKind::Full => {
            let (_, delta) = lambda_and_delta(p);
            if !(delta >= delta_min) {
                return Err(Error::Singularity {
                    p1: p.p1.as_f64(),
                    p2: p.p2.as_f64(),
                    delta: delta.as_f64(),
                });
            }
            Ok(GradientPair {
                p1: reduced.p1 / delta,
                p2: reduced.p2 / delta,
            })
        }
    }
}

/// Reduced field for players with conflicting interests,
/// `h_1 = -(x - a_1)^n / n`, `h_2 = (x - a_2)^n / n`, written term by term.
pub fn conflicting_rhs<T: Scalar>(
    p: GradientPair<T>,
    x: T,
    a1: T,
    a2: T,
    exponent: u32,
) -> GradientPair<T> {
    let s1 = (x - a1).powi(exponent as i32 - 1);
    let s2 = (x - a2).powi(exponent as i32 - 1);
    GradientPair {
        p1: -(s1 + s2) * p.p1 - s1 * p.p2 - p.p1 * p.p1,
        p2: (s1 + s2) * p.p2 + s2 * p.p1 - p.p2 * p.p2,
    }
}

/// Jump `(p1-, p2-) -> (-p1-, -p2-)`, allowed only when `p1- + p2- >= 0`.
pub fn apply_jump<T: Scalar>(p_minus: GradientPair<T>) -> Result<GradientPair<T>> {
    if !(p_minus.sum() >= T::zero()) {
        return Err(Error::JumpNotAllowed {
            p1: p_minus.p1.as_f64(),
            p2: p_minus.p2.as_f64(),
        });
    }
    Ok(GradientPair {
        p1: -p_minus.p1,
        p2: -p_minus.p2,
    })
}

/// `u_i = h_i - p1 p2 - p_i^2 / 2`.
pub fn reconstruct_u<T: Scalar>(p: GradientPair<T>, h1: T, h2: T) -> (T, T) {
    let cross = p.p1 * p.p2;
    let half = T::lit(0.5);
    (h1 - cross - half * p.p1 * p.p1, h2 - cross - half * p.p2 * p.p2)
}

/// A discontinuity of `p` with its one-sided limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpRecord<T> {
    pub x: T,
    pub left: GradientPair<T>,
    pub right: GradientPair<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PFieldOptions<T> {
    pub step: T,
    pub kind: RhsKind,
    /// Integration in a direction stops once `|p|` exceeds this.
    pub p_max: T,
    pub delta_min: T,
    /// Locations where the jump rule is applied when the sweep crosses them.
    pub jumps_at: Vec<T>,
}

impl<T: Scalar> Default for PFieldOptions<T> {
    fn default() -> Self {
        Self {
            step: T::lit(1e-3),
            kind: RhsKind::Reduced,
            p_max: T::lit(1e8),
            delta_min: T::lit(DEFAULT_DELTA_MIN),
            jumps_at: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PFieldSolution<T> {
    pub x_grid: Vec<T>,
    pub p_values: Vec<GradientPair<T>>,
    /// Field value `p'` at each node.
    pub slopes: Vec<GradientPair<T>>,
    pub jump_points: Vec<JumpRecord<T>>,
    pub rhs_kind: RhsKind,
    pub step: T,
    /// Smallest `x` reached when the downward sweep blew up.
    pub truncated_below: Option<T>,
    /// Largest `x` reached when the upward sweep blew up.
    pub truncated_above: Option<T>,
}

impl<T: Scalar> PFieldSolution<T> {
    pub fn is_truncated(&self) -> bool {
        self.truncated_below.is_some() || self.truncated_above.is_some()
    }

    /// Piecewise-linear interpolation, held constant beyond the grid ends.
    pub fn interpolate(&self, x: T) -> GradientPair<T> {
        let g = &self.x_grid;
        if x <= g[0] {
            return self.p_values[0];
        }
        let last = g.len() - 1;
        if x >= g[last] {
            return self.p_values[last];
        }
        let k = g.partition_point(|&xi| xi <= x).saturating_sub(1).min(last - 1);
        let w = (x - g[k]) / (g[k + 1] - g[k]);
        let (a, b) = (self.p_values[k], self.p_values[k + 1]);
        GradientPair {
            p1: a.p1 + w * (b.p1 - a.p1),
            p2: a.p2 + w * (b.p2 - a.p2),
        }
    }

    /// Node-to-node changes exceeding `10 * step * |p'|` (plus a rounding floor).
    pub fn detect_discontinuities(&self) -> Vec<JumpRecord<T>> {
        let ten = T::lit(10.0);
        let floor = T::lit(1e-12);
        self.x_grid
            .windows(2)
            .enumerate()
            .filter_map(|(i, w)| {
                let (a, b) = (self.p_values[i], self.p_values[i + 1]);
                let change = GradientPair::new(b.p1 - a.p1, b.p2 - a.p2).sup_norm();
                let slope = self.slopes[i].sup_norm().max(self.slopes[i + 1].sup_norm());
                let h = w[1] - w[0];
                let scale = floor * (T::one() + a.sup_norm().max(b.sup_norm()));
                (change > ten * h * slope + scale).then(|| JumpRecord {
                    x: w[1],
                    left: a,
                    right: b,
                })
            })
            .collect()
    }
}

enum SweepEnd<T> {
    Completed,
    BlownUp(T),
}

/// Integrates the gradient field outward from `(x0, p0)` to both ends of
/// `x_range` with classical fourth-order steps.
pub fn integrate_p_field<T, F1, F2>(
    h1p: F1,
    h2p: F2,
    x0: T,
    p0: GradientPair<T>,
    x_range: (T, T),
    opts: &PFieldOptions<T>,
) -> Result<PFieldSolution<T>>
where
    T: Scalar,
    F1: Fn(T) -> T,
    F2: Fn(T) -> T,
{
    let (lo, hi) = x_range;
    if !(opts.step > T::zero()) {
        return Err(Error::invalid("p-field step must be positive"));
    }
    if !(lo <= x0 && x0 <= hi) || !(lo < hi) {
        return Err(Error::invalid("x0 must lie inside a non-empty x range"));
    }
    if !p0.is_finite() {
        return Err(Error::invalid("initial gradient must be finite"));
    }

    let rhs = |x: T, p: &GradientPair<T>| p_rhs(*p, h1p(x), h2p(x), opts.kind, opts.delta_min);
    let slope0 = rhs(x0, &p0)?;

    let mut upward = Vec::new();
    let mut jumps = Vec::new();
    let up_end = sweep(&rhs, x0, p0, hi, opts, &mut upward, &mut jumps)?;
    let mut downward = Vec::new();
    let down_end = sweep(&rhs, x0, p0, lo, opts, &mut downward, &mut jumps)?;

    let n = upward.len() + downward.len() + 1;
    let mut x_grid = Vec::with_capacity(n);
    let mut p_values = Vec::with_capacity(n);
    let mut slopes = Vec::with_capacity(n);
    for (x, p, s) in downward.into_iter().rev() {
        x_grid.push(x);
        p_values.push(p);
        slopes.push(s);
    }
    x_grid.push(x0);
    p_values.push(p0);
    slopes.push(slope0);
    for (x, p, s) in upward {
        x_grid.push(x);
        p_values.push(p);
        slopes.push(s);
    }
    jumps.sort_by(|a, b| a.x.partial_cmp(&b.x).unwrap_or(std::cmp::Ordering::Equal));

    Ok(PFieldSolution {
        x_grid,
        p_values,
        slopes,
        jump_points: jumps,
        rhs_kind: opts.kind,
        step: opts.step,
        truncated_below: match down_end {
            SweepEnd::BlownUp(x) => Some(x),
            SweepEnd::Completed => None,
        },
        truncated_above: match up_end {
            SweepEnd::BlownUp(x) => Some(x),
            SweepEnd::Completed => None,
        },
    })
}

type Node<T> = (T, GradientPair<T>, GradientPair<T>);

fn sweep<T, R>(
    rhs: &R,
    x0: T,
    p0: GradientPair<T>,
    target: T,
    opts: &PFieldOptions<T>,
    out: &mut Vec<Node<T>>,
    jumps: &mut Vec<JumpRecord<T>>,
) -> Result<SweepEnd<T>>
where
    T: Scalar,
    R: Fn(T, &GradientPair<T>) -> Result<GradientPair<T>>,
{
    let span = target - x0;
    if span == T::zero() {
        return Ok(SweepEnd::Completed);
    }
    let forward = span > T::zero();
    let n_steps = crate::ode::step_count(span, opts.step);
    let h = span / T::from_usize_lossy(n_steps);

    let mut pending: Vec<T> = opts
        .jumps_at
        .iter()
        .copied()
        .filter(|&xj| if forward { xj > x0 && xj <= target } else { xj < x0 && xj >= target })
        .collect();
    pending.sort_by(|a, b| {
        let o = a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal);
        if forward { o } else { o.reverse() }
    });
    let mut next_jump = pending.into_iter().peekable();

    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let mut field = |x: T, p: &[T; 2]| -> [T; 2] {
        match rhs(x, &GradientPair::from_array(*p)) {
            Ok(v) => v.as_array(),
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                [T::nan(), T::nan()]
            }
        }
    };

    let mut x = x0;
    let mut p = p0.as_array();
    for k in 1..=n_steps {
        let next = rk4_step(&mut field, x, &p, h);
        x = if k == n_steps { target } else { x0 + h * T::from_usize_lossy(k) };
        if let Some(e) = failure.borrow_mut().take() {
            return Err(e);
        }
        let mut pk = GradientPair::from_array(next);
        if !pk.is_finite() || pk.sup_norm() > opts.p_max {
            return Ok(SweepEnd::BlownUp(x));
        }
        while let Some(&xj) = next_jump.peek() {
            let crossed = if forward { xj <= x } else { xj >= x };
            if !crossed {
                break;
            }
            next_jump.next();
            let (left, right) = if forward {
                let right = apply_jump(pk)?;
                (pk, right)
            } else {
                // Sweeping leftward we hold the right limit; the jump maps
                // symmetric points, so the left limit is its negation.
                let left = GradientPair::new(-pk.p1, -pk.p2);
                apply_jump(left)?;
                (left, pk)
            };
            jumps.push(JumpRecord { x, left, right });
            pk = if forward { right } else { left };
        }
        let slope = rhs(x, &pk)?;
        out.push((x, pk, slope));
        p = pk.as_array();
    }
    Ok(SweepEnd::Completed)
}

/// Value functions sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSolution<T> {
    pub x_grid: Vec<T>,
    pub u1: Vec<T>,
    pub u2: Vec<T>,
    pub growth_constant: Option<T>,
}

/// Reconstructs `(u_1, u_2)` node by node from a gradient field.
pub fn reconstruct_values<T: Scalar>(
    field: &PFieldSolution<T>,
    costs: &[RunningCost<T>; 2],
) -> ValueSolution<T> {
    let (u1, u2) = field
        .x_grid
        .iter()
        .zip(&field.p_values)
        .map(|(&x, &p)| reconstruct_u(p, costs[0].value(x), costs[1].value(x)))
        .unzip();
    ValueSolution {
        x_grid: field.x_grid.clone(),
        u1,
        u2,
        growth_constant: None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibilityReport<T> {
    /// Growth ratio `|u| / (1 + |x|)` does not keep increasing in the outer band.
    pub sublinear: bool,
    /// Smallest `C` with `|u(x)| <= C (1 + |x|)` on the grid.
    pub growth_constant: T,
    /// Largest ratio over the inner 80% of `|x|`.
    pub inner_ratio: T,
    /// Largest ratio over the outer 20% of `|x|`.
    pub outer_ratio: T,
    pub residual_max: T,
    pub jump_ok: bool,
    pub jumps_checked: usize,
}

/// Checks sublinear growth, the pointwise H-J residual and the one-sided jump
/// conditions `p1(y+) + p2(y+) <= 0` or `p1(y-) + p2(y-) >= 0`.
pub fn check_admissible<T: Scalar>(
    values: &ValueSolution<T>,
    field: &PFieldSolution<T>,
    costs: &[RunningCost<T>; 2],
) -> Result<AdmissibilityReport<T>> {
    if values.x_grid != field.x_grid {
        return Err(Error::invalid("value and gradient grids differ"));
    }
    if values.x_grid.is_empty() {
        return Err(Error::invalid("empty grid"));
    }

    let ratios: Vec<(T, T)> = values
        .x_grid
        .iter()
        .zip(values.u1.iter().zip(&values.u2))
        .map(|(&x, (&u1, &u2))| (x.abs(), u1.abs().max(u2.abs()) / (T::one() + x.abs())))
        .collect();
    let x_extent = ratios.iter().fold(T::zero(), |m, &(ax, _)| m.max(ax));
    let cut = T::lit(0.8) * x_extent;
    let fold_max = |pred: &dyn Fn(T) -> bool| {
        ratios
            .iter()
            .filter(|(ax, _)| pred(*ax))
            .fold(T::zero(), |m, &(_, r)| m.max(r))
    };
    let growth_constant = fold_max(&|_| true);
    let inner_ratio = fold_max(&|ax| ax < cut);
    let outer_ratio = fold_max(&|ax| ax >= cut);
    // A linearly growing ratio rises by about the band width (20%) across the
    // outer band; tolerate half of that.
    let sublinear = outer_ratio <= T::lit(1e-12)
        || (outer_ratio - inner_ratio) / outer_ratio < T::lit(0.1);

    let residual_max = field
        .x_grid
        .iter()
        .zip(&field.p_values)
        .zip(values.u1.iter().zip(&values.u2))
        .fold(T::zero(), |m, ((&x, &p), (&u1, &u2))| {
            let (e1, e2) = reconstruct_u(p, costs[0].value(x), costs[1].value(x));
            m.max((u1 - e1).abs()).max((u2 - e2).abs())
        });

    let mut jumps = field.jump_points.clone();
    jumps.extend(field.detect_discontinuities());
    let jump_ok = jumps
        .iter()
        .all(|j| j.right.sum() <= T::zero() || j.left.sum() >= T::zero());

    Ok(AdmissibilityReport {
        sublinear,
        growth_constant,
        inner_ratio,
        outer_ratio,
        residual_max,
        jump_ok,
        jumps_checked: jumps.len(),
    })
}

/// `min_a { a^2/2 + a p_i - p_i p_j + h_i }` over a uniform grid of `a`,
/// returned with the minimising `a`.
pub fn hamiltonian_min_on_grid<T: Scalar>(
    p_i: T,
    p_j: T,
    h_i: T,
    alpha_range: (T, T),
    alpha_step: T,
) -> (T, T) {
    let (lo, hi) = alpha_range;
    let n = ((hi - lo) / alpha_step).round().to_usize().unwrap_or(0);
    let half = T::lit(0.5);
    (0..=n)
        .map(|k| {
            let a = lo + alpha_step * T::from_usize_lossy(k);
            (half * a * a + a * p_i - p_i * p_j + h_i, a)
        })
        .fold((T::infinity(), lo), |best, cur| if cur.0 < best.0 { cur } else { best })
}
