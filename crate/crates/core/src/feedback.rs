//! Delay-dependent output feedback with the cutting function, closed-loop
//! simulation of the resulting delay equation, discounted costs and sampled
//! Nash-deviation checks.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::game_model::{CubicDrift, GameSpec, RunningCost};
use crate::gradient_field::{reconstruct_u, GradientPair, PFieldSolution, Player};
use crate::ode::OdeState;
use crate::scalar::CompensatedSum;
use crate::{Error, Result, Scalar};

/// States beyond this magnitude halt a closed-loop run.
pub const STATE_LIMIT: f64 = 1e8;
/// Default truncation point of the discounted integrals.
pub const DEFAULT_COST_HORIZON: f64 = 30.0;

/// Period-`tau` sawtooth: zero at multiples of `tau`, slope `-1` in between.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CuttingFunction<T> {
    tau: T,
}

impl<T: Scalar> CuttingFunction<T> {
    pub fn new(tau: T) -> Result<Self> {
        if !(tau > T::zero()) || !tau.is_finite() {
            return Err(Error::invalid("tau must be positive and finite"));
        }
        Ok(Self { tau })
    }

    pub fn tau(&self) -> T {
        self.tau
    }

    /// `ceil(t / tau)`, with quotients within rounding of an integer snapped to it.
    fn cell(&self, t: T) -> (T, bool) {
        let q = t / self.tau;
        let r = q.round();
        if (q - r).abs() <= T::lit(1e-9) * T::one().max(q.abs()) {
            (r, true)
        } else {
            (q.ceil(), false)
        }
    }

    /// `t - (ceil(t / tau) - 1) tau`, equal to `tau` at multiples (including 0).
    pub fn eta(&self, t: T) -> T {
        match self.cell(t) {
            (_, true) => self.tau,
            (k, false) => t - (k - T::one()) * self.tau,
        }
    }

    /// `tau - eta(t)`.
    pub fn theta(&self, t: T) -> T {
        match self.cell(t) {
            (_, true) => T::zero(),
            _ => self.tau - self.eta(t),
        }
    }
}

pub fn cutting_theta<T: Scalar>(tau: T, t: T) -> Result<T> {
    if t < T::zero() {
        return Err(Error::invalid("cutting function is defined for t >= 0"));
    }
    Ok(CuttingFunction::new(tau)?.theta(t))
}

/// Scalar function of the state used as a value gradient `u_i'`.
#[derive(Debug, Clone)]
pub enum GradientSource<T> {
    Zero,
    /// `slope * x + intercept`
    Affine { slope: T, intercept: T },
    /// Interpolant of one component of a computed gradient field.
    Field { field: Arc<PFieldSolution<T>>, player: Player },
}

impl<T: Scalar> GradientSource<T> {
    pub fn eval(&self, x: T) -> T {
        match self {
            GradientSource::Zero => T::zero(),
            GradientSource::Affine { slope, intercept } => *slope * x + *intercept,
            GradientSource::Field { field, player } => field.interpolate(x).get(*player),
        }
    }
}

/// Which gradient enters the delayed law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum SignMode {
    /// The gradient exactly as stored with the example.
    #[default]
    PaperLiteral,
    /// The gradient for which `alpha = -u'` minimises the Hamiltonian.
    GradientDescent,
}

impl SignMode {
    pub const ALL: [SignMode; 2] = [SignMode::PaperLiteral, SignMode::GradientDescent];

    pub fn label(self) -> &'static str {
        match self {
            SignMode::PaperLiteral => "paper-literal",
            SignMode::GradientDescent => "gradient-descent",
        }
    }
}

/// `alpha_i(t) = -g(x(t - tau)) exp[f'(x(t - tau)) Theta_tau(t)]`.
#[derive(Debug, Clone)]
pub struct DelayedFeedback<T> {
    pub player: Player,
    /// Gradient used in [`SignMode::PaperLiteral`].
    pub stored_gradient: GradientSource<T>,
    /// Gradient used in [`SignMode::GradientDescent`].
    pub value_gradient: GradientSource<T>,
    pub drift: CubicDrift<T>,
    pub cut: CuttingFunction<T>,
    pub sign_mode: SignMode,
}

impl<T: Scalar> DelayedFeedback<T> {
    /// Feedback whose stored and value gradients coincide.
    pub fn from_gradient(
        player: Player,
        gradient: GradientSource<T>,
        drift: CubicDrift<T>,
        tau: T,
    ) -> Result<Self> {
        Ok(Self {
            player,
            stored_gradient: gradient.clone(),
            value_gradient: gradient,
            drift,
            cut: CuttingFunction::new(tau)?,
            sign_mode: SignMode::default(),
        })
    }

    pub fn with_sign_mode(mut self, mode: SignMode) -> Self {
        self.sign_mode = mode;
        self
    }

    pub fn tau(&self) -> T {
        self.cut.tau()
    }

    pub fn gradient(&self) -> &GradientSource<T> {
        match self.sign_mode {
            SignMode::PaperLiteral => &self.stored_gradient,
            SignMode::GradientDescent => &self.value_gradient,
        }
    }

    /// Law evaluated with an explicit cutting-function value.
    pub fn control_with_theta(&self, x_delayed: T, theta: T) -> T {
        let factor = (self.drift.derivative(x_delayed) * theta).exp();
        -self.gradient().eval(x_delayed) * factor
    }
}

/// Feedback law value at time `t`, clamped to `bound` when one is given.
pub fn feedback_control<T: Scalar>(
    fb: &DelayedFeedback<T>,
    t: T,
    x_delayed: T,
    bound: Option<T>,
) -> Result<T> {
    let alpha = fb.control_with_theta(x_delayed, fb.cut.theta(t));
    if !alpha.is_finite() {
        return Err(Error::Explosion { t: t.as_f64() });
    }
    Ok(clamp(alpha, bound).0)
}

fn clamp<T: Scalar>(alpha: T, bound: Option<T>) -> (T, bool) {
    match bound {
        Some(b) if alpha.abs() > b => (alpha.signum() * b, true),
        _ => (alpha, false),
    }
}

/// Right-continuous step function on `[0, end)`, zero outside.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseConstant<T> {
    pub end: T,
    pub values: Vec<T>,
}

impl<T: Scalar> PiecewiseConstant<T> {
    pub fn value(&self, t: T) -> T {
        if self.values.is_empty() || t < T::zero() || t >= self.end {
            return T::zero();
        }
        let width = self.end / T::from_usize_lossy(self.values.len());
        let k = (t / width).floor().to_usize().unwrap_or(0);
        self.values[k.min(self.values.len() - 1)]
    }
}

/// A player's strategy in a closed-loop run.
#[derive(Debug, Clone)]
pub enum PlayerControl<T> {
    Zero,
    Delayed(DelayedFeedback<T>),
    /// `alpha(t) = -g(x(t))` without delay.
    Instantaneous(GradientSource<T>),
    /// Base strategy plus an open-loop offset.
    Perturbed {
        base: Box<PlayerControl<T>>,
        offset: PiecewiseConstant<T>,
    },
}

impl<T: Scalar> PlayerControl<T> {
    fn tau(&self) -> Option<T> {
        match self {
            PlayerControl::Delayed(fb) => Some(fb.tau()),
            PlayerControl::Perturbed { base, .. } => base.tau(),
            _ => None,
        }
    }

    /// `offset_time` is where open-loop offsets are sampled (held over a step).
    fn eval(&self, x: T, x_delayed: T, theta: T, offset_time: T) -> T {
        match self {
            PlayerControl::Zero => T::zero(),
            PlayerControl::Delayed(fb) => fb.control_with_theta(x_delayed, theta),
            PlayerControl::Instantaneous(g) => -g.eval(x),
            PlayerControl::Perturbed { base, offset } => {
                base.eval(x, x_delayed, theta, offset_time) + offset.value(offset_time)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationOptions<T> {
    pub horizon: T,
    pub dt: T,
    /// Store every `record_every`-th node; costs always use every step.
    pub record_every: usize,
}

impl<T: Scalar> SimulationOptions<T> {
    pub fn new(horizon: T, dt: T) -> Self {
        Self {
            horizon,
            dt,
            record_every: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelaySample<T> {
    pub t: T,
    pub x: T,
    pub x_delayed: T,
    pub alpha: [T; 2],
    pub theta: T,
    /// Undiscounted `h_i(x) + alpha_i^2 / 2` at the node.
    pub running_cost: [T; 2],
    /// Discounted cost accumulated over `[0, t]`.
    pub cumulative_cost: [T; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayTrajectory<T> {
    pub dt: T,
    pub tau: Option<T>,
    pub prehistory: T,
    pub samples: Vec<DelaySample<T>>,
    pub exploded: bool,
    /// Nodes at which some control hit the bound.
    pub clamp_events: usize,
}

impl<T: Scalar> DelayTrajectory<T> {
    pub fn final_time(&self) -> T {
        self.samples.last().map_or(T::zero(), |s| s.t)
    }
}

/// Delay parameters shared by all delayed controls of a run.
fn common_tau<T: Scalar>(controls: [&PlayerControl<T>; 2], dt: T) -> Result<Option<(T, usize)>> {
    let taus: Vec<T> = controls.iter().filter_map(|c| c.tau()).collect();
    let Some(&tau) = taus.first() else {
        return Ok(None);
    };
    if taus.iter().any(|&t| (t - tau).abs() > T::lit(1e-12) * tau) {
        return Err(Error::invalid("delayed controls use different delays"));
    }
    let m = (tau / dt).round();
    if m < T::one() || (m * dt - tau).abs() > T::lit(1e-9) * tau {
        return Err(Error::invalid("dt must divide tau exactly"));
    }
    Ok(Some((tau, m.to_usize().unwrap_or(1))))
}

/// Integrates `x' = f(x) + alpha_1 + alpha_2` with classical fourth-order steps.
///
/// The delayed state is read from the grid and held over each step, with
/// constant prehistory `x = y` on `[-tau, 0]`. Inside a step the cutting
/// function takes its right limit, so it falls linearly from `tau` right after
/// a multiple of `tau` to 0 at the next one. Discounted running costs are
/// accumulated with the trapezoidal rule on every step.
pub fn simulate_dde<T: Scalar>(
    game: &GameSpec<T>,
    controls: [&PlayerControl<T>; 2],
    opts: &SimulationOptions<T>,
) -> Result<DelayTrajectory<T>> {
    let SimulationOptions {
        horizon,
        dt,
        record_every,
    } = *opts;
    if !(horizon > T::zero()) || !(dt > T::zero()) || dt > horizon {
        return Err(Error::invalid("need 0 < dt <= horizon"));
    }
    if record_every == 0 {
        return Err(Error::invalid("record_every must be at least 1"));
    }
    let delay = common_tau(controls, dt)?;
    let n_steps = (horizon / dt - T::lit(1e-9)).ceil().to_usize().unwrap_or(1).max(1);

    let y = game.initial_state;
    let bound = game.control_bound;
    let half = T::lit(0.5);
    let limit = T::lit(STATE_LIMIT);
    let drift = game.drift;
    let costs = game.costs;

    // Cutting-function value at step k, stage fraction c; `None` = node value.
    let theta_at = |k: usize, c: Option<T>| -> T {
        match delay {
            None => T::zero(),
            Some((_, m)) => {
                let j = k % m;
                match c {
                    None if j == 0 => T::zero(),
                    None => T::from_usize_lossy(m - j) * dt,
                    Some(c) => (T::from_usize_lossy(m - j) - c) * dt,
                }
            }
        }
    };
    let controls_at = |x: T, xd: T, theta: T, t_off: T| -> ([T; 2], bool) {
        let (a1, c1) = clamp(controls[0].eval(x, xd, theta, t_off), bound);
        let (a2, c2) = clamp(controls[1].eval(x, xd, theta, t_off), bound);
        ([a1, a2], c1 || c2)
    };
    let running = |x: T, a: [T; 2]| -> [T; 2] {
        [
            costs[0].value(x) + half * a[0] * a[0],
            costs[1].value(x) + half * a[1] * a[1],
        ]
    };

    let mut states: Vec<T> = Vec::with_capacity(n_steps + 1);
    states.push(y);
    let mut samples = Vec::with_capacity(n_steps / record_every + 2);
    let mut acc = [CompensatedSum::default(), CompensatedSum::default()];
    let mut clamp_events = 0;
    let mut exploded = false;

    let delayed = |states: &[T], k: usize| match delay {
        Some((_, m)) if k >= m => states[k - m],
        _ => y,
    };
    let time = |k: usize| T::from_usize_lossy(k) * dt;

    let mut k = 0;
    loop {
        let t = time(k);
        let x = states[k];
        let xd = delayed(&states, k);
        let t_mid = t + half * dt;
        let node_theta = theta_at(k, None);
        let (alpha, clamped) = controls_at(x, xd, node_theta, t_mid);
        if clamped {
            clamp_events += 1;
        }
        if k % record_every == 0 || k == n_steps {
            samples.push(DelaySample {
                t,
                x,
                x_delayed: xd,
                alpha,
                theta: node_theta,
                running_cost: running(x, alpha),
                cumulative_cost: [acc[0].total(), acc[1].total()],
            });
        }
        if k == n_steps {
            break;
        }

        let rhs = |c: T, xs: T| {
            let (a, _) = controls_at(xs, xd, theta_at(k, Some(c)), t_mid);
            drift.value(xs) + a[0] + a[1]
        };
        let k1 = rhs(T::zero(), x);
        let k2 = rhs(half, x + half * dt * k1);
        let k3 = rhs(half, x + half * dt * k2);
        let k4 = rhs(T::one(), x + dt * k3);
        let x_next = x.rk4_combine(dt, &k1, &k2, &k3, &k4);

        let (a_start, _) = controls_at(x, xd, theta_at(k, Some(T::zero())), t_mid);
        let (a_end, _) = controls_at(x_next, xd, theta_at(k, Some(T::one())), t_mid);
        let (g0, g1) = (running(x, a_start), running(x_next, a_end));
        let (w0, w1) = ((-t).exp(), (-time(k + 1)).exp());
        for i in 0..2 {
            acc[i].add(half * dt * (w0 * g0[i] + w1 * g1[i]));
        }

        if !x_next.is_finite() || x_next.abs() > limit || !g1[0].is_finite() || !g1[1].is_finite() {
            exploded = true;
            if x_next.is_finite() {
                states.push(x_next);
                samples.push(DelaySample {
                    t: time(k + 1),
                    x: x_next,
                    x_delayed: delayed(&states, k + 1),
                    alpha: a_end,
                    theta: theta_at(k + 1, None),
                    running_cost: g1,
                    cumulative_cost: [acc[0].total(), acc[1].total()],
                });
            }
            break;
        }
        states.push(x_next);
        k += 1;
    }

    Ok(DelayTrajectory {
        dt,
        tau: delay.map(|(tau, _)| tau),
        prehistory: y,
        samples,
        exploded,
        clamp_events,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport<T> {
    /// Discounted cost of each player over `[0, t_max]` (partial if divergent).
    pub costs: [T; 2],
    /// `e^{-t_max} sup |h_i + alpha_i^2 / 2|` over `[t_max - 10, t_max]`.
    pub tail_bound: [T; 2],
    pub t_max: T,
    pub tau: Option<T>,
    /// The run exploded before `t_max`.
    pub divergent: bool,
}

/// Reads the truncated discounted costs off a trajectory.
pub fn evaluate_cost<T: Scalar>(traj: &DelayTrajectory<T>, t_max: T) -> Result<CostReport<T>> {
    let last = traj
        .samples
        .last()
        .ok_or_else(|| Error::invalid("empty trajectory"))?;
    if traj.exploded {
        return Ok(CostReport {
            costs: last.cumulative_cost,
            tail_bound: [T::infinity(); 2],
            t_max: last.t,
            tau: traj.tau,
            divergent: true,
        });
    }
    let tol = T::lit(1e-9) * T::one().max(t_max);
    let end = traj
        .samples
        .iter()
        .position(|s| (s.t - t_max).abs() <= tol)
        .ok_or_else(|| {
            Error::invalid(format!(
                "t_max = {t_max} is not a recorded node of a trajectory ending at {}",
                last.t
            ))
        })?;
    let window = t_max - T::lit(10.0);
    let mut sup = [T::zero(); 2];
    for s in traj.samples[..=end].iter().filter(|s| s.t >= window) {
        for (m, c) in sup.iter_mut().zip(s.running_cost) {
            *m = m.max(c.abs());
        }
    }
    let discount = (-t_max).exp();
    Ok(CostReport {
        costs: traj.samples[end].cumulative_cost,
        tail_bound: [discount * sup[0], discount * sup[1]],
        t_max,
        tau: traj.tau,
        divergent: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NashOptions<T> {
    pub dt: T,
    pub t_max: T,
    pub n_perturbations: usize,
    pub seed: u64,
    /// Perturbations live on `[0, perturbation_horizon)`.
    pub perturbation_horizon: T,
    pub knots: usize,
    pub scales: Vec<T>,
    pub tolerance: T,
}

impl<T: Scalar> Default for NashOptions<T> {
    fn default() -> Self {
        Self {
            dt: T::lit(1e-3),
            t_max: T::lit(DEFAULT_COST_HORIZON),
            n_perturbations: 50,
            seed: 0,
            perturbation_horizon: T::lit(10.0),
            knots: 20,
            scales: vec![T::lit(0.01), T::lit(0.1), T::one()],
            tolerance: T::lit(1e-3),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NashVerdict<T> {
    pub equilibrium_costs: [T; 2],
    /// `min_k J_i(perturbed_k) - J_i(equilibrium)`; `+inf` if every run exploded.
    pub worst_improvement: [T; 2],
    pub exploded_runs: [usize; 2],
    pub runs: usize,
    pub passed: bool,
}

/// Perturbs each player's strategy in turn by seeded step functions and checks
/// that no deviation lowers that player's cost by more than the tolerance.
pub fn nash_deviation_test<T: Scalar>(
    game: &GameSpec<T>,
    equilibrium: [&PlayerControl<T>; 2],
    opts: &NashOptions<T>,
) -> Result<NashVerdict<T>> {
    if opts.n_perturbations == 0 || opts.knots == 0 || opts.scales.is_empty() {
        return Err(Error::invalid("need at least one perturbation, knot and scale"));
    }
    let sim = SimulationOptions::new(opts.t_max, opts.dt);
    let base = simulate_dde(game, equilibrium, &sim)?;
    let base_cost = evaluate_cost(&base, opts.t_max)?;
    if base_cost.divergent {
        return Err(Error::Explosion { t: base.final_time().as_f64() });
    }

    let mut worst = [T::infinity(); 2];
    let mut exploded_runs = [0; 2];
    for player in Player::BOTH {
        let i = player.index();
        let results: Vec<Result<Option<T>>> = (0..opts.n_perturbations)
            .into_par_iter()
            .map(|run| {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                rng.set_stream((i * opts.n_perturbations + run) as u64);
                let scale = opts.scales[run % opts.scales.len()];
                let values = (0..opts.knots)
                    .map(|_| scale * T::lit(rng.random_range(-1.0..=1.0)))
                    .collect();
                let perturbed = PlayerControl::Perturbed {
                    base: Box::new(equilibrium[i].clone()),
                    offset: PiecewiseConstant {
                        end: opts.perturbation_horizon,
                        values,
                    },
                };
                let mut pair = equilibrium;
                pair[i] = &perturbed;
                let traj = simulate_dde(game, pair, &sim)?;
                let report = evaluate_cost(&traj, opts.t_max)?;
                Ok((!report.divergent).then(|| report.costs[i] - base_cost.costs[i]))
            })
            .collect();
        for r in results {
            match r? {
                Some(delta) => worst[i] = worst[i].min(delta),
                None => exploded_runs[i] += 1,
            }
        }
    }
    let passed = worst.iter().all(|&w| w >= -opts.tolerance);
    Ok(NashVerdict {
        equilibrium_costs: base_cost.costs,
        worst_improvement: worst,
        exploded_runs,
        runs: opts.n_perturbations,
        passed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BellmanCheck<T> {
    /// `min (a^2/2 + a p_i - p_i p_j + h_i - u_i)` over all sampled states and `a`.
    pub min_margin: T,
    pub checks: usize,
}

/// Evaluates the pointwise Hamiltonian inequality along a trajectory for
/// randomly drawn times and control values in `[-10, 10]`.
pub fn pointwise_bellman_check<T: Scalar>(
    traj: &DelayTrajectory<T>,
    gradients: [&GradientSource<T>; 2],
    costs: &[RunningCost<T>; 2],
    n_times: usize,
    n_alphas: usize,
    seed: u64,
) -> Result<BellmanCheck<T>> {
    if traj.samples.is_empty() || n_times == 0 || n_alphas == 0 {
        return Err(Error::invalid("need a non-empty trajectory and sample counts"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = T::lit(0.5);
    let mut min_margin = T::infinity();
    for _ in 0..n_times {
        let s = &traj.samples[rng.random_range(0..traj.samples.len())];
        let (p1, p2) = (gradients[0].eval(s.x), gradients[1].eval(s.x));
        let h = [costs[0].value(s.x), costs[1].value(s.x)];
        let (u1, u2) = reconstruct_u(GradientPair::new(p1, p2), h[0], h[1]);
        for (pi, pj, hi, ui) in [(p1, p2, h[0], u1), (p2, p1, h[1], u2)] {
            for _ in 0..n_alphas {
                let a = T::lit(rng.random_range(-10.0..=10.0));
                let margin = half * a * a + a * pi - pi * pj + hi - ui;
                min_margin = min_margin.min(margin);
            }
        }
    }
    Ok(BellmanCheck {
        min_margin,
        checks: n_times * n_alphas * 2,
    })
}

/// Runs the same scenario for each `tau` (with `dt = tau / steps_per_tau`)
/// in parallel and returns the cost reports in ladder order.
pub fn tau_ladder_costs<T, F>(
    game: &GameSpec<T>,
    make_controls: F,
    taus: &[T],
    steps_per_tau: usize,
    t_max: T,
) -> Result<Vec<CostReport<T>>>
where
    T: Scalar,
    F: Fn(T) -> Result<[PlayerControl<T>; 2]> + Sync,
{
    if steps_per_tau == 0 {
        return Err(Error::invalid("steps_per_tau must be at least 1"));
    }
    taus.par_iter()
        .map(|&tau| {
            let controls = make_controls(tau)?;
            let dt = tau / T::from_usize_lossy(steps_per_tau);
            let opts = SimulationOptions {
                horizon: t_max,
                dt,
                record_every: 1,
            };
            let traj = simulate_dde(game, [&controls[0], &controls[1]], &opts)?;
            evaluate_cost(&traj, t_max)
        })
        .collect()
}
