//! Small-noise diffusions `dX = b(X) dt + sqrt(eps) dW` and empirical checks
//! of the second-moment bound against the master trajectory.
//!
//! Every path draws from its own ChaCha stream keyed by `(seed, path index)`,
//! so ensembles are bitwise identical whether paths run serially or on any
//! number of threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::game_model::Drift;
use crate::linalg::norm_squared;
use crate::master::master_value;
use crate::ode::step_count;
use crate::scalar::CompensatedSum;
use crate::{Error, Result, Scalar};

/// States beyond this norm count as exploded.
pub const EXPLOSION_THRESHOLD: f64 = 1e8;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig<T> {
    /// Noise intensity; the diffusion coefficient is `sqrt(epsilon)`.
    pub epsilon: T,
    pub dt: T,
    pub n_paths: usize,
    pub seed: u64,
    /// Keep every `record_every`-th state (the final state is always kept).
    pub record_every: usize,
}

impl<T: Scalar> NoiseConfig<T> {
    pub fn new(epsilon: T, dt: T, n_paths: usize, seed: u64) -> Self {
        Self {
            epsilon,
            dt,
            n_paths,
            seed,
            record_every: 1,
        }
    }

    fn validate(&self, horizon: T) -> Result<()> {
        if !(self.epsilon >= T::zero()) {
            return Err(Error::invalid("epsilon must be non-negative"));
        }
        if !(self.dt > T::zero()) || self.dt > horizon / T::lit(10.0) {
            return Err(Error::invalid("dt must be positive and at most horizon / 10"));
        }
        if self.n_paths == 0 || self.record_every == 0 {
            return Err(Error::invalid("n_paths and record_every must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble<T> {
    pub dim: usize,
    pub times: Vec<T>,
    /// `states[path][record * dim + i]`; exploded paths hold NaN after the blow-up.
    pub states: Vec<Vec<T>>,
    pub exploded: Vec<bool>,
}

impl<T: Scalar> PathEnsemble<T> {
    pub fn n_paths(&self) -> usize {
        self.states.len()
    }

    pub fn exploded_count(&self) -> usize {
        self.exploded.iter().filter(|&&e| e).count()
    }

    pub fn state(&self, path: usize, record: usize) -> &[T] {
        &self.states[path][record * self.dim..(record + 1) * self.dim]
    }

    /// Index of the recorded time closest to `t`.
    pub fn nearest_record(&self, t: T) -> usize {
        self.times
            .iter()
            .enumerate()
            .fold((0, T::infinity()), |best, (k, &tk)| {
                let d = (tk - t).abs();
                if d < best.1 { (k, d) } else { best }
            })
            .0
    }
}

/// Euler-Maruyama ensemble on `[0, horizon]`.
pub fn euler_maruyama<T: Scalar, D: Drift<T>>(
    drift: &D,
    x0: &[T],
    cfg: &NoiseConfig<T>,
    horizon: T,
) -> Result<PathEnsemble<T>> {
    if !(horizon > T::zero()) {
        return Err(Error::invalid("horizon must be positive"));
    }
    cfg.validate(horizon)?;
    let dim = drift.dim();
    if x0.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: x0.len() });
    }

    let n_steps = step_count(horizon, cfg.dt);
    let h = horizon / T::from_usize_lossy(n_steps);
    let recorded: Vec<usize> = (0..=n_steps)
        .filter(|k| k % cfg.record_every == 0 || *k == n_steps)
        .collect();
    let times = recorded.iter().map(|&k| h * T::from_usize_lossy(k)).collect();
    let noise_scale = (cfg.epsilon * h).sqrt();
    let limit = T::lit(EXPLOSION_THRESHOLD);

    let simulate = |path: usize| -> (Vec<T>, bool) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(path as u64);
        let mut x = x0.to_vec();
        let mut drift_buf = vec![T::zero(); dim];
        let mut out = Vec::with_capacity(recorded.len() * dim);
        let mut next_record = recorded.iter().peekable();
        let mut exploded = false;
        for k in 0..=n_steps {
            if next_record.peek() == Some(&&k) {
                next_record.next();
                out.extend_from_slice(&x);
            }
            if k == n_steps {
                break;
            }
            drift.eval_into(&x, &mut drift_buf);
            for (xi, bi) in x.iter_mut().zip(&drift_buf) {
                let xi_noise: f64 = StandardNormal.sample(&mut rng);
                *xi += *bi * h + noise_scale * T::lit(xi_noise);
            }
            let norm = x.iter().fold(T::zero(), |m, v| m.max(v.abs()));
            if !norm.is_finite() || norm > limit {
                exploded = true;
                break;
            }
        }
        out.resize(recorded.len() * dim, T::nan());
        (out, exploded)
    };

    let (states, exploded): (Vec<_>, Vec<_>) =
        (0..cfg.n_paths).into_par_iter().map(simulate).unzip();
    Ok(PathEnsemble {
        dim,
        times,
        states,
        exploded,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimate<T> {
    /// Recorded time actually used.
    pub t: T,
    pub lambda: Vec<T>,
    /// Sample mean of `|X_t - lambda|^2`.
    pub mean_sq: T,
    pub std_err: T,
    pub n_paths: usize,
}

/// Sample mean and standard error of `|X_t - lambda|^2` over non-exploded
/// paths, at the recorded time nearest `t`.
pub fn estimate_moment<T: Scalar>(
    ens: &PathEnsemble<T>,
    lambda: &[T],
    t: T,
) -> Result<MomentEstimate<T>> {
    if lambda.len() != ens.dim {
        return Err(Error::DimensionMismatch { expected: ens.dim, got: lambda.len() });
    }
    let rec = ens.nearest_record(t);
    let samples: Vec<T> = (0..ens.n_paths())
        .filter(|&p| !ens.exploded[p])
        .map(|p| {
            ens.state(p, rec)
                .iter()
                .zip(lambda)
                .fold(T::zero(), |acc, (&x, &l)| acc + (x - l) * (x - l))
        })
        .collect();
    if samples.is_empty() {
        return Err(Error::AllPathsExploded { n_paths: ens.n_paths() });
    }
    let n = T::from_usize_lossy(samples.len());
    let mean = samples.iter().copied().collect::<CompensatedSum<T>>().total() / n;
    let std_err = if samples.len() > 1 {
        let ss = samples
            .iter()
            .map(|&v| (v - mean) * (v - mean))
            .collect::<CompensatedSum<T>>()
            .total();
        (ss / (n - T::one()) / n).sqrt()
    } else {
        T::zero()
    };
    Ok(MomentEstimate {
        t: ens.times[rec],
        lambda: lambda.to_vec(),
        mean_sq: mean,
        std_err,
        n_paths: samples.len(),
    })
}

/// Threshold below which the master trajectory counts as vanishing.
pub const ROOT_CASE_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct LdpVerdict<T> {
    pub epsilons: Vec<T>,
    pub moments: Vec<MomentEstimate<T>>,
    pub exploded: Vec<usize>,
    /// `|U(t, lambda)|^2`
    pub u_norm_sq: T,
    /// Moments never increase along the ladder beyond two standard errors.
    pub monotone_trend: bool,
    /// `max_k mean_sq_k / eps_k` over all but the smallest epsilon.
    pub fitted_slope: T,
    /// Present only when `U(t, lambda)` vanishes: whether the moment at the
    /// smallest epsilon stays below the linear envelope `fitted_slope * eps`.
    pub root_case_vanishes: Option<bool>,
}

/// Simulates every epsilon of a strictly decreasing ladder (common random
/// numbers across rungs) and compares the moment trend with `U(t, lambda)`.
pub fn ldp_check<T: Scalar, D: Drift<T>>(
    drift: &D,
    x0: &[T],
    t: T,
    lambda: &[T],
    eps_ladder: &[T],
    template: &NoiseConfig<T>,
) -> Result<LdpVerdict<T>> {
    if eps_ladder.len() < 3 {
        return Err(Error::invalid("epsilon ladder needs at least three rungs"));
    }
    if !eps_ladder.windows(2).all(|w| w[1] < w[0]) || !(eps_ladder[eps_ladder.len() - 1] > T::zero())
    {
        return Err(Error::invalid("epsilon ladder must be positive and strictly decreasing"));
    }

    let u = master_value(drift, x0, lambda, t, template.dt.min(T::lit(1e-3)))?;
    let u_norm_sq = norm_squared(&u);

    let mut moments = Vec::with_capacity(eps_ladder.len());
    let mut exploded = Vec::with_capacity(eps_ladder.len());
    for &eps in eps_ladder {
        let cfg = NoiseConfig { epsilon: eps, ..template.clone() };
        let ens = euler_maruyama(drift, x0, &cfg, t)?;
        exploded.push(ens.exploded_count());
        moments.push(estimate_moment(&ens, lambda, t)?);
    }

    let two = T::lit(2.0);
    let monotone_trend = moments
        .windows(2)
        .all(|w| w[1].mean_sq <= w[0].mean_sq + two * (w[0].std_err + w[1].std_err));

    let last = moments.len() - 1;
    let fitted_slope = moments[..last]
        .iter()
        .zip(eps_ladder)
        .fold(T::zero(), |m, (mo, &e)| m.max(mo.mean_sq / e));
    let root_case_vanishes = (u_norm_sq.sqrt() <= T::lit(ROOT_CASE_THRESHOLD)).then(|| {
        let m = &moments[last];
        m.mean_sq <= fitted_slope * eps_ladder[last] + T::lit(3.0) * m.std_err
    });

    Ok(LdpVerdict {
        epsilons: eps_ladder.to_vec(),
        moments,
        exploded,
        u_norm_sq,
        monotone_trend,
        fitted_slope,
        root_case_vanishes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game_model::PolynomialDrift;

    #[test]
    fn noiseless_paths_collapse() {
        let drift = PolynomialDrift::univariate(&[0.0, -1.0]).unwrap();
        let cfg = NoiseConfig::new(0.0, 1e-3, 16, 7);
        let ens = euler_maruyama(&drift, &[1.0], &cfg, 1.0).unwrap();
        let first = ens.states[0].clone();
        assert!(ens.states.iter().all(|s| *s == first));
        let m = estimate_moment(&ens, &[first[first.len() - 1]], 1.0).unwrap();
        assert_eq!(m.mean_sq, 0.0);
        assert_eq!(m.std_err, 0.0);
        // Deterministic Euler on x' = -x.
        assert!((first[first.len() - 1] - (-1.0f64).exp()).abs() < 1e-3);
    }

    #[test]
    fn single_path_at_own_value_is_zero() {
        let drift = PolynomialDrift::<f64>::zero(1).unwrap();
        let cfg = NoiseConfig::new(0.1, 1e-2, 1, 3);
        let ens = euler_maruyama(&drift, &[0.0], &cfg, 1.0).unwrap();
        let v = *ens.states[0].last().unwrap();
        let m = estimate_moment(&ens, &[v], 1.0).unwrap();
        assert_eq!(m.mean_sq, 0.0);
        assert_eq!(m.n_paths, 1);
    }

    #[test]
    fn parallel_and_serial_agree_bitwise() {
        let drift = PolynomialDrift::univariate(&[0.0, -1.0]).unwrap();
        let cfg = NoiseConfig::new(0.01, 1e-2, 64, 99);
        let a = euler_maruyama(&drift, &[0.5], &cfg, 1.0).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| euler_maruyama(&drift, &[0.5], &cfg, 1.0).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn explosions_are_counted() {
        // x' = x^3 from 2 blows up before t = 1.
        let drift = PolynomialDrift::univariate(&[0.0, 0.0, 0.0, 1.0]).unwrap();
        let cfg = NoiseConfig::new(1e-4, 1e-3, 8, 1);
        let ens = euler_maruyama(&drift, &[2.0], &cfg, 1.0).unwrap();
        assert_eq!(ens.exploded_count(), 8);
        assert!(matches!(
            estimate_moment(&ens, &[0.0], 1.0),
            Err(Error::AllPathsExploded { n_paths: 8 })
        ));
    }

    #[test]
    fn config_validation() {
        let drift = PolynomialDrift::<f64>::zero(1).unwrap();
        let cfg = NoiseConfig::new(0.1, 0.5, 4, 0);
        assert!(euler_maruyama(&drift, &[0.0], &cfg, 1.0).is_err());
        let cfg = NoiseConfig::new(0.1, 0.01, 0, 0);
        assert!(euler_maruyama(&drift, &[0.0], &cfg, 1.0).is_err());
        let cfg = NoiseConfig::new(0.1, 0.01, 4, 0);
        assert!(euler_maruyama(&drift, &[0.0, 1.0], &cfg, 1.0).is_err());
    }

    #[test]
    fn ladder_validation() {
        let drift = PolynomialDrift::<f64>::zero(1).unwrap();
        let cfg = NoiseConfig::new(0.0, 1e-2, 4, 0);
        assert!(ldp_check(&drift, &[0.0], 1.0, &[0.0], &[1e-2, 1e-3], &cfg).is_err());
        assert!(ldp_check(&drift, &[0.0], 1.0, &[0.0], &[1e-2, 1e-2, 1e-3], &cfg).is_err());
    }

    #[test]
    fn nearest_record_lookup() {
        let drift = PolynomialDrift::<f64>::zero(1).unwrap();
        let cfg = NoiseConfig { record_every: 10, ..NoiseConfig::new(0.0, 1e-2, 1, 0) };
        let ens = euler_maruyama(&drift, &[0.0], &cfg, 1.0).unwrap();
        assert_eq!(ens.times.len(), 11);
        assert_eq!(ens.nearest_record(0.42), 4);
        assert_eq!(ens.nearest_record(5.0), 10);
    }
}
