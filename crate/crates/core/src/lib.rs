//! Two-player differential games with scalar cubic dynamics: value-gradient
//! fields, linearised master equations, delayed feedback synthesis, small-noise
//! Monte Carlo checks and Cauchy-matrix reduction of linear games.
//!
//! Everything is generic over the floating-point type through [`Scalar`];
//! the `*64` aliases below fix it to `f64`.

// `!(a > b)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod error;
mod linalg;
pub mod ode;
mod scalar;

pub mod feedback;
pub mod game_model;
pub mod gradient_field;
pub mod linear_reduction;
pub mod master;
pub mod stochastic;

pub use error::{Error, Result};
pub use scalar::{CompensatedSum, Scalar};

pub type CubicDrift64 = game_model::CubicDrift<f64>;
pub type PolynomialDrift64 = game_model::PolynomialDrift<f64>;
pub type RunningCost64 = game_model::RunningCost<f64>;
pub type GameSpec64 = game_model::GameSpec<f64>;
pub type GradientPair64 = gradient_field::GradientPair<f64>;
pub type PFieldSolution64 = gradient_field::PFieldSolution<f64>;
pub type MasterSolution64 = master::MasterSolution<f64>;
pub type NoiseConfig64 = stochastic::NoiseConfig<f64>;
pub type DelayedFeedback64 = feedback::DelayedFeedback<f64>;
pub type DelayTrajectory64 = feedback::DelayTrajectory<f64>;
pub type PlayerControl64 = feedback::PlayerControl<f64>;
pub type LinearGameSpec64 = linear_reduction::LinearGameSpec<f64>;
pub type ReducedLinearGame64 = linear_reduction::ReducedLinearGame<f64>;

pub type CubicDrift32 = game_model::CubicDrift<f32>;
pub type GradientPair32 = gradient_field::GradientPair<f32>;
