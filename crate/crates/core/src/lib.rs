//! Simulation and analysis of the investment process
//! x(t+1) = x(t)·(1 + r(t)·q0) + a, a Kesten-type multiplicative process
//! with additive income.
//!
//! - [`process`]: the four return models for r(t) and their moments
//! - [`dynamics`]: single-agent and ensemble iteration, closed-form oracle
//! - [`stats`]: log-binned histograms, mode and tail estimation, fits
//! - [`theory`]: stationary density, exponent μ, predicted modes
//! - [`cli`]: the experiment commands behind the `kesten-budget` binary

// `!(x > 0.0)` is used deliberately so NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod process;
pub mod quadrature;
pub mod rng;
pub mod stats;
pub mod theory;

pub use dynamics::{
    closed_form_constant_lambda, simulate_agent, simulate_ensemble, step, EnsembleOptions, EnsembleOutput,
    EnsembleSnapshot, InvestorParams, SimulationConfig, Trajectory,
};
pub use error::{Error, Result};
pub use process::{
    analytic_second_moment, sample_return, truncated_normal_second_moment, ProcessState, ReturnProcessSpec,
};
pub use stats::{
    average_mode, fit_scaling_prefactor, fit_tail_exponent, log_binned_histogram, log_lambda_moments,
    most_probable_value, LogHistogram, LogLambdaMoments, ModeEstimate, MomentMethod, ScalingFit, ScalingPoint, TailFit,
};
pub use theory::{
    approx_mode, lognormal_density, mu_exponent, predicted_mode, scaling_prefactor, stationary_density, StationaryLaw,
    TheoryPrediction,
};
