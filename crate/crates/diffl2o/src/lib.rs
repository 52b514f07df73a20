//! Diffusion-based learning-to-optimize.
//!
//! A guided denoiser network is trained to map Gaussian noise to solutions of
//! sampled optimization problems (LASSO, Rastrigin, Ackley, quadratics, small
//! MLP classifiers). The crate also provides analytic optimizer baselines
//! (GD, Adam, an inertial Hessian-damped ODE integrator), variance schedules,
//! PAC-Bayes bound evaluators, and a seeded benchmark harness.

pub mod bench;
pub mod bounds;
pub mod cli;
pub mod config;
pub mod diffl2o;
pub mod error;
pub mod linalg;
pub mod net;
pub mod optimizee;
pub mod rngutil;
pub mod schedule;
pub mod trajectory;

pub use error::{Error, Result};
