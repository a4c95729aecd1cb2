//! Physics-informed neural network training engine.
//!
//! The crate is organised bottom-up:
//!
//! * [`autodiff`]: matrix-valued computation graph whose reverse pass emits
//!   new graph nodes, so derivatives can be differentiated again.
//! * [`model`]: tanh MLP, Glorot initialization, flat parameter views.
//! * [`problems`]: residuals and exact solutions for 1D Laplace (forward and
//!   inverse) and the 1D nonlinear Schrödinger equation.
//! * [`sampling`]: Latin hypercube and grid training sets, per-rank seeds.
//! * [`metrics`]: loss assembly, error metrics, bounds, regime labels.
//! * [`optim`]: the ADAM optimizer and its state.
//! * [`train`]: serial training loop.
//! * [`parallel`]: ring-allreduce data-parallel trainer over in-process ranks.
//! * [`reference`]: split-step Fourier reference solution for Schrödinger.
//! * [`harness`]: sweeps, scaling studies, Monte-Carlo rate study, persistence.
//! * [`config`]: run configuration with per-problem defaults.

// `!(x > 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod config;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod parallel;
pub mod problems;
pub mod reference;
pub mod sampling;
pub mod train;

pub use error::{Error, Result};
