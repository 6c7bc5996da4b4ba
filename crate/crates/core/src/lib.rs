//! Maximum-likelihood MIMO detection with a learned noise density.
//!
//! A normalizing flow is fit to samples of the additive noise; detection
//! scores each candidate symbol vector `x` by the flow log-likelihood of the
//! residual `y - Hx`. The crate also carries the pieces needed to evaluate
//! that idea end to end: a small autodiff engine, noise samplers (including
//! symmetric alpha-stable), a Rayleigh channel simulator, baseline detectors
//! and a Monte Carlo BER harness.

pub mod autodiff;
pub mod bench;
pub mod channel;
pub mod detect;
pub mod error;
pub mod flow;
pub mod noise;
pub mod rng;

pub use error::{Error, Result};
