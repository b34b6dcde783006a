//! Numerical homogenization of nonlocal convolution-type evolution equations
//! whose coefficients are periodic in space and driven by a finite-state
//! Markov chain in time.
//!
//! The crate solves the time-dependent corrector and invariant-density cell
//! problems on the torus, assembles the effective diffusivity, drift and
//! fluctuation covariance, simulates the full multiscale problem alongside
//! its homogenized and diffusion-approximation limits, and ships a
//! verification harness that quantifies the convergence rates.

pub mod config;
pub mod corrector;
pub mod effective;
pub mod environment;
pub mod error;
pub mod fullscale;
pub mod output;
pub mod pipeline;
pub mod presets;
pub mod quadrature;
pub mod spde;
pub mod stats;
pub mod torus;
pub mod verify;

pub use error::{Error, Result};
