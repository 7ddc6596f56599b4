//! Numerical laboratory for threshold phenomena in nonlocal diffusion
//! equations of the form
//!
//! ```text
//! d/dt u = J * u - u + f(u)
//! ```
//!
//! where J is an even dispersal kernel, `*` is spatial convolution and f is a
//! bistable or ignition reaction term. The crate provides:
//!
//! - kernel families with closed-form tails, transforms and large-deviation
//!   rates (`kernels`);
//! - grid discretization, FFT convolution powers and the jump part of the
//!   fundamental solution (`grid`, `convops`);
//! - rigorous and asymptotic tail bounds for convolution powers
//!   (`tailtheory`);
//! - sufficient criteria for extinction and propagation of plateau initial
//!   data (`criteria`);
//! - a monotone explicit time stepper with outcome classification
//!   (`simulator`);
//! - traveling wave extraction and a sliding-front sub-solution construction
//!   (`waves`);
//! - empirical threshold bracketing, criterion-side bounds and scaling-law
//!   fits (`thresholds`).

pub mod convops;
pub mod criteria;
pub mod error;
pub mod grid;
pub mod kernels;
pub mod quad;
pub mod simulator;
pub mod tailtheory;
pub mod thresholds;
pub mod waves;

pub use error::{Error, Result};
