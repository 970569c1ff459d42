//! Physics-informed neural solvers for stiff initial value problems, trained
//! on an integral (Volterra) reformulation so initial conditions enter the
//! forcing term instead of a separate penalty.
//!
//! The crate provides problem definitions, the integral transform, quadrature,
//! a small dense MLP with manual gradients and Adam, the training loop with
//! sequential segments, closed-form and BDF reference solutions, and a
//! classical residual-plus-penalty baseline.

pub mod baseline;
pub mod catalog;
pub mod error;
pub mod nn;
pub mod oracles;
pub mod problem;
pub mod trainer;
pub mod quadrature;
pub mod weakform;

pub use error::{Error, Result};
