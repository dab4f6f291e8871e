//! Periodic solutions of nonlinear renewal equations x(t) = F(x_t) by
//! piecewise orthogonal collocation.
//!
//! The crate discretizes the periodic boundary value problem on one period
//! (rescaled to [0, 1]) with continuous piecewise polynomials, replaces the
//! integral right-hand side with interpolatory quadrature, and solves the
//! resulting nonlinear system with a damped Newton iteration. On top of the
//! single-orbit solver it provides one-parameter branch continuation,
//! Floquet multipliers via a discretized monodromy operator, and detection
//! of period-doubling bifurcations.

pub mod basis;
pub mod collocation;
pub mod continuation;
pub mod error;
pub mod floquet;
pub mod model;
pub mod quadrature;
pub mod solver;

pub use error::{Error, Result};
