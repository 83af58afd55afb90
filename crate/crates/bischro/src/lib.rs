//! Numerical laboratory for a fourth-order dispersive geometric flow of
//! closed curves into symmetric Kaehler manifolds realized as embedded
//! submanifolds of a Euclidean space.
//!
//! The flow evolves a curve `u(t, x)` on the periodic domain `x in R/2piZ`
//! by
//!
//! ```text
//! u_t = a J D^3 u_x + lambda J D u_x + b R(D u_x, u_x) J u_x + c R(J u_x, u_x) D u_x
//! ```
//!
//! where `D` is the covariant derivative along the curve, `J` the complex
//! structure of the target, and `R` its Riemann curvature. Everything is
//! phrased through the embedding: tangent projectors, second fundamental
//! forms and Weingarten maps, so no local frames are ever constructed.
//!
//! Module map:
//! - [`geometry`]: embedded target backends (round sphere, projector model
//!   of complex Grassmannians) behind one trait.
//! - [`spectral`]: Fourier differentiation and quadrature on the grid.
//! - [`curves`]: discrete closed curves and covariant calculus along them.
//! - [`operators`]: the curvature operator zoo entering the linearized
//!   equations, plus a seeded identity test battery.
//! - [`flow`]: the flow right-hand side, conserved energies, a projected
//!   RK4 integrator and the travelling helix family.
//! - [`uniqueness`]: two-solution distance energies, the gauge correction
//!   that repairs the Gronwall estimate, and the derivative-loss
//!   experiment.
//! - [`report`]: serialization helpers shared by the test battery and the
//!   command line front end.

pub mod curves;
pub mod flow;
pub mod geometry;
pub mod operators;
pub mod report;
pub mod spectral;
pub mod uniqueness;
