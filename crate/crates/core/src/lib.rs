//! Numerical laboratory for heat conduction across a thin, strongly
//! anisotropic layer and for the boundary conditions that replace the layer
//! as it collapses.
//!
//! The crate has three tiers:
//!
//! * forward machinery: split grids ([`grid`]), the stiff layered solver
//!   ([`eps`]), and the seven limit-regime solvers ([`limits`]) driven by the
//!   scale classifier ([`phase`]);
//! * analytic backends: trace kernels, nonlocal forms and their spectral
//!   counterparts ([`kernels`]), plus one-dimensional reference solvers
//!   ([`oned`]);
//! * validation: path samplers ([`mc`]) and the experiment harness
//!   ([`harness`]) behind the `barrierlab` binary.

pub mod eps;
pub mod grid;
pub mod harness;
pub mod kernels;
pub mod limits;
pub mod linalg;
pub mod mc;
pub mod oned;
pub mod phase;
