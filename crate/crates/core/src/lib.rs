//! Numerical model of two evanescently coupled waveguides treated as a
//! separable two-dimensional quantum problem.
//!
//! The transverse (y) direction is a symmetric double well whose lowest
//! even/odd pair is obtained from a finite-difference eigensolve. The
//! balanced superposition of that pair carries density from one waveguide to
//! the other; from it we compute density, phase, phase gradient, probability
//! current and the Bohmian velocity field. The longitudinal (x) direction is
//! free propagation over a potential step and only enters through the
//! wavenumber `k2` and the kinematic mapping `t = x / v_x`.
//!
//! Internal units: `hbar = 1`, lengths in micrometres, times in picoseconds.
//! See [`units`] for the conversion layer used at the I/O boundary.

pub mod bohmian;
pub mod check;
pub mod commands;
pub mod config;
pub mod dynamics;
pub mod eigensolver;
pub mod error;
pub mod grid;
pub mod output;
pub mod stencil;
pub mod tridiag;
pub mod units;
pub mod xaxis;

pub use error::{Error, Result};
pub use grid::Grid1D;
