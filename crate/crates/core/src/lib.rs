//! Minimum-time ergodic coverage trajectories.
//!
//! The crate transcribes the problem "reach `x_f` as fast as possible while
//! keeping the spectral ergodic metric below `gamma`" into a nonlinear
//! program over knot states, controls and the free final time, solves it
//! with an augmented Lagrangian method (projected L-BFGS inner loop by
//! default, adaptive sub-gradient steps on request), and checks the result against discrete KKT conditions and the
//! Pontryagin conditions of the lifted (extended-state) system.
//!
//! Inner loops over knots, basis indices and quadrature points run on rayon
//! when the default `parallel` feature is enabled and sequentially
//! otherwise; both paths produce bitwise-identical results.

pub mod constraints;
pub mod distributions;
pub mod dynamics;
pub mod ergodic;
pub mod error;
pub mod par;
pub mod pmp;
pub mod scenario;
pub mod solver;
pub mod transcription;

#[cfg(test)]
pub(crate) mod test_support;

pub use error::{Error, Result};
