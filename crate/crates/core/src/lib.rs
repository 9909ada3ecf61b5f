//! Robust low-rank matrix completion.
//!
//! Recovers a low-rank matrix from partially observed entries that carry
//! both Gaussian noise and gross outliers, by minimizing a Huber loss on the
//! observed residuals plus a nuclear-norm penalty.

pub mod error;
pub mod experiments;
pub mod huber;
pub mod io;
pub mod matrix;
pub mod pcp;
pub mod solvers;

pub use error::{Error, Result};
pub use matrix::{DenseMatrix, ObservationMask, Problem, SvdFactors};
pub use solvers::{PathSolution, Solution, SolverConfig};
