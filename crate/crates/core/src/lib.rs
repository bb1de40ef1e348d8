//! Robust estimation of the mean and principal components of sparse,
//! irregularly sampled functional data under a reduced-rank multivariate t
//! model.
//!
//! Curves are represented in a clamped B-spline basis ([`basis`]), fitted by EM
//! ([`model`]), compared across dimensions ([`selection`]) and inspected through
//! residuals, robust weights and confidence bands ([`diagnostics`]).
//! [`simulate`] reproduces the Monte Carlo study and [`cli`] drives everything
//! from the command line.

pub mod basis;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod model;
pub mod selection;
pub mod simulate;

pub use basis::SplineBasis;
pub use error::{Error, Result};
pub use model::{fit, Dataset, FitResult, ModelConfig, ModelParams, Nu, Trajectory};
