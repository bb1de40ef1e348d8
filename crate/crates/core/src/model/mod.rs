//! The reduced-rank t model for sparse functional data.
//!
//! Curves are modelled as `xᵢ ~ t_ν(Bᵢθ, Σᵢ)` with `Σᵢ = BᵢHΛHᵀBᵢᵀ + σ²I`,
//! where `Bᵢ` is the spline design at curve i's time points. Heavy tails give
//! each curve a weight `(ν+mᵢ)/(ν+sᵢ)` that shrinks as its Mahalanobis distance
//! `sᵢ` grows; `ν = ∞` recovers the Normal reduced-rank model.

mod data;
mod em;
mod equations;
mod estep;
mod params;

pub use data::{Dataset, Trajectory};
pub use em::{em_step, fit, fit_with, grow, initial_params, iterate, objective, FitResult, FitSummary, StageFit};
pub use equations::{estimating_equation_residuals, EquationResiduals};
pub use estep::{
    curve_log_density, log_density, log_likelihood, mahalanobis, posterior_all, posterior_stats, robust_weight,
    sigma_solve, PosteriorStats,
};
pub use params::{orthonormalize, ModelConfig, ModelParams, Nu};
