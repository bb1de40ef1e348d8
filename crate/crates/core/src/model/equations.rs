use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::estep::CurveState;
use super::params::ModelParams;
use crate::error::Result;

/// Norms of the maximum-likelihood estimating equations, each divided by n.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquationResiduals {
    /// ‖Σ wᵢBᵢᵀΣᵢ⁻¹(xᵢ − Bᵢθ)‖
    pub mean: f64,
    /// ‖(I − JHHᵀ)SₙH‖_F
    pub direction: f64,
    /// ‖(ηₖᵀSₙηₖ)ₖ‖
    pub variance: f64,
    /// |−½Σ tr Σᵢ⁻¹ + ½Σ wᵢ rᵢᵀΣᵢ⁻²rᵢ|
    pub noise: f64,
}

impl EquationResiduals {
    pub fn max(&self) -> f64 {
        self.mean.max(self.direction).max(self.variance).max(self.noise)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.mean, self.direction, self.variance, self.noise]
    }
}

/// Evaluates the left-hand sides of the stationarity equations at `params`, with
/// `Sₙ = Σ {−BᵢᵀΣᵢ⁻¹Bᵢ + wᵢBᵢᵀΣᵢ⁻¹rᵢrᵢᵀΣᵢ⁻¹Bᵢ}`.
pub fn estimating_equation_residuals(params: &ModelParams, data: &Dataset) -> Result<EquationResiduals> {
    super::em::check_basis(params, data)?;
    let p = params.p();
    let mut mean_eq = DVector::<f64>::zeros(p);
    let mut s_n = DMatrix::<f64>::zeros(p, p);
    let mut noise_eq = 0.0;
    for i in 0..data.len() {
        let c = data.cache(i);
        let st = CurveState::new(params, &c.design, &c.x)?;
        let m = c.x.len();
        let w = st.weight;
        let sinv_r = st.factor.solve_vec(&st.resid);
        let sinv_b = st.factor.solve(&c.design);
        let bt_sinv_r = c.design.tr_mul(&sinv_r);
        mean_eq.axpy(w, &bt_sinv_r, 1.0);
        s_n -= c.design.tr_mul(&sinv_b);
        s_n.ger(w, &bt_sinv_r, &bt_sinv_r, 1.0);
        let trace_sinv = st.factor.solve(&DMatrix::identity(m, m)).trace();
        noise_eq += -0.5 * trace_sinv + 0.5 * w * sinv_r.norm_squared();
    }
    let n = data.len() as f64;
    let (direction, variance) = if params.d() == 0 {
        (0.0, 0.0)
    } else {
        let h = &params.h;
        let sh = &s_n * h;
        let proj = &sh - data.gram() * h * h.tr_mul(&sh);
        let quad = h.tr_mul(&sh).diagonal();
        (proj.norm(), quad.norm())
    };
    Ok(EquationResiduals {
        mean: mean_eq.norm() / n,
        direction: direction / n,
        variance: variance / n,
        noise: noise_eq.abs() / n,
    })
}
