//! Per-curve quantities under the current parameters.
//!
//! `Σᵢ = BᵢΞΞᵀBᵢᵀ + σ²I` is never formed. With `Gᵢ = BᵢΞ` and
//! `Vᵢ = I + GᵢᵀGᵢ/σ²`, the Woodbury identity gives
//! `Σᵢ⁻¹ = σ⁻²(I − GᵢVᵢ⁻¹Gᵢᵀ/σ²)` and the determinant lemma gives
//! `log|Σᵢ| = mᵢ log σ² + log|Vᵢ|`, so every solve costs a d × d factorization.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use statrs::function::gamma::ln_gamma;

use super::data::{Dataset, Trajectory};
use super::params::{ModelParams, Nu};
use crate::error::{Error, Result};

/// Posterior summaries of one curve.
#[derive(Debug, Clone)]
pub struct PosteriorStats {
    /// Best linear predictor `E(zᵢ | xᵢ)`.
    pub zhat: DVector<f64>,
    /// `Vᵢ = I + ΞᵀBᵢᵀBᵢΞ/σ²`.
    pub v: DMatrix<f64>,
    /// Squared Mahalanobis distance `sᵢ`.
    pub s: f64,
    /// Robust weight `(ν + mᵢ)/(ν + sᵢ)`.
    pub weight: f64,
}

/// Low-rank factorization of one curve's covariance.
pub(crate) struct CovFactor {
    pub g: DMatrix<f64>,
    pub chol: Cholesky<f64, Dyn>,
    pub sigma2: f64,
    pub logdet: f64,
}

impl CovFactor {
    pub fn new(params: &ModelParams, design: &DMatrix<f64>) -> Result<Self> {
        if !(params.sigma2 > 0.0 && params.sigma2.is_finite()) {
            return Err(Error::InvalidParams(format!("sigma2 must be positive, got {}", params.sigma2)));
        }
        if design.ncols() != params.p() {
            return Err(Error::DimensionMismatch { expected: params.p(), got: design.ncols() });
        }
        let m = design.nrows();
        let d = params.d();
        let g = design * &params.xi;
        let mut v = g.tr_mul(&g) / params.sigma2;
        for k in 0..d {
            v[(k, k)] += 1.0;
        }
        let chol = Cholesky::new(v)
            .ok_or_else(|| Error::Conditioning("Vᵢ = I + GᵀG/σ² is not positive definite".into()))?;
        let logdet_v: f64 = 2.0 * chol.l_dirty().diagonal().iter().take(d).map(|x| x.ln()).sum::<f64>();
        let logdet = m as f64 * params.sigma2.ln() + logdet_v;
        Ok(CovFactor { g, chol, sigma2: params.sigma2, logdet })
    }

    /// `Σ⁻¹ · rhs`.
    pub fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        if self.g.ncols() == 0 {
            return rhs / self.sigma2;
        }
        let gt_rhs = self.g.tr_mul(rhs);
        let inner = self.chol.solve(&gt_rhs);
        (rhs - &self.g * inner / self.sigma2) / self.sigma2
    }

    pub fn solve_vec(&self, rhs: &DVector<f64>) -> DVector<f64> {
        if self.g.ncols() == 0 {
            return rhs / self.sigma2;
        }
        let gt_rhs = self.g.tr_mul(rhs);
        let inner = self.chol.solve(&gt_rhs);
        (rhs - &self.g * inner / self.sigma2) / self.sigma2
    }

    pub fn v_inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn v(&self) -> DMatrix<f64> {
        let l = self.chol.l();
        &l * l.transpose()
    }
}

/// Returns `Σᵢ⁻¹ · rhs` and `log|Σᵢ|` for the curve with design `design`.
pub fn sigma_solve(params: &ModelParams, design: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    if rhs.nrows() != design.nrows() {
        return Err(Error::DimensionMismatch { expected: design.nrows(), got: rhs.nrows() });
    }
    let f = CovFactor::new(params, design)?;
    Ok((f.solve(rhs), f.logdet))
}

/// `(ν + m)/(ν + s)`; identically 1 for the Normal model.
pub fn robust_weight(nu: Nu, m: usize, s: f64) -> f64 {
    match nu {
        Nu::Infinite => 1.0,
        Nu::Finite(v) => (v + m as f64) / (v + s),
    }
}

/// Everything the E-step needs from one curve.
pub(crate) struct CurveState {
    pub factor: CovFactor,
    /// `xᵢ − Bᵢθ`.
    pub resid: DVector<f64>,
    pub zhat: DVector<f64>,
    pub s: f64,
    pub weight: f64,
}

impl CurveState {
    pub fn new(params: &ModelParams, design: &DMatrix<f64>, x: &DVector<f64>) -> Result<Self> {
        let factor = CovFactor::new(params, design)?;
        let resid = x - design * &params.theta;
        let sinv_r = factor.solve_vec(&resid);
        let s = resid.dot(&sinv_r).max(0.0);
        let zhat = factor.g.tr_mul(&sinv_r);
        let weight = robust_weight(params.nu, x.len(), s);
        Ok(CurveState { factor, resid, zhat, s, weight })
    }

    pub fn log_density(&self, nu: Nu, m: usize) -> f64 {
        log_density(nu, m, self.s, self.factor.logdet)
    }

    pub fn stats(&self) -> PosteriorStats {
        PosteriorStats { zhat: self.zhat.clone(), v: self.factor.v(), s: self.s, weight: self.weight }
    }
}

/// Log-density of an m-variate t (or Normal) law with squared Mahalanobis
/// distance `s` and scatter log-determinant `logdet`.
///
/// t_ν:    lnΓ((ν+m)/2) − lnΓ(ν/2) − (m/2)ln(νπ) − ½ log|Σ| − ((ν+m)/2) ln(1 + s/ν)
/// Normal: −(m/2)ln(2π) − ½ log|Σ| − s/2
pub fn log_density(nu: Nu, m: usize, s: f64, logdet: f64) -> f64 {
    let m = m as f64;
    match nu {
        Nu::Infinite => -0.5 * m * (2.0 * std::f64::consts::PI).ln() - 0.5 * logdet - 0.5 * s,
        Nu::Finite(v) => {
            ln_gamma(0.5 * (v + m)) - ln_gamma(0.5 * v) - 0.5 * m * (v * std::f64::consts::PI).ln()
                - 0.5 * logdet
                - 0.5 * (v + m) * (s / v).ln_1p()
        }
    }
}

/// Squared Mahalanobis distance `sᵢ = (xᵢ − Bᵢθ)ᵀΣᵢ⁻¹(xᵢ − Bᵢθ)`.
pub fn mahalanobis(params: &ModelParams, traj: &Trajectory) -> Result<f64> {
    let design = params.basis.design_matrix(&traj.times)?;
    let x = DVector::from_column_slice(&traj.values);
    Ok(CurveState::new(params, &design, &x)?.s)
}

pub fn posterior_stats(params: &ModelParams, traj: &Trajectory) -> Result<PosteriorStats> {
    let design = params.basis.design_matrix(&traj.times)?;
    let x = DVector::from_column_slice(&traj.values);
    Ok(CurveState::new(params, &design, &x)?.stats())
}

/// Posterior stats for every curve of a dataset, in curve order.
pub fn posterior_all(params: &ModelParams, data: &Dataset) -> Result<Vec<PosteriorStats>> {
    (0..data.len())
        .map(|i| {
            let c = data.cache(i);
            Ok(CurveState::new(params, &c.design, &c.x)?.stats())
        })
        .collect()
}

/// `Σᵢ log f(xᵢ)` under the t_ν (or Normal) model.
pub fn log_likelihood(params: &ModelParams, data: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for (i, curve) in data.curves().iter().enumerate() {
        let c = data.cache(i);
        let st = CurveState::new(params, &c.design, &c.x)?;
        let ll = st.log_density(params.nu, curve.len());
        if !ll.is_finite() {
            return Err(Error::NumericalOverflow { id: curve.id.clone() });
        }
        total += ll;
    }
    Ok(total)
}

/// Held-out log-density of a single curve.
pub fn curve_log_density(params: &ModelParams, traj: &Trajectory) -> Result<f64> {
    let design = params.basis.design_matrix(&traj.times)?;
    let x = DVector::from_column_slice(&traj.values);
    let st = CurveState::new(params, &design, &x)?;
    let ll = st.log_density(params.nu, traj.len());
    if !ll.is_finite() {
        return Err(Error::NumericalOverflow { id: traj.id.clone() });
    }
    Ok(ll)
}
