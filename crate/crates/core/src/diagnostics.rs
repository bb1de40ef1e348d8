//! Per-curve predictions and residuals, outlier flags, and sandwich-based
//! pointwise confidence bands for the mean function.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::{Dataset, ModelParams, Nu};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveDiagnostics {
    pub id: String,
    /// `x̂ᵢ = Bᵢθ̂ + BᵢĤΛ̂^{1/2}ẑᵢ`
    pub fitted_values: Vec<f64>,
    pub residuals: Vec<f64>,
    pub residual_norm: f64,
    pub s: f64,
    pub weight: f64,
    pub outlier_flag: bool,
}

/// 0.99 quantile of χ² with `m` degrees of freedom.
pub fn outlier_cutoff(m: usize) -> f64 {
    ChiSquared::new(m as f64).expect("m >= 1").inverse_cdf(0.99)
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Predictions, residuals and outlier flags for every curve.
///
/// A curve is flagged when `sᵢ` exceeds the χ²₀.₉₉(mᵢ) cutoff and its weight is
/// strictly below the sample median weight. Normal fits assign every curve
/// weight 1 and therefore flag nothing.
pub fn curve_diagnostics(params: &ModelParams, data: &Dataset) -> Result<Vec<CurveDiagnostics>> {
    let stats = crate::model::posterior_all(params, data)?;
    let weights: Vec<f64> = stats.iter().map(|s| s.weight).collect();
    let med = median(&weights);
    Ok(data
        .curves()
        .iter()
        .zip(&stats)
        .enumerate()
        .map(|(i, (c, st))| {
            let b = data.design(i);
            let fitted = b * (&params.theta + &params.xi * &st.zhat);
            let x = DVector::from_column_slice(&c.values);
            let resid = &x - &fitted;
            CurveDiagnostics {
                id: c.id.clone(),
                fitted_values: fitted.iter().copied().collect(),
                residuals: resid.iter().copied().collect(),
                residual_norm: resid.norm(),
                s: st.s,
                weight: st.weight,
                outlier_flag: st.s > outlier_cutoff(c.len()) && st.weight < med,
            }
        })
        .collect())
}

/// `2(ν+m)s/{m(ν+s)²} − (ν+m)/(ν+s)`, with the limit −1 for ν = ∞.
pub fn g_weight(nu: Nu, m: usize, s: f64) -> f64 {
    match nu {
        Nu::Infinite => -1.0,
        Nu::Finite(v) => {
            let m = m as f64;
            2.0 * (v + m) * s / (m * (v + s).powi(2)) - (v + m) / (v + s)
        }
    }
}

/// Sandwich estimate `M̂⁻¹ÂM̂⁻¹/n` of the covariance of θ̂.
pub fn mean_covariance(params: &ModelParams, data: &Dataset) -> Result<DMatrix<f64>> {
    let p = params.p();
    let n = data.len() as f64;
    let stats = crate::model::posterior_all(params, data)?;
    let mut m11 = DMatrix::<f64>::zeros(p, p);
    let mut a = DMatrix::<f64>::zeros(p, p);
    for (i, st) in stats.iter().enumerate() {
        let b = data.design(i);
        let m = b.nrows();
        let x = DVector::from_column_slice(&data.curves()[i].values);
        let r = x - b * &params.theta;
        let mut rhs = b.clone();
        rhs = rhs.insert_column(p, 0.0);
        rhs.set_column(p, &r);
        let (sol, _) = crate::model::sigma_solve(params, b, &rhs)?;
        let sinv_b = sol.columns(0, p);
        let sinv_r = sol.column(p);
        let bt_sinv_b = b.tr_mul(&sinv_b);
        m11 += bt_sinv_b * g_weight(params.nu, m, st.s);
        let u = b.tr_mul(&sinv_r);
        a.ger(st.weight * st.weight, &u, &u, 1.0);
    }
    m11 /= n;
    a /= n;
    let minv = m11
        .clone()
        .try_inverse()
        .filter(|inv| inv.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Conditioning("M₁₁ is singular".into()))?;
    let v = &minv * a * &minv / n;
    Ok((&v + v.transpose()) * 0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanInference {
    pub v_theta: DMatrix<f64>,
    pub band_grid: Vec<f64>,
    pub band_center: Vec<f64>,
    pub band_half_width: Vec<f64>,
    pub level: f64,
}

impl MeanInference {
    pub fn lower(&self) -> Vec<f64> {
        self.band_center.iter().zip(&self.band_half_width).map(|(c, h)| c - h).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.band_center.iter().zip(&self.band_half_width).map(|(c, h)| c + h).collect()
    }
}

/// Pointwise band `μ̂(t) ± z·√(b(t)ᵀVb(t))` on `grid`.
pub fn mean_confidence_band(params: &ModelParams, data: &Dataset, grid: &[f64], level: f64) -> Result<MeanInference> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(format!("confidence level {level} not in (0, 1)")));
    }
    let v = mean_covariance(params, data)?;
    let design = params.basis.design_matrix(grid)?;
    let z = Normal::standard().inverse_cdf(1.0 - (1.0 - level) / 2.0);
    let center = (&design * &params.theta).iter().copied().collect();
    let bv = &design * &v;
    let half = (0..grid.len())
        .map(|j| z * bv.row(j).dot(&design.row(j)).max(0.0).sqrt())
        .collect();
    Ok(MeanInference { v_theta: v, band_grid: grid.to_vec(), band_center: center, band_half_width: half, level })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::basis::SplineBasis;
    use crate::model::{fit, robust_weight, ModelConfig, Trajectory};
    use crate::simulate::{simulate_dataset, Contamination, ContaminationKind, GridDesign, TrueModel};

    fn basis() -> Arc<SplineBasis> {
        Arc::new(SplineBasis::uniform(4, 5, (0.0, 1.0)).unwrap())
    }

    fn two_component(n: usize, seed: u64) -> Dataset {
        simulate_dataset(&TrueModel::two_component(), GridDesign::RandomUniform(20), n, &Contamination::NONE, basis(), seed)
            .unwrap()
            .0
    }

    #[test]
    fn g_weight_values() {
        assert!((g_weight(Nu::Finite(1.0), 2, 1.0) + 0.75).abs() < 1e-15);
        assert!((g_weight(Nu::Finite(3.0), 4, 0.0) + 7.0 / 3.0).abs() < 1e-15);
        assert_eq!(g_weight(Nu::Infinite, 5, 3.0), -1.0);
        let far = g_weight(Nu::Finite(1e9), 5, 3.0);
        assert!((far + 1.0).abs() < 1e-6);
    }

    #[test]
    fn mean_only_fitted_is_design_times_theta() {
        let data = two_component(30, 1);
        let f = fit(&data, &ModelConfig::new(Nu::CAUCHY, 0)).unwrap();
        let diag = curve_diagnostics(&f.params, &data).unwrap();
        for (i, dg) in diag.iter().enumerate() {
            let expect = data.design(i) * &f.params.theta;
            for (a, b) in dg.fitted_values.iter().zip(expect.iter()) {
                assert_eq!(a, b);
            }
            assert_eq!(dg.fitted_values.len(), data.curves()[i].len());
            assert_eq!(dg.weight, robust_weight(Nu::CAUCHY, dg.fitted_values.len(), dg.s));
        }
    }

    #[test]
    fn near_noiseless_residuals_are_small() {
        let truth = TrueModel { sigma2: 1e-6, ..TrueModel::two_component() };
        let (data, _) =
            simulate_dataset(&truth, GridDesign::RandomUniform(20), 100, &Contamination::NONE, basis(), 3).unwrap();
        let f = fit(&data, &ModelConfig::new(Nu::CAUCHY, 2)).unwrap();
        let diag = curve_diagnostics(&f.params, &data).unwrap();
        let worst = diag.iter().map(|d| d.residual_norm).fold(0.0, f64::max);
        assert!(worst < 0.05, "max residual norm {worst}");
    }

    #[test]
    fn aberrant_score_gets_smallest_weight() {
        let base = TrueModel::two_component();
        let (data, truth) = simulate_dataset(
            &base,
            GridDesign::RandomUniform(20),
            60,
            &Contamination::new(ContaminationKind::EndogenousPc, 1.0 / 60.0, 8.0),
            basis(),
            11,
        )
        .unwrap();
        let (bad, _) = truth.contaminated[0];
        let f = fit(&data, &ModelConfig::new(Nu::CAUCHY, 2)).unwrap();
        let diag = curve_diagnostics(&f.params, &data).unwrap();
        let argmin = (0..diag.len()).min_by(|&a, &b| diag[a].weight.total_cmp(&diag[b].weight)).unwrap();
        assert_eq!(argmin, bad);
    }

    #[test]
    fn flags_imply_below_median_weight() {
        let (data, _) = simulate_dataset(
            &TrueModel::two_component(),
            GridDesign::RandomUniform(20),
            80,
            &Contamination::new(ContaminationKind::ExogenousMean, 0.1, 4.0),
            basis(),
            5,
        )
        .unwrap();
        let f = fit(&data, &ModelConfig::new(Nu::CAUCHY, 1)).unwrap();
        let diag = curve_diagnostics(&f.params, &data).unwrap();
        let med = median(&diag.iter().map(|d| d.weight).collect::<Vec<_>>());
        assert!(diag.iter().any(|d| d.outlier_flag));
        for d in &diag {
            if d.outlier_flag {
                assert!(d.weight < med);
            }
        }
    }

    #[test]
    fn covariance_is_symmetric_psd() {
        let data = two_component(60, 2);
        let f = fit(&data, &ModelConfig::new(Nu::CAUCHY, 2)).unwrap();
        let v = mean_covariance(&f.params, &data).unwrap();
        assert!((&v - v.transpose()).norm() < 1e-14);
        let min = v.clone().symmetric_eigen().eigenvalues.min();
        assert!(min >= -1e-10, "min eigenvalue {min}");
    }

    #[test]
    fn duplicated_data_halves_covariance() {
        let data = two_component(50, 4);
        let f = fit(&data, &ModelConfig::new(Nu::CAUCHY, 1)).unwrap();
        let v1 = mean_covariance(&f.params, &data).unwrap();
        let dup_curves: Vec<Trajectory> = data
            .curves()
            .iter()
            .map(|c| Trajectory::new(format!("{}b", c.id), c.times.clone(), c.values.clone()).unwrap())
            .collect();
        let doubled = data.concat(&Dataset::new(data.basis_arc(), dup_curves).unwrap()).unwrap();
        let v2 = mean_covariance(&f.params, &doubled).unwrap();
        let rel = (&v2 * 2.0 - &v1).norm() / v1.norm();
        assert!(rel < 0.02, "relative deviation {rel}");
    }

    #[test]
    fn normal_mean_only_matches_classical_sandwich() {
        // balanced design: every curve observed at the same 15 points
        let b = basis();
        let times: Vec<f64> = (0..15).map(|j| (j as f64 + 0.5) / 15.0).collect();
        let curves: Vec<Trajectory> = (0..40)
            .map(|i| {
                let vals = times.iter().map(|t| (6.0 * t).sin() + 0.3 * ((i * 7 + 3) as f64 * t).cos()).collect();
                Trajectory::new(i.to_string(), times.clone(), vals).unwrap()
            })
            .collect();
        let data = Dataset::new(b, curves).unwrap();
        let f = fit(&data, &ModelConfig { tol: 1e-12, ..ModelConfig::new(Nu::Infinite, 0) }).unwrap();
        let v = mean_covariance(&f.params, &data).unwrap();

        let p = f.params.p();
        let mut xtx = DMatrix::<f64>::zeros(p, p);
        let mut meat = DMatrix::<f64>::zeros(p, p);
        for i in 0..data.len() {
            let x = data.design(i);
            let r = DVector::from_column_slice(&data.curves()[i].values) - x * &f.params.theta;
            xtx += x.tr_mul(x);
            let u = x.tr_mul(&r);
            meat += &u * u.transpose();
        }
        let inv = xtx.try_inverse().unwrap();
        let oracle = &inv * meat * &inv;
        let rel = (&v - &oracle).norm() / oracle.norm();
        assert!(rel < 1e-8, "relative deviation {rel}");
    }

    #[test]
    fn band_is_symmetric_and_shrinks_with_n() {
        let grid: Vec<f64> = (0..21).map(|j| j as f64 / 20.0).collect();
        let width = |n: usize| {
            let data = two_component(n, 9);
            let f = fit(&data, &ModelConfig::new(Nu::CAUCHY, 2)).unwrap();
            let band = mean_confidence_band(&f.params, &data, &grid, 0.95).unwrap();
            let (lo, hi) = (band.lower(), band.upper());
            for j in 0..grid.len() {
                assert!(((hi[j] + lo[j]) / 2.0 - band.band_center[j]).abs() < 1e-12);
                assert!(band.band_half_width[j] >= 0.0);
            }
            band.band_half_width.iter().sum::<f64>()
        };
        let ratio = width(400) / width(100);
        assert!((0.4..=0.6).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn band_rejects_bad_level() {
        let data = two_component(20, 1);
        let f = fit(&data, &ModelConfig::new(Nu::CAUCHY, 0)).unwrap();
        assert!(mean_confidence_band(&f.params, &data, &[0.5], 1.0).is_err());
        assert!(mean_confidence_band(&f.params, &data, &[0.5], 0.0).is_err());
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
