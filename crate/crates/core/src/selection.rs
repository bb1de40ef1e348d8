//! Choosing the number of components: degrees of freedom, penalized
//! log-likelihood criteria `Σ log f(xᵢ) − cₙ·df` (AIC: cₙ = 1, BIC: cₙ = log(n)/2)
//! and leave-one-out cross-validation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{curve_log_density, fit, fit_with, iterate, log_likelihood, Dataset, FitResult, ModelConfig, ModelParams, StageFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Aic,
    Bic,
    Cv,
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aic" => Ok(Criterion::Aic),
            "bic" => Ok(Criterion::Bic),
            "cv" => Ok(Criterion::Cv),
            other => Err(Error::InvalidConfig(format!("unknown criterion {other:?}"))),
        }
    }
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Criterion::Aic => "AIC",
            Criterion::Bic => "BIC",
            Criterion::Cv => "CV",
        })
    }
}

/// Free parameters minus orthonormality constraints: `p + pd + d + 1 − d(d+1)/2`.
pub fn degrees_of_freedom(p: usize, d: usize) -> Result<usize> {
    if d > p {
        return Err(Error::InvalidConfig(format!("d = {d} exceeds p = {p}")));
    }
    Ok(p + p * d + d + 1 - d * (d + 1) / 2)
}

pub const AIC_CONSTANT: f64 = 1.0;

pub fn bic_constant(n: usize) -> f64 {
    (n as f64).ln() / 2.0
}

/// `loglik − cₙ·df` with the log-likelihood recomputed on `data`.
pub fn information_criterion(fit: &FitResult, data: &Dataset, c_n: f64) -> Result<f64> {
    let ll = log_likelihood(&fit.params, data)?;
    let df = degrees_of_freedom(fit.params.p(), fit.params.d())?;
    Ok(ll - c_n * df as f64)
}

pub fn aic(fit: &FitResult, data: &Dataset) -> Result<f64> {
    information_criterion(fit, data, AIC_CONSTANT)
}

pub fn bic(fit: &FitResult, data: &Dataset) -> Result<f64> {
    information_criterion(fit, data, bic_constant(data.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CvStart {
    /// Each held-out refit starts from the full-data estimates.
    #[default]
    Warm,
    /// Each held-out refit runs the full sequential fit from scratch.
    Cold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    /// `Σᵢ log f(xᵢ | θ̂₍₋ᵢ₎, Ĥ₍₋ᵢ₎, Λ̂₍₋ᵢ₎)`.
    pub score: f64,
    pub refits: usize,
    /// Ids whose held-out refit stopped at `max_iter`.
    pub nonconverged: Vec<String>,
}

/// Leave-one-out cross-validation at `config.d`, warm-started from the full fit.
pub fn cross_validate(data: &Dataset, config: &ModelConfig) -> Result<CvResult> {
    let full = fit(data, config)?;
    cross_validate_from(data, &full.params, config, CvStart::Warm)
}

/// Leave-one-out cross-validation with the given full-data estimates as the
/// warm start (ignored for [`CvStart::Cold`]).
pub fn cross_validate_from(data: &Dataset, full: &ModelParams, config: &ModelConfig, start: CvStart) -> Result<CvResult> {
    let n = data.len();
    if n < 3 {
        return Err(Error::InvalidData("cross-validation needs at least three curves".into()));
    }
    let terms: Vec<Result<(f64, bool)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let rest = data.without(i)?;
            let (params, converged) = match start {
                CvStart::Warm => {
                    let st = iterate(full.clone(), &rest, config)?;
                    (st.params, st.converged)
                }
                CvStart::Cold => {
                    let f = fit(&rest, config)?;
                    (f.params, f.converged)
                }
            };
            Ok((curve_log_density(&params, &data.curves()[i])?, converged))
        })
        .collect();
    let mut score = 0.0;
    let mut nonconverged = Vec::new();
    for (i, t) in terms.into_iter().enumerate() {
        let (ll, ok) = t?;
        score += ll;
        if !ok {
            nonconverged.push(data.curves()[i].id.clone());
        }
    }
    Ok(CvResult { score, refits: n, nonconverged })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub d: usize,
    pub loglik: f64,
    pub df: usize,
    pub aic: Option<f64>,
    pub bic: Option<f64>,
    pub cv: Option<f64>,
    /// `λ̂_d / Σₖ λ̂ₖ` (absent for d = 0).
    pub lambda_share: Option<f64>,
    /// `λ̂_d / σ̂²` (absent for d = 0).
    pub lambda_to_noise: Option<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub per_d: Vec<SelectionRow>,
    pub chosen_d: usize,
    pub criterion: Criterion,
    /// Curves whose held-out CV refit did not converge, by d.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cv_nonconverged: Vec<(usize, Vec<String>)>,
}

impl SelectionReport {
    pub fn row(&self, d: usize) -> Option<&SelectionRow> {
        self.per_d.iter().find(|r| r.d == d)
    }
}

fn row_for(stage: &StageFit, data: &Dataset, penalized: bool) -> Result<SelectionRow> {
    let params = &stage.params;
    let d = params.d();
    let df = degrees_of_freedom(params.p(), d)?;
    let loglik = log_likelihood(params, data)?;
    let (aic, bic) = if penalized {
        (None, None)
    } else {
        (Some(loglik - AIC_CONSTANT * df as f64), Some(loglik - bic_constant(data.len()) * df as f64))
    };
    let (lambda_share, lambda_to_noise) = if d == 0 {
        (None, None)
    } else {
        let last = params.lambda[d - 1];
        (Some(last / params.lambda.sum()), Some(last / params.sigma2))
    };
    Ok(SelectionRow { d, loglik, df, aic, bic, cv: None, lambda_share, lambda_to_noise, converged: stage.converged })
}

fn choose(rows: &[SelectionRow], criterion: Criterion) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for r in rows {
        let v = match criterion {
            Criterion::Aic => r.aic,
            Criterion::Bic => r.bic,
            Criterion::Cv => r.cv,
        }
        .ok_or_else(|| Error::InvalidConfig(format!("{criterion} is not available for this fit")))?;
        // strict improvement only: ties go to the smaller d
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((r.d, v));
        }
    }
    best.map(|(d, _)| d).ok_or_else(|| Error::InvalidData("no fitted dimensions".into()))
}

/// Builds a report from the stages of an existing sequential fit (AIC/BIC only).
pub fn report_from_fit(fit: &FitResult, data: &Dataset, criterion: Criterion) -> Result<SelectionReport> {
    if criterion == Criterion::Cv {
        return Err(Error::InvalidConfig("CV needs refits; use select_dimension".into()));
    }
    let rows = fit.stages.iter().map(|s| row_for(s, data, false)).collect::<Result<Vec<_>>>()?;
    let chosen_d = choose(&rows, criterion)?;
    Ok(SelectionReport { per_d: rows, chosen_d, criterion, cv_nonconverged: Vec::new() })
}

/// Fits d = 0…d_max along one warm-started chain and picks the dimension that
/// maximizes `criterion`. Ties go to the smaller d.
pub fn select_dimension(data: &Dataset, d_max: usize, criterion: Criterion, config: &ModelConfig) -> Result<SelectionReport> {
    let p = data.basis().dim();
    if d_max > p {
        return Err(Error::InvalidConfig(format!("d_max = {d_max} exceeds p = {p}")));
    }
    let penalized = config.is_penalized();
    if penalized && criterion != Criterion::Cv {
        return Err(Error::InvalidConfig(
            "information criteria are unavailable for penalized fits; use cv".into(),
        ));
    }
    let cfg = ModelConfig { d: d_max, ..config.clone() };
    let mut rows: Vec<SelectionRow> = Vec::new();
    let mut cv_nonconverged = Vec::new();
    let result = fit_with(data, &cfg, |stage| {
        let mut row = row_for(stage, data, penalized)?;
        if criterion == Criterion::Cv {
            let stage_cfg = ModelConfig { d: stage.d, ..config.clone() };
            let cv = cross_validate_from(data, &stage.params, &stage_cfg, CvStart::Warm)?;
            row.cv = Some(cv.score);
            if !cv.nonconverged.is_empty() {
                cv_nonconverged.push((stage.d, cv.nonconverged));
            }
        }
        rows.push(row);
        Ok(())
    });
    if let Err(e) = result {
        let d = rows.len();
        let chosen_d = choose(&rows, criterion).unwrap_or(0);
        let partial = SelectionReport { per_d: rows, chosen_d, criterion, cv_nonconverged };
        return Err(Error::Selection { d, source: Box::new(e), partial: Box::new(partial) });
    }
    let chosen_d = choose(&rows, criterion)?;
    Ok(SelectionReport { per_d: rows, chosen_d, criterion, cv_nonconverged })
}
