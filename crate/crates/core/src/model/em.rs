//! EM updates and the sequential fitting driver.
//!
//! One EM step evaluates, at the current parameters, the weights
//! `wᵢ = (ν+mᵢ)/(ν+sᵢ)`, the predictors `ẑᵢ` and `Vᵢ`, and then applies
//!
//! ```text
//! θ       ← {Σ wᵢBᵢᵀBᵢ}⁻¹ Σ wᵢBᵢᵀ(xᵢ − BᵢΞẑᵢ)
//! vec(Ξ)  ← [Σ (Vᵢ⁻¹ + wᵢẑᵢẑᵢᵀ) ⊗ BᵢᵀBᵢ]⁻¹ Σ wᵢ(ẑᵢ ⊗ Bᵢᵀ)(xᵢ − Bᵢθ)
//! σ²      ← [Σ wᵢ‖xᵢ − Bᵢθ − BᵢΞẑᵢ‖² + Σ tr(BᵢΞVᵢ⁻¹ΞᵀBᵢᵀ)] / Σ mᵢ
//! ```
//!
//! with every right-hand side evaluated at the old parameters. Roughness
//! penalties add `2ασ²P` to the θ system and `2αₖσ²P` to the k-th diagonal block
//! of the Ξ system (the σ² factor makes these the exact maximizers of the
//! penalized objective).

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::estep::{CurveState, PosteriorStats};
use super::params::{ModelConfig, ModelParams, Nu};
use crate::error::{Error, Result};

/// Floor on σ², relative to the mean squared observation.
const SIGMA2_FLOOR: f64 = 1e-12;

/// Result of one EM sweep: the objective and posterior stats at the input
/// parameters, plus the updated parameters.
pub(crate) struct Sweep {
    pub objective: f64,
    pub stats: Vec<PosteriorStats>,
    pub next: ModelParams,
}

pub(crate) fn sweep(params: &ModelParams, data: &Dataset, config: &ModelConfig, penalty: Option<&DMatrix<f64>>) -> Result<Sweep> {
    let p = params.p();
    let d = params.d();
    let pd = p * d;
    let sigma2 = params.sigma2;

    let mut theta_lhs = DMatrix::<f64>::zeros(p, p);
    let mut theta_rhs = DVector::<f64>::zeros(p);
    let mut xi_lhs = DMatrix::<f64>::zeros(pd, pd);
    let mut xi_rhs = DVector::<f64>::zeros(pd);
    let mut sigma_acc = 0.0;
    let mut loglik = 0.0;
    let mut stats = Vec::with_capacity(data.len());

    for (i, curve) in data.curves().iter().enumerate() {
        let c = data.cache(i);
        let st = CurveState::new(params, &c.design, &c.x)?;
        let ll = st.log_density(params.nu, curve.len());
        if !ll.is_finite() {
            return Err(Error::NumericalOverflow { id: curve.id.clone() });
        }
        loglik += ll;
        let w = st.weight;
        let g_z = &st.factor.g * &st.zhat;
        let bt_r = c.design.tr_mul(&st.resid);

        theta_lhs.zip_apply(&c.btb, |x, y| *x += w * y);
        // Bᵀ(x − BΞẑ) = Bᵀx − Bᵀ(Gẑ)
        let bt_x = c.design.tr_mul(&c.x);
        theta_rhs.axpy(w, &(bt_x - c.design.tr_mul(&g_z)), 1.0);

        let fitted_resid = &st.resid - &g_z;
        sigma_acc += w * fitted_resid.norm_squared();

        if d > 0 {
            let v_inv = st.factor.v_inverse();
            // tr(G V⁻¹ Gᵀ) = tr(V⁻¹ GᵀG)
            let gtg = st.factor.g.tr_mul(&st.factor.g);
            sigma_acc += v_inv.component_mul(&gtg).sum();

            let mut kmat = v_inv;
            kmat.ger(w, &st.zhat, &st.zhat, 1.0);
            for k in 0..d {
                for l in 0..d {
                    let coef = kmat[(k, l)];
                    let mut block = xi_lhs.view_mut((k * p, l * p), (p, p));
                    block.zip_apply(&c.btb, |x, y| *x += coef * y);
                }
                let mut seg = xi_rhs.rows_mut(k * p, p);
                seg.axpy(w * st.zhat[k], &bt_r, 1.0);
            }
        }
        stats.push(st.stats());
    }

    let objective = loglik - params.roughness(config, penalty);

    if let Some(pm) = penalty {
        if config.mean_penalty > 0.0 {
            theta_lhs.zip_apply(pm, |x, y| *x += 2.0 * config.mean_penalty * sigma2 * y);
        }
        for k in 0..d {
            let a = config.component_penalty(k);
            if a > 0.0 {
                let mut block = xi_lhs.view_mut((k * p, k * p), (p, p));
                block.zip_apply(pm, |x, y| *x += 2.0 * a * sigma2 * y);
            }
        }
    }

    let theta = Cholesky::new(theta_lhs)
        .ok_or_else(|| Error::Conditioning("mean update system Σ wᵢBᵢᵀBᵢ is singular".into()))?
        .solve(&theta_rhs);

    let raw_sigma2 = sigma_acc / data.total_obs() as f64;
    if !raw_sigma2.is_finite() || raw_sigma2 < 0.0 {
        return Err(Error::DegenerateFit(format!("variance update produced {raw_sigma2}")));
    }
    let floor = SIGMA2_FLOOR * data.mean_square();
    let new_sigma2 = raw_sigma2.max(floor);
    if !(new_sigma2 > 0.0) {
        return Err(Error::DegenerateFit("variance update is zero".into()));
    }

    let next = if d == 0 {
        ModelParams::mean_only(theta, new_sigma2, params.nu, data.basis_arc())
    } else {
        let vec_xi = Cholesky::new(xi_lhs)
            .ok_or_else(|| Error::Conditioning("loading update system Σ (Vᵢ⁻¹ + wᵢẑᵢẑᵢᵀ) ⊗ BᵢᵀBᵢ is singular".into()))?
            .solve(&xi_rhs);
        let xi = DMatrix::from_column_slice(p, d, vec_xi.as_slice());
        ModelParams::from_loadings(theta, &xi, new_sigma2, params.nu, data.basis_arc(), data.gram())?
    };
    Ok(Sweep { objective, stats, next })
}

fn penalty_for(data: &Dataset, config: &ModelConfig) -> Result<Option<DMatrix<f64>>> {
    if config.is_penalized() {
        Ok(Some(data.basis().penalty_matrix()?))
    } else {
        Ok(None)
    }
}

/// One EM update from `params`.
pub fn em_step(params: &ModelParams, data: &Dataset, config: &ModelConfig) -> Result<ModelParams> {
    params.validate()?;
    check_basis(params, data)?;
    let penalty = penalty_for(data, config)?;
    Ok(sweep(params, data, config, penalty.as_ref())?.next)
}

/// Penalized objective `Σ log f(xᵢ) − α θᵀPθ − Σ αₖ ξₖᵀPξₖ`.
pub fn objective(params: &ModelParams, data: &Dataset, config: &ModelConfig) -> Result<f64> {
    let penalty = penalty_for(data, config)?;
    Ok(super::estep::log_likelihood(params, data)? - params.roughness(config, penalty.as_ref()))
}

pub(crate) fn check_basis(params: &ModelParams, data: &Dataset) -> Result<()> {
    if *params.basis != *data.basis() {
        return Err(Error::BasisMismatch(format!(
            "model basis has p = {}, data basis has p = {}",
            params.basis.dim(),
            data.basis().dim()
        )));
    }
    Ok(())
}

/// Converged parameters of one stage of the sequential fit.
#[derive(Debug, Clone)]
pub struct StageFit {
    pub d: usize,
    pub params: ModelParams,
    /// Final value of the (penalized) objective.
    pub loglik: f64,
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub per_curve: Vec<PosteriorStats>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ModelParams,
    /// Objective after each EM update of the final stage (first entry is the start).
    pub loglik_trace: Vec<f64>,
    /// True when every stage converged.
    pub converged: bool,
    /// EM updates applied in the final stage.
    pub iterations: usize,
    pub per_curve: Vec<PosteriorStats>,
    /// Stage results for d' = 0, …, d.
    pub stages: Vec<StageFit>,
}

impl FitResult {
    pub fn loglik(&self) -> f64 {
        *self.loglik_trace.last().expect("trace is never empty")
    }

    pub fn stage(&self, d: usize) -> Option<&StageFit> {
        self.stages.iter().find(|s| s.d == d)
    }
}

/// Summary written alongside saved models.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FitSummary {
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Runs EM from `start` at fixed dimension until the relative objective change
/// drops below `config.tol` or `config.max_iter` updates have been applied.
pub fn iterate(start: ModelParams, data: &Dataset, config: &ModelConfig) -> Result<StageFit> {
    start.validate()?;
    check_basis(&start, data)?;
    let penalty = penalty_for(data, config)?;
    let mut current = start;
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        let sw = sweep(&current, data, config, penalty.as_ref())?;
        trace.push(sw.objective);
        let n = trace.len();
        let converged = n >= 2 && {
            let (prev, last) = (trace[n - 2], trace[n - 1]);
            (last - prev).abs() / (last.abs() + 1.0) < config.tol
        };
        if converged || iterations >= config.max_iter {
            return Ok(StageFit {
                d: current.d(),
                loglik: sw.objective,
                params: current,
                loglik_trace: trace,
                iterations,
                converged,
                per_curve: sw.stats,
            });
        }
        current = sw.next;
        iterations += 1;
    }
}

/// Starting values for a mean-only fit: `θ = 0`, `σ² = Σx²/Σm`.
pub fn initial_params(data: &Dataset, nu: Nu) -> Result<ModelParams> {
    let sigma2 = data.mean_square();
    if !(sigma2 > 0.0) {
        return Err(Error::DegenerateFit("all observations are zero".into()));
    }
    let p = data.basis().dim();
    Ok(ModelParams::mean_only(DVector::zeros(p), sigma2, nu, data.basis_arc()))
}

/// Adds one component to a converged stage.
///
/// The new direction is the leading eigenvector, in the J metric and
/// J-orthogonal to the current components, of `Σ wᵢ cᵢcᵢᵀ`, where
/// `cᵢ = (BᵢᵀBᵢ + ρᵢI)⁻¹Bᵢᵀrᵢ` projects the current residual curve onto the
/// basis. Its variance starts at `σ²/2`.
pub fn grow(stage: &StageFit, data: &Dataset) -> Result<ModelParams> {
    let params = &stage.params;
    let p = params.p();
    let d = params.d();
    if d >= p {
        return Err(Error::InvalidConfig(format!("cannot grow beyond d = p = {p}")));
    }
    let mut scatter = DMatrix::<f64>::zeros(p, p);
    for (i, ps) in stage.per_curve.iter().enumerate() {
        let c = data.cache(i);
        let fitted = &c.design * (&params.theta + &params.xi * &ps.zhat);
        let resid = &c.x - fitted;
        let ridge = 1e-3 * c.btb.trace() / p as f64 + 1e-12;
        let mut lhs = c.btb.clone();
        for k in 0..p {
            lhs[(k, k)] += ridge;
        }
        let coef = Cholesky::new(lhs)
            .ok_or_else(|| Error::Conditioning("ridge projection for component initialization".into()))?
            .solve(&c.design.tr_mul(&resid));
        scatter.ger(ps.weight, &coef, &coef, 1.0);
    }

    let gram = data.gram();
    let l = Cholesky::new(gram.clone())
        .ok_or_else(|| Error::Conditioning("Gram matrix is not positive definite".into()))?
        .l();
    // In u = Lᵀη coordinates the J metric is Euclidean.
    let mut m = l.transpose() * &scatter * &l;
    if d > 0 {
        let ht = l.transpose() * &params.h;
        let proj = DMatrix::identity(p, p) - &ht * ht.transpose();
        m = &proj * m * &proj;
    }
    m = (&m + m.transpose()) * 0.5;
    let eig = m.symmetric_eigen();
    let (idx, top) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, v)| (i, *v))
        .expect("p >= 1");
    if !(top > 0.0) {
        return Err(Error::DegenerateFit("no residual variation left to seed a new component".into()));
    }
    let u = eig.eigenvectors.column(idx).into_owned();
    let eta = l
        .transpose()
        .solve_upper_triangular(&u)
        .ok_or_else(|| Error::Conditioning("Gram factor is singular".into()))?;
    let new_col = eta * (params.sigma2 / 2.0).sqrt();
    let mut xi = params.xi.clone().insert_column(d, 0.0);
    xi.set_column(d, &new_col);
    ModelParams::from_loadings(params.theta.clone(), &xi, params.sigma2, params.nu, data.basis_arc(), gram)
}

/// Sequential fit through `d' = 0, 1, …, config.d`, each stage started at the
/// previous one's estimates.
pub fn fit(data: &Dataset, config: &ModelConfig) -> Result<FitResult> {
    fit_with(data, config, |_| Ok(()))
}

/// Like [`fit`], calling `on_stage` after each stage converges.
pub fn fit_with(
    data: &Dataset,
    config: &ModelConfig,
    mut on_stage: impl FnMut(&StageFit) -> Result<()>,
) -> Result<FitResult> {
    let p = data.basis().dim();
    config.validate(p)?;
    if data.len() < 2 {
        return Err(Error::InvalidData("fitting needs at least two curves".into()));
    }
    if config.d > 0 && data.is_constant() {
        return Err(Error::DegenerateFit("all observations are identical".into()));
    }
    let mut stages: Vec<StageFit> = Vec::with_capacity(config.d + 1);
    let mut start = initial_params(data, config.nu)?;
    for dd in 0..=config.d {
        if dd > 0 {
            start = grow(stages.last().expect("previous stage"), data)?;
        }
        let stage = iterate(start.clone(), data, config)?;
        on_stage(&stage)?;
        stages.push(stage);
    }
    let last = stages.last().expect("at least one stage").clone();
    Ok(FitResult {
        params: last.params,
        loglik_trace: last.loglik_trace,
        converged: stages.iter().all(|s| s.converged),
        iterations: last.iterations,
        per_curve: last.per_curve,
        stages,
    })
}
