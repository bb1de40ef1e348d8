//! Synthetic data for the robustness study: a two-component sine truth on
//! `[0, 1]`, three sampling designs, mean and component contamination, and a
//! Monte Carlo driver summarizing estimator error and dimension selection.

use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, OnceLock};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::SplineBasis;
use crate::error::{Error, Result};
use crate::model::{fit, Dataset, FitResult, ModelConfig, ModelParams, Nu, Trajectory};
use crate::selection::{report_from_fit, Criterion};

pub type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// `√2 sin(kπt)`.
pub fn sine_component(k: usize) -> RealFn {
    Arc::new(move |t| std::f64::consts::SQRT_2 * (k as f64 * PI * t).sin())
}

/// Shift constant `2^{(9 − 4k)/5}` of the Doppler function.
pub fn doppler_shift(k: i32) -> f64 {
    2f64.powf((9 - 4 * k) as f64 / 5.0)
}

fn doppler_raw(t: f64) -> f64 {
    let a = doppler_shift(5);
    (t * (1.0 - t)).max(0.0).sqrt() * (2.0 * PI * (1.0 + a) / (t + a)).sin()
}

fn doppler_norm_constant() -> f64 {
    static C: OnceLock<f64> = OnceLock::new();
    *C.get_or_init(|| {
        let ss = adaptive_simpson(&|t| doppler_raw(t).powi(2), 0.0, 1.0, 1e-14, 50);
        1.0 / ss.sqrt()
    })
}

/// The Doppler function `c{t(1−t)}^{1/2} sin{2π(1+a)/(t+a)}`, `a = 2^{−11/5}`,
/// scaled to unit L² norm on `[0, 1]`.
pub fn doppler_phi3() -> RealFn {
    let c = doppler_norm_constant();
    Arc::new(move |t| c * doppler_raw(t))
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let diff = left + right - whole;
        if depth == 0 || diff.abs() <= 15.0 * tol {
            return left + right + diff / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    // start from a fixed 64-panel split so the first estimate cannot be fooled
    // by the oscillation lining up with the sample points
    let panels = 64;
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|k| {
            let (lo, hi) = (a + h * k as f64, a + h * (k + 1) as f64);
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            let whole = simpson(fa, fm, fb, lo, hi);
            rec(f, lo, hi, fa, fm, fb, whole, tol / panels as f64, depth)
        })
        .sum()
}

/// Data-generating truth `x(t) = μ(t) + Σ zₖ√λₖ φₖ(t) + σε`.
#[derive(Clone)]
pub struct TrueModel {
    pub mu: RealFn,
    pub phis: Vec<RealFn>,
    pub lambdas: Vec<f64>,
    pub sigma2: f64,
    pub domain: (f64, f64),
}

impl fmt::Debug for TrueModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TrueModel")
            .field("components", &self.phis.len())
            .field("lambdas", &self.lambdas)
            .field("sigma2", &self.sigma2)
            .field("domain", &self.domain)
            .finish()
    }
}

impl TrueModel {
    /// `μ = 0`, `φₖ = √2 sin(kπt)`, `λ = (1, 0.5)`, `σ² = 0.25` on `[0, 1]`.
    pub fn two_component() -> Self {
        TrueModel {
            mu: Arc::new(|_| 0.0),
            phis: vec![sine_component(1), sine_component(2)],
            lambdas: vec![1.0, 0.5],
            sigma2: 0.25,
            domain: (0.0, 1.0),
        }
    }

    /// Zero mean plus white noise only.
    pub fn noise_only(sigma2: f64) -> Self {
        TrueModel { mu: Arc::new(|_| 0.0), phis: Vec::new(), lambdas: Vec::new(), sigma2, domain: (0.0, 1.0) }
    }

    pub fn phi(&self, k: usize) -> &RealFn {
        &self.phis[k]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum GridDesign {
    /// `m` equally spaced points including both endpoints.
    FixedUniform(usize),
    /// `m` uniform random points per curve.
    RandomUniform(usize),
    /// Poisson(mean) uniform random points per curve, redrawn while below 2.
    PoissonUniform(f64),
}

impl GridDesign {
    pub fn validate(&self) -> Result<()> {
        match *self {
            GridDesign::FixedUniform(m) | GridDesign::RandomUniform(m) if m < 2 => {
                Err(Error::InvalidConfig(format!("grid design needs m >= 2, got {m}")))
            }
            GridDesign::PoissonUniform(mean) if !(mean > 0.0 && mean.is_finite()) => {
                Err(Error::InvalidConfig(format!("Poisson mean must be positive, got {mean}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContaminationKind {
    None,
    /// Replace `zᵢ₁` with K.
    EndogenousMean,
    /// Add `K√λ₁φ₃`.
    ExogenousMean,
    /// Replace half the `zᵢ₂` with a positive outlying score, half with its negative.
    EndogenousPc,
    /// Add `K√λ₁φ₃` to half, subtract it from the other half.
    ExogenousPc,
}

/// How the outlying second score is scaled in [`ContaminationKind::EndogenousPc`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcScoreReading {
    /// `zᵢ₂ = ±K`, so the second component variance becomes `(1−ε)λ₂ + ελ₂K²`.
    #[default]
    Unscaled,
    /// `zᵢ₂ = ±K√λ₂`.
    ScaledByLambda,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contamination {
    pub kind: ContaminationKind,
    pub epsilon: f64,
    pub k: f64,
    #[serde(default)]
    pub pc_reading: PcScoreReading,
}

impl Contamination {
    pub const NONE: Contamination =
        Contamination { kind: ContaminationKind::None, epsilon: 0.0, k: 0.0, pc_reading: PcScoreReading::Unscaled };

    pub fn new(kind: ContaminationKind, epsilon: f64, k: f64) -> Self {
        Contamination { kind, epsilon, k, pc_reading: PcScoreReading::Unscaled }
    }

    /// Number of modified curves, `round(εn)`.
    pub fn count(&self, n: usize) -> usize {
        if self.kind == ContaminationKind::None {
            return 0;
        }
        ((self.epsilon * n as f64).round() as usize).min(n)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::InvalidConfig(format!("contamination fraction must be in [0, 1), got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Latent draws behind a simulated dataset.
#[derive(Debug, Clone)]
pub struct TruthRecord {
    /// Component scores after contamination, one row per curve.
    pub scores: Vec<Vec<f64>>,
    /// Indices of contaminated curves with the sign applied to each.
    pub contaminated: Vec<(usize, f64)>,
}

/// Draws `n` curves from `truth` on `design`, then applies `contamination`.
///
/// The uncontaminated draw depends only on `seed`; the choice of contaminated
/// curves comes from an independent stream, so `ε = 0` reproduces the clean data.
pub fn simulate_dataset(
    truth: &TrueModel,
    design: GridDesign,
    n: usize,
    contamination: &Contamination,
    basis: Arc<SplineBasis>,
    seed: u64,
) -> Result<(Dataset, TruthRecord)> {
    design.validate()?;
    contamination.validate()?;
    if n == 0 {
        return Err(Error::InvalidConfig("n must be at least 1".into()));
    }
    let (a, b) = truth.domain;
    let ncomp = truth.phis.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let poisson = match design {
        GridDesign::PoissonUniform(mean) => {
            Some(Poisson::new(mean).map_err(|e| Error::InvalidConfig(format!("Poisson mean: {e}")))?)
        }
        _ => None,
    };

    let mut times_all = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    let mut noise_all = Vec::with_capacity(n);
    for _ in 0..n {
        let times: Vec<f64> = match design {
            GridDesign::FixedUniform(m) => (0..m).map(|j| a + (b - a) * j as f64 / (m - 1) as f64).collect(),
            GridDesign::RandomUniform(m) => sorted_uniform(&mut rng, m, a, b),
            GridDesign::PoissonUniform(_) => {
                let dist = poisson.as_ref().expect("poisson design");
                let m = loop {
                    let m: f64 = dist.sample(&mut rng);
                    if m >= 2.0 {
                        break m as usize;
                    }
                };
                sorted_uniform(&mut rng, m, a, b)
            }
        };
        let z: Vec<f64> = (0..ncomp).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let eps: Vec<f64> = (0..times.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        times_all.push(times);
        scores.push(z);
        noise_all.push(eps);
    }

    let count = contamination.count(n);
    let mut contaminated = Vec::with_capacity(count);
    let mut shifts: Vec<f64> = vec![0.0; n];
    if count > 0 {
        let mut crng = ChaCha8Rng::seed_from_u64(seed);
        crng.set_stream(1);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut crng);
        let chosen = &perm[..count];
        let plus = count.div_ceil(2);
        let k = contamination.k;
        for (pos, &i) in chosen.iter().enumerate() {
            let sign = match contamination.kind {
                ContaminationKind::EndogenousPc | ContaminationKind::ExogenousPc if pos >= plus => -1.0,
                _ => 1.0,
            };
            match contamination.kind {
                ContaminationKind::None => {}
                ContaminationKind::EndogenousMean => {
                    need_components(ncomp, 1)?;
                    scores[i][0] = k;
                }
                ContaminationKind::EndogenousPc => {
                    need_components(ncomp, 2)?;
                    let scale = match contamination.pc_reading {
                        PcScoreReading::Unscaled => 1.0,
                        PcScoreReading::ScaledByLambda => truth.lambdas[1].sqrt(),
                    };
                    scores[i][1] = sign * k * scale;
                }
                ContaminationKind::ExogenousMean | ContaminationKind::ExogenousPc => {
                    need_components(ncomp, 1)?;
                    shifts[i] = sign * k * truth.lambdas[0].sqrt();
                }
            }
            contaminated.push((i, sign));
        }
    }

    let phi3 = doppler_phi3();
    let sigma = truth.sigma2.sqrt();
    let mut curves = Vec::with_capacity(n);
    for i in 0..n {
        let values = times_all[i]
            .iter()
            .zip(&noise_all[i])
            .map(|(&t, &e)| {
                let mut x = (truth.mu)(t) + sigma * e;
                for k in 0..ncomp {
                    x += scores[i][k] * truth.lambdas[k].sqrt() * (truth.phis[k])(t);
                }
                if shifts[i] != 0.0 {
                    x += shifts[i] * phi3(t);
                }
                x
            })
            .collect();
        curves.push(Trajectory::new(format!("{}", i + 1), std::mem::take(&mut times_all[i]), values)?);
    }
    let data = Dataset::new(basis, curves)?;
    Ok((data, TruthRecord { scores, contaminated }))
}

fn need_components(have: usize, need: usize) -> Result<()> {
    if have < need {
        return Err(Error::InvalidConfig(format!("contamination needs {need} true components, truth has {have}")));
    }
    Ok(())
}

fn sorted_uniform(rng: &mut ChaCha8Rng, m: usize, a: f64, b: f64) -> Vec<f64> {
    let mut t: Vec<f64> = (0..m).map(|_| rng.random_range(a..=b)).collect();
    t.sort_by(f64::total_cmp);
    t
}

/// L² errors of the fitted mean and first component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorNorms {
    pub mu_err: f64,
    /// Sign-aligned; `None` for mean-only fits.
    pub phi1_err: Option<f64>,
}

const ERROR_GRID: usize = 401;

/// Composite Simpson integral of `values` on an equispaced grid over `[a, b]`.
pub fn simpson_integral(values: &[f64], a: f64, b: f64) -> f64 {
    let n = values.len();
    assert!(n >= 3 && n % 2 == 1, "Simpson needs an odd number of points");
    let h = (b - a) / (n - 1) as f64;
    let mut s = values[0] + values[n - 1];
    for (j, v) in values.iter().enumerate().take(n - 1).skip(1) {
        s += if j % 2 == 1 { 4.0 } else { 2.0 } * v;
    }
    s * h / 3.0
}

fn l2_distance(a: &[f64], b: &[f64], domain: (f64, f64)) -> f64 {
    let sq: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).collect();
    simpson_integral(&sq, domain.0, domain.1).sqrt()
}

/// `‖μ̂ − μ‖` and `min(‖φ̂₁ − φ₁‖, ‖φ̂₁ + φ₁‖)` on a 401-point Simpson grid.
pub fn error_norms_params(params: &ModelParams, truth: &TrueModel) -> Result<ErrorNorms> {
    let (a, b) = truth.domain;
    let grid: Vec<f64> = (0..ERROR_GRID).map(|j| a + (b - a) * j as f64 / (ERROR_GRID - 1) as f64).collect();
    let mu_hat = params.mean_at(&grid)?;
    let mu: Vec<f64> = grid.iter().map(|&t| (truth.mu)(t)).collect();
    let mu_err = l2_distance(&mu_hat, &mu, truth.domain);
    let phi1_err = if params.d() >= 1 && !truth.phis.is_empty() {
        let phi_hat = params.component_at(0, &grid)?;
        let phi: Vec<f64> = grid.iter().map(|&t| (truth.phis[0])(t)).collect();
        let neg: Vec<f64> = phi.iter().map(|v| -v).collect();
        Some(l2_distance(&phi_hat, &phi, truth.domain).min(l2_distance(&phi_hat, &neg, truth.domain)))
    } else {
        None
    };
    Ok(ErrorNorms { mu_err, phi1_err })
}

pub fn error_norms(fit: &FitResult, truth: &TrueModel) -> Result<ErrorNorms> {
    error_norms_params(&fit.params, truth)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Task {
    /// μ̂ from a mean-only fit and/or φ̂₁ from a one-component fit.
    Estimation { mu: bool, phi1: bool },
    /// Sequential fits d = 0…d_max scored by AIC and BIC.
    Selection { d_max: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub design: GridDesign,
    pub n: usize,
    pub contamination: Contamination,
    pub task: Task,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub scenarios: Vec<Scenario>,
    pub reps: usize,
    pub estimators: Vec<Nu>,
    pub seed: u64,
    pub order: usize,
    pub knots: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            scenarios: Vec::new(),
            reps: 200,
            estimators: vec![Nu::Infinite, Nu::CAUCHY, Nu::Finite(5.0)],
            seed: 0,
            order: 4,
            knots: 5,
            max_iter: 1000,
            tol: 1e-6,
        }
    }
}

impl StudyConfig {
    /// Estimator-error study on design (ii) with n = 100: clean data, mean
    /// contamination for μ̂ and component contamination for φ̂₁ at ε = 0.1, 0.2, 0.3.
    pub fn table1(reps: usize, seed: u64, k: f64) -> Self {
        let design = GridDesign::RandomUniform(20);
        let mut scenarios = vec![Scenario {
            name: "clean".into(),
            design,
            n: 100,
            contamination: Contamination::NONE,
            task: Task::Estimation { mu: true, phi1: true },
        }];
        let groups = [
            ("endo_mean", ContaminationKind::EndogenousMean, true),
            ("exo_mean", ContaminationKind::ExogenousMean, true),
            ("endo_pc", ContaminationKind::EndogenousPc, false),
            ("exo_pc", ContaminationKind::ExogenousPc, false),
        ];
        for (label, kind, is_mean) in groups {
            for pct in [10, 20, 30] {
                scenarios.push(Scenario {
                    name: format!("{label}_{pct}"),
                    design,
                    n: 100,
                    contamination: Contamination::new(kind, pct as f64 / 100.0, k),
                    task: Task::Estimation { mu: is_mean, phi1: !is_mean },
                });
            }
        }
        StudyConfig { scenarios, reps, seed, ..Default::default() }
    }

    /// Dimension-selection study: n ∈ {20, 60}, symmetric exogenous contamination
    /// at ε ∈ {0, 0.1, 0.2, 0.3}, Normal and Cauchy fits for d = 0…4.
    pub fn table2(reps: usize, seed: u64, k: f64) -> Self {
        let mut scenarios = Vec::new();
        for n in [20, 60] {
            for pct in [0, 10, 20, 30] {
                let contamination = if pct == 0 {
                    Contamination::NONE
                } else {
                    Contamination::new(ContaminationKind::ExogenousPc, pct as f64 / 100.0, k)
                };
                scenarios.push(Scenario {
                    name: format!("n{n}_exo_pc_{pct}"),
                    design: GridDesign::RandomUniform(20),
                    n,
                    contamination,
                    task: Task::Selection { d_max: 4 },
                });
            }
        }
        StudyConfig { scenarios, reps, seed, estimators: vec![Nu::Infinite, Nu::CAUCHY], ..Default::default() }
    }

    pub fn model_config(&self, nu: Nu, d: usize) -> ModelConfig {
        ModelConfig { nu, d, max_iter: self.max_iter, tol: self.tol, seed: self.seed, ..Default::default() }
    }
}

/// RMSE across replications for one (scenario, estimator) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationRow {
    pub scenario: String,
    pub estimator: Nu,
    pub rmse_mu: Option<f64>,
    pub se_mu: Option<f64>,
    pub rmse_phi1: Option<f64>,
    pub se_phi1: Option<f64>,
    pub n_ok: usize,
    pub n_failed: usize,
}

/// Selection frequencies (percent, d = 0…d_max) for one criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub scenario: String,
    pub n: usize,
    pub epsilon: f64,
    pub estimator: Nu,
    pub criterion: Criterion,
    pub percent: Vec<f64>,
    pub n_ok: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub estimation: Vec<EstimationRow>,
    pub selection: Vec<SelectionRow>,
}

/// Root mean square of `errs` and its delta-method standard error.
pub fn rmse_with_se(errs: &[f64]) -> (f64, f64) {
    let r = errs.len() as f64;
    let sq: Vec<f64> = errs.iter().map(|e| e * e).collect();
    let mse = sq.iter().sum::<f64>() / r;
    let rmse = mse.sqrt();
    if errs.len() < 2 || rmse == 0.0 {
        return (rmse, 0.0);
    }
    let var = sq.iter().map(|s| (s - mse).powi(2)).sum::<f64>() / (r - 1.0);
    (rmse, (var / r).sqrt() / (2.0 * rmse))
}

enum RepOutcome {
    Estimation { mu: Option<f64>, phi1: Option<f64> },
    Selection { aic: usize, bic: usize },
    Failed,
}

fn run_rep(study: &StudyConfig, scenario: &Scenario, nu: Nu, data: &Dataset, truth: &TrueModel) -> RepOutcome {
    let outcome = || -> Result<Option<RepOutcome>> {
        match scenario.task {
            Task::Estimation { mu, phi1 } => {
                let d = usize::from(phi1);
                let f = fit(data, &study.model_config(nu, d))?;
                if !f.converged {
                    return Ok(None);
                }
                let mu_err = if mu { Some(error_norms_params(&f.stages[0].params, truth)?.mu_err) } else { None };
                let phi_err = if phi1 { error_norms_params(&f.params, truth)?.phi1_err } else { None };
                Ok(Some(RepOutcome::Estimation { mu: mu_err, phi1: phi_err }))
            }
            Task::Selection { d_max } => {
                let f = fit(data, &study.model_config(nu, d_max))?;
                if !f.converged {
                    return Ok(None);
                }
                let aic = report_from_fit(&f, data, Criterion::Aic)?.chosen_d;
                let bic = report_from_fit(&f, data, Criterion::Bic)?.chosen_d;
                Ok(Some(RepOutcome::Selection { aic, bic }))
            }
        }
    };
    match outcome() {
        Ok(Some(o)) => o,
        _ => RepOutcome::Failed,
    }
}

/// Runs every scenario × estimator for `reps` replications. Replication r uses
/// seed `seed + r` for data generation, shared by all estimators and scenarios.
pub fn monte_carlo(study: &StudyConfig) -> Result<StudySummary> {
    if study.reps == 0 {
        return Err(Error::InvalidConfig("reps must be at least 1".into()));
    }
    let basis = Arc::new(SplineBasis::uniform(study.order, study.knots, (0.0, 1.0))?);
    let truth = TrueModel::two_component();
    let mut summary = StudySummary::default();
    for scenario in &study.scenarios {
        scenario.design.validate()?;
        scenario.contamination.validate()?;
        // per rep: one outcome per estimator
        let outcomes: Vec<Vec<RepOutcome>> = (0..study.reps)
            .into_par_iter()
            .map(|rep| {
                let seed = study.seed.wrapping_add(rep as u64);
                match simulate_dataset(&truth, scenario.design, scenario.n, &scenario.contamination, Arc::clone(&basis), seed) {
                    Ok((data, _)) => {
                        study.estimators.iter().map(|&nu| run_rep(study, scenario, nu, &data, &truth)).collect()
                    }
                    Err(_) => study.estimators.iter().map(|_| RepOutcome::Failed).collect(),
                }
            })
            .collect();

        for (e, &nu) in study.estimators.iter().enumerate() {
            match scenario.task {
                Task::Estimation { .. } => {
                    let mut mu = Vec::new();
                    let mut phi = Vec::new();
                    let mut failed = 0;
                    for rep in &outcomes {
                        match &rep[e] {
                            RepOutcome::Estimation { mu: m, phi1: p } => {
                                mu.extend(m);
                                phi.extend(p);
                            }
                            _ => failed += 1,
                        }
                    }
                    let stat = |v: &[f64]| if v.is_empty() { (None, None) } else { let (r, s) = rmse_with_se(v); (Some(r), Some(s)) };
                    let (rmse_mu, se_mu) = stat(&mu);
                    let (rmse_phi1, se_phi1) = stat(&phi);
                    summary.estimation.push(EstimationRow {
                        scenario: scenario.name.clone(),
                        estimator: nu,
                        rmse_mu,
                        se_mu,
                        rmse_phi1,
                        se_phi1,
                        n_ok: study.reps - failed,
                        n_failed: failed,
                    });
                }
                Task::Selection { d_max } => {
                    let mut aic = vec![0usize; d_max + 1];
                    let mut bic = vec![0usize; d_max + 1];
                    let mut failed = 0;
                    for rep in &outcomes {
                        match rep[e] {
                            RepOutcome::Selection { aic: a, bic: b } => {
                                aic[a] += 1;
                                bic[b] += 1;
                            }
                            _ => failed += 1,
                        }
                    }
                    let ok = study.reps - failed;
                    for (criterion, counts) in [(Criterion::Aic, aic), (Criterion::Bic, bic)] {
                        let percent = counts
                            .iter()
                            .map(|c| if ok == 0 { f64::NAN } else { 100.0 * *c as f64 / ok as f64 })
                            .collect();
                        summary.selection.push(SelectionRow {
                            scenario: scenario.name.clone(),
                            n: scenario.n,
                            epsilon: scenario.contamination.epsilon,
                            estimator: nu,
                            criterion,
                            percent,
                            n_ok: ok,
                            n_failed: failed,
                        });
                    }
                }
            }
        }
    }
    Ok(summary)
}

/// Display name used in tables: Normal, Cauchy or t_ν.
pub fn estimator_label(nu: Nu) -> String {
    match nu {
        Nu::Infinite => "Normal".into(),
        Nu::Finite(v) if v == 1.0 => "Cauchy".into(),
        Nu::Finite(v) => format!("t{v}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis() -> Arc<SplineBasis> {
        Arc::new(SplineBasis::uniform(4, 5, (0.0, 1.0)).unwrap())
    }

    /// Composite 20-point Gauss-Legendre on 2000 panels.
    fn gl_integral(f: impl Fn(f64) -> f64) -> f64 {
        let (x, w) = crate::basis::gauss_legendre(20);
        let panels = 2000;
        let mut s = 0.0;
        for p in 0..panels {
            let lo = p as f64 / panels as f64;
            let hi = (p + 1) as f64 / panels as f64;
            let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
            for (xi, wi) in x.iter().zip(&w) {
                s += wi * half * f(mid + half * xi);
            }
        }
        s
    }

    #[test]
    fn doppler_properties() {
        let phi3 = doppler_phi3();
        assert_eq!(phi3(0.0), 0.0);
        assert_eq!(phi3(1.0), 0.0);
        let norm = gl_integral(|t| phi3(t).powi(2));
        assert!((norm - 1.0).abs() < 1e-6, "{norm}");
        assert!((doppler_shift(5) - 2f64.powf(-11.0 / 5.0)).abs() < 1e-15);
    }

    #[test]
    fn truth_is_orthonormal() {
        let t = TrueModel::two_component();
        let (p1, p2) = (t.phi(0).clone(), t.phi(1).clone());
        assert!((gl_integral(|x| p1(x).powi(2)) - 1.0).abs() < 1e-6);
        assert!((gl_integral(|x| p2(x).powi(2)) - 1.0).abs() < 1e-6);
        assert!(gl_integral(|x| p1(x) * p2(x)).abs() < 1e-6);
    }

    #[test]
    fn contamination_leaves_clean_draw_untouched() {
        let truth = TrueModel::two_component();
        let design = GridDesign::RandomUniform(20);
        let (clean, _) = simulate_dataset(&truth, design, 30, &Contamination::NONE, basis(), 11).unwrap();
        let zero = Contamination::new(ContaminationKind::ExogenousMean, 0.0, 4.0);
        let (same, rec) = simulate_dataset(&truth, design, 30, &zero, basis(), 11).unwrap();
        assert_eq!(clean.curves(), same.curves());
        assert!(rec.contaminated.is_empty());
        let c = Contamination::new(ContaminationKind::ExogenousMean, 0.2, 4.0);
        let (dirty, rec) = simulate_dataset(&truth, design, 30, &c, basis(), 11).unwrap();
        assert_eq!(rec.contaminated.len(), 6);
        for (i, curve) in dirty.curves().iter().enumerate() {
            assert_eq!(curve.times, clean.curves()[i].times);
            let touched = rec.contaminated.iter().any(|(j, _)| *j == i);
            assert_eq!(curve.values != clean.curves()[i].values, touched);
        }
    }

    #[test]
    fn endogenous_mean_count() {
        let truth = TrueModel::two_component();
        let c = Contamination::new(ContaminationKind::EndogenousMean, 0.10, 4.0);
        let (_, rec) = simulate_dataset(&truth, GridDesign::RandomUniform(20), 100, &c, basis(), 5).unwrap();
        assert_eq!(rec.contaminated.len(), 10);
        assert_eq!(rec.scores.iter().filter(|z| z[0] == 4.0).count(), 10);
    }

    #[test]
    fn pc_contamination_is_symmetric() {
        let truth = TrueModel::two_component();
        for reading in [PcScoreReading::Unscaled, PcScoreReading::ScaledByLambda] {
            let c = Contamination { pc_reading: reading, ..Contamination::new(ContaminationKind::EndogenousPc, 0.2, 4.0) };
            let (_, rec) = simulate_dataset(&truth, GridDesign::FixedUniform(20), 100, &c, basis(), 8).unwrap();
            let plus = rec.contaminated.iter().filter(|(_, s)| *s > 0.0).count();
            let minus = rec.contaminated.iter().filter(|(_, s)| *s < 0.0).count();
            assert_eq!((plus, minus), (10, 10));
            let expected = match reading {
                PcScoreReading::Unscaled => 4.0,
                PcScoreReading::ScaledByLambda => 4.0 * 0.5f64.sqrt(),
            };
            for (i, s) in &rec.contaminated {
                assert!((rec.scores[*i][1] - s * expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn designs() {
        let truth = TrueModel::two_component();
        let (fixed, _) = simulate_dataset(&truth, GridDesign::FixedUniform(20), 5, &Contamination::NONE, basis(), 1).unwrap();
        for c in fixed.curves() {
            assert_eq!(c.len(), 20);
            assert_eq!(c.times[0], 0.0);
            assert_eq!(c.times[19], 1.0);
        }
        let (pois, _) = simulate_dataset(&truth, GridDesign::PoissonUniform(15.0), 400, &Contamination::NONE, basis(), 2).unwrap();
        assert!(pois.curves().iter().all(|c| c.len() >= 2));
        let mean_m = pois.total_obs() as f64 / 400.0;
        assert!((mean_m - 15.0).abs() < 1.0, "{mean_m}");
        assert!(GridDesign::RandomUniform(1).validate().is_err());
        assert!(GridDesign::PoissonUniform(0.0).validate().is_err());
    }

    #[test]
    fn law_of_large_numbers() {
        let truth = TrueModel::two_component();
        let (data, rec) = simulate_dataset(&truth, GridDesign::RandomUniform(20), 2000, &Contamination::NONE, basis(), 21).unwrap();
        let z1: Vec<f64> = rec.scores.iter().map(|z| z[0]).collect();
        let m = z1.iter().sum::<f64>() / 2000.0;
        let var = z1.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 1999.0;
        assert!((0.92..=1.08).contains(&var), "{var}");
        let xbar = data.curves().iter().flat_map(|c| &c.values).sum::<f64>() / data.total_obs() as f64;
        assert!(xbar.abs() <= 0.05, "{xbar}");
    }

    #[test]
    fn symmetric_contamination_keeps_grand_mean() {
        let truth = TrueModel::two_component();
        for kind in [ContaminationKind::EndogenousPc, ContaminationKind::ExogenousPc] {
            let c = Contamination::new(kind, 0.3, 4.0);
            let (data, _) = simulate_dataset(&truth, GridDesign::RandomUniform(20), 2000, &c, basis(), 4).unwrap();
            let means: Vec<f64> =
                data.curves().iter().map(|c| c.values.iter().sum::<f64>() / c.len() as f64).collect();
            let g = means.iter().sum::<f64>() / means.len() as f64;
            let sd = (means.iter().map(|v| (v - g).powi(2)).sum::<f64>() / (means.len() - 1) as f64).sqrt();
            let se = sd / (means.len() as f64).sqrt();
            assert!(g.abs() < 3.0 * se, "{kind:?}: {g} vs se {se}");
        }
    }

    #[test]
    fn error_norm_cases() {
        let truth = TrueModel::two_component();
        let b = basis();
        let grid = b.grid(2001);
        let bm = b.design_matrix(&grid).unwrap();
        // least-squares spline approximations of the truth functions
        let fit_coef = |f: &RealFn| {
            let y = nalgebra::DVector::from_iterator(grid.len(), grid.iter().map(|t| f(*t)));
            (bm.transpose() * &bm).cholesky().unwrap().solve(&(bm.transpose() * y))
        };
        let gram = b.gram_matrix();
        let eta1 = fit_coef(truth.phi(0));
        let eta2 = fit_coef(truth.phi(1));
        let theta = nalgebra::DVector::zeros(9);
        let with = |eta: nalgebra::DVector<f64>| {
            let n2 = eta.dot(&(&gram * &eta));
            let h = nalgebra::DMatrix::from_column_slice(9, 1, (eta / n2.sqrt()).as_slice());
            ModelParams::from_components(theta.clone(), h, nalgebra::DVector::from_element(1, 1.0), 1.0, Nu::CAUCHY, Arc::clone(&b))
        };
        let e = error_norms_params(&with(-eta1.clone()), &truth).unwrap();
        assert!(e.mu_err == 0.0);
        assert!(e.phi1_err.unwrap() < 1e-3);
        let e = error_norms_params(&with(eta2), &truth).unwrap();
        assert!((e.phi1_err.unwrap() - 2f64.sqrt()).abs() < 1e-4 * 10.0);
        let mo = ModelParams::mean_only(theta.clone(), 1.0, Nu::CAUCHY, Arc::clone(&b));
        assert_eq!(error_norms_params(&mo, &truth).unwrap().phi1_err, None);
    }

    #[test]
    fn exact_sign_alignment_on_grid() {
        // an exact negation of the truth on the Simpson grid gives zero error
        let values: Vec<f64> = (0..401).map(|j| (j as f64 / 400.0 * PI).sin()).collect();
        let neg: Vec<f64> = values.iter().map(|v| -v).collect();
        let d1 = l2_distance(&neg, &values, (0.0, 1.0));
        let d2 = l2_distance(&neg, &neg, (0.0, 1.0));
        assert!(d1.min(d2) == 0.0);
        // ‖φ₂ − φ₁‖ = √2 by quadrature
        let truth = TrueModel::two_component();
        let grid: Vec<f64> = (0..401).map(|j| j as f64 / 400.0).collect();
        let a: Vec<f64> = grid.iter().map(|t| truth.phi(0)(*t)).collect();
        let b: Vec<f64> = grid.iter().map(|t| truth.phi(1)(*t)).collect();
        assert!((l2_distance(&a, &b, (0.0, 1.0)) - 2f64.sqrt()).abs() < 1e-4);
    }

    #[test]
    fn rmse_se() {
        let (r, s) = rmse_with_se(&[1.0, 1.0, 1.0]);
        assert_eq!((r, s), (1.0, 0.0));
        let (r, s) = rmse_with_se(&[0.0, 2.0]);
        assert!((r - 2f64.sqrt()).abs() < 1e-15);
        assert!(s > 0.0);
    }

    #[test]
    fn monte_carlo_is_deterministic() {
        let mut study = StudyConfig::table1(4, 3, 4.0);
        study.scenarios.truncate(2);
        study.estimators = vec![Nu::Infinite, Nu::CAUCHY];
        let a = monte_carlo(&study).unwrap();
        let b = monte_carlo(&study).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.estimation.len(), 4);
        assert!(a.estimation.iter().all(|r| r.n_ok + r.n_failed == 4));
        assert!(monte_carlo(&StudyConfig { reps: 0, ..study }).is_err());
    }
}
