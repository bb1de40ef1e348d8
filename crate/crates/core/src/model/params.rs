use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::basis::SplineBasis;
use crate::error::{Error, Result};

/// Degrees of freedom of the t working model. `Infinite` is the Normal model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Nu {
    Finite(f64),
    Infinite,
}

impl Nu {
    pub const CAUCHY: Nu = Nu::Finite(1.0);

    pub fn new(nu: f64) -> Result<Nu> {
        if nu == f64::INFINITY {
            Ok(Nu::Infinite)
        } else if nu.is_finite() && nu > 0.0 {
            Ok(Nu::Finite(nu))
        } else {
            Err(Error::InvalidConfig(format!("nu must be positive or inf, got {nu}")))
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Nu::Infinite)
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Nu::Finite(v) => v,
            Nu::Infinite => f64::INFINITY,
        }
    }
}

impl fmt::Display for Nu {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Nu::Finite(v) => write!(f, "{v}"),
            Nu::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for Nu {
    type Err = Error;

    fn from_str(s: &str) -> Result<Nu> {
        let t = s.trim().to_ascii_lowercase();
        if matches!(t.as_str(), "inf" | "infinity" | "normal") {
            return Ok(Nu::Infinite);
        }
        let v: f64 = t
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("cannot parse nu from {s:?}")))?;
        Nu::new(v)
    }
}

impl Serialize for Nu {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Nu::Finite(v) => s.serialize_f64(*v),
            Nu::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Nu {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Nu, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        let nu = match Raw::deserialize(d)? {
            Raw::Num(v) => Nu::new(v),
            Raw::Str(s) => s.parse(),
        };
        nu.map_err(serde::de::Error::custom)
    }
}

/// Settings of one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub nu: Nu,
    /// Number of principal components.
    pub d: usize,
    /// Roughness penalty weight on the mean.
    pub mean_penalty: f64,
    /// Roughness penalty weights on the component loadings; missing entries are 0.
    pub component_penalties: Vec<f64>,
    pub max_iter: usize,
    /// Relative log-likelihood change that stops the EM loop.
    pub tol: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            nu: Nu::CAUCHY,
            d: 0,
            mean_penalty: 0.0,
            component_penalties: Vec::new(),
            max_iter: 500,
            tol: 1e-8,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn new(nu: Nu, d: usize) -> Self {
        ModelConfig { nu, d, ..Default::default() }
    }

    pub fn component_penalty(&self, k: usize) -> f64 {
        self.component_penalties.get(k).copied().unwrap_or(0.0)
    }

    pub fn is_penalized(&self) -> bool {
        self.mean_penalty > 0.0 || self.component_penalties.iter().any(|a| *a > 0.0)
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.d > p {
            return Err(Error::InvalidConfig(format!("d = {} exceeds basis dimension {p}", self.d)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig("tol must be positive".into()));
        }
        if self.mean_penalty < 0.0 || self.component_penalties.iter().any(|a| *a < 0.0 || !a.is_finite())
        {
            return Err(Error::InvalidConfig("penalties must be nonnegative".into()));
        }
        if let Nu::Finite(v) = self.nu {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("nu must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Parameters of the reduced-rank model `xᵢ = Bᵢθ + BᵢHΛ^{1/2}zᵢ + σεᵢ`.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub theta: DVector<f64>,
    /// Loadings `Ξ = HΛ^{1/2}` (p × d).
    pub xi: DMatrix<f64>,
    /// J-orthonormal component coefficients (p × d).
    pub h: DMatrix<f64>,
    /// Component variances, descending.
    pub lambda: DVector<f64>,
    pub sigma2: f64,
    pub nu: Nu,
    pub basis: Arc<SplineBasis>,
}

impl ModelParams {
    /// Mean-only parameters.
    pub fn mean_only(theta: DVector<f64>, sigma2: f64, nu: Nu, basis: Arc<SplineBasis>) -> Self {
        let p = theta.len();
        ModelParams {
            theta,
            xi: DMatrix::zeros(p, 0),
            h: DMatrix::zeros(p, 0),
            lambda: DVector::zeros(0),
            sigma2,
            nu,
            basis,
        }
    }

    /// Builds parameters from raw loadings, orthonormalizing them in the J metric.
    pub fn from_loadings(
        theta: DVector<f64>,
        xi: &DMatrix<f64>,
        sigma2: f64,
        nu: Nu,
        basis: Arc<SplineBasis>,
        gram: &DMatrix<f64>,
    ) -> Result<Self> {
        let (h, lambda) = orthonormalize(xi, gram)?;
        Ok(Self::from_components(theta, h, lambda, sigma2, nu, basis))
    }

    /// Builds parameters from `(H, Λ)`; `Ξ` is recomputed as `HΛ^{1/2}`.
    pub fn from_components(
        theta: DVector<f64>,
        h: DMatrix<f64>,
        lambda: DVector<f64>,
        sigma2: f64,
        nu: Nu,
        basis: Arc<SplineBasis>,
    ) -> Self {
        let mut xi = h.clone();
        for (k, mut col) in xi.column_iter_mut().enumerate() {
            col *= lambda[k].sqrt();
        }
        ModelParams { theta, xi, h, lambda, sigma2, nu, basis }
    }

    pub fn d(&self) -> usize {
        self.xi.ncols()
    }

    pub fn p(&self) -> usize {
        self.theta.len()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.basis.dim();
        if self.theta.len() != p || self.xi.nrows() != p || self.h.nrows() != p {
            return Err(Error::DimensionMismatch { expected: p, got: self.theta.len() });
        }
        if self.h.ncols() != self.xi.ncols() || self.lambda.len() != self.xi.ncols() {
            return Err(Error::InvalidParams("H, Λ and Ξ disagree on d".into()));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::InvalidParams(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        if self.lambda.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::InvalidParams("component variances must be positive".into()));
        }
        Ok(())
    }

    /// Mean function `μ(t) = θᵀb(t)` on `times`.
    pub fn mean_at(&self, times: &[f64]) -> Result<Vec<f64>> {
        self.basis.eval_function(&self.theta, times)
    }

    /// Component `φₖ(t) = ηₖᵀb(t)` on `times`.
    pub fn component_at(&self, k: usize, times: &[f64]) -> Result<Vec<f64>> {
        self.basis.eval_function(&self.h.column(k).into_owned(), times)
    }

    /// Penalty `α θᵀPθ + Σ αₖ ξₖᵀPξₖ` subtracted from the log-likelihood.
    pub fn roughness(&self, config: &ModelConfig, penalty: Option<&DMatrix<f64>>) -> f64 {
        let Some(pm) = penalty else { return 0.0 };
        let mut r = config.mean_penalty * self.theta.dot(&(pm * &self.theta));
        for k in 0..self.d() {
            let a = config.component_penalty(k);
            if a > 0.0 {
                let col = self.xi.column(k);
                r += a * col.dot(&(pm * col));
            }
        }
        r
    }
}

/// Splits loadings `Ξ` into J-orthonormal `H` and descending `Λ` through the
/// spectral decomposition `ΞᵀJΞ = UDUᵀ`: `Λ = D`, `H = ΞUD^{-1/2}`.
///
/// Column signs are fixed so that `1ᵀJηₖ ≥ 0` (the integral of `φₖ` is
/// nonnegative); near-zero integrals fall back to a nonnegative first coefficient.
pub fn orthonormalize(xi: &DMatrix<f64>, gram: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let (p, d) = xi.shape();
    if gram.shape() != (p, p) {
        return Err(Error::DimensionMismatch { expected: p, got: gram.nrows() });
    }
    if d == 0 {
        return Ok((DMatrix::zeros(p, 0), DVector::zeros(0)));
    }
    let mut inner = xi.tr_mul(&(gram * xi));
    inner = (&inner + inner.transpose()) * 0.5;
    let eig = inner.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let max = eig.eigenvalues[order[0]];
    let min = eig.eigenvalues[order[d - 1]];
    if !(max > 0.0) || !(min >= 1e-12 * max) {
        return Err(Error::RankDeficient { ratio: if max > 0.0 { min / max } else { 0.0 } });
    }
    let ones = DVector::from_element(p, 1.0);
    let j_ones = gram * &ones;
    let mut h = DMatrix::zeros(p, d);
    let mut lambda = DVector::zeros(d);
    for (k, &idx) in order.iter().enumerate() {
        let val = eig.eigenvalues[idx];
        let u = eig.eigenvectors.column(idx);
        let mut col = (xi * u) / val.sqrt();
        let integral = j_ones.dot(&col);
        let flip = if integral.abs() > 1e-10 {
            integral < 0.0
        } else {
            col.iter().find(|v| **v != 0.0).is_some_and(|v| *v < 0.0)
        };
        if flip {
            col.neg_mut();
        }
        h.set_column(k, &col);
        lambda[k] = val;
    }
    Ok((h, lambda))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frob(a: &DMatrix<f64>) -> f64 {
        a.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    #[test]
    fn nu_parsing_and_serde() {
        assert_eq!("inf".parse::<Nu>().unwrap(), Nu::Infinite);
        assert_eq!("5".parse::<Nu>().unwrap(), Nu::Finite(5.0));
        assert!("0".parse::<Nu>().is_err());
        assert!("-2".parse::<Nu>().is_err());
        assert_eq!(serde_json::to_string(&Nu::Infinite).unwrap(), "\"inf\"");
        assert_eq!(serde_json::from_str::<Nu>("1.0").unwrap(), Nu::Finite(1.0));
        assert_eq!(serde_json::from_str::<Nu>("\"inf\"").unwrap(), Nu::Infinite);
    }

    #[test]
    fn orthonormalize_identity_metric() {
        let j = DMatrix::identity(3, 3);
        let xi = DMatrix::from_column_slice(3, 2, &[0.0, 1.0, 0.0, 2.0, 0.0, 0.0]);
        let (h, l) = orthonormalize(&xi, &j).unwrap();
        assert!((l[0] - 4.0).abs() < 1e-14 && (l[1] - 1.0).abs() < 1e-14);
        assert!((h[(0, 0)].abs() - 1.0).abs() < 1e-14);
        assert!((h[(1, 1)].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn orthonormalize_single_column() {
        let basis = SplineBasis::uniform(4, 5, (0.0, 1.0)).unwrap();
        let j = basis.gram_matrix();
        let xi = DMatrix::from_fn(9, 1, |r, _| (r as f64 * 0.7).sin() + 0.2);
        let (h, l) = orthonormalize(&xi, &j).unwrap();
        let lam = (xi.transpose() * &j * &xi)[(0, 0)];
        assert!((l[0] - lam).abs() < 1e-12 * lam);
        let expected = &xi / lam.sqrt();
        let sign = if (j.clone() * DVector::from_element(9, 1.0)).dot(&expected.column(0)) < 0.0 { -1.0 } else { 1.0 };
        assert!(frob(&(&h - expected * sign)) < 1e-12);
    }

    #[test]
    fn orthonormalize_reconstructs() {
        let basis = SplineBasis::uniform(4, 5, (0.0, 1.0)).unwrap();
        let j = basis.gram_matrix();
        let mut seed = 17u64;
        let mut rnd = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((seed >> 11) as f64) / ((1u64 << 53) as f64) - 0.5
        };
        for d in 1..=4 {
            let xi = DMatrix::from_fn(9, d, |_, _| rnd());
            let (h, l) = orthonormalize(&xi, &j).unwrap();
            let recon = &h * DMatrix::from_diagonal(&l) * h.transpose();
            let target = &xi * xi.transpose();
            assert!(frob(&(recon - &target)) < 1e-10 * frob(&target).max(1.0));
            let ortho = h.transpose() * &j * &h;
            assert!(frob(&(ortho - DMatrix::identity(d, d))) < 1e-10);
            for k in 1..d {
                assert!(l[k - 1] > l[k]);
            }
            let ones = DVector::from_element(9, 1.0);
            for k in 0..d {
                assert!((&j * &ones).dot(&h.column(k)) >= -1e-10);
            }
        }
    }

    #[test]
    fn orthonormalize_rank_deficient() {
        let j = DMatrix::identity(3, 3);
        let xi = DMatrix::from_column_slice(3, 2, &[1.0, 1.0, 0.0, 2.0, 2.0, 0.0]);
        assert!(matches!(orthonormalize(&xi, &j), Err(Error::RankDeficient { .. })));
    }
}
