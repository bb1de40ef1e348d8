use std::collections::HashSet;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::basis::SplineBasis;
use crate::error::{Error, Result};

/// One subject's irregularly sampled observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl Trajectory {
    pub fn new(id: impl Into<String>, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let id = id.into();
        if times.len() != values.len() {
            return Err(Error::InvalidData(format!(
                "curve {id}: {} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.is_empty() {
            return Err(Error::InvalidData(format!("curve {id} has no observations")));
        }
        if times.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("curve {id} contains non-finite entries")));
        }
        if times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidData(format!("curve {id}: times must be nondecreasing")));
        }
        Ok(Trajectory { id, times, values })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Per-curve quantities that do not depend on the model parameters.
#[derive(Debug, Clone)]
pub(crate) struct CurveCache {
    pub design: DMatrix<f64>,
    pub btb: DMatrix<f64>,
    pub x: DVector<f64>,
}

/// A collection of trajectories sharing one spline basis.
#[derive(Debug, Clone)]
pub struct Dataset {
    basis: Arc<SplineBasis>,
    curves: Vec<Trajectory>,
    cache: Vec<Arc<CurveCache>>,
    gram: Arc<DMatrix<f64>>,
}

impl Dataset {
    pub fn new(basis: impl Into<Arc<SplineBasis>>, curves: Vec<Trajectory>) -> Result<Self> {
        let basis = basis.into();
        if curves.is_empty() {
            return Err(Error::InvalidData("dataset has no curves".into()));
        }
        let mut seen = HashSet::with_capacity(curves.len());
        let mut cache = Vec::with_capacity(curves.len());
        for c in &curves {
            if !seen.insert(c.id.as_str()) {
                return Err(Error::InvalidData(format!("duplicate curve id {}", c.id)));
            }
            let design = basis.design_matrix(&c.times)?;
            let btb = design.tr_mul(&design);
            cache.push(Arc::new(CurveCache { design, btb, x: DVector::from_column_slice(&c.values) }));
        }
        let gram = Arc::new(basis.gram_matrix());
        Ok(Dataset { basis, curves, cache, gram })
    }

    pub fn basis(&self) -> &SplineBasis {
        &self.basis
    }

    pub fn basis_arc(&self) -> Arc<SplineBasis> {
        Arc::clone(&self.basis)
    }

    pub fn curves(&self) -> &[Trajectory] {
        &self.curves
    }

    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    /// Total number of observations `Σ mᵢ`.
    pub fn total_obs(&self) -> usize {
        self.curves.iter().map(Trajectory::len).sum()
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Design matrix `Bᵢ` of curve `i`.
    pub fn design(&self, i: usize) -> &DMatrix<f64> {
        &self.cache[i].design
    }

    pub(crate) fn cache(&self, i: usize) -> &CurveCache {
        &self.cache[i]
    }

    /// Mean of squared observations, `Σ x²ᵢⱼ / Σ mᵢ`.
    pub fn mean_square(&self) -> f64 {
        let ss: f64 = self.curves.iter().flat_map(|c| &c.values).map(|v| v * v).sum();
        ss / self.total_obs() as f64
    }

    /// True when every observation carries the same value.
    pub fn is_constant(&self) -> bool {
        let first = self.curves[0].values[0];
        self.curves.iter().flat_map(|c| &c.values).all(|v| *v == first)
    }

    /// The dataset with curve `i` removed (shares the cached designs).
    pub fn without(&self, i: usize) -> Result<Dataset> {
        if self.curves.len() < 2 {
            return Err(Error::InvalidData("cannot drop the only curve".into()));
        }
        let mut curves = self.curves.clone();
        let mut cache = self.cache.clone();
        curves.remove(i);
        cache.remove(i);
        Ok(Dataset { basis: Arc::clone(&self.basis), curves, cache, gram: Arc::clone(&self.gram) })
    }

    /// Concatenation of `self` and `other` (ids must stay unique).
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.basis != other.basis {
            return Err(Error::BasisMismatch("datasets use different bases".into()));
        }
        let mut curves = self.curves.clone();
        curves.extend(other.curves.iter().cloned());
        Dataset::new(Arc::clone(&self.basis), curves)
    }
}
