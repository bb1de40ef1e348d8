//! Clamped B-spline bases on a closed interval.
//!
//! A [`SplineBasis`] of order `k` (degree `k - 1`) with `q` interior knots spans
//! `q + k` functions. The knot vector repeats each endpoint `k` times, so the
//! first and last basis functions interpolate the endpoints and the basis is a
//! partition of unity on the whole closed interval (the right endpoint uses the
//! left-limit of the last knot span).
//!
//! The Gram matrix `J` and the second-derivative roughness matrix `P` are built
//! by Gauss-Legendre quadrature on each knot span with `k` nodes, which is exact
//! for the piecewise polynomial integrands involved.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack for times that fall a hair outside the domain through rounding.
const DOMAIN_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BasisSpec", into = "BasisSpec")]
pub struct SplineBasis {
    order: usize,
    interior_knots: Vec<f64>,
    domain: (f64, f64),
    knots: Vec<f64>,
}

/// Serialized form: `{order, interior_knots, domain: [a, b]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisSpec {
    pub order: usize,
    pub interior_knots: Vec<f64>,
    pub domain: [f64; 2],
}

impl TryFrom<BasisSpec> for SplineBasis {
    type Error = Error;

    fn try_from(spec: BasisSpec) -> Result<Self> {
        SplineBasis::with_knots(spec.order, spec.interior_knots, (spec.domain[0], spec.domain[1]))
    }
}

impl From<SplineBasis> for BasisSpec {
    fn from(b: SplineBasis) -> Self {
        BasisSpec {
            order: b.order,
            interior_knots: b.interior_knots,
            domain: [b.domain.0, b.domain.1],
        }
    }
}

impl SplineBasis {
    /// Equidistant interior knots: `num_interior_knots` points splitting `[a, b]`
    /// into `num_interior_knots + 1` equal spans.
    pub fn uniform(order: usize, num_interior_knots: usize, domain: (f64, f64)) -> Result<Self> {
        let (a, b) = domain;
        check_domain(a, b)?;
        let step = (b - a) / (num_interior_knots + 1) as f64;
        let interior = (1..=num_interior_knots).map(|i| a + step * i as f64).collect();
        Self::with_knots(order, interior, domain)
    }

    pub fn with_knots(order: usize, interior_knots: Vec<f64>, domain: (f64, f64)) -> Result<Self> {
        let (a, b) = domain;
        check_domain(a, b)?;
        if order == 0 {
            return Err(Error::UnsupportedOrder { order, needed: 1 });
        }
        let mut prev = a;
        for &k in &interior_knots {
            if !k.is_finite() || k <= prev || k >= b {
                return Err(Error::InvalidKnots(format!(
                    "interior knots must be strictly increasing inside ({a}, {b}); got {k}"
                )));
            }
            prev = k;
        }
        let mut knots = Vec::with_capacity(interior_knots.len() + 2 * order);
        knots.extend(std::iter::repeat_n(a, order));
        knots.extend_from_slice(&interior_knots);
        knots.extend(std::iter::repeat_n(b, order));
        Ok(SplineBasis { order, interior_knots, domain, knots })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn degree(&self) -> usize {
        self.order - 1
    }

    /// Number of basis functions `p`.
    pub fn dim(&self) -> usize {
        self.interior_knots.len() + self.order
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior_knots
    }

    /// Full clamped knot vector.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Snaps `t` into the domain if it is within rounding slack, otherwise errors.
    pub fn check_time(&self, t: f64) -> Result<f64> {
        let (a, b) = self.domain;
        let slack = DOMAIN_SLACK * (b - a);
        if !t.is_finite() || t < a - slack || t > b + slack {
            return Err(Error::OutOfRange { t, a, b });
        }
        Ok(t.clamp(a, b))
    }

    /// Index `i` of the knot span with `knots[i] <= t < knots[i + 1]`; the right
    /// endpoint maps to the last non-empty span.
    fn find_span(&self, t: f64) -> usize {
        let p = self.dim();
        let deg = self.degree();
        if t >= self.knots[p] {
            return p - 1;
        }
        // knots[deg..=p] is nondecreasing; find the last index with knots[i] <= t.
        let slice = &self.knots[deg..=p];
        let pos = slice.partition_point(|&k| k <= t);
        (deg + pos - 1).min(p - 1)
    }

    /// Values and derivatives up to `nderiv` of the `order` basis functions that
    /// are nonzero at `t`. Returns `(first_index, ders)` where `ders[k][j]` is the
    /// k-th derivative of basis `first_index + j`.
    fn local_derivs(&self, t: f64, nderiv: usize) -> (usize, Vec<Vec<f64>>) {
        let deg = self.degree();
        let span = self.find_span(t);
        let u = &self.knots;
        let mut ndu = vec![vec![0.0; deg + 1]; deg + 1];
        let mut left = vec![0.0; deg + 1];
        let mut right = vec![0.0; deg + 1];
        ndu[0][0] = 1.0;
        for j in 1..=deg {
            left[j] = t - u[span + 1 - j];
            right[j] = u[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }

        let mut ders = vec![vec![0.0; deg + 1]; nderiv + 1];
        for j in 0..=deg {
            ders[0][j] = ndu[j][deg];
        }
        let mut a = vec![vec![0.0; deg + 1]; 2];
        for r in 0..=deg {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=nderiv.min(deg) {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = deg - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if r <= pk + 1 { k - 1 } else { deg - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = deg as f64;
        for k in 1..=nderiv.min(deg) {
            for v in ders[k].iter_mut() {
                *v *= factor;
            }
            factor *= (deg - k) as f64;
        }
        (span - deg, ders)
    }

    /// All `p` basis values at `t`.
    pub fn eval_at(&self, t: f64) -> Result<DVector<f64>> {
        let t = self.check_time(t)?;
        let (first, ders) = self.local_derivs(t, 0);
        let mut out = DVector::zeros(self.dim());
        for (j, v) in ders[0].iter().enumerate() {
            out[first + j] = *v;
        }
        Ok(out)
    }

    /// `B = [b_k(t_j)]`, one row per time point.
    pub fn design_matrix(&self, times: &[f64]) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(times.len(), self.dim());
        for (row, &t) in times.iter().enumerate() {
            let t = self.check_time(t)?;
            let (first, ders) = self.local_derivs(t, 0);
            for (j, v) in ders[0].iter().enumerate() {
                m[(row, first + j)] = *v;
            }
        }
        Ok(m)
    }

    /// Gram matrix `J = [∫ b_i b_j]`.
    pub fn gram_matrix(&self) -> DMatrix<f64> {
        self.integrate_products(0)
    }

    /// Roughness matrix `P = [∫ b_i'' b_j'']`.
    pub fn penalty_matrix(&self) -> Result<DMatrix<f64>> {
        if self.order < 3 {
            return Err(Error::UnsupportedOrder { order: self.order, needed: 3 });
        }
        Ok(self.integrate_products(2))
    }

    fn integrate_products(&self, deriv: usize) -> DMatrix<f64> {
        let p = self.dim();
        let deg = self.degree();
        let (nodes, weights) = gauss_legendre(self.order);
        let mut out = DMatrix::zeros(p, p);
        for span in deg..p {
            let (lo, hi) = (self.knots[span], self.knots[span + 1]);
            if hi <= lo {
                continue;
            }
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            for (x, w) in nodes.iter().zip(&weights) {
                let t = mid + half * x;
                let (first, ders) = self.local_derivs(t, deriv);
                let vals = &ders[deriv];
                for i in 0..=deg {
                    for j in 0..=deg {
                        out[(first + i, first + j)] += w * half * vals[i] * vals[j];
                    }
                }
            }
        }
        // exact symmetry
        for i in 0..p {
            for j in (i + 1)..p {
                let v = 0.5 * (out[(i, j)] + out[(j, i)]);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        out
    }

    /// `f(t) = coefᵀ b(t)` at each time.
    pub fn eval_function(&self, coef: &DVector<f64>, times: &[f64]) -> Result<Vec<f64>> {
        if coef.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: coef.len() });
        }
        times
            .iter()
            .map(|&t| {
                let t = self.check_time(t)?;
                let (first, ders) = self.local_derivs(t, 0);
                Ok(ders[0].iter().enumerate().map(|(j, v)| v * coef[first + j]).sum())
            })
            .collect()
    }

    /// Coefficients of the constant function 1 (all ones by partition of unity).
    pub fn constant_coefficients(&self) -> DVector<f64> {
        DVector::from_element(self.dim(), 1.0)
    }

    /// Equispaced evaluation grid of `n` points over the domain.
    pub fn grid(&self, n: usize) -> Vec<f64> {
        let (a, b) = self.domain;
        match n {
            0 => Vec::new(),
            1 => vec![0.5 * (a + b)],
            _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
        }
    }
}

fn check_domain(a: f64, b: f64) -> Result<()> {
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(Error::InvalidDomain { a, b });
    }
    Ok(())
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let pk = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = pk;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}
