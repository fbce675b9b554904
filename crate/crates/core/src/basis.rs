//! Spline sufficient statistics for the response.
//!
//! The raw basis is a cubic spline family whose third derivative vanishes
//! outside the knot span, so the roughness penalty
//! `Ω_jl = ∫ z_j'''(y) z_l'''(y) dy` is an exact finite sum over the knot
//! intervals. Its null space is exactly the linear and quadratic functions.
//!
//! [`diagonalize`] rotates the raw basis by the eigenvectors of `Ω` so the
//! penalty becomes a weighted ridge `Σ ω_j β_j²`, ordered by increasing `ω`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative cutoff below which eigenvalues of `Ω` are treated as exact zeros.
pub const EIGEN_CLAMP: f64 = 1e-10;

// 4-point Gauss-Legendre nodes/weights on [-1, 1]; exact for degree <= 7.
const GL_NODES: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const GL_WEIGHTS: [f64; 4] = [
    0.347_854_845_137_453_86,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_86,
];

/// Cubic spline basis on knots `ξ_1 < … < ξ_K` with quadratic tails.
///
/// Functions: `y - c`, `(y - c)²` and, for `j < K`,
/// `d_j(y) = ((y - ξ_j)³₊ - (y - ξ_K)³₊) / (ξ_K - ξ_j)`, giving `k = K + 1`
/// functions. `c` is the midpoint of the normalization domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSplineBasis {
    knots: Vec<f64>,
    domain: (f64, f64),
}

impl RawSplineBasis {
    /// Basis on explicit knots with an explicit normalization domain.
    pub fn new(knots: Vec<f64>, domain: (f64, f64)) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::invalid("at least one knot is required"));
        }
        if knots.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("knots must be finite"));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("knots must be strictly increasing"));
        }
        let (lo, hi) = domain;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::invalid(format!("invalid domain [{lo}, {hi}]")));
        }
        Ok(Self { knots, domain })
    }

    /// `k - 1` knots equally spaced over `[lo, hi]` (one midpoint knot when `k = 2`).
    pub fn equally_spaced(lo: f64, hi: f64, k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid(format!("basis dimension k = {k} < 2")));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::invalid(format!("invalid range [{lo}, {hi}]")));
        }
        let n_knots = k - 1;
        let knots = if n_knots == 1 {
            vec![0.5 * (lo + hi)]
        } else {
            (0..n_knots)
                .map(|i| lo + (hi - lo) * i as f64 / (n_knots - 1) as f64)
                .collect()
        };
        Self::new(knots, (lo, hi))
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn dim(&self) -> usize {
        self.knots.len() + 1
    }

    fn center(&self) -> f64 {
        0.5 * (self.domain.0 + self.domain.1)
    }

    pub fn eval_into(&self, y: f64, out: &mut [f64]) {
        let c = self.center();
        let k_last = *self.knots.last().unwrap();
        out[0] = y - c;
        out[1] = (y - c) * (y - c);
        let tail = cube_plus(y - k_last);
        for (j, &xi) in self.knots[..self.knots.len() - 1].iter().enumerate() {
            out[j + 2] = (cube_plus(y - xi) - tail) / (k_last - xi);
        }
    }

    pub fn eval(&self, y: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(y, &mut out);
        out
    }

    /// Third derivatives at `y` (piecewise constant; right-continuous at knots).
    pub fn third_derivative(&self, y: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        let k_last = *self.knots.last().unwrap();
        if y >= k_last {
            return out;
        }
        for (j, &xi) in self.knots[..self.knots.len() - 1].iter().enumerate() {
            if y >= xi {
                out[j + 2] = 6.0 / (k_last - xi);
            }
        }
        out
    }

    /// Exact Gram matrix `∫ z_i z_j dy` over the normalization domain.
    pub fn gram(&self) -> DMatrix<f64> {
        let k = self.dim();
        let (lo, hi) = self.domain;
        let mut breaks = vec![lo];
        breaks.extend(self.knots.iter().copied().filter(|&t| t > lo && t < hi));
        breaks.push(hi);
        let mut g = DMatrix::zeros(k, k);
        let mut z = vec![0.0; k];
        for w in breaks.windows(2) {
            let (a, b) = (w[0], w[1]);
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (node, weight) in GL_NODES.iter().zip(GL_WEIGHTS) {
                self.eval_into(mid + half * node, &mut z);
                for i in 0..k {
                    for j in 0..=i {
                        g[(i, j)] += weight * half * z[i] * z[j];
                    }
                }
            }
        }
        for i in 0..k {
            for j in 0..i {
                g[(j, i)] = g[(i, j)];
            }
        }
        g
    }
}

fn cube_plus(v: f64) -> f64 {
    if v > 0.0 {
        v * v * v
    } else {
        0.0
    }
}

/// Convenience wrapper: `knots.len()` must equal `k - 1` and the knot span is
/// used as the normalization domain.
pub fn build_raw_basis(knots: &[f64], k: usize) -> Result<RawSplineBasis> {
    if k < 2 {
        return Err(Error::invalid(format!("basis dimension k = {k} < 2")));
    }
    if knots.len() + 1 != k {
        return Err(Error::invalid(format!(
            "{} knots give {} basis functions, not {k}",
            knots.len(),
            knots.len() + 1
        )));
    }
    if knots.len() < 2 {
        return Err(Error::invalid(
            "knot span is empty; use RawSplineBasis::new with an explicit domain",
        ));
    }
    RawSplineBasis::new(knots.to_vec(), (knots[0], knots[knots.len() - 1]))
}

/// Roughness penalty matrix of a raw basis.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix {
    pub omega: DMatrix<f64>,
}

/// Exact `Ω_jl = ∫ z_j''' z_l''' dy`: third derivatives are constant on each
/// knot interval and zero outside the span.
pub fn compute_penalty_matrix(basis: &RawSplineBasis) -> PenaltyMatrix {
    let k = basis.dim();
    let mut omega = DMatrix::zeros(k, k);
    for w in basis.knots.windows(2) {
        let h = w[1] - w[0];
        let d3 = basis.third_derivative(0.5 * (w[0] + w[1]));
        for i in 0..k {
            for j in 0..k {
                omega[(i, j)] += h * d3[i] * d3[j];
            }
        }
    }
    PenaltyMatrix { omega }
}

/// Basis after the penalty-diagonalizing rotation and L2 normalization.
///
/// `z̃_j(y) = s_j (Uᵀ z(y))_j`. The ridge weights are `ω_j = s_j² d_j` where
/// `d_j` are the eigenvalues of `Ω` (ascending, first two exactly zero for
/// `k ≥ 3`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    raw: RawSplineBasis,
    /// `U`, row-major `k × k`, columns are eigenvectors.
    transform: Vec<f64>,
    scales: Vec<f64>,
    eigenvalues: Vec<f64>,
    penalties: Vec<f64>,
}

impl SplineBasis {
    /// Full pipeline: equally spaced knots on `[lo, hi]`, penalty, rotation.
    pub fn equally_spaced(lo: f64, hi: f64, k: usize) -> Result<Self> {
        let raw = RawSplineBasis::equally_spaced(lo, hi, k)?;
        let omega = compute_penalty_matrix(&raw);
        diagonalize(&raw, &omega)
    }

    pub fn dim(&self) -> usize {
        self.scales.len()
    }

    pub fn raw(&self) -> &RawSplineBasis {
        &self.raw
    }

    pub fn penalties(&self) -> &[f64] {
        &self.penalties
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn transform(&self) -> DMatrix<f64> {
        let k = self.dim();
        DMatrix::from_row_slice(k, k, &self.transform)
    }

    pub fn eval(&self, y: f64) -> Vec<f64> {
        let k = self.dim();
        let raw = self.raw.eval(y);
        (0..k)
            .map(|j| {
                let col: f64 = (0..k).map(|i| self.transform[i * k + j] * raw[i]).sum();
                self.scales[j] * col
            })
            .collect()
    }

    /// Rows `z̃(y_b)` for every point.
    pub fn design(&self, ys: &[f64]) -> Vec<Vec<f64>> {
        ys.iter().map(|&y| self.eval(y)).collect()
    }

    /// Map transformed coefficients back to raw coefficients: `β_raw = U S β̃`.
    pub fn to_raw_coefficients(&self, beta: &[f64]) -> Vec<f64> {
        let k = self.dim();
        (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| self.transform[i * k + j] * self.scales[j] * beta[j])
                    .sum()
            })
            .collect()
    }

    /// Ridge penalty `Σ ω_j β_j²`.
    pub fn penalty(&self, beta: &[f64]) -> f64 {
        self.penalties.iter().zip(beta).map(|(w, b)| w * b * b).sum()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let k = self.dim();
        if k < 2
            || self.raw.dim() != k
            || self.transform.len() != k * k
            || self.eigenvalues.len() != k
            || self.penalties.len() != k
        {
            return Err(Error::invalid("inconsistent basis dimensions"));
        }
        if self
            .transform
            .iter()
            .chain(&self.scales)
            .chain(&self.penalties)
            .any(|v| !v.is_finite())
            || self.penalties.iter().any(|&w| w < 0.0)
        {
            return Err(Error::invalid("basis contains non-finite or negative entries"));
        }
        // re-run constructor checks on the raw part
        RawSplineBasis::new(self.raw.knots.clone(), self.raw.domain)?;
        Ok(())
    }
}

/// Eigen-decompose `Ω`, order by ascending eigenvalue, clamp tiny eigenvalues
/// to zero and normalize each rotated function to unit L2 norm on the domain.
///
/// Inside the null space the eigenvectors are replaced by the Gram-Schmidt
/// projection of the raw coordinate axes, so the unpenalized directions are
/// the raw linear and quadratic functions rather than an arbitrary rotation.
pub fn diagonalize(raw: &RawSplineBasis, omega: &PenaltyMatrix) -> Result<SplineBasis> {
    let k = raw.dim();
    let om = &omega.omega;
    if om.nrows() != k || om.ncols() != k {
        return Err(Error::invalid(format!(
            "penalty is {}x{}, basis has {k} functions",
            om.nrows(),
            om.ncols()
        )));
    }
    let scale = om.amax();
    for i in 0..k {
        for j in 0..i {
            if (om[(i, j)] - om[(j, i)]).abs() > 1e-12 * scale.max(f64::MIN_POSITIVE) {
                return Err(Error::NumericFailure("penalty matrix is not symmetric".into()));
            }
        }
    }
    if om.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericFailure("penalty matrix has non-finite entries".into()));
    }

    let (u, eig) = if scale == 0.0 {
        (DMatrix::identity(k, k), vec![0.0; k])
    } else {
        let se = SymmetricEigen::new(om.clone());
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| se.eigenvalues[a].total_cmp(&se.eigenvalues[b]).then(a.cmp(&b)));
        let max_eig = se.eigenvalues.max();
        let mut eig = Vec::with_capacity(k);
        let mut u = DMatrix::zeros(k, k);
        for (col, &idx) in order.iter().enumerate() {
            let ev = se.eigenvalues[idx];
            eig.push(if ev < EIGEN_CLAMP * max_eig { 0.0 } else { ev });
            let mut v = se.eigenvectors.column(idx).into_owned();
            let lead = v.iamax();
            if v[lead] < 0.0 {
                v = -v;
            }
            u.set_column(col, &v);
        }
        canonicalize_null_space(&mut u, &eig);
        (u, eig)
    };

    let gram = raw.gram();
    let mut scales = Vec::with_capacity(k);
    for j in 0..k {
        let col = u.column(j);
        let norm2 = (col.transpose() * &gram * col)[(0, 0)];
        if !(norm2 > 0.0 && norm2.is_finite()) {
            return Err(Error::NumericFailure(format!(
                "transformed basis function {j} has zero norm"
            )));
        }
        scales.push(1.0 / norm2.sqrt());
    }
    let penalties = eig.iter().zip(&scales).map(|(d, s)| d * s * s).collect();
    let mut transform = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            transform.push(u[(i, j)]);
        }
    }
    Ok(SplineBasis {
        raw: raw.clone(),
        transform,
        scales,
        eigenvalues: eig,
        penalties,
    })
}

fn canonicalize_null_space(u: &mut DMatrix<f64>, eig: &[f64]) {
    let m = eig.iter().take_while(|&&e| e == 0.0).count();
    if m == 0 {
        return;
    }
    let k = u.nrows();
    let null = u.columns(0, m).into_owned();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(m);
    for axis in 0..k {
        if basis.len() == m {
            break;
        }
        // projection of e_axis onto the null space
        let mut v: DVector<f64> = &null * null.row(axis).transpose();
        for b in &basis {
            let c = b.dot(&v);
            v -= b * c;
        }
        let norm = v.norm();
        if norm > 1e-8 {
            basis.push(v / norm);
        }
    }
    if basis.len() == m {
        for (j, b) in basis.iter().enumerate() {
            u.set_column(j, b);
        }
    }
}
