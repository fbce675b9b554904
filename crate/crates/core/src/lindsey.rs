//! Lindsey's method: bin the responses and fit a ridge-penalized Poisson
//! regression of bin counts on the spline basis.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::SplineBasis;
use crate::error::{Error, Result};

const NEWTON_MAX_ITER: usize = 100;
const NEWTON_MAX_HALVINGS: usize = 30;
const NEWTON_GRAD_TOL: f64 = 1e-8;
const NEWTON_STEP_TOL: f64 = 1e-10;
const DF_TOL: f64 = 0.01;

/// `B` equal bins over `[lo, hi]`. Bins are half-open `[e_b, e_{b+1})`, the
/// last one closed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinGrid {
    lo: f64,
    hi: f64,
    bins: usize,
}

impl BinGrid {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::invalid(format!("invalid bin range [{lo}, {hi}]")));
        }
        if bins < 2 {
            return Err(Error::invalid(format!("bin count {bins} < 2")));
        }
        Ok(Self { lo, hi, bins })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins as f64
    }

    pub fn midpoint(&self, b: usize) -> f64 {
        self.lo + (b as f64 + 0.5) * self.width()
    }

    pub fn midpoints(&self) -> Vec<f64> {
        (0..self.bins).map(|b| self.midpoint(b)).collect()
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.bins)
            .map(|b| {
                if b == self.bins {
                    self.hi
                } else {
                    self.lo + b as f64 * self.width()
                }
            })
            .collect()
    }

    pub fn contains(&self, y: f64) -> bool {
        y >= self.lo && y <= self.hi
    }

    /// Zero-based bin of `y`, clamping values outside the range to the end bins.
    pub fn clamped_index(&self, y: f64) -> usize {
        let t = ((y - self.lo) / self.width()).floor();
        if t.is_nan() || t < 0.0 {
            0
        } else {
            (t as usize).min(self.bins - 1)
        }
    }

    pub fn index(&self, y: f64) -> Result<usize> {
        if !self.contains(y) {
            return Err(Error::OutOfRange {
                value: y,
                lo: self.lo,
                hi: self.hi,
            });
        }
        Ok(self.clamped_index(y))
    }
}

/// Baseline density multiplied by the exponential tilt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CarryingDensity {
    Uniform,
    Gaussian { mean: f64, sd: f64 },
}

impl CarryingDensity {
    pub fn gaussian(mean: f64, sd: f64) -> Result<Self> {
        if !(mean.is_finite() && sd.is_finite() && sd > 0.0) {
            return Err(Error::invalid(format!(
                "gaussian carrying density needs finite mean and sd > 0 (got {mean}, {sd})"
            )));
        }
        Ok(Self::Gaussian { mean, sd })
    }

    /// Gaussian matched to the sample mean and standard deviation.
    pub fn matched(y: &[f64]) -> Result<Self> {
        if y.len() < 2 {
            return Err(Error::invalid("need at least two responses"));
        }
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Self::gaussian(mean, var.sqrt())
    }

    pub fn log_kappa(&self, y: f64) -> f64 {
        match *self {
            Self::Uniform => 0.0,
            Self::Gaussian { mean, sd } => {
                let u = (y - mean) / sd;
                -0.5 * u * u - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            }
        }
    }
}

/// Bin counts.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedSample {
    pub counts: Vec<f64>,
    pub n: f64,
}

impl BinnedSample {
    pub fn from_indices(indices: impl IntoIterator<Item = usize>, bins: usize) -> Self {
        let mut counts = vec![0.0; bins];
        for b in indices {
            counts[b] += 1.0;
        }
        let n = counts.iter().sum();
        Self { counts, n }
    }
}

pub fn discretize(y: &[f64], grid: &BinGrid) -> Result<BinnedSample> {
    let idx = y.iter().map(|&v| grid.index(v)).collect::<Result<Vec<_>>>()?;
    Ok(BinnedSample::from_indices(idx, grid.bins()))
}

/// Result of a penalized Poisson fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LindseyFit {
    pub beta: Vec<f64>,
    pub beta0: f64,
    /// Ridge multiplier `λ'` actually used.
    pub lambda: f64,
    pub cell_probs: Vec<f64>,
    pub df: f64,
    pub gradient_norm_at_exit: f64,
    pub iterations: usize,
}

impl LindseyFit {
    /// Piecewise-constant density `p_b / Δ`; `(0, true)` outside the grid.
    pub fn density_at(&self, grid: &BinGrid, y: f64) -> (f64, bool) {
        if !grid.contains(y) {
            return (0.0, true);
        }
        (self.cell_probs[grid.clamped_index(y)] / grid.width(), false)
    }
}

/// Design matrix `z(y_b)` for every bin midpoint (`B × k`).
pub fn design_matrix(basis: &SplineBasis, grid: &BinGrid) -> DMatrix<f64> {
    let rows: Vec<Vec<f64>> = basis.design(&grid.midpoints());
    DMatrix::from_fn(grid.bins(), basis.dim(), |b, j| rows[b][j])
}

/// `log κ(y_b) + log Δ` per bin.
pub fn carrying_offsets(kappa: &CarryingDensity, grid: &BinGrid) -> Vec<f64> {
    let ld = grid.width().ln();
    grid.midpoints().iter().map(|&y| kappa.log_kappa(y) + ld).collect()
}

/// Generic penalized Poisson problem
/// `max Σ n_b η_b − Σ e^{η_b} − λ' Σ ω_j (β_j + c_j)²`, `η_b = o_b + z_bᵀβ + β0`.
///
/// `shift` (`c`) lets callers penalize `β + c` instead of `β`.
#[derive(Debug, Clone, Copy)]
pub struct PoissonProblem<'a> {
    pub counts: &'a [f64],
    pub design: &'a DMatrix<f64>,
    pub offsets: &'a [f64],
    pub penalties: &'a [f64],
    pub lambda: f64,
    pub shift: Option<&'a [f64]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoissonSolution {
    pub beta: Vec<f64>,
    pub beta0: f64,
    /// Fitted means `μ_b = e^{η_b}`.
    pub mu: Vec<f64>,
    pub objective: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
}

impl PoissonProblem<'_> {
    fn check(&self) -> Result<()> {
        let (b, k) = self.design.shape();
        if self.counts.len() != b || self.offsets.len() != b {
            return Err(Error::invalid("counts/offsets do not match the design rows"));
        }
        if self.penalties.len() != k || self.shift.is_some_and(|s| s.len() != k) {
            return Err(Error::invalid("penalties do not match the design columns"));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::invalid(format!("ridge multiplier {} is not >= 0", self.lambda)));
        }
        if self.counts.iter().any(|&c| !(c >= 0.0 && c.is_finite())) {
            return Err(Error::invalid("counts must be finite and non-negative"));
        }
        if self.counts.iter().sum::<f64>() <= 0.0 {
            return Err(Error::invalid("all bin counts are zero"));
        }
        if self.offsets.iter().any(|o| !o.is_finite()) {
            return Err(Error::NumericFailure("non-finite offset".into()));
        }
        Ok(())
    }

    fn shifted(&self, beta: &[f64], j: usize) -> f64 {
        beta[j] + self.shift.map_or(0.0, |s| s[j])
    }

    fn linear_predictor(&self, beta: &[f64], beta0: f64) -> Vec<f64> {
        let (b, k) = self.design.shape();
        (0..b)
            .map(|i| {
                let mut eta = self.offsets[i] + beta0;
                for j in 0..k {
                    eta += self.design[(i, j)] * beta[j];
                }
                eta
            })
            .collect()
    }

    pub fn objective(&self, beta: &[f64], beta0: f64) -> f64 {
        let eta = self.linear_predictor(beta, beta0);
        let ll: f64 = eta.iter().zip(self.counts).map(|(&e, &n)| n * e - e.exp()).sum();
        let pen: f64 = (0..beta.len())
            .map(|j| self.penalties[j] * self.shifted(beta, j).powi(2))
            .sum();
        ll - self.lambda * pen
    }

    /// Gradient of the objective in `(β, β0)` ordering.
    pub fn gradient(&self, beta: &[f64], beta0: f64) -> Vec<f64> {
        let (b, k) = self.design.shape();
        let eta = self.linear_predictor(beta, beta0);
        let mut g = vec![0.0; k + 1];
        for i in 0..b {
            let r = self.counts[i] - eta[i].exp();
            for j in 0..k {
                g[j] += r * self.design[(i, j)];
            }
            g[k] += r;
        }
        for j in 0..k {
            g[j] -= 2.0 * self.lambda * self.penalties[j] * self.shifted(beta, j);
        }
        g
    }

    /// Newton-Raphson with step halving. Starts from `β = 0` and the intercept
    /// that matches the total count.
    pub fn solve(&self) -> Result<PoissonSolution> {
        self.check()?;
        let (b, k) = self.design.shape();
        let n: f64 = self.counts.iter().sum();
        let mass: f64 = self.offsets.iter().map(|o| o.exp()).sum();
        let mut beta = vec![0.0; k];
        let mut beta0 = (n / mass).ln();
        let mut obj = self.objective(&beta, beta0);
        let mut grad_norm = f64::INFINITY;
        for iter in 0..NEWTON_MAX_ITER {
            let eta = self.linear_predictor(&beta, beta0);
            let mu: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
            let g = self.gradient(&beta, beta0);
            grad_norm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if grad_norm < NEWTON_GRAD_TOL * n {
                return Ok(self.finish(beta, beta0, obj, grad_norm, iter));
            }
            let mut h = DMatrix::zeros(k + 1, k + 1);
            for i in 0..b {
                for r in 0..=k {
                    let zr = if r == k { 1.0 } else { self.design[(i, r)] };
                    for c in 0..=r {
                        let zc = if c == k { 1.0 } else { self.design[(i, c)] };
                        h[(r, c)] += mu[i] * zr * zc;
                    }
                }
            }
            for j in 0..k {
                h[(j, j)] += 2.0 * self.lambda * self.penalties[j];
            }
            for r in 0..=k {
                for c in 0..r {
                    h[(c, r)] = h[(r, c)];
                }
            }
            let step = solve_spd(h, DVector::from_vec(g))
                .ok_or_else(|| Error::NumericFailure("singular Newton system".into()))?;

            let mut t = 1.0;
            let mut accepted = false;
            let mut cand_beta = beta.clone();
            let mut cand_beta0 = beta0;
            let mut cand_obj = obj;
            for _ in 0..=NEWTON_MAX_HALVINGS {
                for j in 0..k {
                    cand_beta[j] = beta[j] + t * step[j];
                }
                cand_beta0 = beta0 + t * step[k];
                cand_obj = self.objective(&cand_beta, cand_beta0);
                if cand_obj.is_finite() && cand_obj >= obj {
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                // No ascent along the Newton direction: we are at the optimum
                // to machine precision.
                return Ok(self.finish(beta, beta0, obj, grad_norm, iter));
            }
            let step_norm = t * step.norm();
            let gain = cand_obj - obj;
            beta = cand_beta;
            beta0 = cand_beta0;
            obj = cand_obj;
            // Stalled objective covers the non-existent MLE case (counts on a
            // face of the hull), where β drifts off to infinity.
            if step_norm < NEWTON_STEP_TOL || gain <= 1e-14 * (1.0 + obj.abs()) {
                let g = self.gradient(&beta, beta0);
                grad_norm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                return Ok(self.finish(beta, beta0, obj, grad_norm, iter + 1));
            }
        }
        Err(Error::ConvergenceFailure {
            iterations: NEWTON_MAX_ITER,
            norm: grad_norm,
            context: "Lindsey Newton iterations".into(),
        })
    }

    fn finish(
        &self,
        beta: Vec<f64>,
        beta0: f64,
        objective: f64,
        gradient_norm: f64,
        iterations: usize,
    ) -> PoissonSolution {
        let mu = self.linear_predictor(&beta, beta0).iter().map(|e| e.exp()).collect();
        PoissonSolution {
            beta,
            beta0,
            mu,
            objective,
            gradient_norm,
            iterations,
        }
    }
}

/// Solve `A x = b` for symmetric positive (semi)definite `A`, falling back to
/// LU when Cholesky fails.
pub(crate) fn solve_spd(a: DMatrix<f64>, b: DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        let x = ch.solve(&b);
        if x.iter().all(|v| v.is_finite()) {
            return Some(x);
        }
    }
    let x = a.lu().solve(&b)?;
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// `tr((H + 2λ'Ω̃)⁻¹ H) − 1` with `H = [Z, 1]ᵀ diag(μ) [Z, 1]`.
pub fn degrees_of_freedom(design: &DMatrix<f64>, mu: &[f64], lambda: f64, penalties: &[f64]) -> Result<f64> {
    let (b, k) = design.shape();
    let mut h = DMatrix::zeros(k + 1, k + 1);
    for i in 0..b {
        for r in 0..=k {
            let zr = if r == k { 1.0 } else { design[(i, r)] };
            for c in 0..=k {
                let zc = if c == k { 1.0 } else { design[(i, c)] };
                h[(r, c)] += mu[i] * zr * zc;
            }
        }
    }
    let mut a = h.clone();
    for j in 0..k {
        a[(j, j)] += 2.0 * lambda * penalties[j];
    }
    let inv: DMatrix<f64> = a
        .try_inverse()
        .ok_or_else(|| Error::NumericFailure("singular H + 2λΩ in df computation".into()))?;
    let tr = (inv * h).trace();
    if !tr.is_finite() {
        return Err(Error::NumericFailure("non-finite df".into()));
    }
    Ok(tr - 1.0)
}

/// Normalized `p_b ∝ exp(o_b + z_bᵀβ)`.
pub fn cell_probabilities(design: &DMatrix<f64>, offsets: &[f64], beta: &[f64]) -> Vec<f64> {
    let (b, k) = design.shape();
    let eta: Vec<f64> = (0..b)
        .map(|i| offsets[i] + (0..k).map(|j| design[(i, j)] * beta[j]).sum::<f64>())
        .collect();
    softmax(&eta)
}

pub(crate) fn softmax(eta: &[f64]) -> Vec<f64> {
    let m = eta.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
    let mut p: Vec<f64> = eta.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

/// Everything needed to fit one binned sample.
#[derive(Debug, Clone)]
pub struct LindseyContext<'a> {
    pub basis: &'a SplineBasis,
    pub grid: &'a BinGrid,
    pub design: DMatrix<f64>,
    pub offsets: Vec<f64>,
}

impl<'a> LindseyContext<'a> {
    pub fn new(basis: &'a SplineBasis, grid: &'a BinGrid, kappa: &CarryingDensity) -> Self {
        Self {
            basis,
            grid,
            design: design_matrix(basis, grid),
            offsets: carrying_offsets(kappa, grid),
        }
    }

    pub fn fit(&self, binned: &BinnedSample, lambda: f64) -> Result<LindseyFit> {
        if binned.counts.len() != self.grid.bins() {
            return Err(Error::invalid("binned sample does not match the grid"));
        }
        let problem = PoissonProblem {
            counts: &binned.counts,
            design: &self.design,
            offsets: &self.offsets,
            penalties: self.basis.penalties(),
            lambda,
            shift: None,
        };
        let sol = problem.solve()?;
        let df = degrees_of_freedom(&self.design, &sol.mu, lambda, self.basis.penalties())?;
        Ok(LindseyFit {
            cell_probs: cell_probabilities(&self.design, &self.offsets, &sol.beta),
            beta: sol.beta,
            beta0: sol.beta0,
            lambda,
            df,
            gradient_norm_at_exit: sol.gradient_norm,
            iterations: sol.iterations,
        })
    }

    /// Ridge multiplier `λ'` whose fitted df is within 0.01 of `target_df`.
    pub fn lambda_for_df(&self, binned: &BinnedSample, target_df: f64) -> Result<f64> {
        let k = self.basis.dim() as f64;
        if !(target_df > 2.0 && target_df <= k) {
            return Err(Error::invalid(format!("target df {target_df} outside (2, {k}]")));
        }
        if target_df >= k - DF_TOL {
            return Ok(0.0);
        }
        let df_at = |lam: f64| -> Result<f64> { Ok(self.fit(binned, lam)?.df) };

        // bracket in log λ' with df(lo) > target > df(hi)
        let mut lo = 1.0f64;
        let mut hi = 1.0f64;
        let d1 = df_at(1.0)?;
        if (d1 - target_df).abs() < DF_TOL {
            return Ok(1.0);
        }
        if d1 > target_df {
            loop {
                hi *= 10.0;
                let d = df_at(hi)?;
                if (d - target_df).abs() < DF_TOL {
                    return Ok(hi);
                }
                if d < target_df {
                    break;
                }
                lo = hi;
                if hi > 1e30 {
                    return Err(Error::NumericFailure(format!(
                        "could not reach df {target_df} by increasing the ridge"
                    )));
                }
            }
        } else {
            loop {
                lo /= 10.0;
                let d = df_at(lo)?;
                if (d - target_df).abs() < DF_TOL {
                    return Ok(lo);
                }
                if d > target_df {
                    break;
                }
                hi = lo;
                if lo < 1e-30 {
                    return Err(Error::NumericFailure(format!(
                        "could not reach df {target_df} by decreasing the ridge"
                    )));
                }
            }
        }
        let (mut a, mut b) = (lo.ln(), hi.ln());
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            let d = df_at(mid.exp())?;
            if (d - target_df).abs() < DF_TOL {
                return Ok(mid.exp());
            }
            if d > target_df {
                a = mid;
            } else {
                b = mid;
            }
        }
        Err(Error::ConvergenceFailure {
            iterations: 200,
            norm: (b - a).abs(),
            context: "df bisection".into(),
        })
    }
}

/// Fit with a given `λ'`.
pub fn fit_poisson(
    binned: &BinnedSample,
    basis: &SplineBasis,
    grid: &BinGrid,
    kappa: &CarryingDensity,
    lambda: f64,
) -> Result<LindseyFit> {
    LindseyContext::new(basis, grid, kappa).fit(binned, lambda)
}

pub fn lambda_for_df(
    target_df: f64,
    binned: &BinnedSample,
    basis: &SplineBasis,
    grid: &BinGrid,
    kappa: &CarryingDensity,
) -> Result<f64> {
    LindseyContext::new(basis, grid, kappa).lambda_for_df(binned, target_df)
}
