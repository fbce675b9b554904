//! Response pretreatment: a monotone transform (log / Box-Cox) and
//! conditional-mean centering with boosted squared-error regression trees.
//!
//! Responses are mapped as `r = T(y) − h(x)`; densities map back with the
//! Jacobian `T'(y)`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lindsey::BinGrid;
use crate::tree::{grow, CandidateGrid, NodeEval, Tree, TreeConfig};

/// Monotone response transform. `shift` is added before transforming.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    Identity,
    Log {
        shift: f64,
    },
    /// `((y + c)^p − 1) / p`; `p = 0` is the log.
    BoxCox {
        power: f64,
        shift: f64,
    },
}

impl Transform {
    fn parts(&self) -> Option<(f64, f64)> {
        match *self {
            Self::Identity => None,
            Self::Log { shift } => Some((0.0, shift)),
            Self::BoxCox { power, shift } => Some((power, shift)),
        }
    }

    /// Whether `y` lies where the transform is defined.
    pub fn in_domain(&self, y: f64) -> bool {
        match self.parts() {
            None => true,
            Some((_, c)) => y + c > 0.0,
        }
    }

    pub fn forward(&self, y: f64) -> f64 {
        match self.parts() {
            None => y,
            Some((p, c)) => boxcox(y + c, p),
        }
    }

    pub fn inverse(&self, t: f64) -> f64 {
        match self.parts() {
            None => t,
            Some((p, c)) => {
                if p == 0.0 {
                    return t.exp() - c;
                }
                let base = p * t + 1.0;
                if base <= 0.0 {
                    return if p > 0.0 { -c } else { f64::INFINITY };
                }
                base.powf(1.0 / p) - c
            }
        }
    }

    /// `T'(y)`.
    pub fn derivative(&self, y: f64) -> f64 {
        match self.parts() {
            None => 1.0,
            Some((p, c)) => (y + c).powf(p - 1.0),
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let ok = match self.parts() {
            None => true,
            Some((p, c)) => p.is_finite() && c.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("non-finite transform parameters"))
        }
    }
}

fn boxcox(v: f64, p: f64) -> f64 {
    if p == 0.0 {
        v.ln()
    } else {
        (v.powf(p) - 1.0) / p
    }
}

/// Box-Cox powers `−2, −1.9, …, 2`.
pub fn boxcox_grid() -> Vec<f64> {
    (-20..=20).map(|i| i as f64 / 10.0).collect()
}

/// Gaussian profile log-likelihood of the Box-Cox transform at power `p`,
/// including the Jacobian term.
pub fn boxcox_profile_loglik(y: &[f64], shift: f64, p: f64) -> f64 {
    let n = y.len() as f64;
    let t: Vec<f64> = y.iter().map(|&v| boxcox(v + shift, p)).collect();
    let mean = t.iter().sum::<f64>() / n;
    let var = t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if !(var > 0.0 && var.is_finite()) {
        return f64::NEG_INFINITY;
    }
    let log_jac: f64 = y.iter().map(|&v| (v + shift).ln()).sum();
    -0.5 * n * var.ln() + (p - 1.0) * log_jac
}

/// Grid search for the Box-Cox power. With `allow_shift`, non-positive data
/// are shifted by `1 − min(y)` first.
pub fn select_boxcox(y: &[f64], allow_shift: bool) -> Result<Transform> {
    if y.len() < 2 {
        return Err(Error::invalid("Box-Cox selection needs at least two responses"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite response"));
    }
    let min = y.iter().copied().fold(f64::INFINITY, f64::min);
    let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return Err(Error::invalid("constant response has zero variance"));
    }
    let shift = if min > 0.0 {
        0.0
    } else if allow_shift {
        1.0 - min
    } else {
        return Err(Error::invalid(
            "Box-Cox needs positive responses (enable the shift option)",
        ));
    };
    let mut best = (f64::NEG_INFINITY, 1.0);
    for p in boxcox_grid() {
        let ll = boxcox_profile_loglik(y, shift, p);
        if ll > best.0 {
            best = (ll, p);
        }
    }
    if !best.0.is_finite() {
        return Err(Error::NumericFailure("Box-Cox likelihood is not finite".into()));
    }
    Ok(Transform::BoxCox { power: best.1, shift })
}

/// Settings of the boosted regression used for centering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CenteringConfig {
    /// Start from a least-squares linear fit instead of the mean.
    pub linear: bool,
    pub max_trees: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_node: usize,
    /// Fraction held out to choose the number of trees.
    pub holdout: f64,
    /// Stop after this many trees without holdout improvement.
    pub patience: usize,
    pub seed: u64,
}

impl Default for CenteringConfig {
    fn default() -> Self {
        Self {
            linear: true,
            max_trees: 1000,
            learning_rate: 0.1,
            max_depth: 3,
            min_node: 10,
            holdout: 0.2,
            patience: 200,
            seed: 0,
        }
    }
}

/// Conditional mean estimate `h(x) = a + bᵀx + Σ_t tree_t(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenteringModel {
    pub intercept: f64,
    pub coef: Vec<f64>,
    pub trees: Vec<Tree>,
    pub n_features: usize,
}

impl CenteringModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept
            + self.coef.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
            + self.trees.iter().map(|t| t.value(x)[0]).sum::<f64>()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !self.intercept.is_finite() || self.coef.len() != self.n_features || self.coef.iter().any(|v| !v.is_finite())
        {
            return Err(Error::invalid("invalid centering linear part"));
        }
        for t in &self.trees {
            t.validate(self.n_features, 1)?;
        }
        Ok(())
    }
}

/// Least-squares intercept and slopes on the rows `idx` (slopes zero when
/// `linear` is false).
fn linear_base(cols: &[Vec<f64>], y: &[f64], idx: &[usize], linear: bool) -> Result<(f64, Vec<f64>)> {
    let n = idx.len() as f64;
    let ybar = idx.iter().map(|&i| y[i]).sum::<f64>() / n;
    let d = cols.len();
    if !linear || d == 0 {
        return Ok((ybar, vec![0.0; d]));
    }
    let xbar: Vec<f64> = cols
        .iter()
        .map(|c| idx.iter().map(|&i| c[i]).sum::<f64>() / n)
        .collect();
    let mut a = nalgebra::DMatrix::<f64>::zeros(d, d);
    let mut b = nalgebra::DVector::<f64>::zeros(d);
    for &i in idx {
        let xc: Vec<f64> = (0..d).map(|j| cols[j][i] - xbar[j]).collect();
        let yc = y[i] - ybar;
        for r in 0..d {
            b[r] += xc[r] * yc;
            for c in 0..d {
                a[(r, c)] += xc[r] * xc[c];
            }
        }
    }
    let ridge = 1e-10 * (a.trace() / d as f64).max(1e-300);
    for j in 0..d {
        a[(j, j)] += ridge;
    }
    let coef: Vec<f64> = a
        .cholesky()
        .ok_or_else(|| Error::NumericFailure("singular centering design".into()))?
        .solve(&b)
        .iter()
        .copied()
        .collect();
    let intercept = ybar - coef.iter().zip(&xbar).map(|(c, m)| c * m).sum::<f64>();
    Ok((intercept, coef))
}

fn boost_regression(
    cols: &[Vec<f64>],
    y: &[f64],
    train: &[usize],
    holdout: &[usize],
    n_trees: usize,
    cfg: &CenteringConfig,
) -> Result<(CenteringModel, Vec<(f64, f64)>)> {
    let (intercept, coef) = linear_base(cols, y, train, cfg.linear)?;
    let n = y.len();
    let mut pred: Vec<f64> = (0..n)
        .map(|i| intercept + coef.iter().zip(cols).map(|(b, c)| b * c[i]).sum::<f64>())
        .collect();
    let tcfg = TreeConfig {
        max_depth: cfg.max_depth,
        min_node: cfg.min_node,
        gain_threshold: 0.0,
        candidates: CandidateGrid::AllMidpoints,
    };
    let one = nalgebra::DMatrix::from_element(1, 1, 1.0);
    // Holdout mean squared error and its standard error.
    let mse = |pred: &[f64]| {
        let m = holdout.len().max(1) as f64;
        let sq: Vec<f64> = holdout.iter().map(|&i| (y[i] - pred[i]).powi(2)).collect();
        let mean = sq.iter().sum::<f64>() / m;
        let var = sq.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
        (mean, (var / m).sqrt())
    };
    let mut trees = Vec::new();
    let mut path = vec![mse(&pred)];
    let mut best = 0usize;
    for _ in 0..n_trees {
        let resid: Vec<f64> = (0..n).map(|i| y[i] - pred[i]).collect();
        let mut tree = grow(cols, train.to_vec(), &tcfg, |idx, _, can_split| {
            let r: Vec<f64> = idx.iter().map(|&i| resid[i]).collect();
            let mean = r.iter().sum::<f64>() / r.len() as f64;
            Ok(NodeEval {
                value: vec![mean],
                split: can_split.then(|| (r, one.clone())),
            })
        })?;
        for v in tree.leaf_values_mut() {
            v[0] *= cfg.learning_rate;
        }
        for (i, p) in pred.iter_mut().enumerate() {
            let x: Vec<f64> = cols.iter().map(|c| c[i]).collect();
            *p += tree.value(&x)[0];
        }
        trees.push(tree);
        path.push(mse(&pred));
        if path[trees.len()].0 < path[best].0 {
            best = trees.len();
        }
        if !holdout.is_empty() && trees.len() - best >= cfg.patience {
            break;
        }
    }
    Ok((
        CenteringModel {
            intercept,
            coef,
            trees,
            n_features: cols.len(),
        },
        path,
    ))
}

/// Fit `h(x)`: pick the tree count on an internal holdout, then refit on all
/// samples with that count.
pub fn fit_mean(cols: &[Vec<f64>], y: &[f64], cfg: &CenteringConfig) -> Result<CenteringModel> {
    let n = y.len();
    if n < 20 {
        return Err(Error::invalid(format!("centering needs n >= 20, got {n}")));
    }
    if cols.iter().any(|c| c.len() != n) {
        return Err(Error::invalid("covariate columns differ in length from y"));
    }
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate <= 1.0) {
        return Err(Error::invalid("centering learning rate must lie in (0, 1]"));
    }
    if !(cfg.holdout > 0.0 && cfg.holdout < 1.0) {
        return Err(Error::invalid("centering holdout fraction must lie in (0, 1)"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let n_hold = ((n as f64) * cfg.holdout).round().max(1.0) as usize;
    let (hold, train) = idx.split_at(n_hold);
    let (_, path) = boost_regression(cols, y, train, hold, cfg.max_trees, cfg)?;
    // Smallest tree count within one standard error of the best.
    let best = path
        .iter()
        .enumerate()
        .fold(0usize, |b, (i, v)| if v.0 < path[b].0 { i } else { b });
    let limit = path[best].0 + path[best].1;
    let best = path.iter().position(|v| v.0 <= limit).unwrap_or(best);
    let all: Vec<usize> = (0..n).collect();
    let (model, _) = boost_regression(cols, y, &all, &[], best, cfg)?;
    log::debug!("centering uses {best} trees");
    Ok(model)
}

/// Pretreatment record stored with a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pretreatment {
    pub transform: Transform,
    pub centering: Option<CenteringModel>,
}

impl Pretreatment {
    pub fn shift(&self, x: &[f64]) -> f64 {
        self.centering.as_ref().map_or(0.0, |c| c.predict(x))
    }

    /// `T(y) − h(x)`.
    pub fn to_internal(&self, x: &[f64], y: f64) -> f64 {
        self.transform.forward(y) - self.shift(x)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        self.transform.validate()?;
        if let Some(c) = &self.centering {
            c.validate()?;
        }
        Ok(())
    }
}

/// Move a piecewise-constant density on `from` by `shift` (`f(y − shift)`)
/// and rebin it onto `to`, preserving the mass in every overlap.
pub fn shift_densities(densities: &[f64], from: &BinGrid, shift: f64, to: &BinGrid) -> Vec<f64> {
    let w = from.width();
    let cdf = |v: f64| -> f64 {
        let t = (v - from.lo()) / w;
        if t <= 0.0 {
            return 0.0;
        }
        let full = (t.floor() as usize).min(from.bins());
        let mut m: f64 = densities[..full].iter().sum::<f64>() * w;
        if full < from.bins() {
            m += densities[full] * (t - full as f64) * w;
        }
        m
    };
    let edges = to.edges();
    edges
        .windows(2)
        .map(|e| (cdf(e[1] - shift) - cdf(e[0] - shift)) / to.width())
        .collect()
}

/// Residual-space densities for centered data: `f_R(r) = f_Y(r + h(x))`.
pub fn apply_centering(densities: &[f64], grid: &BinGrid, h: f64, to: &BinGrid) -> Vec<f64> {
    shift_densities(densities, grid, -h, to)
}

/// Back to the response scale: `f_Y(y) = f_R(y − h(x))`.
pub fn invert_centering(densities: &[f64], grid: &BinGrid, h: f64, to: &BinGrid) -> Vec<f64> {
    shift_densities(densities, grid, h, to)
}
