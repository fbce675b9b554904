//! Boosted LinCDE trees.
//!
//! The natural parameter is additive, `β(x) = Σ_t γ_t(x)`. Each iteration
//! grows a tree whose nodes fit a tilt `γ` against the current per-sample
//! cell probabilities, splits on mean residual differences of the
//! sufficient statistics and tilts every training row by its (shrunk) leaf.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::SplineBasis;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::lindsey::{
    carrying_offsets, design_matrix, discretize, softmax, BinGrid, CarryingDensity, LindseyContext, PoissonProblem,
};
use crate::pretreat::{fit_mean, select_boxcox, CenteringConfig, Pretreatment, Transform};
use crate::tree::{grow, importance, CandidateGrid, NodeEval, Tree, TreeConfig};

pub const SCHEMA_VERSION: u32 = 1;
/// Bins used when reading CDFs, quantiles and log-likelihoods off a model.
pub const READOUT_BINS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CarryingKind {
    Gaussian,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformChoice {
    #[default]
    None,
    Log,
    BoxCox,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PretreatConfig {
    pub transform: TransformChoice,
    /// Shift non-positive responses by `1 − min(y)` before log / Box-Cox.
    pub shift: bool,
    pub centering: bool,
    pub centering_config: CenteringConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostConfig {
    /// Basis dimension.
    pub k: usize,
    /// Target degrees of freedom of the root Lindsey fit.
    pub df: f64,
    /// Training bins.
    pub bins: usize,
    pub eta: f64,
    /// Maximum number of trees.
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_node: usize,
    pub gain_threshold: f64,
    pub candidates: usize,
    pub inner_eps: f64,
    pub inner_max_iter: usize,
    /// Stop once validation log-likelihood has not improved for this many
    /// trees (0 disables early stopping).
    pub patience: usize,
    /// Hold out this fraction of the training data for validation when no
    /// separate validation set is given.
    pub validation_fraction: f64,
    pub seed: u64,
    pub carrying: CarryingKind,
    /// Include `2λΩ` in the split-gain surrogate.
    pub penalized_surrogate: bool,
    pub pretreat: PretreatConfig,
}

impl Default for BoostConfig {
    fn default() -> Self {
        Self {
            k: 10,
            df: 5.0,
            bins: 40,
            eta: 0.01,
            n_trees: 2000,
            max_depth: 2,
            min_node: crate::tree::DEFAULT_MIN_NODE,
            gain_threshold: 0.0,
            candidates: crate::tree::DEFAULT_CANDIDATES,
            inner_eps: 1e-5,
            inner_max_iter: 20,
            patience: 200,
            validation_fraction: 0.0,
            seed: 0,
            carrying: CarryingKind::Gaussian,
            penalized_surrogate: true,
            pretreat: PretreatConfig::default(),
        }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::invalid(format!("k = {} < 2", self.k)));
        }
        if !(self.df > 2.0 && self.df <= self.k as f64) {
            return Err(Error::invalid(format!("df {} outside (2, k = {}]", self.df, self.k)));
        }
        if self.bins < 2 {
            return Err(Error::invalid("need at least two bins"));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::invalid(format!("eta {} outside (0, 1]", self.eta)));
        }
        if self.n_trees < 1 {
            return Err(Error::invalid("n_trees must be at least 1"));
        }
        if !(self.inner_eps > 0.0) || self.inner_max_iter == 0 {
            return Err(Error::invalid("inner_eps must be > 0 and inner_max_iter >= 1"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::invalid("validation_fraction must lie in [0, 1)"));
        }
        self.tree_config().validate()
    }

    pub fn tree_config(&self) -> TreeConfig {
        TreeConfig {
            max_depth: self.max_depth,
            min_node: self.min_node,
            gain_threshold: self.gain_threshold,
            candidates: CandidateGrid::Quantiles(self.candidates),
        }
    }
}

/// Per-iteration training record. Iteration 0 is the carrying density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub train_loglik: f64,
    pub validation_loglik: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostModel {
    pub schema_version: u32,
    pub feature_names: Vec<String>,
    pub basis: SplineBasis,
    pub grid: BinGrid,
    pub kappa: CarryingDensity,
    /// Per-sample ridge multiplier; a node of `n_R` samples uses `n_R · λ`.
    pub lambda: f64,
    pub eta: f64,
    /// Trees used for prediction (the selected prefix), leaves already
    /// scaled by `eta`.
    pub trees: Vec<Tree>,
    /// Iteration with the best validation log-likelihood, if validated.
    pub selected_iteration: usize,
    pub pretreatment: Option<Pretreatment>,
    /// Response range of the training data on the original scale.
    pub response_range: (f64, f64),
    pub diagnostics: Vec<IterationRecord>,
    pub config: BoostConfig,
}

/// Result of the node-level fitting loop.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFit {
    pub gamma: Vec<f64>,
    /// Tilted, row-normalized probabilities at exit (`n_R × B`, row-major).
    pub rows: Vec<f64>,
    pub iterations: usize,
    pub last_step: f64,
}

fn tilt_weights(design: &DMatrix<f64>, gamma: &[f64]) -> Vec<f64> {
    let (b, k) = design.shape();
    let e: Vec<f64> = (0..b)
        .map(|i| (0..k).map(|j| design[(i, j)] * gamma[j]).sum())
        .collect();
    let m = e.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
    e.iter().map(|v| (v - m).exp()).collect()
}

fn tilt_rows(rows: &mut [f64], bins: usize, w: &[f64]) {
    for row in rows.chunks_exact_mut(bins) {
        let mut s = 0.0;
        for (p, wb) in row.iter_mut().zip(w) {
            *p *= wb;
            s += *p;
        }
        row.iter_mut().for_each(|p| *p /= s);
    }
}

/// Once an alternating step shrinks by less than this factor, or after
/// `SWITCH_AFTER` alternations, the node fit switches to Newton steps on
/// the node log-likelihood.
const SWITCH_RATIO: f64 = 0.25;
const SWITCH_AFTER: usize = 5;

/// Fit the node tilt `γ` by alternating a Poisson fit with offset
/// `log p̄_b(γ)` (mean tilted probabilities over the node) and
/// per-sample renormalization, until `‖Δγ‖₂ ≤ eps`.
///
/// The alternation converges linearly, slowly when the rows differ a lot.
/// When it stalls the remaining steps are damped Newton steps on the same
/// objective, so the fixed point is unchanged.
///
/// `rows` holds the node's current cell probabilities (`n_R × B`), `counts`
/// the node's bin counts and `lambda` the node ridge `λ'`.
pub fn boost_node_fit(
    rows: &[f64],
    counts: &[f64],
    design: &DMatrix<f64>,
    penalties: &[f64],
    lambda: f64,
    eps: f64,
    max_iter: usize,
) -> Result<NodeFit> {
    let (bins, k) = design.shape();
    if rows.is_empty() || !rows.len().is_multiple_of(bins) || counts.len() != bins || penalties.len() != k {
        return Err(Error::invalid("node rows/counts do not match the bins"));
    }
    let n = (rows.len() / bins) as f64;
    let mut gamma = vec![0.0; k];
    let mut step = f64::INFINITY;
    let mut newton = false;
    for it in 1..=max_iter {
        let delta = if newton {
            newton_step(rows, counts, design, penalties, lambda, &gamma)?
        } else {
            let mut tilted = rows.to_vec();
            tilt_rows(&mut tilted, bins, &tilt_weights(design, &gamma));
            let mut pbar = vec![0.0; bins];
            for row in tilted.chunks_exact(bins) {
                for (a, p) in pbar.iter_mut().zip(row) {
                    *a += p;
                }
            }
            let offsets: Vec<f64> = pbar.iter().map(|p| (p / n).max(1e-300).ln()).collect();
            PoissonProblem {
                counts,
                design,
                offsets: &offsets,
                penalties,
                lambda,
                shift: Some(&gamma),
            }
            .solve()?
            .beta
        };
        let prev = step;
        step = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
        gamma.iter_mut().zip(&delta).for_each(|(g, d)| *g += d);
        if step <= eps {
            let mut out = rows.to_vec();
            tilt_rows(&mut out, bins, &tilt_weights(design, &gamma));
            return Ok(NodeFit {
                gamma,
                rows: out,
                iterations: it,
                last_step: step,
            });
        }
        if it >= SWITCH_AFTER || (it >= 2 && step > SWITCH_RATIO * prev) {
            newton = true;
        }
    }
    Err(Error::ConvergenceFailure {
        iterations: max_iter,
        norm: step,
        context: "boosting node fit".into(),
    })
}

/// Node log-likelihood `Σ_b c_b z_bᵀγ − Σ_i log Σ_b p_ib e^{z_bᵀγ} − λ' Σ ω γ²`
/// with its gradient and negative Hessian.
fn node_objective(
    rows: &[f64],
    counts: &[f64],
    design: &DMatrix<f64>,
    penalties: &[f64],
    lambda: f64,
    gamma: &[f64],
    derivatives: bool,
) -> (f64, Vec<f64>, DMatrix<f64>) {
    let (bins, k) = design.shape();
    let lin: Vec<f64> = (0..bins)
        .map(|b| (0..k).map(|j| design[(b, j)] * gamma[j]).sum())
        .collect();
    let shift = lin.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
    let w: Vec<f64> = lin.iter().map(|v| (v - shift).exp()).collect();
    let mut obj: f64 = counts.iter().zip(&lin).map(|(c, l)| c * l).sum();
    obj -= (0..k).map(|j| lambda * penalties[j] * gamma[j] * gamma[j]).sum::<f64>();
    let mut grad = vec![0.0; k];
    let mut hess = DMatrix::<f64>::zeros(k, k);
    let mut p = vec![0.0; bins];
    for row in rows.chunks_exact(bins) {
        let mut s = 0.0;
        for b in 0..bins {
            p[b] = row[b] * w[b];
            s += p[b];
        }
        obj -= s.ln() + shift;
        if !derivatives {
            continue;
        }
        p.iter_mut().for_each(|v| *v /= s);
        let (m, c) = crate::tree::model_covariance(design, &p);
        grad.iter_mut().zip(&m).for_each(|(g, v)| *g -= v);
        hess += c;
    }
    if derivatives {
        for b in 0..bins {
            for j in 0..k {
                grad[j] += counts[b] * design[(b, j)];
            }
        }
        for j in 0..k {
            grad[j] -= 2.0 * lambda * penalties[j] * gamma[j];
            hess[(j, j)] += 2.0 * lambda * penalties[j];
        }
    }
    (obj, grad, hess)
}

fn newton_step(
    rows: &[f64],
    counts: &[f64],
    design: &DMatrix<f64>,
    penalties: &[f64],
    lambda: f64,
    gamma: &[f64],
) -> Result<Vec<f64>> {
    let (obj, grad, hess) = node_objective(rows, counts, design, penalties, lambda, gamma, true);
    let dir: Vec<f64> = crate::lindsey::solve_spd(hess, nalgebra::DVector::from_vec(grad))
        .ok_or_else(|| Error::NumericFailure("singular node Hessian".into()))?
        .iter()
        .copied()
        .collect();
    let mut t = 1.0;
    for _ in 0..40 {
        let cand: Vec<f64> = gamma.iter().zip(&dir).map(|(g, d)| g + t * d).collect();
        let (c, _, _) = node_objective(rows, counts, design, penalties, lambda, &cand, false);
        if c >= obj - 1e-12 * (1.0 + obj.abs()) {
            return Ok(dir.iter().map(|d| t * d).collect());
        }
        t *= 0.5;
    }
    Ok(vec![0.0; gamma.len()])
}

/// Residuals `z_{b(i)} − Σ_b p̃_ib z_b` (row-major, aligned with `bins`) and
/// the mean per-sample covariance of `z` under the tilted rows.
pub fn residuals(rows: &[f64], sample_bins: &[usize], design: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let (bins, k) = design.shape();
    let n = sample_bins.len();
    let mut resid = Vec::with_capacity(n * k);
    let mut pbar = vec![0.0; bins];
    let mut mm = DMatrix::<f64>::zeros(k, k);
    for (row, &b_obs) in rows.chunks_exact(bins).zip(sample_bins) {
        let mut m = vec![0.0; k];
        for (b, p) in row.iter().enumerate() {
            pbar[b] += p;
            for j in 0..k {
                m[j] += p * design[(b, j)];
            }
        }
        for r in 0..k {
            for c in 0..=r {
                mm[(r, c)] += m[r] * m[c];
            }
        }
        resid.extend((0..k).map(|j| design[(b_obs, j)] - m[j]));
    }
    let nf = n as f64;
    let mut cov = DMatrix::<f64>::zeros(k, k);
    for b in 0..bins {
        let p = pbar[b] / nf;
        for r in 0..k {
            for c in 0..=r {
                cov[(r, c)] += p * design[(b, r)] * design[(b, c)];
            }
        }
    }
    for r in 0..k {
        for c in 0..=r {
            cov[(r, c)] -= mm[(r, c)] / nf;
            cov[(c, r)] = cov[(r, c)];
        }
    }
    (resid, cov)
}

/// `(C + εI + 2λΩ)⁻¹` with `ε = 1e-3 · tr(C) / k`.
pub fn surrogate_metric(cov: &DMatrix<f64>, lambda: f64, penalties: &[f64]) -> Result<DMatrix<f64>> {
    crate::tree::gain_metric(cov, lambda, penalties)
}

fn gather_rows(tilt: &[f64], bins: usize, idx: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(idx.len() * bins);
    for &i in idx {
        out.extend_from_slice(&tilt[i * bins..(i + 1) * bins]);
    }
    out
}

fn rows_of(cols: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = cols.first().map_or(0, Vec::len);
    (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect()
}

fn mean_loglik(tilt: &[f64], bins: usize, sample_bins: &[usize], width: f64) -> f64 {
    let n = sample_bins.len();
    sample_bins
        .iter()
        .enumerate()
        .map(|(i, &b)| (tilt[i * bins + b] / width).ln())
        .sum::<f64>()
        / n as f64
}

fn apply_tree(tree: &Tree, rows: &[Vec<f64>], tilt: &mut [f64], leaf_weights: &[(usize, Vec<f64>)], bins: usize) {
    tilt.par_chunks_mut(bins).zip(rows.par_iter()).for_each(|(row, x)| {
        let leaf = tree.leaf_index(x);
        let w = &leaf_weights
            .iter()
            .find(|(id, _)| *id == leaf)
            .expect("every leaf has weights")
            .1;
        let mut s = 0.0;
        for (p, wb) in row.iter_mut().zip(w) {
            *p *= wb;
            s += *p;
        }
        row.iter_mut().for_each(|p| *p /= s);
    });
}

fn build_transform(choice: TransformChoice, shift: bool, y: &[f64]) -> Result<Transform> {
    let min = y.iter().copied().fold(f64::INFINITY, f64::min);
    match choice {
        TransformChoice::None => Ok(Transform::Identity),
        TransformChoice::Log => {
            let c = if min > 0.0 {
                0.0
            } else if shift {
                1.0 - min
            } else {
                return Err(Error::invalid(
                    "log transform needs positive responses (enable the shift option)",
                ));
            };
            Ok(Transform::Log { shift: c })
        }
        TransformChoice::BoxCox => select_boxcox(y, shift),
    }
}

/// Fit a boosted model. `valid` (or a held-out fraction of `train`) selects
/// the number of trees.
pub fn fit(train: &Dataset, valid: Option<&Dataset>, cfg: &BoostConfig) -> Result<BoostModel> {
    cfg.validate()?;
    if valid.is_none() && cfg.validation_fraction > 0.0 {
        let n = train.n();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
        let n_val = ((n as f64) * cfg.validation_fraction).round() as usize;
        let (v, t) = idx.split_at(n_val);
        return fit_prepared(&train.subset(t), Some(&train.subset(v)), cfg);
    }
    fit_prepared(train, valid, cfg)
}

fn fit_prepared(train: &Dataset, valid: Option<&Dataset>, cfg: &BoostConfig) -> Result<BoostModel> {
    let y = train.response()?;
    let n = y.len();
    if n < 2 * cfg.min_node.max(1) {
        return Err(Error::invalid(format!(
            "{n} training samples; need at least {}",
            2 * cfg.min_node
        )));
    }
    if let Some(v) = valid {
        if v.d() != train.d() {
            return Err(Error::invalid(format!(
                "validation data has {} covariates, training data {}",
                v.d(),
                train.d()
            )));
        }
        v.response()?;
    }
    let y_lo = y.iter().copied().fold(f64::INFINITY, f64::min);
    let y_hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    // pretreatment: transform, then centering in the transformed space
    let transform = build_transform(cfg.pretreat.transform, cfg.pretreat.shift, y)?;
    let ty: Vec<f64> = y.iter().map(|&v| transform.forward(v)).collect();
    let centering = if cfg.pretreat.centering {
        Some(fit_mean(&train.cols, &ty, &cfg.pretreat.centering_config)?)
    } else {
        None
    };
    let pretreatment =
        (transform != Transform::Identity || centering.is_some()).then_some(Pretreatment { transform, centering });
    let train_rows = rows_of(&train.cols);
    let to_internal = |x: &[f64], yv: f64| match &pretreatment {
        Some(p) => p.to_internal(x, yv),
        None => yv,
    };
    let r: Vec<f64> = train_rows.iter().zip(y).map(|(x, &v)| to_internal(x, v)).collect();

    let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo < hi) {
        return Err(Error::invalid("responses are constant"));
    }
    let grid = BinGrid::new(lo, hi, cfg.bins)?;
    let basis = SplineBasis::equally_spaced(lo, hi, cfg.k)?;
    let kappa = match cfg.carrying {
        CarryingKind::Gaussian => CarryingDensity::matched(&r)?,
        CarryingKind::Uniform => CarryingDensity::Uniform,
    };
    let binned = discretize(&r, &grid)?;
    let ctx = LindseyContext::new(&basis, &grid, &kappa);
    let lambda = ctx
        .lambda_for_df(&binned, cfg.df)
        .map_err(|e| e.with_context("root df solve"))?
        / n as f64;
    let design = design_matrix(&basis, &grid);
    let penalties = basis.penalties().to_vec();
    let base = softmax(&carrying_offsets(&kappa, &grid));
    let bins = cfg.bins;
    let width = grid.width();

    let sample_bins: Vec<usize> = r.iter().map(|&v| grid.clamped_index(v)).collect();
    let mut tilt: Vec<f64> = base.iter().copied().cycle().take(n * bins).collect();

    let (valid_rows, valid_bins, mut vtilt) = match valid {
        Some(v) => {
            let rows = rows_of(&v.cols);
            let vy = v.response()?;
            let mut clamped = 0usize;
            let vb: Vec<usize> = rows
                .iter()
                .zip(vy)
                .map(|(x, &yv)| {
                    let t = match &pretreatment {
                        Some(p) if !p.transform.in_domain(yv) => lo,
                        _ => to_internal(x, yv),
                    };
                    if !grid.contains(t) {
                        clamped += 1;
                    }
                    grid.clamped_index(t)
                })
                .collect();
            if clamped > 0 {
                log::warn!("{clamped} validation responses fall outside the training range and were clamped");
            }
            let vt: Vec<f64> = base.iter().copied().cycle().take(rows.len() * bins).collect();
            (rows, vb, vt)
        }
        None => (Vec::new(), Vec::new(), Vec::new()),
    };

    let mut diagnostics = vec![IterationRecord {
        iteration: 0,
        train_loglik: mean_loglik(&tilt, bins, &sample_bins, width),
        validation_loglik: valid.map(|_| mean_loglik(&vtilt, bins, &valid_bins, width)),
    }];
    let tcfg = cfg.tree_config();
    let sur_lambda = if cfg.penalized_surrogate { lambda } else { 0.0 };
    let mut trees: Vec<Tree> = Vec::new();
    let mut best = (diagnostics[0].validation_loglik.unwrap_or(f64::NEG_INFINITY), 0usize);

    for t in 1..=cfg.n_trees {
        let mut tree = grow(&train.cols, (0..n).collect(), &tcfg, |idx, id, can_split| {
            let rows = gather_rows(&tilt, bins, idx);
            let mut counts = vec![0.0; bins];
            for &i in idx {
                counts[sample_bins[i]] += 1.0;
            }
            let nf = boost_node_fit(
                &rows,
                &counts,
                &design,
                &penalties,
                idx.len() as f64 * lambda,
                cfg.inner_eps,
                cfg.inner_max_iter,
            )
            .map_err(|e| e.with_context(format!("iteration {t}, node {id}")))?;
            let split = if can_split {
                let nb: Vec<usize> = idx.iter().map(|&i| sample_bins[i]).collect();
                let (resid, cov) = residuals(&nf.rows, &nb, &design);
                let metric = surrogate_metric(&cov, sur_lambda, &penalties)
                    .map_err(|e| e.with_context(format!("iteration {t}, node {id}")))?;
                Some((resid, metric))
            } else {
                None
            };
            Ok(NodeEval { value: nf.gamma, split })
        })?;
        for v in tree.leaf_values_mut() {
            v.iter_mut().for_each(|g| *g *= cfg.eta);
        }
        let leaf_weights: Vec<(usize, Vec<f64>)> = tree
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(id, node)| match node {
                crate::tree::TreeNode::Leaf { value, .. } => Some((id, tilt_weights(&design, value))),
                crate::tree::TreeNode::Split { .. } => None,
            })
            .collect();
        apply_tree(&tree, &train_rows, &mut tilt, &leaf_weights, bins);
        let validation_loglik = if valid.is_some() {
            apply_tree(&tree, &valid_rows, &mut vtilt, &leaf_weights, bins);
            Some(mean_loglik(&vtilt, bins, &valid_bins, width))
        } else {
            None
        };
        trees.push(tree);
        diagnostics.push(IterationRecord {
            iteration: t,
            train_loglik: mean_loglik(&tilt, bins, &sample_bins, width),
            validation_loglik,
        });
        if let Some(v) = validation_loglik {
            if v > best.0 {
                best = (v, t);
            }
            if cfg.patience > 0 && t - best.1 >= cfg.patience {
                log::info!("early stop at iteration {t}; best {}", best.1);
                break;
            }
        }
    }
    let selected = if valid.is_some() { best.1 } else { trees.len() };
    trees.truncate(selected);
    Ok(BoostModel {
        schema_version: SCHEMA_VERSION,
        feature_names: train.feature_names.clone(),
        basis,
        grid,
        kappa,
        lambda,
        eta: cfg.eta,
        trees,
        selected_iteration: selected,
        pretreatment,
        response_range: (y_lo, y_hi),
        diagnostics,
        config: *cfg,
    })
}

/// Conditional distribution at one covariate vector, read off a fine grid in
/// the model's internal response space.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalDensity {
    /// Readout grid in internal space.
    pub readout: BinGrid,
    /// Bin masses on `readout`.
    pub probs: Vec<f64>,
    /// Centering shift `h(x)`.
    pub shift: f64,
    pub transform: Transform,
}

impl ConditionalDensity {
    fn internal(&self, y: f64) -> Option<f64> {
        self.transform
            .in_domain(y)
            .then(|| self.transform.forward(y) - self.shift)
    }

    fn internal_cdf(&self, r: f64) -> f64 {
        let g = &self.readout;
        if r <= g.lo() {
            return 0.0;
        }
        if r >= g.hi() {
            return 1.0;
        }
        let b = g.clamped_index(r);
        let below: f64 = self.probs[..b].iter().sum();
        let frac = (r - (g.lo() + b as f64 * g.width())) / g.width();
        (below + frac * self.probs[b]).clamp(0.0, 1.0)
    }

    fn internal_quantile(&self, u: f64) -> f64 {
        let g = &self.readout;
        let mut acc = 0.0;
        for (b, &p) in self.probs.iter().enumerate() {
            if acc + p >= u && p > 0.0 {
                let frac = ((u - acc) / p).clamp(0.0, 1.0);
                return g.lo() + (b as f64 + frac) * g.width();
            }
            acc += p;
        }
        g.hi()
    }

    /// Piecewise-constant density at `y` on the response scale (0 outside).
    pub fn density(&self, y: f64) -> f64 {
        match self.internal(y) {
            Some(r) if self.readout.contains(r) => {
                self.probs[self.readout.clamped_index(r)] / self.readout.width() * self.transform.derivative(y)
            }
            _ => 0.0,
        }
    }

    /// Bin mass and Jacobian for `y`, clamping into the readout range.
    /// The flag reports whether clamping happened.
    pub fn mass_clamped(&self, y: f64) -> (f64, f64, bool) {
        let (r, clamped) = match self.internal(y) {
            Some(r) if self.readout.contains(r) => (r, false),
            Some(r) => (r, true),
            None => (self.readout.lo(), true),
        };
        let jac = if self.transform.in_domain(y) {
            self.transform.derivative(y)
        } else {
            1.0
        };
        (self.probs[self.readout.clamped_index(r)], jac, clamped)
    }

    pub fn cdf(&self, y: f64) -> f64 {
        match self.internal(y) {
            Some(r) => self.internal_cdf(r),
            None => 0.0,
        }
    }

    pub fn quantile(&self, u: f64) -> f64 {
        self.transform.inverse(self.internal_quantile(u) + self.shift)
    }

    pub fn quantiles(&self, levels: &[f64]) -> Vec<f64> {
        levels.iter().map(|&u| self.quantile(u)).collect()
    }

    /// Bin masses on a response-scale grid (CDF differences).
    pub fn bin_masses(&self, grid: &BinGrid) -> Vec<f64> {
        let c: Vec<f64> = grid.edges().iter().map(|&e| self.cdf(e)).collect();
        c.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect()
    }
}

impl BoostModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features() {
            return Err(Error::invalid(format!(
                "expected {} covariates, got {}",
                self.n_features(),
                x.len()
            )));
        }
        Ok(())
    }

    /// Natural parameter `β(x)`.
    pub fn natural_parameter(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_x(x)?;
        let mut beta = vec![0.0; self.basis.dim()];
        for t in &self.trees {
            for (b, g) in beta.iter_mut().zip(t.value(x)) {
                *b += g;
            }
        }
        Ok(beta)
    }

    fn log_unnormalized(&self, r: f64, beta: &[f64]) -> f64 {
        self.kappa.log_kappa(r) + self.basis.eval(r).iter().zip(beta).map(|(z, b)| z * b).sum::<f64>()
    }

    /// Internal-space cell probabilities on `grid`.
    fn probs_on(&self, grid: &BinGrid, beta: &[f64]) -> Vec<f64> {
        let eta: Vec<f64> = grid
            .midpoints()
            .iter()
            .map(|&r| self.log_unnormalized(r, beta))
            .collect();
        softmax(&eta)
    }

    /// Cell probabilities on the training grid (internal space).
    pub fn predict_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        let beta = self.natural_parameter(x)?;
        Ok(self.probs_on(&self.grid, &beta))
    }

    fn shift(&self, x: &[f64]) -> f64 {
        self.pretreatment.as_ref().map_or(0.0, |p| p.shift(x))
    }

    fn transform(&self) -> Transform {
        self.pretreatment.as_ref().map_or(Transform::Identity, |p| p.transform)
    }

    /// Default response-scale output grid: the training range on the
    /// original scale.
    pub fn output_grid(&self, bins: usize) -> Result<BinGrid> {
        BinGrid::new(self.response_range.0, self.response_range.1, bins)
    }

    /// Densities at the midpoints of a response-scale grid, normalized so
    /// `Σ density_b Δ = 1`.
    pub fn predict_density(&self, x: &[f64], grid: &BinGrid) -> Result<Vec<f64>> {
        let beta = self.natural_parameter(x)?;
        let t = self.transform();
        let h = self.shift(x);
        let log_norm = {
            let eta: Vec<f64> = self
                .grid
                .midpoints()
                .iter()
                .map(|&r| self.log_unnormalized(r, &beta))
                .collect();
            let m = eta.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
            m + (eta.iter().map(|v| (v - m).exp()).sum::<f64>() * self.grid.width()).ln()
        };
        let vals: Vec<f64> = grid
            .midpoints()
            .iter()
            .map(|&y| {
                if !t.in_domain(y) {
                    return 0.0;
                }
                let r = t.forward(y) - h;
                if !self.grid.contains(r) {
                    return 0.0;
                }
                (self.log_unnormalized(r, &beta) - log_norm).exp() * t.derivative(y)
            })
            .collect();
        let mass: f64 = vals.iter().sum::<f64>() * grid.width();
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::NumericFailure(
                "output grid does not overlap the estimated support".into(),
            ));
        }
        Ok(vals.iter().map(|v| v / mass).collect())
    }

    /// Conditional distribution read off `readout_bins` bins.
    pub fn conditional(&self, x: &[f64], readout_bins: usize) -> Result<ConditionalDensity> {
        let beta = self.natural_parameter(x)?;
        let readout = BinGrid::new(self.grid.lo(), self.grid.hi(), readout_bins)?;
        Ok(ConditionalDensity {
            probs: self.probs_on(&readout, &beta),
            readout,
            shift: self.shift(x),
            transform: self.transform(),
        })
    }

    pub fn predict_cdf(&self, x: &[f64], ys: &[f64]) -> Result<Vec<f64>> {
        let c = self.conditional(x, READOUT_BINS)?;
        Ok(ys.iter().map(|&y| c.cdf(y)).collect())
    }

    pub fn predict_quantiles(&self, x: &[f64], levels: &[f64]) -> Result<Vec<f64>> {
        if levels.iter().any(|&u| !(u > 0.0 && u < 1.0)) {
            return Err(Error::invalid("quantile levels must lie in (0, 1)"));
        }
        Ok(self.conditional(x, READOUT_BINS)?.quantiles(levels))
    }

    /// Normalized share of split gain per feature over the used trees.
    pub fn importance(&self) -> Vec<f64> {
        importance(self.trees.iter(), self.n_features())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parse a model, rejecting unknown schema versions and malformed content.
    pub fn from_json(s: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(s)?;
        let version = v
            .get("schema_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::invalid("model has no schema_version"))?;
        if version != u64::from(SCHEMA_VERSION) {
            return Err(Error::SchemaVersion(version.min(u64::from(u32::MAX)) as u32));
        }
        let model: Self = serde_json::from_value(v)?;
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.basis.validate()?;
        let k = self.basis.dim();
        if self.basis.raw().domain() != (self.grid.lo(), self.grid.hi()) {
            return Err(Error::invalid("basis domain does not match the grid"));
        }
        BinGrid::new(self.grid.lo(), self.grid.hi(), self.grid.bins())?;
        if let CarryingDensity::Gaussian { mean, sd } = self.kappa {
            CarryingDensity::gaussian(mean, sd)?;
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) || !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::invalid("invalid lambda or eta"));
        }
        let (a, b) = self.response_range;
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::invalid("invalid response range"));
        }
        for t in &self.trees {
            t.validate(self.n_features(), k)?;
        }
        if let Some(p) = &self.pretreatment {
            p.validate()?;
            if p.centering.as_ref().is_some_and(|c| c.n_features != self.n_features()) {
                return Err(Error::invalid("centering model covariate count mismatch"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lindsey::BinnedSample;
    use crate::simdata::{generate, SimKind, SimSpec};
    use crate::tree::{model_covariance, node_fit, quadratic_gain, split_gain};
    use nalgebra::DVector;
    use rand::Rng;

    fn small_design(k: usize, bins: usize) -> (SplineBasis, BinGrid, DMatrix<f64>) {
        let basis = SplineBasis::equally_spaced(0.0, 1.0, k).unwrap();
        let grid = BinGrid::new(0.0, 1.0, bins).unwrap();
        let design = design_matrix(&basis, &grid);
        (basis, grid, design)
    }

    fn random_rows(rng: &mut impl Rng, n: usize, bins: usize) -> Vec<f64> {
        let mut rows = Vec::with_capacity(n * bins);
        for _ in 0..n {
            let e: Vec<f64> = (0..bins).map(|_| rng.random_range(-1.5..1.5)).collect();
            rows.extend(softmax(&e));
        }
        rows
    }

    fn draw_bins(rng: &mut impl Rng, rows: &[f64], bins: usize) -> Vec<usize> {
        rows.chunks_exact(bins)
            .map(|row| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                row.iter()
                    .position(|p| {
                        acc += p;
                        u < acc
                    })
                    .unwrap_or(bins - 1)
            })
            .collect()
    }

    fn counts_of(sample_bins: &[usize], bins: usize) -> Vec<f64> {
        BinnedSample::from_indices(sample_bins.iter().copied(), bins).counts
    }

    /// `Σ_i log p̃_{i,b(i)}(γ)` for a node, written directly.
    fn node_loglik(rows: &[f64], sample_bins: &[usize], design: &DMatrix<f64>, gamma: &[f64]) -> f64 {
        let (bins, k) = design.shape();
        let lin: Vec<f64> = (0..bins)
            .map(|b| (0..k).map(|j| design[(b, j)] * gamma[j]).sum())
            .collect();
        rows.chunks_exact(bins)
            .zip(sample_bins)
            .map(|(row, &b)| {
                let z: f64 = row.iter().zip(&lin).map(|(p, l)| p * l.exp()).sum();
                row[b].ln() + lin[b] - z.ln()
            })
            .sum()
    }

    /// Independent maximizer: Newton's method on central-difference
    /// derivatives, with backtracking.
    fn maximize(f: impl Fn(&[f64]) -> f64, k: usize) -> Vec<f64> {
        let h = 1e-4;
        let at = |x: &[f64], moves: &[(usize, f64)]| {
            let mut y = x.to_vec();
            for &(j, d) in moves {
                y[j] += d;
            }
            f(&y)
        };
        let mut x = vec![0.0; k];
        for _ in 0..100 {
            let fx = f(&x);
            let g = DVector::from_fn(k, |j, _| (at(&x, &[(j, h)]) - at(&x, &[(j, -h)])) / (2.0 * h));
            let hess = DMatrix::from_fn(k, k, |i, j| {
                (at(&x, &[(i, h), (j, h)]) - at(&x, &[(i, h), (j, -h)]) - at(&x, &[(i, -h), (j, h)])
                    + at(&x, &[(i, -h), (j, -h)]))
                    / (4.0 * h * h)
            });
            let dir = match (-hess).cholesky() {
                Some(c) => c.solve(&g),
                None => g.clone(),
            };
            let mut t = 1.0;
            while t > 1e-10 {
                let cand: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, d)| a + t * d).collect();
                if f(&cand) >= fx {
                    x = cand;
                    break;
                }
                t *= 0.5;
            }
            if g.norm() < 1e-9 || t <= 1e-10 {
                break;
            }
        }
        x
    }

    #[test]
    fn identical_rows_reduce_to_lindsey_fit() {
        let (basis, grid, design) = small_design(4, 12);
        let kappa = CarryingDensity::gaussian(0.5, 0.3).unwrap();
        let base = softmax(&carrying_offsets(&kappa, &grid));
        let n = 40;
        let rows: Vec<f64> = base.iter().copied().cycle().take(n * 12).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sample_bins = draw_bins(&mut rng, &rows, 12);
        let counts = counts_of(&sample_bins, 12);
        let lambda = 0.05;
        let fit = boost_node_fit(&rows, &counts, &design, basis.penalties(), lambda, 1e-10, 20).unwrap();
        assert!(fit.iterations <= 3, "{}", fit.iterations);
        let ctx = LindseyContext::new(&basis, &grid, &kappa);
        let plain = ctx
            .fit(
                &BinnedSample {
                    counts: counts.clone(),
                    n: n as f64,
                },
                lambda,
            )
            .unwrap();
        for (g, b) in fit.gamma.iter().zip(&plain.beta) {
            assert!((g - b).abs() < 1e-8, "{g} vs {b}");
        }
        for row in fit.rows.chunks_exact(12) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matching_counts_give_zero_update() {
        let (basis, _, design) = small_design(3, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows = random_rows(&mut rng, 25, 8);
        let mut counts = vec![0.0; 8];
        for row in rows.chunks_exact(8) {
            counts.iter_mut().zip(row).for_each(|(c, p)| *c += p);
        }
        let fit = boost_node_fit(&rows, &counts, &design, basis.penalties(), 0.0, 1e-5, 20).unwrap();
        assert_eq!(fit.iterations, 1);
        assert!(fit.gamma.iter().all(|g| g.abs() < 1e-8));
    }

    #[test]
    fn node_fit_converges_to_exact_maximizer() {
        let (basis, _, design) = small_design(3, 8);
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let rows = random_rows(&mut rng, 30, 8);
            let sample_bins = draw_bins(&mut rng, &rows, 8);
            let counts = counts_of(&sample_bins, 8);
            let fit = boost_node_fit(&rows, &counts, &design, basis.penalties(), 0.0, 1e-5, 20).unwrap();
            assert!(fit.last_step <= 1e-5);
            // KKT: observed and fitted mean statistics agree.
            let (resid, _) = residuals(&fit.rows, &sample_bins, &design);
            for j in 0..3 {
                let r: f64 = resid.chunks_exact(3).map(|c| c[j]).sum::<f64>() / 30.0;
                assert!(r.abs() <= 1e-5, "seed {seed} kkt {r}");
            }
            let oracle = maximize(|g| node_loglik(&rows, &sample_bins, &design, g), 3);
            let ours = node_loglik(&rows, &sample_bins, &design, &fit.gamma);
            let best = node_loglik(&rows, &sample_bins, &design, &oracle);
            assert!(ours >= best - 1e-4, "seed {seed}: {ours} vs {best}");
        }
    }

    #[test]
    fn residuals_vanish_at_unpenalized_optimum() {
        let (basis, _, design) = small_design(4, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows = random_rows(&mut rng, 60, 10);
        let sample_bins = draw_bins(&mut rng, &rows, 10);
        let counts = counts_of(&sample_bins, 10);
        let fit = boost_node_fit(&rows, &counts, &design, basis.penalties(), 0.0, 1e-10, 50).unwrap();
        let (resid, _) = residuals(&fit.rows, &sample_bins, &design);
        for j in 0..4 {
            let r: f64 = resid.chunks_exact(4).map(|c| c[j]).sum::<f64>() / 60.0;
            assert!(r.abs() < 1e-6);
        }
    }

    #[test]
    fn residuals_match_direct_computation() {
        // z(y) = y on midpoints: residual is y minus the tilted mean.
        let grid = BinGrid::new(0.0, 1.0, 5).unwrap();
        let design = DMatrix::from_fn(5, 1, |b, _| grid.midpoint(b));
        let row = [0.1, 0.2, 0.4, 0.2, 0.1];
        let (resid, cov) = residuals(&row, &[3], &design);
        let mean: f64 = row.iter().enumerate().map(|(b, p)| p * grid.midpoint(b)).sum();
        assert!((resid[0] - (grid.midpoint(3) - mean)).abs() < 1e-15);
        let var: f64 = row
            .iter()
            .enumerate()
            .map(|(b, p)| p * (grid.midpoint(b) - mean).powi(2))
            .sum();
        assert!((cov[(0, 0)] - var).abs() < 1e-15);

        let (_, _, design) = small_design(3, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows = random_rows(&mut rng, 7, 6);
        let sb = draw_bins(&mut rng, &rows, 6);
        let (resid, cov) = residuals(&rows, &sb, &design);
        let mut want_cov = DMatrix::<f64>::zeros(3, 3);
        for (i, row) in rows.chunks_exact(6).enumerate() {
            let (m, c) = model_covariance(&design, row);
            want_cov += c / 7.0;
            for j in 0..3 {
                assert!((resid[i * 3 + j] - (design[(sb[i], j)] - m[j])).abs() < 1e-14);
            }
        }
        assert!((cov - want_cov).abs().max() < 1e-14);
    }

    #[test]
    fn constant_tilt_gain_matches_tree_gain() {
        let (basis, grid, design) = small_design(5, 20);
        let kappa = CarryingDensity::Uniform;
        let base = softmax(&carrying_offsets(&kappa, &grid));
        let n = 80;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let bins: Vec<usize> = (0..n)
            .map(|i| {
                let b: usize = rng.random_range(0..10);
                if i < n / 2 { b } else { b + 10 }.min(19)
            })
            .collect();
        let rows: Vec<f64> = base.iter().copied().cycle().take(n * 20).collect();
        let lambda = 0.01;
        let idx: Vec<usize> = (0..n).collect();
        let counts = counts_of(&bins, 20);
        let nf = boost_node_fit(&rows, &counts, &design, basis.penalties(), n as f64 * lambda, 1e-12, 50).unwrap();
        let (resid, cov) = residuals(&nf.rows, &bins, &design);
        let metric = surrogate_metric(&cov, lambda, basis.penalties()).unwrap();
        let mean = |r: std::ops::Range<usize>| -> Vec<f64> {
            let len = r.len() as f64;
            (0..5)
                .map(|j| r.clone().map(|i| resid[i * 5 + j]).sum::<f64>() / len)
                .collect()
        };
        let (l, r) = (mean(0..30), mean(30..n));
        let diff: Vec<f64> = l.iter().zip(&r).map(|(a, b)| a - b).collect();
        let boost_gain = quadratic_gain(30, n - 30, &diff, &metric);

        let ctx = LindseyContext::new(&basis, &grid, &kappa);
        let parent = node_fit(&ctx, &bins, &idx, lambda).unwrap();
        let zbar = |ix: std::ops::Range<usize>| -> Vec<f64> {
            let len = ix.len() as f64;
            (0..5)
                .map(|j| ix.clone().map(|i| design[(bins[i], j)]).sum::<f64>() / len)
                .collect()
        };
        let tree_gain = split_gain(
            &parent,
            30,
            &zbar(0..30),
            n - 30,
            &zbar(30..n),
            lambda,
            basis.penalties(),
            10,
        )
        .unwrap();
        assert!(boost_gain > 0.0);
        assert!(
            (boost_gain - tree_gain).abs() <= 1e-8 * tree_gain.max(1.0),
            "{boost_gain} vs {tree_gain}"
        );
    }

    fn lgd(n: usize, d: usize, seed: u64) -> Dataset {
        generate(&SimSpec::new(SimKind::Lgd, n, d, seed)).unwrap()
    }

    #[test]
    fn single_root_tree_is_global_fit() {
        let data = lgd(300, 3, 6);
        let cfg = BoostConfig {
            n_trees: 1,
            max_depth: 0,
            eta: 1.0,
            inner_eps: 1e-11,
            inner_max_iter: 50,
            ..Default::default()
        };
        let model = fit(&data, None, &cfg).unwrap();
        let y = data.response().unwrap();
        let binned = discretize(y, &model.grid).unwrap();
        let ctx = LindseyContext::new(&model.basis, &model.grid, &model.kappa);
        let global = ctx.fit(&binned, model.lambda * 300.0).unwrap();
        let p = model.predict_probs(&data.row(0)).unwrap();
        for (a, b) in p.iter().zip(&global.cell_probs) {
            assert!((a - b).abs() < 1e-8);
        }
        // Same prediction everywhere.
        assert_eq!(p, model.predict_probs(&data.row(17)).unwrap());
    }

    #[test]
    fn empty_model_predicts_carrying_density() {
        let data = lgd(200, 2, 7);
        let mut model = fit(
            &data,
            None,
            &BoostConfig {
                n_trees: 3,
                ..Default::default()
            },
        )
        .unwrap();
        model.trees.clear();
        let base = softmax(&carrying_offsets(&model.kappa, &model.grid));
        let p = model.predict_probs(&[0.1, 0.2]).unwrap();
        assert!(p.iter().zip(&base).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn predictions_are_normalized_and_monotone() {
        let data = lgd(400, 3, 8);
        let model = fit(
            &data,
            None,
            &BoostConfig {
                n_trees: 40,
                eta: 0.1,
                ..Default::default()
            },
        )
        .unwrap();
        let grid = model.output_grid(60).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p = model.predict_probs(&x).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-8);
            let dens = model.predict_density(&x, &grid).unwrap();
            assert!((dens.iter().sum::<f64>() * grid.width() - 1.0).abs() < 1e-8);
            let ys: Vec<f64> = (0..40).map(|i| -3.0 + 0.15 * i as f64).collect();
            let c = model.predict_cdf(&x, &ys).unwrap();
            assert!(c.windows(2).all(|w| w[0] <= w[1]));
            assert_eq!(model.predict_cdf(&x, &[model.grid.hi()]).unwrap()[0], 1.0);
            let q = model.predict_quantiles(&x, &[0.05, 0.25, 0.5, 0.75, 0.95]).unwrap();
            assert!(q.windows(2).all(|w| w[0] <= w[1]));
        }
        assert!(model.predict_quantiles(&[0.0; 3], &[1.0]).is_err());
        assert!(model.predict_probs(&[0.0; 2]).is_err());
    }

    #[test]
    fn training_loglik_rises() {
        let data = lgd(400, 4, 10);
        let model = fit(
            &data,
            None,
            &BoostConfig {
                n_trees: 100,
                eta: 0.1,
                ..Default::default()
            },
        )
        .unwrap();
        let ll: Vec<f64> = model.diagnostics.iter().map(|d| d.train_loglik).collect();
        let ups = ll.windows(2).filter(|w| w[1] >= w[0] - 1e-12).count();
        assert!(ups as f64 >= 0.99 * (ll.len() - 1) as f64, "{ups} of {}", ll.len() - 1);
        assert!(ll[ll.len() - 1] > ll[0]);
    }

    #[test]
    fn symmetric_fit_has_central_median() {
        // Symmetric data with a uniform carrying density and no covariate
        // signal gives a near-symmetric root fit.
        let mut y: Vec<f64> = (0..200).map(|i| -1.0 + 2.0 * (i as f64 + 0.5) / 200.0).collect();
        y.extend(y.iter().map(|v| v * 0.5).collect::<Vec<_>>());
        let n = y.len();
        let data = Dataset::from_columns(vec![vec![0.0; n]], Some(y)).unwrap();
        let cfg = BoostConfig {
            n_trees: 1,
            max_depth: 0,
            eta: 1.0,
            carrying: CarryingKind::Uniform,
            ..Default::default()
        };
        let model = fit(&data, None, &cfg).unwrap();
        let med = model.predict_quantiles(&[0.0], &[0.5]).unwrap()[0];
        assert!(med.abs() < 0.02, "{med}");
    }

    #[test]
    fn json_round_trip_is_exact() {
        let data = lgd(300, 3, 11);
        let valid = lgd(200, 3, 12);
        let model = fit(
            &data,
            Some(&valid),
            &BoostConfig {
                n_trees: 30,
                eta: 0.1,
                ..Default::default()
            },
        )
        .unwrap();
        let back = BoostModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
        let grid = model.output_grid(50).unwrap();
        for i in 0..50 {
            let x = valid.row(i);
            let a = model.predict_density(&x, &grid).unwrap();
            let b = back.predict_density(&x, &grid).unwrap();
            assert!(a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
    }

    #[test]
    fn unknown_schema_version_is_rejected() {
        let data = lgd(100, 2, 13);
        let model = fit(
            &data,
            None,
            &BoostConfig {
                n_trees: 2,
                ..Default::default()
            },
        )
        .unwrap();
        let js = model
            .to_json()
            .unwrap()
            .replacen("\"schema_version\": 1", "\"schema_version\": 2", 1);
        assert!(matches!(BoostModel::from_json(&js), Err(Error::SchemaVersion(2))));
        assert!(BoostModel::from_json("{}").is_err());
    }

    #[test]
    fn fitting_is_deterministic() {
        let data = lgd(300, 4, 14);
        let cfg = BoostConfig {
            n_trees: 20,
            eta: 0.1,
            validation_fraction: 0.25,
            seed: 3,
            ..Default::default()
        };
        let a = fit(&data, None, &cfg).unwrap().to_json().unwrap();
        let b = fit(&data, None, &cfg).unwrap().to_json().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn validation_selects_best_prefix() {
        let data = lgd(300, 3, 15);
        let valid = lgd(300, 3, 16);
        let model = fit(
            &data,
            Some(&valid),
            &BoostConfig {
                n_trees: 60,
                eta: 0.2,
                patience: 10,
                ..Default::default()
            },
        )
        .unwrap();
        let v: Vec<f64> = model.diagnostics.iter().map(|d| d.validation_loglik.unwrap()).collect();
        let best = (0..v.len())
            .max_by(|&a, &b| v[a].total_cmp(&v[b]).then(b.cmp(&a)))
            .unwrap();
        assert_eq!(model.selected_iteration, best);
        assert_eq!(model.trees.len(), best);
    }

    #[test]
    fn config_validation() {
        assert!(BoostConfig {
            eta: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(BoostConfig {
            eta: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(BoostConfig {
            n_trees: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(BoostConfig {
            df: 11.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(BoostConfig::default().validate().is_ok());
    }
}
