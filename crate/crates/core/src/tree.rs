//! Recursive partitioning on the covariates.
//!
//! The split search is generic: every node supplies one statistic vector per
//! sample and a metric matrix `M`, and a candidate split scores
//! `n_L n_R / (2n) · (s̄_L − s̄_R)ᵀ M (s̄_L − s̄_R)`. LinCDE trees use the
//! sufficient statistics with `M = (H + 2λΩ + εI)⁻¹`; boosting uses residuals;
//! squared-error regression uses the raw residual with `M = 1`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::SplineBasis;
use crate::error::{Error, Result};
use crate::lindsey::{BinGrid, BinnedSample, CarryingDensity, LindseyContext, LindseyFit};

pub const DEFAULT_MIN_NODE: usize = 10;
pub const DEFAULT_CANDIDATES: usize = 30;

/// How split thresholds are proposed per feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "count", rename_all = "snake_case")]
pub enum CandidateGrid {
    /// Thresholds at levels `j / (S + 1)` of the node's covariate values.
    Quantiles(usize),
    /// Every midpoint between consecutive distinct values.
    AllMidpoints,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_node: usize,
    pub gain_threshold: f64,
    pub candidates: CandidateGrid,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            max_depth: 2,
            min_node: DEFAULT_MIN_NODE,
            gain_threshold: 0.0,
            candidates: CandidateGrid::Quantiles(DEFAULT_CANDIDATES),
        }
    }
}

impl TreeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_node == 0 {
            return Err(Error::invalid("min_node must be at least 1"));
        }
        if !(self.gain_threshold >= 0.0 && self.gain_threshold.is_finite()) {
            return Err(Error::invalid("gain_threshold must be finite and >= 0"));
        }
        if self.candidates == CandidateGrid::Quantiles(0) {
            return Err(Error::invalid("need at least one candidate split"));
        }
        Ok(())
    }
}

/// A chosen split: samples with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
    pub n_left: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        gain: f64,
    },
    Leaf {
        value: Vec<f64>,
        n: usize,
    },
}

/// Binary tree stored as a node arena; the root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
    /// Realized split gain per feature.
    pub gains: Vec<f64>,
}

impl Tree {
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if x[*feature] <= *threshold { *left } else { *right },
                TreeNode::Leaf { .. } => return i,
            }
        }
    }

    pub fn value(&self, x: &[f64]) -> &[f64] {
        match &self.nodes[self.leaf_index(x)] {
            TreeNode::Leaf { value, .. } => value,
            TreeNode::Split { .. } => unreachable!("leaf_index returns a leaf"),
        }
    }

    pub fn leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                TreeNode::Split { left, right, .. } => 1 + walk(t, *left).max(walk(t, *right)),
                TreeNode::Leaf { .. } => 0,
            }
        }
        walk(self, 0)
    }

    pub fn leaf_values_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.nodes.iter_mut().filter_map(|n| match n {
            TreeNode::Leaf { value, .. } => Some(value),
            TreeNode::Split { .. } => None,
        })
    }

    pub(crate) fn validate(&self, n_features: usize, dim: usize) -> Result<()> {
        if self.nodes.is_empty() || self.gains.len() != n_features {
            return Err(Error::invalid("malformed tree"));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            match node {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    // children always come after their parent, which rules out cycles
                    if *feature >= n_features
                        || !threshold.is_finite()
                        || *left <= i
                        || *right <= i
                        || *left >= self.nodes.len()
                        || *right >= self.nodes.len()
                    {
                        return Err(Error::invalid(format!("malformed split node {i}")));
                    }
                }
                TreeNode::Leaf { value, .. } => {
                    if value.len() != dim || value.iter().any(|v| !v.is_finite()) {
                        return Err(Error::invalid(format!("malformed leaf node {i}")));
                    }
                }
            }
        }
        if self.gains.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::invalid("negative or non-finite gain ledger"));
        }
        Ok(())
    }
}

/// What a node supplies to the grower.
pub(crate) struct NodeEval {
    /// Leaf payload if the node ends up a leaf.
    pub value: Vec<f64>,
    /// Per-sample statistics aligned with the node's index slice, row-major.
    /// `None` when the node cannot split.
    pub split: Option<(Vec<f64>, DMatrix<f64>)>,
}

/// Grow a tree depth-first. `eval` is called once per node with the node's
/// samples, its id and whether a split is still allowed there.
pub(crate) fn grow<F>(cols: &[Vec<f64>], idx: Vec<usize>, cfg: &TreeConfig, mut eval: F) -> Result<Tree>
where
    F: FnMut(&[usize], usize, bool) -> Result<NodeEval>,
{
    cfg.validate()?;
    let mut tree = Tree {
        nodes: Vec::new(),
        gains: vec![0.0; cols.len()],
    };
    grow_node(cols, idx, 0, cfg, &mut eval, &mut tree)?;
    Ok(tree)
}

fn grow_node<F>(
    cols: &[Vec<f64>],
    idx: Vec<usize>,
    depth: usize,
    cfg: &TreeConfig,
    eval: &mut F,
    tree: &mut Tree,
) -> Result<usize>
where
    F: FnMut(&[usize], usize, bool) -> Result<NodeEval>,
{
    let id = tree.nodes.len();
    tree.nodes.push(TreeNode::Leaf {
        value: Vec::new(),
        n: idx.len(),
    });
    let can_split = depth < cfg.max_depth && idx.len() >= 2 * cfg.min_node;
    let node = eval(&idx, id, can_split)?;
    let choice = match (&node.split, can_split) {
        (Some((stats, metric)), true) => find_best_split(cols, &idx, stats, metric, cfg),
        _ => None,
    };
    let Some(choice) = choice else {
        tree.nodes[id] = TreeNode::Leaf {
            value: node.value,
            n: idx.len(),
        };
        return Ok(id);
    };
    drop(node);
    let col = &cols[choice.feature];
    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| col[i] <= choice.threshold);
    tree.gains[choice.feature] += choice.gain;
    let left = grow_node(cols, left_idx, depth + 1, cfg, eval, tree)?;
    let right = grow_node(cols, right_idx, depth + 1, cfg, eval, tree)?;
    tree.nodes[id] = TreeNode::Split {
        feature: choice.feature,
        threshold: choice.threshold,
        left,
        right,
        gain: choice.gain,
    };
    Ok(id)
}

/// Candidate thresholds for the sorted values of one feature in a node.
pub fn candidate_thresholds(sorted: &[f64], grid: CandidateGrid) -> Vec<f64> {
    let m = sorted.len();
    if m < 2 || sorted[0] == sorted[m - 1] {
        return Vec::new();
    }
    let mut out = match grid {
        CandidateGrid::Quantiles(s) => (1..=s)
            .map(|j| {
                let h = j as f64 / (s + 1) as f64 * (m - 1) as f64;
                let lo = h.floor() as usize;
                let hi = (lo + 1).min(m - 1);
                sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
            })
            .collect::<Vec<_>>(),
        CandidateGrid::AllMidpoints => sorted
            .windows(2)
            .filter(|w| w[1] > w[0])
            .map(|w| 0.5 * (w[0] + w[1]))
            .collect(),
    };
    out.dedup();
    // thresholds at or above the maximum send every sample left
    out.retain(|&t| t < sorted[m - 1]);
    out
}

/// `n_L n_R / (2n) · dᵀ M d`.
pub fn quadratic_gain(n_left: usize, n_right: usize, diff: &[f64], metric: &DMatrix<f64>) -> f64 {
    let k = diff.len();
    let mut q = 0.0;
    for i in 0..k {
        let mut row = 0.0;
        for j in 0..k {
            row += metric[(i, j)] * diff[j];
        }
        q += diff[i] * row;
    }
    let n = (n_left + n_right) as f64;
    (n_left as f64 * n_right as f64 / (2.0 * n) * q).max(0.0)
}

/// Best split over all features. `stats` is row-major, aligned with `idx`.
pub fn find_best_split(
    cols: &[Vec<f64>],
    idx: &[usize],
    stats: &[f64],
    metric: &DMatrix<f64>,
    cfg: &TreeConfig,
) -> Option<SplitChoice> {
    let n = idx.len();
    if n == 0 {
        return None;
    }
    let k = stats.len() / n;
    let mut total = vec![0.0; k];
    for r in stats.chunks_exact(k) {
        for j in 0..k {
            total[j] += r[j];
        }
    }
    let per_feature: Vec<Option<SplitChoice>> = cols
        .par_iter()
        .enumerate()
        .map(|(f, col)| best_on_feature(f, col, idx, stats, k, &total, metric, cfg))
        .collect();
    let mut best: Option<SplitChoice> = None;
    for c in per_feature.into_iter().flatten() {
        if best.is_none_or(|b| c.gain > b.gain) {
            best = Some(c);
        }
    }
    best.filter(|b| b.gain > cfg.gain_threshold)
}

#[allow(clippy::too_many_arguments)]
fn best_on_feature(
    feature: usize,
    col: &[f64],
    idx: &[usize],
    stats: &[f64],
    k: usize,
    total: &[f64],
    metric: &DMatrix<f64>,
    cfg: &TreeConfig,
) -> Option<SplitChoice> {
    let n = idx.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| col[idx[a]].total_cmp(&col[idx[b]]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&p| col[idx[p]]).collect();
    let thresholds = candidate_thresholds(&sorted, cfg.candidates);
    let mut left = vec![0.0; k];
    let mut diff = vec![0.0; k];
    let mut n_left = 0usize;
    let mut best: Option<SplitChoice> = None;
    for t in thresholds {
        while n_left < n && sorted[n_left] <= t {
            let row = &stats[order[n_left] * k..(order[n_left] + 1) * k];
            for j in 0..k {
                left[j] += row[j];
            }
            n_left += 1;
        }
        let n_right = n - n_left;
        if n_left < cfg.min_node || n_right < cfg.min_node {
            continue;
        }
        for j in 0..k {
            diff[j] = left[j] / n_left as f64 - (total[j] - left[j]) / n_right as f64;
        }
        let gain = quadratic_gain(n_left, n_right, &diff, metric);
        if best.is_none_or(|b| gain > b.gain) {
            best = Some(SplitChoice {
                feature,
                threshold: t,
                gain,
                n_left,
            });
        }
    }
    best
}

/// Per-node Lindsey fit and the covariance of `z` under its cell probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeStats {
    pub n: usize,
    pub zbar: Vec<f64>,
    pub fit: LindseyFit,
    pub hessian: DMatrix<f64>,
}

/// `Σ_b p_b z_b z_bᵀ − m mᵀ` with `m = Σ_b p_b z_b`.
pub fn model_covariance(design: &DMatrix<f64>, probs: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let (b, k) = design.shape();
    let mut mean = vec![0.0; k];
    let mut h = DMatrix::zeros(k, k);
    for i in 0..b {
        let p = probs[i];
        for r in 0..k {
            let zr = design[(i, r)];
            mean[r] += p * zr;
            for c in 0..=r {
                h[(r, c)] += p * zr * design[(i, c)];
            }
        }
    }
    for r in 0..k {
        for c in 0..=r {
            h[(r, c)] -= mean[r] * mean[c];
            h[(c, r)] = h[(r, c)];
        }
    }
    (mean, h)
}

/// `(H + 2λΩ + εI)⁻¹` with `ε = 1e-3 · tr(H) / k`.
pub fn gain_metric(hessian: &DMatrix<f64>, lambda: f64, penalties: &[f64]) -> Result<DMatrix<f64>> {
    let k = hessian.nrows();
    let mut eps = 1e-3 * hessian.trace() / k as f64;
    if !(eps > 0.0) {
        eps = 1e-12;
    }
    let mut a = hessian.clone();
    for j in 0..k {
        a[(j, j)] += eps + 2.0 * lambda * penalties[j];
    }
    let inv = a
        .try_inverse()
        .ok_or_else(|| Error::NumericFailure("singular split-gain matrix".into()))?;
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericFailure("non-finite split-gain matrix".into()));
    }
    Ok(inv)
}

/// Lindsey fit on the samples in one node (ridge `n_R · λ`).
pub fn node_fit(ctx: &LindseyContext, bins: &[usize], idx: &[usize], lambda: f64) -> Result<NodeStats> {
    let sample = BinnedSample::from_indices(idx.iter().map(|&i| bins[i]), ctx.grid.bins());
    let fit = ctx.fit(&sample, idx.len() as f64 * lambda)?;
    let (_, hessian) = model_covariance(&ctx.design, &fit.cell_probs);
    let k = ctx.basis.dim();
    let mut zbar = vec![0.0; k];
    for &i in idx {
        for j in 0..k {
            zbar[j] += ctx.design[(bins[i], j)];
        }
    }
    zbar.iter_mut().for_each(|v| *v /= idx.len() as f64);
    Ok(NodeStats {
        n: idx.len(),
        zbar,
        fit,
        hessian,
    })
}

/// Quadratic approximation of the improvement from splitting `parent` into
/// children with the given sizes and mean statistics.
pub fn split_gain(
    parent: &NodeStats,
    n_left: usize,
    zbar_left: &[f64],
    n_right: usize,
    zbar_right: &[f64],
    lambda: f64,
    penalties: &[f64],
    min_node: usize,
) -> Result<f64> {
    if n_left < min_node || n_right < min_node {
        return Ok(0.0);
    }
    let metric = gain_metric(&parent.hessian, lambda, penalties)?;
    let diff: Vec<f64> = zbar_left.iter().zip(zbar_right).map(|(a, b)| a - b).collect();
    Ok(quadratic_gain(n_left, n_right, &diff, &metric))
}

/// Penalized multinomial log-likelihood `Σ_b n_b log p_b − n λ Σ ω β²` of a fit.
pub fn penalized_loglik(counts: &[f64], fit: &LindseyFit, lambda: f64, basis: &SplineBasis) -> f64 {
    let n: f64 = counts.iter().sum();
    let ll: f64 = counts
        .iter()
        .zip(&fit.cell_probs)
        .filter(|(c, _)| **c > 0.0)
        .map(|(c, p)| c * p.ln())
        .sum();
    ll - n * lambda * basis.penalty(&fit.beta)
}

/// Exact improvement: refit both children and compare with the parent fit.
pub fn exact_split_improvement(
    ctx: &LindseyContext,
    bins: &[usize],
    left: &[usize],
    right: &[usize],
    lambda: f64,
) -> Result<f64> {
    let counts = |ix: &[usize]| BinnedSample::from_indices(ix.iter().map(|&i| bins[i]), ctx.grid.bins()).counts;
    let all: Vec<usize> = left.iter().chain(right).copied().collect();
    let parent = node_fit(ctx, bins, &all, lambda)?;
    let l = node_fit(ctx, bins, left, lambda)?;
    let r = node_fit(ctx, bins, right, lambda)?;
    let ll = |c: &[f64], s: &NodeStats| penalized_loglik(c, &s.fit, lambda, ctx.basis);
    Ok(ll(&counts(left), &l) + ll(&counts(right), &r) - ll(&counts(&all), &parent))
}

/// Standalone LinCDE tree: each leaf carries its own Lindsey coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinCdeTree {
    pub basis: SplineBasis,
    pub grid: BinGrid,
    pub kappa: CarryingDensity,
    /// Per-sample ridge multiplier.
    pub lambda: f64,
    pub tree: Tree,
}

impl LinCdeTree {
    /// Cell probabilities at `x`.
    pub fn predict_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.tree.gains.len() {
            return Err(Error::invalid(format!(
                "expected {} covariates, got {}",
                self.tree.gains.len(),
                x.len()
            )));
        }
        let ctx = LindseyContext::new(&self.basis, &self.grid, &self.kappa);
        Ok(crate::lindsey::cell_probabilities(
            &ctx.design,
            &ctx.offsets,
            self.tree.value(x),
        ))
    }
}

/// Grow a LinCDE tree on covariate columns `cols` and responses `y`.
pub fn grow_tree(
    cols: &[Vec<f64>],
    y: &[f64],
    basis: &SplineBasis,
    grid: &BinGrid,
    kappa: &CarryingDensity,
    lambda: f64,
    cfg: &TreeConfig,
) -> Result<LinCdeTree> {
    let n = y.len();
    if cols.iter().any(|c| c.len() != n) {
        return Err(Error::invalid("covariate columns differ in length from y"));
    }
    if cfg.max_depth > 0 && n < 2 * cfg.min_node {
        return Err(Error::invalid(format!(
            "{n} samples cannot be split with min_node {}",
            cfg.min_node
        )));
    }
    let bins = y.iter().map(|&v| grid.index(v)).collect::<Result<Vec<_>>>()?;
    let ctx = LindseyContext::new(basis, grid, kappa);
    let k = basis.dim();
    let tree = grow(cols, (0..n).collect(), cfg, |idx, id, can_split| {
        let stats = node_fit(&ctx, &bins, idx, lambda).map_err(|e| e.with_context(format!("node {id}")))?;
        let split = if can_split {
            let mut rows = Vec::with_capacity(idx.len() * k);
            for &i in idx {
                rows.extend((0..k).map(|j| ctx.design[(bins[i], j)]));
            }
            Some((rows, gain_metric(&stats.hessian, lambda, basis.penalties())?))
        } else {
            None
        };
        Ok(NodeEval {
            value: stats.fit.beta,
            split,
        })
    })?;
    Ok(LinCdeTree {
        basis: basis.clone(),
        grid: *grid,
        kappa: *kappa,
        lambda,
        tree,
    })
}

/// Normalized per-feature share of realized split gain across trees.
/// A zero total falls back to uniform scores (logged).
pub fn importance<'a>(trees: impl IntoIterator<Item = &'a Tree>, n_features: usize) -> Vec<f64> {
    let mut total = vec![0.0; n_features];
    for t in trees {
        for (acc, g) in total.iter_mut().zip(&t.gains) {
            *acc += g;
        }
    }
    let sum: f64 = total.iter().sum();
    if !(sum > 0.0) {
        log::warn!("no realized split gain; importance is uniform");
        return vec![1.0 / n_features as f64; n_features];
    }
    total.iter().map(|g| g / sum).collect()
}
