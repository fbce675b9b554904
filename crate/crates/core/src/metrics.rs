//! Evaluation of conditional density, CDF and quantile estimates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boost::{BoostModel, ConditionalDensity, READOUT_BINS};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::simdata::{oracle, SimKind};

/// Floor applied to bin masses before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;
/// Quantile levels used by AAE and CVM.
pub const CDF_GRID: usize = 100;
/// Local maxima below this share of the peak height are not counted as modes.
pub const MODE_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Loglik {
    pub mean: f64,
    /// Points whose bin mass was raised to the floor.
    pub floored: usize,
    /// Points outside the readout range, scored in the nearest bin.
    pub clamped: usize,
}

/// Log density of `y` read piecewise-constant from a conditional readout.
/// Returns the value and whether the floor and clamping kicked in.
pub fn point_loglik(c: &ConditionalDensity, y: f64) -> (f64, bool, bool) {
    let (mass, jac, clamped) = c.mass_clamped(y);
    let floored = mass < PROB_FLOOR;
    let v = mass.max(PROB_FLOOR).ln() - c.readout.width().ln() + jac.ln();
    (v, floored, clamped)
}

fn summarize(terms: &[(f64, bool, bool)]) -> Result<Loglik> {
    if terms.is_empty() {
        return Err(Error::invalid("no test points"));
    }
    let floored = terms.iter().filter(|t| t.1).count();
    let clamped = terms.iter().filter(|t| t.2).count();
    if floored > 0 || clamped > 0 {
        log::warn!("loglik: {floored} floored and {clamped} clamped test points");
    }
    Ok(Loglik {
        mean: terms.iter().map(|t| t.0).sum::<f64>() / terms.len() as f64,
        floored,
        clamped,
    })
}

fn conditionals(model: &BoostModel, data: &Dataset) -> Result<Vec<ConditionalDensity>> {
    (0..data.n())
        .into_par_iter()
        .map(|i| model.conditional(&data.row(i), READOUT_BINS))
        .collect()
}

/// Mean test log-likelihood of a fitted model.
pub fn loglik(model: &BoostModel, data: &Dataset) -> Result<Loglik> {
    let y = data.response()?;
    let cs = conditionals(model, data)?;
    let terms: Vec<_> = cs.iter().zip(y).map(|(c, &y)| point_loglik(c, y)).collect();
    summarize(&terms)
}

/// Marginal Gaussian fitted by maximum likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullModel {
    pub mean: f64,
    pub sd: f64,
}

impl NullModel {
    pub fn fit(y: &[f64]) -> Result<Self> {
        if y.len() < 2 {
            return Err(Error::invalid("need at least two responses"));
        }
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        if !(sd > 0.0) {
            return Err(Error::invalid("constant response"));
        }
        Ok(Self { mean, sd })
    }

    pub fn ln_pdf(&self, y: f64) -> f64 {
        let z = (y - self.mean) / self.sd;
        -0.5 * z * z - self.sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }

    pub fn loglik(&self, y: &[f64]) -> f64 {
        y.iter().map(|&v| self.ln_pdf(v)).sum::<f64>() / y.len() as f64
    }
}

/// Mean log-likelihood of the true conditional densities.
pub fn oracle_loglik(kind: &SimKind, data: &Dataset) -> Result<f64> {
    let y = data.response()?;
    let terms: Result<Vec<f64>> = (0..data.n())
        .into_par_iter()
        .map(|i| Ok(oracle(kind, &data.row(i))?.ln_pdf(y[i])))
        .collect();
    let terms = terms?;
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

/// Share of the oracle's improvement over the null achieved by a method.
pub fn goodness_of_fit(method: f64, null: f64, oracle: f64) -> Result<f64> {
    if !(oracle > null) {
        return Err(Error::UndefinedMetric(format!(
            "oracle loglik {oracle} does not exceed null loglik {null}"
        )));
    }
    Ok((method - null) / (oracle - null))
}

fn levels(m: usize) -> Result<Vec<f64>> {
    if m < 2 {
        return Err(Error::invalid("m must be at least 2"));
    }
    Ok((1..=m).map(|j| (j as f64 - 0.5) / m as f64).collect())
}

fn cdf_deviation<F, Q>(n: usize, m: usize, est_cdf: F, true_quantile: Q, power: i32) -> Result<f64>
where
    F: Fn(usize, f64) -> f64 + Sync,
    Q: Fn(usize, f64) -> f64 + Sync,
{
    let us = levels(m)?;
    if n == 0 {
        return Err(Error::invalid("no test points"));
    }
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            us.iter()
                .map(|&u| (est_cdf(i, true_quantile(i, u)) - u).abs().powi(power))
                .sum::<f64>()
        })
        .sum();
    Ok(total / (n * m) as f64)
}

/// Average absolute error `mean |F̂(q(u_j | x_i) | x_i) - u_j|` over `m`
/// midpoint levels `u_j = (j - 1/2)/m`.
pub fn aae<F, Q>(n: usize, m: usize, est_cdf: F, true_quantile: Q) -> Result<f64>
where
    F: Fn(usize, f64) -> f64 + Sync,
    Q: Fn(usize, f64) -> f64 + Sync,
{
    cdf_deviation(n, m, est_cdf, true_quantile, 1)
}

/// Cramér-von Mises analogue of [`aae`] with squared deviations.
pub fn cvm<F, Q>(n: usize, m: usize, est_cdf: F, true_quantile: Q) -> Result<f64>
where
    F: Fn(usize, f64) -> f64 + Sync,
    Q: Fn(usize, f64) -> f64 + Sync,
{
    cdf_deviation(n, m, est_cdf, true_quantile, 2)
}

/// Mean pinball loss at level `tau`.
pub fn quantile_loss(q: &[f64], y: &[f64], tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid("tau must lie in (0, 1)"));
    }
    if q.len() != y.len() || y.is_empty() {
        return Err(Error::invalid("quantiles and responses differ in length"));
    }
    Ok(q.iter()
        .zip(y)
        .map(|(&q, &y)| (y - q) * (tau - if y < q { 1.0 } else { 0.0 }))
        .sum::<f64>()
        / y.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalStat {
    pub nominal: f64,
    pub coverage: f64,
    pub width: f64,
}

/// Coverage and mean width of central intervals given per-point bounds.
pub fn interval_stats(lower: &[f64], upper: &[f64], y: &[f64], nominal: f64) -> Result<IntervalStat> {
    if !(nominal > 0.0 && nominal < 1.0) {
        return Err(Error::invalid("nominal level must lie in (0, 1)"));
    }
    if lower.len() != y.len() || upper.len() != y.len() || y.is_empty() {
        return Err(Error::invalid("bounds and responses differ in length"));
    }
    let n = y.len() as f64;
    let covered = (0..y.len()).filter(|&i| lower[i] <= y[i] && y[i] <= upper[i]).count();
    Ok(IntervalStat {
        nominal,
        coverage: covered as f64 / n,
        width: (0..y.len()).map(|i| upper[i] - lower[i]).sum::<f64>() / n,
    })
}

/// Bin densities from the inverse of a quantile function evaluated at bin
/// edges: `(F(e_{b+1}) - F(e_b)) / (e_{b+1} - e_b)`.
pub fn quantiles_to_density<F: Fn(f64) -> f64>(inverse: F, edges: &[f64]) -> Result<Vec<f64>> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("bin edges must be strictly increasing"));
    }
    let levels: Vec<f64> = edges.iter().map(|&e| inverse(e)).collect();
    if levels.iter().any(|v| !v.is_finite()) || levels.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("quantile function is not monotone"));
    }
    Ok(levels
        .windows(2)
        .zip(edges.windows(2))
        .map(|(l, e)| (l[1] - l[0]) / (e[1] - e[0]))
        .collect())
}

/// Number of interior local maxima whose height is at least
/// `threshold` times the global maximum. Plateaus count once.
pub fn count_modes(values: &[f64], threshold: f64) -> usize {
    let peak = values.iter().fold(0.0f64, |a, &v| a.max(v));
    if values.len() < 3 || peak <= 0.0 {
        return 0;
    }
    let mut modes = 0;
    let mut i = 1;
    while i + 1 < values.len() {
        if values[i] > values[i - 1] {
            let mut j = i;
            while j + 1 < values.len() && values[j + 1] == values[i] {
                j += 1;
            }
            if j + 1 < values.len() && values[j + 1] < values[i] && values[i] >= threshold * peak {
                modes += 1;
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    modes
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub loglik: f64,
    pub floored: usize,
    pub clamped: usize,
    pub null_loglik: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_loglik: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub goodness_of_fit: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aae: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cvm: Option<f64>,
    /// `(level, loss)` pairs.
    pub quantile_losses: Vec<(f64, f64)>,
    pub intervals: Vec<IntervalStat>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub quantile_levels: Vec<f64>,
    pub interval_levels: Vec<f64>,
    /// Marginal Gaussian baseline; fitted on the test responses when absent.
    pub null: Option<NullModel>,
    /// Simulation setting supplying the true distribution.
    pub oracle: Option<SimKind>,
    pub m: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            quantile_levels: vec![0.05, 0.25, 0.5, 0.75, 0.95],
            interval_levels: vec![0.5, 0.9],
            null: None,
            oracle: None,
            m: CDF_GRID,
        }
    }
}

/// Score a model on labelled test data.
pub fn evaluate(model: &BoostModel, data: &Dataset, opts: &EvalOptions) -> Result<EvalReport> {
    let y = data.response()?;
    let cs = conditionals(model, data)?;
    let terms: Vec<_> = cs.iter().zip(y).map(|(c, &y)| point_loglik(c, y)).collect();
    let ll = summarize(&terms)?;
    let null = match opts.null {
        Some(n) => n,
        None => NullModel::fit(y)?,
    };
    let null_ll = null.loglik(y);

    let mut quantile_losses = Vec::new();
    for &tau in &opts.quantile_levels {
        let q: Vec<f64> = cs.iter().map(|c| c.quantile(tau)).collect();
        quantile_losses.push((tau, quantile_loss(&q, y, tau)?));
    }
    let mut intervals = Vec::new();
    for &nominal in &opts.interval_levels {
        if !(nominal > 0.0 && nominal < 1.0) {
            return Err(Error::invalid("nominal level must lie in (0, 1)"));
        }
        let lo: Vec<f64> = cs.iter().map(|c| c.quantile((1.0 - nominal) / 2.0)).collect();
        let hi: Vec<f64> = cs.iter().map(|c| c.quantile((1.0 + nominal) / 2.0)).collect();
        intervals.push(interval_stats(&lo, &hi, y, nominal)?);
    }

    let (mut oracle_ll, mut gof, mut aae_v, mut cvm_v) = (None, None, None, None);
    if let Some(kind) = &opts.oracle {
        let o = oracle_loglik(kind, data)?;
        oracle_ll = Some(o);
        gof = Some(goodness_of_fit(ll.mean, null_ll, o)?);
        let truths: Result<Vec<_>> = (0..data.n()).map(|i| oracle(kind, &data.row(i))).collect();
        let truths = truths?;
        let est = |i: usize, v: f64| cs[i].cdf(v);
        let tq = |i: usize, u: f64| truths[i].quantile(u);
        aae_v = Some(aae(data.n(), opts.m, est, tq)?);
        cvm_v = Some(cvm(data.n(), opts.m, est, tq)?);
    }

    Ok(EvalReport {
        n: data.n(),
        loglik: ll.mean,
        floored: ll.floored,
        clamped: ll.clamped,
        null_loglik: null_ll,
        oracle_loglik: oracle_ll,
        goodness_of_fit: gof,
        aae: aae_v,
        cvm: cvm_v,
        quantile_losses,
        intervals,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Header and values for one flat CSV row. Missing metrics are empty.
    pub fn csv_row(&self) -> (Vec<String>, Vec<String>) {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        let mut h: Vec<String> = [
            "n",
            "loglik",
            "floored",
            "clamped",
            "null_loglik",
            "oracle_loglik",
            "goodness_of_fit",
            "aae",
            "cvm",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let mut v = vec![
            self.n.to_string(),
            self.loglik.to_string(),
            self.floored.to_string(),
            self.clamped.to_string(),
            self.null_loglik.to_string(),
            opt(self.oracle_loglik),
            opt(self.goodness_of_fit),
            opt(self.aae),
            opt(self.cvm),
        ];
        for (tau, loss) in &self.quantile_losses {
            h.push(format!("qloss_{tau}"));
            v.push(loss.to_string());
        }
        for s in &self.intervals {
            h.push(format!("coverage_{}", s.nominal));
            v.push(s.coverage.to_string());
            h.push(format!("width_{}", s.nominal));
            v.push(s.width.to_string());
        }
        (h, v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lindsey::BinGrid;
    use crate::pretreat::Transform;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use statrs::distribution::{ContinuousCDF, Normal};

    fn readout(lo: f64, hi: f64, probs: Vec<f64>) -> ConditionalDensity {
        ConditionalDensity {
            readout: BinGrid::new(lo, hi, probs.len()).unwrap(),
            probs,
            shift: 0.0,
            transform: Transform::Identity,
        }
    }

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn uniform_on_unit_interval_scores_zero() {
        let c = readout(0.0, 1.0, vec![0.25; 4]);
        for y in [0.01, 0.3, 0.77, 0.999] {
            let (v, f, cl) = point_loglik(&c, y);
            assert!(v.abs() < 1e-12);
            assert!(!f && !cl);
        }
    }

    #[test]
    fn discrete_toy_matches_enumeration() {
        // Bins of width 0.5 with masses p; sample frequencies equal p, so the
        // mean loglik is -H(p) - ln(0.5).
        let p = vec![0.1, 0.2, 0.3, 0.4];
        let c = readout(0.0, 2.0, p.clone());
        let mut terms = Vec::new();
        for (b, &pb) in p.iter().enumerate() {
            for _ in 0..(pb * 10.0).round() as usize {
                terms.push(point_loglik(&c, 0.25 + 0.5 * b as f64));
            }
        }
        let entropy: f64 = -p.iter().map(|q| q * q.ln()).sum::<f64>();
        let ll = summarize(&terms).unwrap();
        assert!((ll.mean - (-entropy - 0.5f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn floor_and_clamp_are_flagged() {
        let c = readout(0.0, 1.0, vec![0.0, 1.0]);
        let (v, floored, _) = point_loglik(&c, 0.2);
        assert!(floored && v.is_finite());
        let (_, _, clamped) = point_loglik(&c, 3.0);
        assert!(clamped);
    }

    #[test]
    fn null_gaussian_matches_entropy() {
        let y = normals(10_000, 1);
        let null = NullModel::fit(&y).unwrap();
        let expected = -0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        assert!((null.loglik(&y) - expected).abs() < 0.03);
    }

    #[test]
    fn goodness_of_fit_endpoints() {
        assert_eq!(goodness_of_fit(-1.5, -1.5, -1.0).unwrap(), 0.0);
        assert_eq!(goodness_of_fit(-1.0, -1.5, -1.0).unwrap(), 1.0);
        assert!(matches!(
            goodness_of_fit(-1.0, -1.0, -1.0),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn exact_cdf_has_zero_error() {
        let nd = Normal::new(0.0, 1.0).unwrap();
        let cdf = |_: usize, y: f64| nd.cdf(y);
        let q = |_: usize, u: f64| nd.inverse_cdf(u);
        assert!(aae(5, 100, cdf, q).unwrap() < 1e-9);
        assert!(cvm(5, 100, cdf, q).unwrap() < 1e-18);
        let id = |_: usize, v: f64| v;
        assert_eq!(aae(3, 100, id, id).unwrap(), 0.0);
        assert!(aae(5, 1, cdf, q).is_err());
    }

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn uniform_vs_gaussian_matches_integral() {
        let nd = Normal::new(0.0, 1.0).unwrap();
        let unif = |y: f64| ((y + 3.0) / 6.0).clamp(0.0, 1.0);
        let gauss = |y: f64| (-0.5 * y * y).exp() / (2.0 * std::f64::consts::PI).sqrt();
        // Change of variables u = Φ(y).
        let abs_int = simpson(|y| (unif(y) - nd.cdf(y)).abs() * gauss(y), -9.0, 9.0, 20_000);
        let sq_int = simpson(|y| (unif(y) - nd.cdf(y)).powi(2) * gauss(y), -9.0, 9.0, 20_000);
        let a = aae(1, 1000, |_, y| unif(y), |_, u| nd.inverse_cdf(u)).unwrap();
        let c = cvm(1, 1000, |_, y| unif(y), |_, u| nd.inverse_cdf(u)).unwrap();
        assert!((a - abs_int).abs() < 1e-3, "{a} {abs_int}");
        assert!((c - sq_int).abs() < 1e-3, "{c} {sq_int}");
    }

    #[test]
    fn median_loss_of_gaussian() {
        let y = normals(200_000, 2);
        let q = vec![0.0; y.len()];
        let loss = quantile_loss(&q, &y, 0.5).unwrap();
        let expected = 0.5 * (2.0 / std::f64::consts::PI).sqrt();
        assert!((loss - expected).abs() < 0.005, "{loss}");
        assert!(quantile_loss(&q, &y, 1.0).is_err());
    }

    #[test]
    fn low_constant_quantile_loss_is_scaled_mean() {
        let y = [1.0, 2.0, 4.0];
        let tau = 0.999;
        let loss = quantile_loss(&[0.0; 3], &y, tau).unwrap();
        assert!((loss - tau * 7.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_intervals_are_calibrated() {
        let y = normals(10_000, 3);
        let nd = Normal::new(0.0, 1.0).unwrap();
        let lo = vec![nd.inverse_cdf(0.05); y.len()];
        let hi = vec![nd.inverse_cdf(0.95); y.len()];
        let s = interval_stats(&lo, &hi, &y, 0.9).unwrap();
        let band = 2.0 * (0.9f64 * 0.1 / y.len() as f64).sqrt();
        assert!((s.coverage - 0.9).abs() < band, "{}", s.coverage);
        assert!((s.width - 2.0 * 1.6448536269514722).abs() < 1e-9);
    }

    #[test]
    fn uniform_quantiles_give_unit_density() {
        let edges: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let d = quantiles_to_density(|y| y, &edges).unwrap();
        assert!(d.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn gaussian_cdf_gives_gaussian_bins() {
        let nd = Normal::new(0.0, 1.0).unwrap();
        let edges: Vec<f64> = (0..=20).map(|i| -3.0 + 0.3 * i as f64).collect();
        let d = quantiles_to_density(|y| nd.cdf(y), &edges).unwrap();
        for (b, v) in d.iter().enumerate() {
            let mid = -3.0 + 0.3 * (b as f64 + 0.5);
            let pdf = (-0.5 * mid * mid).exp() / (2.0 * std::f64::consts::PI).sqrt();
            // Bin averages differ from midpoint values by about
            // (z^2 - 1) h^2 / 24, which reaches 2.7% in the outer bins.
            let tol = if mid.abs() < 2.5 { 0.02 } else { 0.03 };
            assert!((v / pdf - 1.0).abs() < tol, "bin {b}");
        }
        assert!(quantiles_to_density(|y: f64| -y, &edges).is_err());
    }

    #[test]
    fn finer_bins_raise_variance() {
        // Empirical CDF of 200 draws, repeated; compare across-repetition
        // variance of the bin densities.
        let reps = 200;
        let spread = |bins: usize| -> f64 {
            let edges: Vec<f64> = (0..=bins).map(|i| -2.0 + 4.0 * i as f64 / bins as f64).collect();
            let runs: Vec<Vec<f64>> = (0..reps)
                .map(|r| {
                    let mut y = normals(200, 100 + r);
                    y.sort_by(f64::total_cmp);
                    let ecdf = |t: f64| y.partition_point(|&v| v <= t) as f64 / y.len() as f64;
                    quantiles_to_density(ecdf, &edges).unwrap()
                })
                .collect();
            (0..bins)
                .map(|b| {
                    let m = runs.iter().map(|r| r[b]).sum::<f64>() / reps as f64;
                    runs.iter().map(|r| (r[b] - m).powi(2)).sum::<f64>() / (reps - 1) as f64
                })
                .sum::<f64>()
                / bins as f64
        };
        assert!(spread(50) > spread(20));
    }

    #[test]
    fn mode_counting() {
        assert_eq!(count_modes(&[0.0, 1.0, 0.0, 1.0, 0.0], MODE_THRESHOLD), 2);
        assert_eq!(count_modes(&[0.0, 1.0, 1.0, 0.5, 0.0], MODE_THRESHOLD), 1);
        assert_eq!(count_modes(&[0.0, 1.0, 0.0, 0.01, 0.0], MODE_THRESHOLD), 1);
        // Monotone edges are not interior modes.
        assert_eq!(count_modes(&[3.0, 2.0, 1.0], MODE_THRESHOLD), 0);
    }

    #[test]
    fn report_csv_shape() {
        let r = EvalReport {
            n: 3,
            loglik: -1.0,
            floored: 0,
            clamped: 0,
            null_loglik: -1.4,
            oracle_loglik: None,
            goodness_of_fit: None,
            aae: None,
            cvm: None,
            quantile_losses: vec![(0.5, 0.2)],
            intervals: vec![IntervalStat {
                nominal: 0.9,
                coverage: 0.9,
                width: 1.8,
            }],
        };
        let (h, v) = r.csv_row();
        assert_eq!(h.len(), v.len());
        assert!(h.contains(&"qloss_0.5".to_string()));
        let js = r.to_json().unwrap();
        assert!(!js.contains("aae"));
    }

    proptest! {
        #[test]
        fn pinball_minimized_by_empirical_quantile(
            y in prop::collection::vec(-5.0f64..5.0, 3..25),
            tau in 0.05f64..0.95,
        ) {
            let mut s = y.clone();
            s.sort_by(f64::total_cmp);
            let k = ((tau * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1;
            let best = quantile_loss(&vec![s[k]; y.len()], &y, tau).unwrap();
            for i in 0..=200 {
                let c = -5.5 + 11.0 * i as f64 / 200.0;
                let l = quantile_loss(&vec![c; y.len()], &y, tau).unwrap();
                prop_assert!(best <= l + 1e-12);
            }
        }

        #[test]
        fn cdf_errors_non_negative(shift in -1.0f64..1.0) {
            let nd = Normal::new(0.0, 1.0).unwrap();
            let a = aae(2, 50, |_, y| nd.cdf(y + shift), |_, u| nd.inverse_cdf(u)).unwrap();
            let c = cvm(2, 50, |_, y| nd.cdf(y + shift), |_, u| nd.inverse_cdf(u)).unwrap();
            prop_assert!(a >= 0.0 && c >= 0.0);
            prop_assert_eq!(a == 0.0, shift == 0.0);
        }
    }
}
