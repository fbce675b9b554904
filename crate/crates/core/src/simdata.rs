//! Seeded synthetic settings with exact conditional distributions.
//!
//! Covariates are i.i.d. `U[-1, 1]`. Draws use `ChaCha8Rng` seeded from
//! `SimSpec::seed`; stream 0 produces the covariates (column by column) and
//! stream 1 the responses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal as NormalSampler};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, Continuous, ContinuousCDF, Normal};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Which local density family the tree-structured settings switch between.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LocalVariant {
    Variance,
    Modality,
    Skewness,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SimKind {
    /// Gaussian with covariate-dependent mean and sd.
    Lgd,
    /// Gaussian or two-component mixture depending on `x2`.
    Lggmd,
    /// Three regions cut at `x1 = -0.2` and `x2 = 0`.
    TreeExample { variant: LocalVariant },
    /// Two regions cut at `x1 = 0`.
    StepExample { variant: LocalVariant },
    /// `y = x1 + 0.5 x2 e`.
    HeteroExample,
    /// Location-shifted bimodal mixture, `y = 3 x1 + w z1 + (1 - w) z2`.
    CenteringExample,
}

impl SimKind {
    /// Number of leading covariates the response depends on.
    pub fn required_features(&self) -> usize {
        match self {
            SimKind::Lgd | SimKind::TreeExample { .. } | SimKind::HeteroExample => 2,
            SimKind::Lggmd => 3,
            SimKind::StepExample { .. } | SimKind::CenteringExample => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    #[serde(flatten)]
    pub kind: SimKind,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
}

impl SimSpec {
    pub fn new(kind: SimKind, n: usize, d: usize, seed: u64) -> Self {
        Self { kind, n, d, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("n must be positive"));
        }
        if self.d < self.kind.required_features() {
            return Err(Error::invalid(format!(
                "d = {} is below the {} covariates this setting needs",
                self.d,
                self.kind.required_features()
            )));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s).map_err(|e| Error::invalid(format!("bad simulation spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// One Gaussian mixture component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub sd: f64,
}

/// Exact conditional distribution of `y` at one covariate vector.
#[derive(Debug, Clone, PartialEq)]
pub enum OracleDist {
    Mixture(Vec<Component>),
    /// Beta on `[0, 1]`.
    Beta {
        a: f64,
        b: f64,
    },
}

impl OracleDist {
    pub fn normal(mean: f64, sd: f64) -> Self {
        OracleDist::Mixture(vec![Component { weight: 1.0, mean, sd }])
    }

    pub fn pdf(&self, y: f64) -> f64 {
        match self {
            OracleDist::Mixture(cs) => cs.iter().map(|c| c.weight * gaussian(c).pdf(y)).sum(),
            OracleDist::Beta { a, b } => {
                if !(0.0..=1.0).contains(&y) {
                    0.0
                } else {
                    Beta::new(*a, *b).expect("valid beta").pdf(y)
                }
            }
        }
    }

    pub fn ln_pdf(&self, y: f64) -> f64 {
        self.pdf(y).ln()
    }

    pub fn cdf(&self, y: f64) -> f64 {
        match self {
            OracleDist::Mixture(cs) => cs
                .iter()
                .map(|c| c.weight * gaussian(c).cdf(y))
                .sum::<f64>()
                .clamp(0.0, 1.0),
            OracleDist::Beta { a, b } => {
                if y <= 0.0 {
                    0.0
                } else if y >= 1.0 {
                    1.0
                } else {
                    Beta::new(*a, *b).expect("valid beta").cdf(y)
                }
            }
        }
    }

    /// Quantile by bisection on the exact CDF, to an interval of width 1e-10.
    pub fn quantile(&self, u: f64) -> f64 {
        let (mut lo, mut hi) = self.support_hint();
        while self.cdf(lo) > u {
            lo -= hi - lo;
        }
        while self.cdf(hi) < u {
            hi += hi - lo;
        }
        while hi - lo > 1e-10 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn support_hint(&self) -> (f64, f64) {
        match self {
            OracleDist::Mixture(cs) => (
                cs.iter().map(|c| c.mean - 10.0 * c.sd).fold(f64::INFINITY, f64::min),
                cs.iter()
                    .map(|c| c.mean + 10.0 * c.sd)
                    .fold(f64::NEG_INFINITY, f64::max),
            ),
            OracleDist::Beta { .. } => (0.0, 1.0),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            OracleDist::Mixture(cs) => cs.iter().map(|c| c.weight * c.mean).sum(),
            OracleDist::Beta { a, b } => a / (a + b),
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            OracleDist::Mixture(cs) => {
                let m = self.mean();
                cs.iter().map(|c| c.weight * (c.sd * c.sd + (c.mean - m).powi(2))).sum()
            }
            OracleDist::Beta { a, b } => a * b / ((a + b).powi(2) * (a + b + 1.0)),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            OracleDist::Mixture(cs) => {
                let c = if cs.len() == 1 {
                    &cs[0]
                } else {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    cs.iter()
                        .find(|c| {
                            acc += c.weight;
                            u < acc
                        })
                        .unwrap_or(&cs[cs.len() - 1])
                };
                NormalSampler::new(c.mean, c.sd).expect("valid normal").sample(rng)
            }
            OracleDist::Beta { a, b } => rand_distr::Beta::new(*a, *b).expect("valid beta").sample(rng),
        }
    }
}

fn gaussian(c: &Component) -> Normal {
    Normal::new(c.mean, c.sd).expect("valid normal")
}

/// Beta skewness for shape parameters `(a, b)`.
pub fn beta_skewness(a: f64, b: f64) -> f64 {
    2.0 * (b - a) * (a + b + 1.0).sqrt() / ((a + b + 2.0) * (a * b).sqrt())
}

/// Shape parameters with `a + b = 10` and the requested skewness.
pub fn beta_for_skewness(skew: f64) -> (f64, f64) {
    const SUM: f64 = 10.0;
    // Skewness decreases in `a` for a fixed sum.
    let (mut lo, mut hi) = (1e-9, SUM - 1e-9);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if beta_skewness(mid, SUM - mid) > skew {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let a = 0.5 * (lo + hi);
    (a, SUM - a)
}

fn local_density(variant: LocalVariant, region: usize) -> OracleDist {
    match variant {
        LocalVariant::Variance => OracleDist::normal(0.0, [0.5, 1.0, 2.0][region]),
        LocalVariant::Modality => {
            let means: &[f64] = match region {
                0 => &[0.0],
                1 => &[-1.5, 1.5],
                _ => &[-2.0, 0.0, 2.0],
            };
            let sd = if region == 0 { 1.0 } else { 0.5 };
            let w = 1.0 / means.len() as f64;
            OracleDist::Mixture(means.iter().map(|&mean| Component { weight: w, mean, sd }).collect())
        }
        LocalVariant::Skewness => {
            let (a, b) = beta_for_skewness([-0.8, 0.0, 0.8][region]);
            OracleDist::Beta { a, b }
        }
    }
}

/// Exact conditional distribution of `y` given `x`.
pub fn oracle(kind: &SimKind, x: &[f64]) -> Result<OracleDist> {
    if x.len() < kind.required_features() {
        return Err(Error::invalid("too few covariates for this setting"));
    }
    Ok(match *kind {
        SimKind::Lgd => OracleDist::normal(0.5 * x[0] + x[0] * x[1], 0.5 + 0.25 * x[1]),
        SimKind::Lggmd => {
            let mu = 0.25 * x[0];
            if x[1] <= 0.2 {
                OracleDist::Mixture(vec![
                    Component {
                        weight: 0.5,
                        mean: mu - 0.5,
                        sd: 0.5 * (0.25 * x[2] + 0.5).abs(),
                    },
                    Component {
                        weight: 0.5,
                        mean: mu + 0.5,
                        sd: 0.5 * (0.25 * x[2] - 0.5).abs(),
                    },
                ])
            } else {
                OracleDist::normal(mu, 0.3f64.sqrt())
            }
        }
        SimKind::TreeExample { variant } => {
            let region = if x[0] < -0.2 {
                0
            } else if x[1] >= 0.0 {
                1
            } else {
                2
            };
            local_density(variant, region)
        }
        SimKind::StepExample { variant } => local_density(variant, usize::from(x[0] > 0.0)),
        SimKind::HeteroExample => {
            let sd = (0.5 * x[1]).abs();
            if sd == 0.0 {
                return Err(Error::invalid("degenerate conditional distribution at x2 = 0"));
            }
            OracleDist::normal(x[0], sd)
        }
        SimKind::CenteringExample => {
            let sd = 0.06f64.sqrt();
            OracleDist::Mixture(vec![
                Component {
                    weight: 0.5,
                    mean: 3.0 * x[0] - 0.5,
                    sd,
                },
                Component {
                    weight: 0.5,
                    mean: 3.0 * x[0] + 0.5,
                    sd,
                },
            ])
        }
    })
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Draw `n` samples with covariates `x1..xd` and response `y`.
pub fn generate(spec: &SimSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut xrng = stream(spec.seed, 0);
    let cols: Vec<Vec<f64>> = (0..spec.d)
        .map(|_| (0..spec.n).map(|_| xrng.random_range(-1.0..1.0)).collect())
        .collect();
    let mut yrng = stream(spec.seed, 1);
    let mut y = Vec::with_capacity(spec.n);
    let mut x = vec![0.0; spec.d];
    for i in 0..spec.n {
        for (xj, c) in x.iter_mut().zip(&cols) {
            *xj = c[i];
        }
        let v = match oracle(&spec.kind, &x) {
            Ok(dist) => dist.sample(&mut yrng),
            // The only degenerate case is a point mass at x1.
            Err(_) => x[0],
        };
        y.push(v);
    }
    Dataset::from_columns(cols, Some(y))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gen(kind: SimKind, n: usize, d: usize, seed: u64) -> Dataset {
        generate(&SimSpec::new(kind, n, d, seed)).unwrap()
    }

    fn mean_sd(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, var.sqrt())
    }

    #[test]
    fn lgd_unit_slice_has_half_sd() {
        let d = gen(SimKind::Lgd, 200_000, 2, 1);
        let y = d.y.as_ref().unwrap();
        let resid: Vec<f64> = (0..d.n())
            .filter(|&i| d.cols[1][i].abs() < 0.05)
            .map(|i| {
                let (x1, x2) = (d.cols[0][i], d.cols[1][i]);
                y[i] - (0.5 * x1 + x1 * x2)
            })
            .collect();
        assert!(resid.len() > 5000);
        let (_, sd) = mean_sd(&resid);
        assert!((sd - 0.5).abs() < 0.03, "sd {sd}");
    }

    #[test]
    fn lggmd_gaussian_region() {
        let d = gen(SimKind::Lggmd, 100_000, 3, 2);
        let y = d.y.as_ref().unwrap();
        let resid: Vec<f64> = (0..d.n())
            .filter(|&i| d.cols[1][i] > 0.2)
            .map(|i| y[i] - 0.25 * d.cols[0][i])
            .collect();
        let (m, sd) = mean_sd(&resid);
        assert!(m.abs() < 0.02);
        assert!((sd * sd - 0.3).abs() < 0.02, "var {}", sd * sd);
        // Unimodal: histogram counts rise to a single peak then fall.
        let mut h = [0usize; 16];
        for r in &resid {
            let b = ((r + 1.6) / 0.2).floor();
            if (0.0..16.0).contains(&b) {
                h[b as usize] += 1;
            }
        }
        let peak = (0..16).max_by_key(|&b| h[b]).unwrap();
        assert!(h[..=peak].windows(2).all(|w| w[0] <= w[1]));
        assert!(h[peak..].windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn seeded_output_is_identical() {
        let spec = SimSpec::new(SimKind::Lggmd, 500, 5, 42);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        let bits = |d: &Dataset| -> Vec<u64> {
            d.cols
                .iter()
                .flatten()
                .chain(d.y.as_ref().unwrap())
                .map(|v| v.to_bits())
                .collect()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&generate(&SimSpec { seed: 43, ..spec }).unwrap()));
    }

    #[test]
    fn covariates_uniform_on_box() {
        let d = gen(SimKind::Lgd, 10_000, 4, 3);
        for c in &d.cols {
            assert!(c.iter().all(|v| (-1.0..1.0).contains(v)));
            let (m, sd) = mean_sd(c);
            assert!(m.abs() < 0.03);
            assert!((sd - (1.0f64 / 3.0).sqrt()).abs() < 0.01);
        }
    }

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    fn all_kinds() -> Vec<SimKind> {
        let mut v = vec![
            SimKind::Lgd,
            SimKind::Lggmd,
            SimKind::HeteroExample,
            SimKind::CenteringExample,
        ];
        for variant in [LocalVariant::Variance, LocalVariant::Modality, LocalVariant::Skewness] {
            v.push(SimKind::TreeExample { variant });
            v.push(SimKind::StepExample { variant });
        }
        v
    }

    #[test]
    fn oracle_densities_integrate_to_one() {
        let xs = [[0.3, -0.7, 0.9], [-0.9, 0.5, -0.4], [0.1, 0.25, 0.0]];
        for kind in all_kinds() {
            for x in &xs {
                let o = oracle(&kind, x).unwrap();
                let (a, b) = match o {
                    OracleDist::Beta { .. } => (0.0, 1.0),
                    _ => (-12.0, 12.0),
                };
                let mass = simpson(|y| o.pdf(y), a, b, 200_000);
                assert!((mass - 1.0).abs() < 1e-6, "{kind:?} {x:?} {mass}");
            }
        }
    }

    #[test]
    fn oracle_quantile_inverts_cdf() {
        for kind in all_kinds() {
            let o = oracle(&kind, &[0.4, -0.3, 0.8]).unwrap();
            for u in [0.01, 0.25, 0.5, 0.9, 0.999] {
                let q = o.quantile(u);
                assert!((o.cdf(q) - u).abs() < 1e-8, "{kind:?} {u}");
            }
        }
    }

    #[test]
    fn symmetric_lggmd_median_is_mu() {
        let x1 = 0.6;
        let o = oracle(&SimKind::Lggmd, &[x1, -0.5, 0.0]).unwrap();
        assert!((o.quantile(0.5) - 0.25 * x1).abs() < 1e-9);
    }

    #[test]
    fn beta_shapes_hit_target_skewness() {
        for s in [-0.8, 0.0, 0.8] {
            let (a, b) = beta_for_skewness(s);
            assert!((a + b - 10.0).abs() < 1e-12);
            assert!((beta_skewness(a, b) - s).abs() < 1e-9);
        }
        assert_eq!(beta_for_skewness(0.0).0.round(), 5.0);
    }

    #[test]
    fn sample_moments_match_closed_form() {
        let n = 100_000;
        let mut rng = stream(9, 7);
        for kind in all_kinds() {
            let o = oracle(&kind, &[0.35, -0.45, 0.7]).unwrap();
            let draws: Vec<f64> = (0..n).map(|_| o.sample(&mut rng)).collect();
            let (m, sd) = mean_sd(&draws);
            let var = sd * sd;
            let m4 = draws.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n as f64;
            let se_mean = (o.variance() / n as f64).sqrt();
            let se_var = ((m4 - var * var) / n as f64).sqrt();
            assert!((m - o.mean()).abs() < 4.0 * se_mean, "{kind:?} mean");
            assert!((var - o.variance()).abs() < 4.0 * se_var, "{kind:?} var");
        }
    }

    #[test]
    fn lgd_oracle_loglik_matches_entropy() {
        // Expected loglik is minus the average Gaussian entropy over x2.
        let expected = simpson(
            |x2| -0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * (0.5 + 0.25 * x2).powi(2)).ln(),
            -1.0,
            1.0,
            2000,
        ) / 2.0;
        let d = gen(SimKind::Lgd, 200_000, 2, 5);
        let y = d.y.as_ref().unwrap();
        let ll: Vec<f64> = (0..d.n())
            .map(|i| oracle(&SimKind::Lgd, &d.row(i)).unwrap().ln_pdf(y[i]))
            .collect();
        let (m, sd) = mean_sd(&ll);
        assert!(
            (m - expected).abs() < 4.0 * sd / (d.n() as f64).sqrt(),
            "{m} vs {expected}"
        );
    }

    #[test]
    fn spec_json_round_trip_and_errors() {
        let spec = SimSpec::new(
            SimKind::TreeExample {
                variant: LocalVariant::Skewness,
            },
            400,
            10,
            7,
        );
        let s = spec.to_json().unwrap();
        assert!(s.contains("\"kind\": \"tree-example\""));
        assert_eq!(SimSpec::from_json(&s).unwrap(), spec);
        assert!(SimSpec::from_json(r#"{"kind":"nope","n":1,"d":1,"seed":0}"#).is_err());
        assert!(SimSpec::from_json(r#"{"kind":"lggmd","n":10,"d":2,"seed":0}"#).is_err());
        assert!(SimSpec::from_json(r#"{"kind":"lgd","n":0,"d":2,"seed":0}"#).is_err());
    }
}
