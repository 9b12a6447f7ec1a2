//! Synthetic data generation for the simulation studies.
//!
//! Three scenario kinds: treatments vs. control (intraclass correlation
//! 1/2 from differencing against the control population), the change-point
//! model (consecutive differences of population means, tridiagonal
//! covariance), and a generic multivariate-normal sampler. Every draw is a
//! pure function of `(scenario, iteration)`: iteration i consumes stream
//! `(seed, i)`, so parallel and serial runs agree bit for bit.

use crate::covariance::{CovarianceModel, Structure};
use crate::matrix::Matrix;
use crate::rng::StreamRng;
use crate::{Error, Result};

/// Which mean values count as true nulls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NullRule {
    /// H_i: mu_i = 0 (problems with point nulls, two- or one-sided).
    ExactZero,
    /// H_i*: mu_i <= 0 (the one-sided composite null).
    NonPositive,
}

/// The true mean vector with its derived truth masks.
#[derive(Debug, Clone)]
pub struct MeanPattern {
    mu: Vec<f64>,
}

impl MeanPattern {
    pub fn from_values(mu: Vec<f64>) -> Self {
        MeanPattern { mu }
    }

    pub fn zeros(m: usize) -> Self {
        MeanPattern { mu: vec![0.0; m] }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn is_null(&self, i: usize, rule: NullRule) -> bool {
        match rule {
            NullRule::ExactZero => self.mu[i] == 0.0,
            NullRule::NonPositive => self.mu[i] <= 0.0,
        }
    }

    /// True-null mask under the rule; the complement is the alternative
    /// set, so the two partition the indices.
    pub fn null_mask(&self, rule: NullRule) -> Vec<bool> {
        (0..self.len()).map(|i| self.is_null(i, rule)).collect()
    }

    pub fn alternative_count(&self, rule: NullRule) -> usize {
        (0..self.len()).filter(|&i| !self.is_null(i, rule)).count()
    }
}

/// Block layout: value blocks laid out in the given order (the tables list
/// the null count first, so nulls lead).
pub fn mean_pattern_block(counts: &[(f64, usize)]) -> MeanPattern {
    let mut mu = Vec::with_capacity(counts.iter().map(|&(_, c)| c).sum());
    for &(value, count) in counts {
        mu.extend(std::iter::repeat(value).take(count));
    }
    MeanPattern::from_values(mu)
}

/// Equally spaced triples layout: `triples` runs of three `value`s
/// separated by equal zero gaps, remainder zeros going to the final gap.
pub fn mean_pattern_triples(m: usize, triples: usize, value: f64) -> Result<MeanPattern> {
    let used = 3 * triples;
    if used > m {
        return Err(Error::Validation(format!(
            "{triples} triples need {used} positions but M = {m}"
        )));
    }
    let zeros = m - used;
    let gaps = triples + 1;
    let base = zeros / gaps;
    let mut mu = vec![0.0; m];
    let mut pos = 0;
    for _ in 0..triples {
        pos += base;
        for k in 0..3 {
            mu[pos + k] = value;
        }
        pos += 3;
    }
    Ok(MeanPattern::from_values(mu))
}

/// How treatments-vs-control / change-point draws are realized; both modes
/// have the same distribution, the records differ in stream consumption.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenMode {
    /// Draw the M+1 population means directly (one normal each).
    PopulationMeans,
    /// Draw all (M+1) x n replicates and average them.
    RawReplicates,
}

/// The data-generating model.
#[derive(Debug, Clone)]
pub enum ScenarioKind {
    /// `X_i = Zbar_i - Zbar_{M+1}`; covariance `(2 sigma^2/n) Sigma` with
    /// intraclass correlation 1/2.
    TreatmentsControl {
        n: u64,
        sigma: f64,
        variance_known: bool,
        mode: GenMode,
    },
    /// `X_i = Zbar_{i+1} - Zbar_i`; covariance `(sigma^2/n) Sigma` with the
    /// (2,-1) tridiagonal structure. The mean pattern lives on the
    /// difference scale.
    ChangePoint {
        n: u64,
        sigma: f64,
        variance_known: bool,
        mode: GenMode,
    },
    /// Generic multivariate normal over an explicit covariance model.
    Mvn { model: CovarianceModel },
}

/// A reproducible data-generating configuration.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub mean: MeanPattern,
    pub null_rule: NullRule,
    pub seed: u64,
}

/// One generated dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Vec<f64>,
    /// `(s^2, nu)` when the scenario treats sigma^2 as unknown.
    pub variance: Option<(f64, u64)>,
    /// The M+1 population means behind a change-point draw (the
    /// closed-form statistic path consumes these).
    pub pooled_means: Option<Vec<f64>>,
}

impl Scenario {
    pub fn size(&self) -> usize {
        self.mean.len()
    }

    /// Short description used in error reports.
    pub fn fingerprint(&self) -> String {
        let kind = match &self.kind {
            ScenarioKind::TreatmentsControl { .. } => "treatments_control",
            ScenarioKind::ChangePoint { .. } => "change_point",
            ScenarioKind::Mvn { .. } => "mvn",
        };
        format!("{kind} M={} seed={}", self.size(), self.seed)
    }

    /// The covariance model the procedures should run against. When
    /// sigma^2 is unknown the scale excludes it (residuals are then
    /// studentized by the pooled estimate).
    pub fn model(&self) -> Result<CovarianceModel> {
        let m = self.size();
        match &self.kind {
            ScenarioKind::TreatmentsControl {
                n,
                sigma,
                variance_known,
                ..
            } => {
                let scale = if *variance_known {
                    2.0 * sigma * sigma / *n as f64
                } else {
                    2.0 / *n as f64
                };
                CovarianceModel::intraclass(m, 0.5, scale)
            }
            ScenarioKind::ChangePoint {
                n,
                sigma,
                variance_known,
                ..
            } => {
                let scale = if *variance_known {
                    sigma * sigma / *n as f64
                } else {
                    1.0 / *n as f64
                };
                CovarianceModel::change_point(m, scale)
            }
            ScenarioKind::Mvn { model } => Ok(model.clone()),
        }
    }

    fn validate(&self) -> Result<()> {
        let m = self.size();
        if m == 0 {
            return Err(Error::Validation("empty mean pattern".into()));
        }
        match &self.kind {
            ScenarioKind::TreatmentsControl {
                n,
                sigma,
                variance_known,
                ..
            }
            | ScenarioKind::ChangePoint {
                n,
                sigma,
                variance_known,
                ..
            } => {
                if *n < 1 {
                    return Err(Error::Validation("n must be >= 1".into()));
                }
                if !(*sigma > 0.0) {
                    return Err(Error::Validation("sigma must be positive".into()));
                }
                if !variance_known && *n < 2 {
                    return Err(Error::Validation(
                        "pooled s^2 needs n >= 2 replicates".into(),
                    ));
                }
            }
            ScenarioKind::Mvn { model } => {
                if model.size() != m {
                    return Err(Error::Validation(format!(
                        "mvn model size {} != pattern length {m}",
                        model.size()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Generates the dataset for one iteration; pure in
    /// `(self, iteration)`.
    pub fn generate(&self, iteration: u64) -> Result<Dataset> {
        self.validate()?;
        let mut rng = StreamRng::new(self.seed, iteration);
        let m = self.size();
        let mu = self.mean.mu();
        match &self.kind {
            ScenarioKind::TreatmentsControl {
                n,
                sigma,
                variance_known,
                mode,
            } => {
                let sd_mean = sigma / (*n as f64).sqrt();
                let (zbar, s2) = draw_populations(&mut rng, m + 1, *n, *sigma, *mode);
                // nu_i = mu_i for the treatments, nu_{M+1} = 0.
                let x: Vec<f64> = (0..m)
                    .map(|i| mu[i] + sd_mean * (zbar[i] - zbar[m]))
                    .collect();
                let variance = if *variance_known {
                    None
                } else {
                    let nu = (m as u64 + 1) * (n - 1);
                    Some((s2.unwrap_or_else(|| chi_square_s2(&mut rng, nu, *sigma)), nu))
                };
                Ok(Dataset {
                    x,
                    variance,
                    pooled_means: None,
                })
            }
            ScenarioKind::ChangePoint {
                n,
                sigma,
                variance_known,
                mode,
            } => {
                let sd_mean = sigma / (*n as f64).sqrt();
                let (zraw, s2) = draw_populations(&mut rng, m + 1, *n, *sigma, *mode);
                // Population means follow the cumulative mean pattern.
                let mut nu_means = vec![0.0; m + 1];
                for i in 0..m {
                    nu_means[i + 1] = nu_means[i] + mu[i];
                }
                let zbar: Vec<f64> = (0..=m).map(|i| nu_means[i] + sd_mean * zraw[i]).collect();
                let x: Vec<f64> = (0..m).map(|i| zbar[i + 1] - zbar[i]).collect();
                let variance = if *variance_known {
                    None
                } else {
                    let nu = (m as u64 + 1) * (n - 1);
                    Some((s2.unwrap_or_else(|| chi_square_s2(&mut rng, nu, *sigma)), nu))
                };
                Ok(Dataset {
                    x,
                    variance,
                    pooled_means: Some(zbar),
                })
            }
            ScenarioKind::Mvn { model } => {
                let x = sample_mvn(model, mu, &mut rng)?;
                Ok(Dataset {
                    x,
                    variance: None,
                    pooled_means: None,
                })
            }
        }
    }
}

// Draws standardized population means (and, in raw mode, the pooled s^2
// computed from the replicates themselves).
fn draw_populations(
    rng: &mut StreamRng,
    pops: usize,
    n: u64,
    sigma: f64,
    mode: GenMode,
) -> (Vec<f64>, Option<f64>) {
    match mode {
        GenMode::PopulationMeans => {
            let mut z = vec![0.0; pops];
            rng.fill_normal(&mut z);
            (z, None)
        }
        GenMode::RawReplicates => {
            // Standardized mean and within-population sum of squares from
            // actual replicate draws.
            let mut zbar = vec![0.0; pops];
            let mut ss = 0.0;
            for zb in zbar.iter_mut() {
                let mut reps = vec![0.0; n as usize];
                for r in reps.iter_mut() {
                    *r = sigma * rng.next_normal();
                }
                let mean = reps.iter().sum::<f64>() / n as f64;
                ss += reps.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>();
                // Standardized: mean / (sigma / sqrt(n)).
                *zb = mean / (sigma / (n as f64).sqrt());
            }
            let s2 = if n >= 2 {
                Some(ss / (pops as f64 * (n as f64 - 1.0)))
            } else {
                None
            };
            (zbar, s2)
        }
    }
}

// sigma^2 * chi^2_nu / nu from the stream (sum of squared normals).
fn chi_square_s2(rng: &mut StreamRng, nu: u64, sigma: f64) -> f64 {
    let mut acc = 0.0;
    for _ in 0..nu {
        let z = rng.next_normal();
        acc += z * z;
    }
    sigma * sigma * acc / nu as f64
}

// Structured sampling: one-factor for nonnegative intraclass, population
// differences for the change-point structure, dense Cholesky otherwise.
fn sample_mvn(model: &CovarianceModel, mu: &[f64], rng: &mut StreamRng) -> Result<Vec<f64>> {
    let m = model.size();
    let sqrt_scale = model.scale().sqrt();
    match model.structure() {
        Structure::Intraclass { rho, .. } if *rho >= 0.0 => {
            let w0 = rng.next_normal();
            let a = rho.sqrt();
            let b = (1.0 - rho).sqrt();
            Ok((0..m)
                .map(|i| mu[i] + sqrt_scale * (a * w0 + b * rng.next_normal()))
                .collect())
        }
        Structure::ChangePoint { .. } => {
            let mut z = vec![0.0; m + 1];
            rng.fill_normal(&mut z);
            Ok((0..m)
                .map(|i| mu[i] + sqrt_scale * (z[i + 1] - z[i]))
                .collect())
        }
        _ => {
            let l = model.cholesky_factor()?;
            sample_with_factor(&l, mu, rng)
        }
    }
}

fn sample_with_factor(l: &Matrix, mu: &[f64], rng: &mut StreamRng) -> Result<Vec<f64>> {
    let m = l.size();
    let mut z = vec![0.0; m];
    rng.fill_normal(&mut z);
    Ok((0..m)
        .map(|i| mu[i] + (0..=i).map(|k| l[(i, k)] * z[k]).sum::<f64>())
        .collect())
}

/// One multivariate-normal draw `mu + L z` from the seeded stream, with L
/// the Cholesky factor of the scaled model.
pub fn gen_mvn(model: &CovarianceModel, mu: &[f64], seed: u64) -> Result<Vec<f64>> {
    if mu.len() != model.size() {
        return Err(Error::Validation(format!(
            "mean length {} != model size {}",
            mu.len(),
            model.size()
        )));
    }
    let mut rng = StreamRng::new(seed, 0);
    let l = model.cholesky_factor()?;
    sample_with_factor(&l, mu, &mut rng)
}
