//! Critical-value schedules and Monte Carlo max-distribution calibration.
//!
//! A step-down run consumes a strictly decreasing positive ladder
//! `C_1 > C_2 > ... > C_M > 0`. The published recipes build every stage from
//! the standard normal quantile; the shrink factors (0.71, 0.63, 0.77 for
//! the two-sided tables, 0.7 / 1.25 / 1.2 for the one-sided ones) are
//! model-specific tuning constants and stay caller-supplied parameters.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use rayon::prelude::*;

use crate::rng::{mix_seed, StreamRng};
use crate::special;
use crate::{Error, Result};

/// Inverse standard normal CDF; the quantile kernel behind every recipe.
///
/// `|Phi(result) - p| <= 1e-9` on `[1e-10, 1 - 1e-10]`.
pub fn normal_quantile(p: f64) -> Result<f64> {
    special::normal_quantile(p)
}

/// A validated stage ladder.
#[derive(Debug, Clone)]
pub struct CriticalSchedule {
    values: Vec<f64>,
    provenance: String,
}

impl CriticalSchedule {
    /// Wraps explicit values, enforcing strict decrease and positivity.
    /// No silent repair: the first violating stage is named.
    pub fn from_values(values: Vec<f64>, provenance: impl Into<String>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Validation("schedule must be non-empty".into()));
        }
        for (i, &v) in values.iter().enumerate() {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!(
                    "schedule stage {} must be positive, got {v}",
                    i + 1
                )));
            }
            if i > 0 && v >= values[i - 1] {
                return Err(Error::Validation(format!(
                    "schedule not strictly decreasing at stage {} ({} >= {})",
                    i + 1,
                    v,
                    values[i - 1]
                )));
            }
        }
        Ok(CriticalSchedule {
            values,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Stage constant C_m for 1-based stage m.
    pub fn stage(&self, m: usize) -> f64 {
        self.values[m - 1]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// (stage, value) CSV for audit.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,value\n");
        for (i, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{},{v}\n", i + 1));
        }
        out
    }
}

/// Two-sided recipe: `C_1 = Phi^-1(1 - alpha/2M)`,
/// `C_i = factor * Phi^-1(1 - alpha/2(M-i+1))` for i >= 2.
pub fn schedule_mrd_two_sided(m: usize, alpha: f64, factor: f64) -> Result<CriticalSchedule> {
    check_alpha(alpha)?;
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(Error::ParameterDomain(format!(
            "factor must be in (0,1], got {factor}"
        )));
    }
    if m == 0 {
        return Err(Error::ParameterDomain("M must be >= 1".into()));
    }
    let mut values = Vec::with_capacity(m);
    values.push(normal_quantile(1.0 - alpha / (2.0 * m as f64))?);
    for i in 2..=m {
        let q = normal_quantile(1.0 - alpha / (2.0 * (m - i + 1) as f64))?;
        values.push(factor * q);
    }
    CriticalSchedule::from_values(
        values,
        format!("mrd_two_sided(M={m}, alpha={alpha}, factor={factor})"),
    )
}

/// One-sided recipe family over the step-down base ladder
/// `C_i(SD) = Phi^-1(1 - alpha/(M-i+1))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OneSidedFamily {
    /// MRD: `C_1 = C_1(SD)`, `C_i = factor * C_i(SD)` (the paper uses 0.7).
    Mrd { factor: f64 },
    /// The base ladder itself (the regular step-down comparator).
    StepDown,
    /// LRSD on the max-coordinate (union-intersection) scale:
    /// `1.25 C_1(SD)`, `1.2 C_i(SD)`.
    Lrsd,
    /// The same LRSD constants squared, commensurate with the quadratic /
    /// likelihood-ratio stage statistic.
    LrsdSquared,
}

/// Builds a one-sided schedule for the requested family.
pub fn schedule_one_sided(m: usize, alpha: f64, family: OneSidedFamily) -> Result<CriticalSchedule> {
    check_alpha(alpha)?;
    if m == 0 {
        return Err(Error::ParameterDomain("M must be >= 1".into()));
    }
    if let OneSidedFamily::Mrd { factor } = family {
        if !(factor > 0.0 && factor <= 1.0) {
            return Err(Error::ParameterDomain(format!(
                "factor must be in (0,1], got {factor}"
            )));
        }
    }
    let base: Result<Vec<f64>> = (1..=m)
        .map(|i| normal_quantile(1.0 - alpha / (m - i + 1) as f64))
        .collect();
    let base = base?;
    let values: Vec<f64> = match family {
        OneSidedFamily::Mrd { factor } => base
            .iter()
            .enumerate()
            .map(|(i, &c)| if i == 0 { c } else { factor * c })
            .collect(),
        OneSidedFamily::StepDown => base,
        OneSidedFamily::Lrsd => base
            .iter()
            .enumerate()
            .map(|(i, &c)| if i == 0 { 1.25 * c } else { 1.2 * c })
            .collect(),
        OneSidedFamily::LrsdSquared => base
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let v = if i == 0 { 1.25 * c } else { 1.2 * c };
                v * v
            })
            .collect(),
    };
    CriticalSchedule::from_values(
        values,
        format!("one_sided({family:?}, M={m}, alpha={alpha})"),
    )
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::ParameterDomain(format!(
            "alpha must be in (0,1), got {alpha}"
        )))
    }
}

/// A Monte Carlo quantile with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McQuantile {
    pub value: f64,
    pub std_error: f64,
    pub draws: u64,
}

/// Number of fixed substreams the draw budget is split over; constant so
/// the result is independent of the worker count.
const MC_CHUNKS: u64 = 128;

/// Empirical `1 - alpha` quantile of the max of `k` equicorrelated standard
/// normals, by simulation.
///
/// For `rho >= 0` sampling uses the one-factor representation
/// `X_i = sqrt(rho) W_0 + sqrt(1-rho) W_i`; negative `rho` falls back to a
/// Cholesky factor of the k x k intraclass matrix. Deterministic for fixed
/// `(k, rho, draws, seed)` regardless of thread count.
pub fn mc_max_quantile(
    k: usize,
    rho: f64,
    alpha: f64,
    draws: u64,
    seed: u64,
) -> Result<McQuantile> {
    check_alpha(alpha)?;
    if k == 0 {
        return Err(Error::ParameterDomain("k must be >= 1".into()));
    }
    if draws < 100 {
        return Err(Error::ParameterDomain("draws must be >= 100".into()));
    }
    if !(rho < 1.0 && 1.0 + (k as f64 - 1.0) * rho > 0.0) {
        return Err(Error::ParameterDomain(format!(
            "equicorrelation(rho={rho}, k={k}) is not positive definite"
        )));
    }

    let base_seed = mix_seed(mix_seed(seed, 0xD0_u64 ^ k as u64), rho.to_bits());
    let chunk_sizes: Vec<u64> = (0..MC_CHUNKS)
        .map(|c| draws / MC_CHUNKS + u64::from(c < draws % MC_CHUNKS))
        .collect();

    let chol = if rho < 0.0 {
        let sigma = crate::matrix::Matrix::from_fn(k, |i, j| if i == j { 1.0 } else { rho });
        Some(sigma.cholesky()?)
    } else {
        None
    };

    let mut samples: Vec<f64> = chunk_sizes
        .par_iter()
        .enumerate()
        .map(|(c, &n)| {
            let mut rng = StreamRng::new(base_seed, c as u64);
            let mut out = Vec::with_capacity(n as usize);
            match &chol {
                None => {
                    let sr = rho.sqrt();
                    let sr1 = (1.0 - rho).sqrt();
                    for _ in 0..n {
                        let w0 = rng.next_normal();
                        let mut mx = f64::NEG_INFINITY;
                        for _ in 0..k {
                            mx = mx.max(rng.next_normal());
                        }
                        out.push(sr * w0 + sr1 * mx);
                    }
                }
                Some(l) => {
                    let lm = l.factor();
                    let mut z = vec![0.0; k];
                    for _ in 0..n {
                        rng.fill_normal(&mut z);
                        let mut mx = f64::NEG_INFINITY;
                        for i in 0..k {
                            let xi: f64 = (0..=i).map(|t| lm[(i, t)] * z[t]).sum();
                            mx = mx.max(xi);
                        }
                        out.push(mx);
                    }
                }
            }
            out
        })
        .flatten()
        .collect();

    let value = order_statistic(&mut samples, 1.0 - alpha);
    // Bracket the quantile at +-1.96 binomial standard errors of the level
    // to estimate the quantile's own standard error.
    let band = 1.96 * (alpha * (1.0 - alpha) / draws as f64).sqrt();
    let hi = order_statistic(&mut samples, (1.0 - alpha + band).min(1.0));
    let lo = order_statistic(&mut samples, (1.0 - alpha - band).max(0.0));
    Ok(McQuantile {
        value,
        std_error: (hi - lo) / (2.0 * 1.96),
        draws,
    })
}

// Order statistic at level p: smallest value with empirical CDF >= p.
fn order_statistic(samples: &mut [f64], p: f64) -> f64 {
    let n = samples.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    let (_, v, _) = samples.select_nth_unstable_by(rank - 1, f64::total_cmp);
    *v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct CacheKey {
    k: usize,
    rho_bits: u64,
    alpha_bits: u64,
}

/// Lazy, thread-safe store of Dunnett max-quantiles for one `(seed, draws)`
/// configuration, with an optional CSV sidecar so repeated runs skip the
/// simulation.
pub struct DunnettCache {
    seed: u64,
    draws: u64,
    entries: Mutex<HashMap<CacheKey, McQuantile>>,
}

impl DunnettCache {
    pub const DEFAULT_DRAWS: u64 = 1_000_000;

    pub fn new(seed: u64, draws: u64) -> Self {
        DunnettCache {
            seed,
            draws,
            entries: Mutex::new(HashMap::new()),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// The calibrated constant c(k, rho, alpha), computing it on first use.
    pub fn quantile(&self, k: usize, rho: f64, alpha: f64) -> Result<McQuantile> {
        let key = CacheKey {
            k,
            rho_bits: rho.to_bits(),
            alpha_bits: alpha.to_bits(),
        };
        if let Some(q) = self.entries.lock().unwrap().get(&key) {
            return Ok(*q);
        }
        // Computed outside the lock; identical keys race to the same
        // deterministic value.
        let q = mc_max_quantile(k, rho, alpha, self.draws, self.seed)?;
        self.entries.lock().unwrap().insert(key, q);
        Ok(q)
    }

    /// All cached entries as `(k, rho, alpha, quantile)` rows, sorted.
    pub fn rows(&self) -> Vec<(usize, f64, f64, McQuantile)> {
        let mut rows: Vec<_> = self
            .entries
            .lock()
            .unwrap()
            .iter()
            .map(|(key, q)| {
                (
                    key.k,
                    f64::from_bits(key.rho_bits),
                    f64::from_bits(key.alpha_bits),
                    *q,
                )
            })
            .collect();
        rows.sort_by(|a, b| {
            (a.0, a.1.to_bits(), a.2.to_bits()).cmp(&(b.0, b.1.to_bits(), b.2.to_bits()))
        });
        rows
    }

    /// Writes the sidecar CSV.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "k,rho,alpha,seed,draws,value,std_error")?;
        for (k, rho, alpha, q) in self.rows() {
            writeln!(
                f,
                "{k},{rho},{alpha},{},{},{},{}",
                self.seed, self.draws, q.value, q.std_error
            )?;
        }
        Ok(())
    }

    /// Loads sidecar rows matching this cache's seed and draw count;
    /// foreign rows are ignored.
    pub fn load(&self, path: &Path) -> Result<usize> {
        let text = std::fs::read_to_string(path)?;
        let mut loaded = 0;
        for (lineno, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: "expected 7 fields".into(),
                });
            }
            let parse = |s: &str| -> Result<f64> {
                s.trim().parse().map_err(|_| Error::Parse {
                    line: lineno + 1,
                    message: format!("bad numeric cell {s:?}"),
                })
            };
            let k = parse(fields[0])? as usize;
            let rho = parse(fields[1])?;
            let alpha = parse(fields[2])?;
            let seed = parse(fields[3])? as u64;
            let draws = parse(fields[4])? as u64;
            let value = parse(fields[5])?;
            let std_error = parse(fields[6])?;
            if seed != self.seed || draws != self.draws {
                continue;
            }
            self.entries.lock().unwrap().insert(
                CacheKey {
                    k,
                    rho_bits: rho.to_bits(),
                    alpha_bits: alpha.to_bits(),
                },
                McQuantile {
                    value,
                    std_error,
                    draws,
                },
            );
            loaded += 1;
        }
        Ok(loaded)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_surface_examples() {
        assert_eq!(normal_quantile(0.5).unwrap(), 0.0);
        assert!((normal_quantile(0.975).unwrap() - 1.959964).abs() < 1e-6);
        assert!((normal_quantile(1.0 - 0.05 / 20000.0).unwrap() - 4.564788).abs() < 1e-5);
        assert!(normal_quantile(1.2).is_err());
    }

    #[test]
    fn two_sided_schedule_examples() {
        let s = schedule_mrd_two_sided(1, 0.05, 0.71).unwrap();
        assert_eq!(s.len(), 1);
        assert!((s.stage(1) - normal_quantile(0.975).unwrap()).abs() < 1e-12);

        let s = schedule_mrd_two_sided(10_000, 0.05, 0.71).unwrap();
        assert!((s.stage(1) - 4.564788).abs() < 1e-5);
        assert!((s.stage(2) - 3.2409844).abs() < 1e-5);
        assert!(s.values().windows(2).all(|w| w[1] < w[0]));

        // Table 2 / Table 3 factors build valid ladders too.
        for factor in [0.63, 0.77] {
            let s = schedule_mrd_two_sided(3000, 0.05, factor).unwrap();
            assert_eq!(s.len(), 3000);
        }
    }

    #[test]
    fn one_sided_schedule_examples() {
        let sd = schedule_one_sided(100, 0.05, OneSidedFamily::StepDown).unwrap();
        assert!((sd.stage(1) - 3.2905267).abs() < 1e-6);

        let lrsd = schedule_one_sided(100, 0.05, OneSidedFamily::Lrsd).unwrap();
        assert!((lrsd.stage(1) - 4.1131584).abs() < 1e-6);
        assert!((lrsd.stage(2) - 1.2 * normal_quantile(1.0 - 0.05 / 99.0).unwrap()).abs() < 1e-12);

        let mrd = schedule_one_sided(100, 0.05, OneSidedFamily::Mrd { factor: 0.7 }).unwrap();
        assert!((mrd.stage(1) - sd.stage(1)).abs() < 1e-12);
        assert!((mrd.stage(2) - 0.7 * normal_quantile(1.0 - 0.05 / 99.0).unwrap()).abs() < 1e-12);

        let sq = schedule_one_sided(100, 0.05, OneSidedFamily::LrsdSquared).unwrap();
        assert!((sq.stage(1) - lrsd.stage(1) * lrsd.stage(1)).abs() < 1e-12);
    }

    #[test]
    fn schedule_validation_names_stage() {
        let err = CriticalSchedule::from_values(vec![3.0, 3.0, 1.0], "test").unwrap_err();
        assert!(err.to_string().contains("stage 2"), "{err}");
        let err = CriticalSchedule::from_values(vec![3.0, -1.0], "test").unwrap_err();
        assert!(err.to_string().contains("stage 2"), "{err}");
        assert!(CriticalSchedule::from_values(vec![], "test").is_err());
    }

    #[test]
    fn schedule_csv_layout() {
        let s = CriticalSchedule::from_values(vec![2.0, 1.0], "test").unwrap();
        assert_eq!(s.to_csv(), "stage,value\n1,2\n2,1\n");
    }

    #[test]
    fn mc_quantile_k1_matches_normal_quantile() {
        let q = mc_max_quantile(1, 0.5, 0.05, 200_000, 7).unwrap();
        let want = normal_quantile(0.95).unwrap();
        assert!(
            (q.value - want).abs() <= 2.0 * q.std_error,
            "{} vs {want} (se {})",
            q.value,
            q.std_error
        );
    }

    #[test]
    fn mc_quantile_k2_independent_closed_form() {
        // P(max of two independent <= c) = Phi(c)^2.
        let q = mc_max_quantile(2, 0.0, 0.05, 200_000, 11).unwrap();
        let want = normal_quantile(0.95f64.sqrt()).unwrap();
        assert!((want - 1.9545).abs() < 1e-4);
        assert!((q.value - want).abs() <= 2.0 * q.std_error);
    }

    #[test]
    fn mc_quantile_stable_across_seeds() {
        let a = mc_max_quantile(5, 0.5, 0.05, 200_000, 1).unwrap();
        let b = mc_max_quantile(5, 0.5, 0.05, 200_000, 2).unwrap();
        let se = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
        assert!((a.value - b.value).abs() <= 3.0 * se);
    }

    #[test]
    fn mc_quantile_monotone_in_k() {
        let mut prev = f64::NEG_INFINITY;
        for k in 1..=6 {
            let q = mc_max_quantile(k, 0.5, 0.05, 120_000, 5).unwrap();
            assert!(q.value >= prev, "k={k}: {} < {prev}", q.value);
            prev = q.value;
        }
    }

    #[test]
    fn mc_quantile_negative_rho_falls_back_to_cholesky() {
        let q = mc_max_quantile(3, -0.3, 0.05, 120_000, 9).unwrap();
        assert!(q.value.is_finite() && q.value > 0.0);
        // Same parameters reproduce bit-identically.
        let r = mc_max_quantile(3, -0.3, 0.05, 120_000, 9).unwrap();
        assert_eq!(q, r);
    }

    #[test]
    fn mc_quantile_rejects_bad_parameters() {
        assert!(mc_max_quantile(0, 0.5, 0.05, 1000, 1).is_err());
        assert!(mc_max_quantile(3, -0.6, 0.05, 1000, 1).is_err());
        assert!(mc_max_quantile(3, 0.5, 1.5, 1000, 1).is_err());
    }

    #[test]
    fn dunnett_cache_round_trips_sidecar() {
        let cache = DunnettCache::new(21, 50_000);
        let a = cache.quantile(3, 0.5, 0.05).unwrap();
        let b = cache.quantile(3, 0.5, 0.05).unwrap();
        assert_eq!(a, b);

        let dir = std::env::temp_dir().join(format!("dunnett-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cache.csv");
        cache.save(&path).unwrap();

        let fresh = DunnettCache::new(21, 50_000);
        assert_eq!(fresh.load(&path).unwrap(), 1);
        let c = fresh.quantile(3, 0.5, 0.05).unwrap();
        assert_eq!(a.value, c.value);

        // A cache with a different seed ignores the stored row.
        let other = DunnettCache::new(22, 50_000);
        assert_eq!(other.load(&path).unwrap(), 0);
        std::fs::remove_dir_all(&dir).ok();
    }
}
