//! Decision procedures.
//!
//! All step-down procedures share the stopping semantics of the MRD
//! description: compute the stage statistic on the remaining hypotheses,
//! reject the extreme one iff the statistic clears the stage constant
//! (rejection requires `>= C_m`, so the stated strict-`<` stop rule is the
//! complement and boundary ties reject), otherwise stop and accept
//! everything left. Ties in the argmax break to the smallest index.

use crate::covariance::{ActiveSet, CovarianceModel, Structure};
use crate::critical_values::{CriticalSchedule, DunnettCache};
use crate::projection::project_nonneg_orthant_precision;
use crate::residuals::{residual_vector, studentize};
use crate::special;
use crate::{Error, Result};

pub use crate::residuals::Sidedness;

/// Per-stage diagnostic: the stage maximum and the constant it faced.
#[derive(Debug, Clone, Copy)]
pub struct StageStat {
    pub stage: usize,
    pub statistic: f64,
    pub threshold: f64,
    /// Index rejected at this stage, `None` on the stopping stage.
    pub rejected: Option<usize>,
}

/// Per-hypothesis diagnostic: the statistic and threshold in force at the
/// stage where the hypothesis was decided (its rejection stage, or the
/// stopping stage for accepted hypotheses).
#[derive(Debug, Clone, Copy, Default)]
pub struct HypothesisStat {
    pub statistic: f64,
    pub threshold: f64,
}

/// The outcome of one procedure run.
#[derive(Debug, Clone)]
pub struct DecisionVector {
    /// Reject flag per hypothesis (0-based index).
    pub reject: Vec<bool>,
    /// Rejected indices in rejection order.
    pub order: Vec<usize>,
    /// Stage-by-stage diagnostics (strictly decreasing thresholds for the
    /// step-down procedures).
    pub stage_stats: Vec<StageStat>,
    /// Per-hypothesis statistic/threshold pairs.
    pub per_hypothesis: Vec<HypothesisStat>,
}

impl DecisionVector {
    fn new(m: usize) -> Self {
        DecisionVector {
            reject: vec![false; m],
            order: Vec::new(),
            stage_stats: Vec::new(),
            per_hypothesis: vec![HypothesisStat::default(); m],
        }
    }

    pub fn rejected_count(&self) -> usize {
        self.order.len()
    }
}

fn check_lengths(x: &[f64], model: &CovarianceModel, schedule: &CriticalSchedule) -> Result<()> {
    if x.len() != model.size() {
        return Err(Error::Validation(format!(
            "observation length {} != model size {}",
            x.len(),
            model.size()
        )));
    }
    if schedule.len() != model.size() {
        return Err(Error::Validation(format!(
            "schedule length {} != model size {}",
            schedule.len(),
            model.size()
        )));
    }
    Ok(())
}

/// Maximum residual down.
///
/// At stage m the residual vector on the active set is computed (and
/// divided by the pooled standard deviation when `variance = (s2, nu)` is
/// supplied), the extreme remaining hypothesis is rejected iff its
/// statistic reaches `C_m`, and the stage repeats on the reduced set.
pub fn mrd(
    x: &[f64],
    model: &CovarianceModel,
    schedule: &CriticalSchedule,
    sided: Sidedness,
    variance: Option<(f64, u64)>,
) -> Result<DecisionVector> {
    check_lengths(x, model, schedule)?;
    let m = model.size();
    let mut decision = DecisionVector::new(m);
    let mut active = ActiveSet::full(m);
    for stage in 1..=m {
        let mut rv = residual_vector(model, &active, x)?;
        if let Some((s2, nu)) = variance {
            rv = studentize(&rv, s2, nu)?;
        }
        let threshold = schedule.stage(stage);
        for (k, &i) in rv.indices.iter().enumerate() {
            decision.per_hypothesis[i] = HypothesisStat {
                statistic: rv.values[k],
                threshold,
            };
        }
        let key = |v: f64| match sided {
            Sidedness::TwoSided => v.abs(),
            Sidedness::OneSided => v,
        };
        let (_, idx, value) = rv.argmax_by(key);
        let stat = key(value);
        if stat >= threshold {
            decision.stage_stats.push(StageStat {
                stage,
                statistic: stat,
                threshold,
                rejected: Some(idx),
            });
            decision.reject[idx] = true;
            decision.order.push(idx);
            active.reject(idx)?;
            if active.is_exhausted() {
                break;
            }
        } else {
            decision.stage_stats.push(StageStat {
                stage,
                statistic: stat,
                threshold,
                rejected: None,
            });
            break;
        }
    }
    Ok(decision)
}

/// Stage gate used by the likelihood-ratio step-down.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrsdGate {
    /// Global likelihood-ratio statistic: the quadratic form
    /// `x_A' Sigma_A^-1 x_A` two-sided, or the orthant-constrained LRT
    /// difference one-sided. Schedules must be on the quadratic scale.
    LikelihoodRatio,
    /// Union-intersection form of the same global test: the extreme
    /// standardized remaining coordinate against the raw constant. The
    /// supporting-hyperplane geometry makes a radius-C ellipsoid gate and
    /// a max-coordinate-C gate commensurate, and only this form is on the
    /// scale of the published constants.
    UnionIntersection,
}

/// Likelihood-ratio step-down with the spec's default gate
/// (`LrsdGate::LikelihoodRatio`); see [`lrsd_with_gate`].
pub fn lrsd(
    x: &[f64],
    model: &CovarianceModel,
    schedule: &CriticalSchedule,
    sided: Sidedness,
) -> Result<DecisionVector> {
    lrsd_with_gate(x, model, schedule, sided, LrsdGate::LikelihoodRatio)
}

/// Likelihood-ratio step-down on an intraclass model.
///
/// At stage m the global hypothesis on the remaining coordinates is tested
/// with the chosen gate; on rejection the hypothesis of the extreme raw
/// coordinate (max |x_j| two-sided, max x_j one-sided) is rejected and the
/// coordinate eliminated.
pub fn lrsd_with_gate(
    x: &[f64],
    model: &CovarianceModel,
    schedule: &CriticalSchedule,
    sided: Sidedness,
    gate: LrsdGate,
) -> Result<DecisionVector> {
    check_lengths(x, model, schedule)?;
    let rho = match model.structure() {
        Structure::Intraclass { rho, .. } => *rho,
        other => {
            return Err(Error::Validation(format!(
                "lrsd requires an intraclass model, got {other:?}"
            )))
        }
    };
    let m = model.size();
    let scale = model.scale();
    let sqrt_scale = scale.sqrt();
    let mut decision = DecisionVector::new(m);
    let mut active = ActiveSet::full(m);

    for stage in 1..=m {
        let remaining = active.remaining();
        let xa: Vec<f64> = remaining.iter().map(|&i| x[i]).collect();
        let threshold = schedule.stage(stage);

        let stat = match gate {
            LrsdGate::LikelihoodRatio => {
                let quad = model.active_quadratic_form(&active, &xa)?;
                match sided {
                    Sidedness::TwoSided => quad,
                    Sidedness::OneSided => {
                        let w = crate::covariance::intraclass_inverse(rho, remaining.len())?;
                        let proj = project_nonneg_orthant_precision(&w, &xa)?;
                        quad - proj.objective / scale
                    }
                }
            }
            LrsdGate::UnionIntersection => {
                let key = |v: f64| match sided {
                    Sidedness::TwoSided => v.abs(),
                    Sidedness::OneSided => v,
                };
                xa.iter().map(|&v| key(v / sqrt_scale)).fold(f64::NEG_INFINITY, f64::max)
            }
        };

        for &i in remaining {
            decision.per_hypothesis[i] = HypothesisStat {
                statistic: stat,
                threshold,
            };
        }

        if stat >= threshold {
            // Eliminate the extreme raw coordinate.
            let mut idx = remaining[0];
            let mut best = f64::NEG_INFINITY;
            for &i in remaining {
                let v = match sided {
                    Sidedness::TwoSided => x[i].abs(),
                    Sidedness::OneSided => x[i],
                };
                if v > best {
                    best = v;
                    idx = i;
                }
            }
            decision.stage_stats.push(StageStat {
                stage,
                statistic: stat,
                threshold,
                rejected: Some(idx),
            });
            decision.reject[idx] = true;
            decision.order.push(idx);
            active.reject(idx)?;
            if active.is_exhausted() {
                break;
            }
        } else {
            decision.stage_stats.push(StageStat {
                stage,
                statistic: stat,
                threshold,
                rejected: None,
            });
            break;
        }
    }
    Ok(decision)
}

fn check_pvalues(pvalues: &[f64]) -> Result<()> {
    for (i, &p) in pvalues.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Validation(format!(
                "p-value {p} at index {i} outside [0,1]"
            )));
        }
    }
    Ok(())
}

fn check_level(level: f64, what: &str) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "{what} must be in (0,1), got {level}"
        )))
    }
}

// Sorted positions by ascending p-value, index breaking ties.
fn sort_by_pvalue(pvalues: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pvalues.len()).collect();
    order.sort_by(|&a, &b| pvalues[a].total_cmp(&pvalues[b]).then(a.cmp(&b)));
    order
}

/// Benjamini–Hochberg step-up: rejects the hypotheses with the k* smallest
/// p-values where `k* = max{k : p_(k) <= q k / M}`.
pub fn bh_step_up(pvalues: &[f64], q: f64) -> Result<DecisionVector> {
    check_pvalues(pvalues)?;
    check_level(q, "q")?;
    let m = pvalues.len();
    let order = sort_by_pvalue(pvalues);
    let mut k_star = 0;
    for (k, &i) in order.iter().enumerate() {
        if pvalues[i] <= q * (k + 1) as f64 / m as f64 {
            k_star = k + 1;
        }
    }
    let mut decision = DecisionVector::new(m);
    for (k, &i) in order.iter().enumerate() {
        decision.per_hypothesis[i] = HypothesisStat {
            statistic: pvalues[i],
            threshold: q * (k + 1) as f64 / m as f64,
        };
    }
    for (k, &i) in order.iter().take(k_star).enumerate() {
        decision.reject[i] = true;
        decision.order.push(i);
        decision.stage_stats.push(StageStat {
            stage: k + 1,
            statistic: pvalues[i],
            threshold: q * (k + 1) as f64 / m as f64,
            rejected: Some(i),
        });
    }
    Ok(decision)
}

/// Holm-type marginal step-down: at step i rejects the i-th smallest
/// p-value iff `p_(i) <= alpha / (M - i + 1)`, stopping at the first
/// failure.
pub fn holm_step_down_marginal(pvalues: &[f64], alpha: f64) -> Result<DecisionVector> {
    check_pvalues(pvalues)?;
    check_level(alpha, "alpha")?;
    let m = pvalues.len();
    let order = sort_by_pvalue(pvalues);
    let mut decision = DecisionVector::new(m);
    for (k, &i) in order.iter().enumerate() {
        let threshold = alpha / (m - k) as f64;
        decision.per_hypothesis[i] = HypothesisStat {
            statistic: pvalues[i],
            threshold,
        };
        if pvalues[i] <= threshold {
            decision.reject[i] = true;
            decision.order.push(i);
            decision.stage_stats.push(StageStat {
                stage: k + 1,
                statistic: pvalues[i],
                threshold,
                rejected: Some(i),
            });
        } else {
            decision.stage_stats.push(StageStat {
                stage: k + 1,
                statistic: pvalues[i],
                threshold,
                rejected: None,
            });
            // Remaining hypotheses face the same stopping threshold.
            for &j in order.iter().skip(k + 1) {
                decision.per_hypothesis[j] = HypothesisStat {
                    statistic: pvalues[j],
                    threshold,
                };
            }
            break;
        }
    }
    Ok(decision)
}

/// Dunnett-style step-down for an equicorrelated model: at a stage with k
/// remaining coordinates, the extreme standardized coordinate is rejected
/// iff it reaches the Monte Carlo constant `c(k, rho, alpha)`.
///
/// `x_std` must already be standardized to unit marginal variance.
pub fn dunnett_step_down(
    x_std: &[f64],
    rho: f64,
    alpha: f64,
    calib: &DunnettCache,
) -> Result<DecisionVector> {
    check_level(alpha, "alpha")?;
    let m = x_std.len();
    if m == 0 {
        return Err(Error::Validation("empty observation vector".into()));
    }
    let mut decision = DecisionVector::new(m);
    let mut active = ActiveSet::full(m);
    for stage in 1..=m {
        let remaining = active.remaining();
        let k = remaining.len();
        let threshold = calib.quantile(k, rho, alpha)?.value;
        let mut idx = remaining[0];
        let mut best = f64::NEG_INFINITY;
        for &i in remaining {
            if x_std[i] > best {
                best = x_std[i];
                idx = i;
            }
        }
        for &i in remaining {
            decision.per_hypothesis[i] = HypothesisStat {
                statistic: x_std[i],
                threshold,
            };
        }
        if best >= threshold {
            decision.stage_stats.push(StageStat {
                stage,
                statistic: best,
                threshold,
                rejected: Some(idx),
            });
            decision.reject[idx] = true;
            decision.order.push(idx);
            active.reject(idx)?;
            if active.is_exhausted() {
                break;
            }
        } else {
            decision.stage_stats.push(StageStat {
                stage,
                statistic: best,
                threshold,
                rejected: None,
            });
            break;
        }
    }
    Ok(decision)
}

/// Degrees of freedom beyond which the t tail is replaced by the normal
/// tail (error below 1e-4 there).
const T_DF_CUTOFF: u64 = 200;

/// Marginal p-value of coordinate `index` from its marginal distribution.
///
/// With `variance = (s2, nu)` the model scale must exclude the unknown
/// sigma^2, and the statistic is referred to a Student-t tail (normal
/// beyond `nu = 200`); otherwise the scale carries the known variance and
/// the normal tail applies.
pub fn marginal_pvalue(
    x_j: f64,
    index: usize,
    model: &CovarianceModel,
    sided: Sidedness,
    variance: Option<(f64, u64)>,
) -> Result<f64> {
    if index >= model.size() {
        return Err(Error::Validation(format!(
            "index {index} out of range for model size {}",
            model.size()
        )));
    }
    let base_sd = model.marginal_variance(index).sqrt();
    let p = match variance {
        None => {
            let z = x_j / base_sd;
            match sided {
                Sidedness::TwoSided => 2.0 * special::normal_sf(z.abs()),
                Sidedness::OneSided => special::normal_sf(z),
            }
        }
        Some((s2, nu)) => {
            if !(s2 > 0.0) || nu < 1 {
                return Err(Error::ParameterDomain(format!(
                    "invalid variance estimate (s2={s2}, nu={nu})"
                )));
            }
            let t = x_j / (s2.sqrt() * base_sd);
            if nu <= T_DF_CUTOFF {
                let nu = nu as f64;
                match sided {
                    Sidedness::TwoSided => 2.0 * (1.0 - special::student_t_cdf(t.abs(), nu)),
                    Sidedness::OneSided => 1.0 - special::student_t_cdf(t, nu),
                }
            } else {
                match sided {
                    Sidedness::TwoSided => 2.0 * special::normal_sf(t.abs()),
                    Sidedness::OneSided => special::normal_sf(t),
                }
            }
        }
    };
    Ok(p.clamp(0.0, 1.0))
}

/// Marginal p-values for a whole observation vector.
pub fn marginal_pvalues(
    x: &[f64],
    model: &CovarianceModel,
    sided: Sidedness,
    variance: Option<(f64, u64)>,
) -> Result<Vec<f64>> {
    x.iter()
        .enumerate()
        .map(|(i, &v)| marginal_pvalue(v, i, model, sided, variance))
        .collect()
}
