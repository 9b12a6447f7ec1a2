//! Adaptive standardized conditional residuals.
//!
//! At stage m with rejected history (j_1, ..., j_{m-1}), the residual for a
//! remaining coordinate j is
//!
//! ```text
//! U_j = (x_j - E0[x_j | other remaining x]) / sqrt(Var(x_j | other remaining x))
//! ```
//!
//! with the conditional moments taken under the global null. Writing
//! P = Sigma_A^-1 for the precision of the remaining block, the whole stage
//! vector is available from one inverse application:
//! `U_j = (P x_A)_j / sqrt(P_jj)`, which is what the engine computes.
//! Structured models replace the dense solve with O(p) closed forms.

use crate::covariance::{ActiveSet, CovarianceModel, Structure};
use crate::special;
use crate::{Error, Result};

/// Conditional variance below which the model is treated as degenerate
/// rather than silently dividing.
const DEGENERATE_VAR: f64 = 1e-14;

/// The stage-m residuals on the remaining coordinates.
#[derive(Debug, Clone)]
pub struct ResidualVector {
    /// Stage number m = |rejected| + 1.
    pub stage: usize,
    /// Remaining indices (ascending), parallel to `values`.
    pub indices: Vec<usize>,
    /// U_j for each remaining index.
    pub values: Vec<f64>,
    /// Conditional standard deviation of each remaining coordinate
    /// (scale included); `values[k] * cond_sd[k]` is the raw conditional
    /// residual.
    pub cond_sd: Vec<f64>,
}

impl ResidualVector {
    /// Value at an original index, if still remaining.
    pub fn value_at(&self, index: usize) -> Option<f64> {
        self.indices
            .binary_search(&index)
            .ok()
            .map(|k| self.values[k])
    }

    /// (position, index, value) of the maximizer of `key` over remaining
    /// coordinates, smallest index winning ties.
    pub fn argmax_by(&self, mut key: impl FnMut(f64) -> f64) -> (usize, usize, f64) {
        let mut best = 0;
        let mut best_key = key(self.values[0]);
        for k in 1..self.values.len() {
            let v = key(self.values[k]);
            if v > best_key {
                best = k;
                best_key = v;
            }
        }
        (best, self.indices[best], self.values[best])
    }
}

fn gather(x: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| x[i]).collect()
}

fn finish(
    stage: usize,
    indices: Vec<usize>,
    px: Vec<f64>,
    diag: Vec<f64>,
    scale: f64,
) -> Result<ResidualVector> {
    let mut values = Vec::with_capacity(px.len());
    let mut cond_sd = Vec::with_capacity(px.len());
    let sqrt_scale = scale.sqrt();
    for (k, (&p, &d)) in px.iter().zip(&diag).enumerate() {
        // diag entries are precisions; cond variance is 1/d (unit scale).
        if !(d.is_finite() && d > 0.0) || 1.0 / d <= DEGENERATE_VAR {
            return Err(Error::NumericalFailure(format!(
                "degenerate conditional variance at remaining position {k}"
            )));
        }
        let u = p / d.sqrt() / sqrt_scale;
        if !u.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "non-finite residual at remaining position {k}"
            )));
        }
        values.push(u);
        cond_sd.push(sqrt_scale / d.sqrt());
    }
    Ok(ResidualVector {
        stage,
        indices,
        values,
        cond_sd,
    })
}

/// Reference engine: computes the stage residual vector through the dense
/// principal-submatrix path regardless of the model structure.
pub fn residual_vector_generic(
    model: &CovarianceModel,
    active: &ActiveSet,
    x: &[f64],
) -> Result<ResidualVector> {
    check_input(model, active, x)?;
    let remaining = active.remaining();
    let sub = model.unit_matrix().principal_submatrix(remaining);
    let chol = sub.cholesky()?;
    let xa = gather(x, remaining);
    let px = chol.solve(&xa);
    let diag = chol.inverse_diagonal();
    finish(active.stage(), remaining.to_vec(), px, diag, model.scale())
}

/// Production engine: picks the structured O(p) path when one exists,
/// falling back to the dense path. Agrees with
/// [`residual_vector_generic`] to ~1e-10.
pub fn residual_vector(
    model: &CovarianceModel,
    active: &ActiveSet,
    x: &[f64],
) -> Result<ResidualVector> {
    check_input(model, active, x)?;
    if let Structure::Intraclass { rho, .. } = model.structure() {
        let mut rv = residual_vector_intraclass_fast(*rho, active, x)?;
        let sqrt_scale = model.scale().sqrt();
        for v in rv.values.iter_mut() {
            *v /= sqrt_scale;
        }
        for s in rv.cond_sd.iter_mut() {
            *s *= sqrt_scale;
        }
        return Ok(rv);
    }
    let remaining = active.remaining();
    let kernel = model.active_kernel(remaining)?;
    let xa = gather(x, remaining);
    let px = kernel.solve(&xa);
    let diag = kernel.inverse_diagonal();
    finish(active.stage(), remaining.to_vec(), px, diag, model.scale())
}

/// O(p) intraclass stage residuals at unit scale, using the running sum of
/// the remaining coordinates: with c = rho / (1 + (p-2) rho),
/// `U_j = (x_j - c (S - x_j)) / sqrt((1-rho)(1+(p-1)rho)/(1+(p-2)rho))`.
pub fn residual_vector_intraclass_fast(
    rho: f64,
    active: &ActiveSet,
    x: &[f64],
) -> Result<ResidualVector> {
    let remaining = active.remaining();
    if remaining.is_empty() {
        return Err(Error::Validation("empty active set".into()));
    }
    let p = remaining.len() as f64;
    if !(rho < 1.0 && 1.0 + (p - 1.0) * rho > 0.0) {
        return Err(Error::ParameterDomain(format!(
            "intraclass(rho={rho}, p={p}) is not positive definite"
        )));
    }
    let denom = 1.0 + (p - 2.0) * rho;
    let c = rho / denom;
    let cond_var = (1.0 - rho) * (1.0 + (p - 1.0) * rho) / denom;
    if cond_var <= DEGENERATE_VAR {
        return Err(Error::NumericalFailure(
            "degenerate conditional variance in intraclass fast path".into(),
        ));
    }
    let sd = cond_var.sqrt();
    let s: f64 = remaining.iter().map(|&i| x[i]).sum();
    let mut values = Vec::with_capacity(remaining.len());
    for &i in remaining {
        values.push((x[i] - c * (s - x[i])) / sd);
    }
    Ok(ResidualVector {
        stage: active.stage(),
        indices: remaining.to_vec(),
        values,
        cond_sd: vec![sd; remaining.len()],
    })
}

/// Stage statistic for the change-point model from the pooled sample
/// means, bounded by the nearest rejected difference indices.
///
/// `zbar` holds the M+1 population means; `rejected` the rejected
/// difference indices (0-based); `i` the remaining difference index. With
/// 1-based bounds j_r < i+1 < j_{r+1} (sentinels 0 and M+1 in
/// population-index space) the statistic is
///
/// ```text
/// sqrt((j_{r+1}-j_r) / ((j_{r+1}-i)(i-j_r))) *
///   [ sum_{j=j_r+1}^{i} z_j - (i-j_r)/(j_{r+1}-j_r) * sum_{j=j_r+1}^{j_{r+1}} z_j ]
/// ```
///
/// Its absolute value equals the absolute generic residual at unit scale;
/// the sign is globally flipped relative to the generic orientation.
pub fn residual_changepoint_closed_form(
    zbar: &[f64],
    rejected: &[usize],
    i: usize,
) -> Result<f64> {
    let m = zbar.len().checked_sub(1).ok_or_else(|| {
        Error::Validation("zbar must hold at least one population mean".into())
    })?;
    if i >= m {
        return Err(Error::Validation(format!(
            "difference index {i} out of range for M={m}"
        )));
    }
    if rejected.contains(&i) {
        return Err(Error::Validation(format!("index {i} is already rejected")));
    }
    // 1-based difference index and its bracketing rejected indices.
    let i1 = i + 1;
    let mut lower = 0usize; // sentinel j_r = 0
    let mut upper = m + 1; // sentinel j_{r+1} = M+1
    for &r in rejected {
        let r1 = r + 1;
        if r1 < i1 {
            lower = lower.max(r1);
        } else {
            upper = upper.min(r1);
        }
    }
    let span = (upper - lower) as f64;
    let left = (i1 - lower) as f64;
    let right = (upper - i1) as f64;
    let factor = (span / (right * left)).sqrt();
    // zbar is 0-based: population j (1-based) is zbar[j-1].
    let seg_to_i: f64 = zbar[lower..i1].iter().sum();
    let seg_all: f64 = zbar[lower..upper.min(m + 1)].iter().sum();
    Ok(factor * (seg_to_i - left * seg_all / span))
}

/// Divides each residual by the pooled standard deviation `sqrt(s2)`
/// (the unknown-variance statistic on the normal-constant scale).
pub fn studentize(u: &ResidualVector, s2: f64, nu: u64) -> Result<ResidualVector> {
    if !(s2 > 0.0) {
        return Err(Error::ParameterDomain(format!("s2 must be positive, got {s2}")));
    }
    if nu < 1 {
        return Err(Error::ParameterDomain("nu must be >= 1".into()));
    }
    let s = s2.sqrt();
    let mut out = u.clone();
    for v in out.values.iter_mut() {
        *v /= s;
    }
    Ok(out)
}

/// Alternative studentization U / sqrt(T) with `T = nu s^2 + x' Sigma^-1 x`
/// (the exponential-family statistic). `quad_form` is the full-vector
/// quadratic form at the model scale.
pub fn studentize_sqrt_t(
    u: &ResidualVector,
    s2: f64,
    nu: u64,
    quad_form: f64,
) -> Result<ResidualVector> {
    if !(s2 > 0.0) {
        return Err(Error::ParameterDomain(format!("s2 must be positive, got {s2}")));
    }
    if nu < 1 {
        return Err(Error::ParameterDomain("nu must be >= 1".into()));
    }
    let t = nu as f64 * s2 + quad_form;
    let mut out = u.clone();
    for v in out.values.iter_mut() {
        *v /= t.sqrt();
    }
    Ok(out)
}

/// Two-sided or one-sided alternative, matching the testing problems
/// `mu_i = 0 vs mu_i != 0` and `mu_i = 0 (or <= 0) vs mu_i > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sidedness {
    TwoSided,
    OneSided,
}

/// Conditional P-value of a residual value under the stage-m null.
pub fn conditional_pvalue(u: f64, sidedness: Sidedness) -> f64 {
    if u.is_infinite() {
        return match sidedness {
            Sidedness::TwoSided => 0.0,
            Sidedness::OneSided => {
                if u > 0.0 {
                    0.0
                } else {
                    1.0
                }
            }
        };
    }
    match sidedness {
        Sidedness::TwoSided => 2.0 * special::normal_sf(u.abs()),
        Sidedness::OneSided => special::normal_sf(u),
    }
}

fn check_input(model: &CovarianceModel, active: &ActiveSet, x: &[f64]) -> Result<()> {
    if x.len() != model.size() {
        return Err(Error::Validation(format!(
            "observation length {} != model size {}",
            x.len(),
            model.size()
        )));
    }
    if active.len_total() != model.size() {
        return Err(Error::Validation(format!(
            "active set covers {} indices but model size is {}",
            active.len_total(),
            model.size()
        )));
    }
    if active.is_exhausted() {
        return Err(Error::Validation("empty active set".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::rng::StreamRng;

    fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
        assert!((a - b).abs() <= tol, "{what}: {a} vs {b}");
    }

    #[test]
    fn single_coordinate_is_marginal_standardization() {
        // M = 1, Sigma = (sigma11): U = x1 / sqrt(sigma11).
        let model =
            CovarianceModel::dense(Matrix::from_rows(&[vec![4.0]]).unwrap(), 1.0).unwrap();
        let rv = residual_vector_generic(&model, &ActiveSet::full(1), &[3.0]).unwrap();
        assert_close(rv.values[0], 1.5, 1e-14, "M=1");
    }

    #[test]
    fn identity_model_returns_observations() {
        let model = CovarianceModel::identity(4);
        let x = [0.3, -1.2, 2.0, 0.0];
        let mut active = ActiveSet::full(4);
        active.reject(2).unwrap();
        let rv = residual_vector(&model, &active, &x).unwrap();
        for (k, &i) in rv.indices.iter().enumerate() {
            assert_close(rv.values[k], x[i], 1e-14, "identity");
        }
    }

    #[test]
    fn change_point_m2_example() {
        // Sigma = [[2,-1],[-1,2]], x = (1,-1): U = (0.40825, -0.40825).
        let model = CovarianceModel::change_point(2, 1.0).unwrap();
        let rv = residual_vector(&model, &ActiveSet::full(2), &[1.0, -1.0]).unwrap();
        let want = 0.5 / 1.5f64.sqrt();
        assert_close(rv.values[0], want, 1e-12, "U1");
        assert_close(rv.values[1], -want, 1e-12, "U2");
        assert!((want - 0.40825).abs() < 1e-5);
    }

    #[test]
    fn intraclass_fast_examples() {
        // rho = 0: U_j = x_j.
        let x = [1.0, -0.5, 0.25];
        let rv = residual_vector_intraclass_fast(0.0, &ActiveSet::full(3), &x).unwrap();
        for k in 0..3 {
            assert_close(rv.values[k], x[k], 1e-14, "rho=0");
        }

        // rho = 0.5, p = 2, x = (1, 0): U = (1.1547, -0.5774).
        let rv = residual_vector_intraclass_fast(0.5, &ActiveSet::full(2), &[1.0, 0.0]).unwrap();
        assert_close(rv.values[0], 1.0 / 0.75f64.sqrt(), 1e-12, "U1");
        assert_close(rv.values[1], -0.5 / 0.75f64.sqrt(), 1e-12, "U2");

        // Exchangeable symmetry: equal inputs give equal residuals.
        let rv =
            residual_vector_intraclass_fast(0.5, &ActiveSet::full(3), &[2.0, 2.0, 2.0]).unwrap();
        assert!(rv.values.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-14));
    }

    #[test]
    fn intraclass_fast_matches_generic() {
        let mut rng = StreamRng::new(555, 0);
        for trial in 0..200 {
            let m = 2 + (rng.next_u64() % 199) as usize; // up to 200
            let rho_lo = -1.0 / (m as f64 - 1.0) + 0.01;
            let rho = rho_lo + (0.95 - rho_lo) * rng.next_f64();
            let model = CovarianceModel::intraclass(m, rho, 1.0).unwrap();
            let x: Vec<f64> = (0..m).map(|_| rng.next_normal()).collect();
            let mut active = ActiveSet::full(m);
            let n_rej = (rng.next_u64() % (m as u64 - 1)) as usize;
            for _ in 0..n_rej {
                let rem = active.remaining().to_vec();
                active
                    .reject(rem[(rng.next_u64() % rem.len() as u64) as usize])
                    .unwrap();
            }
            let fast = residual_vector_intraclass_fast(rho, &active, &x).unwrap();
            let generic = residual_vector_generic(&model, &active, &x).unwrap();
            for k in 0..fast.values.len() {
                assert!(
                    (fast.values[k] - generic.values[k]).abs() < 1e-10,
                    "trial {trial} k={k}: {} vs {}",
                    fast.values[k],
                    generic.values[k]
                );
            }
        }
    }

    #[test]
    fn dispatch_matches_generic_on_structured_models() {
        let mut rng = StreamRng::new(556, 0);
        let models = vec![
            CovarianceModel::change_point(30, 1.0).unwrap(),
            CovarianceModel::change_point(13, 0.25).unwrap(),
            CovarianceModel::successive(25, 0.45, 1.0).unwrap(),
            CovarianceModel::successive(18, -0.3, 2.0).unwrap(),
            CovarianceModel::intraclass(20, 0.6, 0.5).unwrap(),
        ];
        for model in &models {
            let m = model.size();
            for _ in 0..40 {
                let x: Vec<f64> = (0..m).map(|_| rng.next_normal()).collect();
                let mut active = ActiveSet::full(m);
                let n_rej = (rng.next_u64() % (m as u64 - 1)) as usize;
                for _ in 0..n_rej {
                    let rem = active.remaining().to_vec();
                    active
                        .reject(rem[(rng.next_u64() % rem.len() as u64) as usize])
                        .unwrap();
                }
                let fast = residual_vector(model, &active, &x).unwrap();
                let generic = residual_vector_generic(model, &active, &x).unwrap();
                for k in 0..fast.values.len() {
                    assert!(
                        (fast.values[k] - generic.values[k]).abs() < 1e-10,
                        "{:?}",
                        model.structure()
                    );
                }
            }
        }
    }

    #[test]
    fn changepoint_closed_form_m2_example() {
        // M = 2: |closed form at i=0| = |2 z1 - z2 - z3| / sqrt(6).
        let zbar = [0.7, -0.4, 1.1];
        let got = residual_changepoint_closed_form(&zbar, &[], 0).unwrap();
        let want = (2.0 * zbar[0] - zbar[1] - zbar[2]).abs() / 6.0f64.sqrt();
        assert_close(got.abs(), want, 1e-12, "closed form M=2");

        // And |closed| = |generic| with the sign flipped.
        let model = CovarianceModel::change_point(2, 1.0).unwrap();
        let x = [zbar[1] - zbar[0], zbar[2] - zbar[1]];
        let rv = residual_vector_generic(&model, &ActiveSet::full(2), &x).unwrap();
        assert_close(got, -rv.values[0], 1e-12, "sign convention");
    }

    #[test]
    fn changepoint_closed_form_constant_sequence_is_zero() {
        let zbar = [1.5; 7];
        for i in 0..6 {
            let v = residual_changepoint_closed_form(&zbar, &[2], i);
            if i == 2 {
                assert!(v.is_err());
            } else {
                assert!(v.unwrap().abs() < 1e-12);
            }
        }
    }

    #[test]
    fn changepoint_closed_form_matches_generic_with_rejections() {
        let mut rng = StreamRng::new(557, 0);
        for trial in 0..200 {
            let m = 2 + (rng.next_u64() % 99) as usize; // up to 100
            let zbar: Vec<f64> = (0..=m).map(|_| rng.next_normal()).collect();
            let x: Vec<f64> = (0..m).map(|i| zbar[i + 1] - zbar[i]).collect();
            let model = CovarianceModel::change_point(m, 1.0).unwrap();
            let mut active = ActiveSet::full(m);
            let n_rej = (rng.next_u64() % (m as u64 - 1)) as usize;
            for _ in 0..n_rej {
                let rem = active.remaining().to_vec();
                active
                    .reject(rem[(rng.next_u64() % rem.len() as u64) as usize])
                    .unwrap();
            }
            let generic = residual_vector_generic(&model, &active, &x).unwrap();
            for (k, &i) in generic.indices.iter().enumerate() {
                let closed =
                    residual_changepoint_closed_form(&zbar, active.rejected(), i).unwrap();
                assert!(
                    (closed.abs() - generic.values[k].abs()).abs() < 1e-9,
                    "trial {trial} i={i}: |{closed}| vs |{}|",
                    generic.values[k]
                );
            }
        }
    }

    #[test]
    fn segment_between_rejections_uses_segment_means() {
        // Segment of length 2 bounded by rejections on both sides:
        // value proportional to the difference of the two segment means.
        let zbar = [0.0, 1.0, -2.0, 0.5, 0.0, 0.0];
        let m = 5;
        let rejected = [0usize, 3usize];
        let x: Vec<f64> = (0..m).map(|i| zbar[i + 1] - zbar[i]).collect();
        let model = CovarianceModel::change_point(m, 1.0).unwrap();
        let active = ActiveSet::with_rejected(m, &rejected).unwrap();
        let generic = residual_vector_generic(&model, &active, &x).unwrap();
        for &i in &[1usize, 2usize] {
            let closed = residual_changepoint_closed_form(&zbar, &rejected, i).unwrap();
            let gv = generic.value_at(i).unwrap();
            assert_close(closed.abs(), gv.abs(), 1e-12, "interior segment");
        }
    }

    #[test]
    fn studentize_scales_values() {
        let model = CovarianceModel::identity(3);
        let rv = residual_vector(&model, &ActiveSet::full(3), &[1.0, 2.0, -3.0]).unwrap();
        let same = studentize(&rv, 1.0, 10).unwrap();
        assert_eq!(same.values, rv.values);
        let halved = studentize(&rv, 4.0, 10).unwrap();
        for k in 0..3 {
            assert_close(halved.values[k], rv.values[k] / 2.0, 1e-15, "s2=4");
        }
        assert!(studentize(&rv, 0.0, 10).is_err());
        assert!(studentize(&rv, 1.0, 0).is_err());
    }

    #[test]
    fn studentize_sqrt_t_uses_t_denominator() {
        let model = CovarianceModel::identity(2);
        let rv = residual_vector(&model, &ActiveSet::full(2), &[1.0, 1.0]).unwrap();
        let out = studentize_sqrt_t(&rv, 2.0, 5, 3.0).unwrap();
        let t: f64 = 5.0 * 2.0 + 3.0;
        for k in 0..2 {
            assert_close(out.values[k], rv.values[k] / t.sqrt(), 1e-15, "sqrtT");
        }
    }

    #[test]
    fn conditional_pvalue_examples() {
        assert_close(conditional_pvalue(0.0, Sidedness::TwoSided), 1.0, 1e-15, "u=0");
        assert_close(
            conditional_pvalue(1.959964, Sidedness::TwoSided),
            0.05,
            1e-6,
            "u=1.96",
        );
        assert_eq!(conditional_pvalue(f64::INFINITY, Sidedness::TwoSided), 0.0);
        assert_eq!(conditional_pvalue(f64::INFINITY, Sidedness::OneSided), 0.0);
        assert_eq!(conditional_pvalue(f64::NEG_INFINITY, Sidedness::OneSided), 1.0);
        assert_close(
            conditional_pvalue(0.0, Sidedness::OneSided),
            0.5,
            1e-15,
            "one-sided u=0",
        );
    }

    #[test]
    fn shift_property_along_first_covariance_column() {
        // U_1(x + r g) - U_1(x) = r * cond_sd_1 for g = first column of the
        // scaled covariance divided by scale (unit-structure column), and
        // the other coordinates are invariant.
        let mut rng = StreamRng::new(558, 1);
        for trial in 0..200 {
            let m = 2 + (rng.next_u64() % 30) as usize;
            let model = match trial % 3 {
                0 => CovarianceModel::intraclass(m, 0.1 + 0.8 * rng.next_f64(), 1.0).unwrap(),
                1 => CovarianceModel::change_point(m, 1.0).unwrap(),
                _ => CovarianceModel::successive(m, 0.9 * rng.next_f64() / 2.0, 1.0).unwrap(),
            };
            let x: Vec<f64> = (0..m).map(|_| rng.next_normal()).collect();
            let mut active = ActiveSet::full(m);
            let n_rej = (rng.next_u64() % (m as u64 / 2).max(1)) as usize;
            for _ in 0..n_rej {
                let rem: Vec<usize> =
                    active.remaining().iter().copied().filter(|&i| i != 0).collect();
                if rem.is_empty() {
                    break;
                }
                active
                    .reject(rem[(rng.next_u64() % rem.len() as u64) as usize])
                    .unwrap();
            }
            let r = [2.0, -2.0, 0.5, -0.5][(rng.next_u64() % 4) as usize];
            let g: Vec<f64> = (0..m).map(|i| model.unit_entry(i, 0)).collect();
            let shifted: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + r * b).collect();

            let base = residual_vector(&model, &active, &x).unwrap();
            let moved = residual_vector(&model, &active, &shifted).unwrap();
            let pos0 = base.indices.iter().position(|&i| i == 0).unwrap();
            let expected_shift = r * base.cond_sd[pos0] / model.scale();
            assert!(
                ((moved.values[pos0] - base.values[pos0]) - expected_shift).abs() < 1e-9,
                "trial {trial}: shift"
            );
            for k in 0..base.values.len() {
                if k != pos0 {
                    assert!(
                        (moved.values[k] - base.values[k]).abs() < 1e-9,
                        "trial {trial}: invariance at {k}"
                    );
                }
            }
        }
    }

    #[test]
    fn null_standardization_unit_variance() {
        // Under the null, each stage-1 residual has variance 1; check the
        // empirical variance over many seeded draws.
        let m = 6;
        let model = CovarianceModel::intraclass(m, 0.5, 1.0).unwrap();
        let l = model.cholesky_factor().unwrap();
        let mut rng = StreamRng::new(559, 2);
        let reps = 100_000;
        let mut sums = vec![0.0; m];
        let mut sumsq = vec![0.0; m];
        let active = ActiveSet::full(m);
        let mut z = vec![0.0; m];
        for _ in 0..reps {
            rng.fill_normal(&mut z);
            let x: Vec<f64> = (0..m)
                .map(|i| (0..=i).map(|k| l[(i, k)] * z[k]).sum())
                .collect();
            let rv = residual_vector(&model, &active, &x).unwrap();
            for k in 0..m {
                sums[k] += rv.values[k];
                sumsq[k] += rv.values[k] * rv.values[k];
            }
        }
        for k in 0..m {
            let mean = sums[k] / reps as f64;
            let var = sumsq[k] / reps as f64 - mean * mean;
            assert!((var - 1.0).abs() < 0.05, "k={k}: var {var}");
        }
    }
}
