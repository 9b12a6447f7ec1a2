//! Projection onto the nonnegative orthant in a precision metric.
//!
//! Solves `min_{mu >= 0} (x - mu)' W (x - mu)` with `W = Sigma_A^-1` SPD,
//! which is the constrained side of the one-sided global likelihood ratio
//! test. The solver is a Lawson–Hanson style primal active-set iteration on
//! the support of mu; each support change re-solves the normal equations
//! `W_PP mu_P = (W x)_P` by Cholesky.

use crate::matrix::Matrix;
use crate::{Error, Result};

/// KKT residual tolerance certified by the solver.
const KKT_TOL: f64 = 1e-8;

/// Solution of the orthant projection.
#[derive(Debug, Clone)]
pub struct Projection {
    /// The minimizer, elementwise >= 0.
    pub mu_hat: Vec<f64>,
    /// Objective (x - mu_hat)' W (x - mu_hat).
    pub objective: f64,
    /// max_i s_i with s = W (x - mu_hat); dual feasibility wants <= 0.
    pub max_dual: f64,
    /// max_i |mu_hat_i * s_i| (complementary slackness).
    pub max_complementarity: f64,
}

/// Projects `x` onto the nonnegative orthant in the metric of the inverse
/// of `sigma_a` (a covariance submatrix).
pub fn project_nonneg_orthant(sigma_a: &Matrix, x: &[f64]) -> Result<Projection> {
    let w = sigma_a.cholesky()?.inverse();
    project_nonneg_orthant_precision(&w, x)
}

/// Same, given the precision matrix W directly.
pub fn project_nonneg_orthant_precision(w: &Matrix, x: &[f64]) -> Result<Projection> {
    let p = w.size();
    if x.len() != p {
        return Err(Error::Validation(format!(
            "projection: vector length {} != matrix size {p}",
            x.len()
        )));
    }
    let wx = w.mul_vec(x);
    let enter_tol = 1e-12 * wx.iter().fold(1.0f64, |a, v| a.max(v.abs()));

    let mut mu = vec![0.0; p];
    let mut support = vec![false; p];
    let guard = 1u64 << p.min(30);
    let mut iterations = 0u64;

    loop {
        // Dual variables on the current iterate.
        let resid: Vec<f64> = x.iter().zip(&mu).map(|(a, b)| a - b).collect();
        let s = w.mul_vec(&resid);
        let mut best = None;
        let mut best_val = enter_tol;
        for i in 0..p {
            if !support[i] && s[i] > best_val {
                best = Some(i);
                best_val = s[i];
            }
        }
        let Some(enter) = best else {
            let max_dual = s
                .iter()
                .enumerate()
                .filter(|(i, _)| !support[*i])
                .map(|(_, v)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            let max_comp = mu
                .iter()
                .zip(&s)
                .map(|(m, si)| (m * si).abs())
                .fold(0.0, f64::max);
            let objective = resid
                .iter()
                .zip(&s)
                .map(|(r, si)| r * si)
                .sum::<f64>()
                .max(0.0);
            return Ok(Projection {
                mu_hat: mu,
                objective,
                max_dual: if max_dual.is_finite() { max_dual } else { 0.0 },
                max_complementarity: max_comp,
            });
        };
        support[enter] = true;

        // Inner loop: restore feasibility of the unconstrained optimum on
        // the support.
        loop {
            iterations += 1;
            if iterations > guard {
                return Err(Error::NumericalFailure(format!(
                    "projection active-set exceeded {guard} iterations"
                )));
            }
            let idx: Vec<usize> = (0..p).filter(|&i| support[i]).collect();
            let wpp = w.principal_submatrix(&idx);
            let rhs: Vec<f64> = idx.iter().map(|&i| wx[i]).collect();
            let z = wpp.cholesky()?.solve(&rhs);
            if z.iter().all(|&v| v > 0.0) {
                for (k, &i) in idx.iter().enumerate() {
                    mu[i] = z[k];
                }
                break;
            }
            // Step toward z until the first support coordinate hits zero.
            let mut t = 1.0f64;
            for (k, &i) in idx.iter().enumerate() {
                if z[k] <= 0.0 {
                    let denom = mu[i] - z[k];
                    if denom > 0.0 {
                        t = t.min(mu[i] / denom);
                    } else {
                        t = 0.0;
                    }
                }
            }
            for (k, &i) in idx.iter().enumerate() {
                mu[i] += t * (z[k] - mu[i]);
            }
            for &i in &idx {
                if mu[i] <= 0.0 {
                    mu[i] = 0.0;
                    support[i] = false;
                }
            }
        }
    }
}

/// Checks the KKT certificate of a finished projection.
pub fn kkt_satisfied(p: &Projection) -> bool {
    p.mu_hat.iter().all(|&v| v >= 0.0)
        && p.max_dual <= KKT_TOL
        && p.max_complementarity <= KKT_TOL
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;

    // Exhaustive support enumeration oracle: for every subset F solve
    // W_FF mu_F = (Wx)_F, keep the candidate that is primal and dual
    // feasible. Strict convexity makes it unique.
    fn brute_force(w: &Matrix, x: &[f64]) -> Vec<f64> {
        let p = w.size();
        let wx = w.mul_vec(x);
        'subset: for mask in 0..(1u32 << p) {
            let idx: Vec<usize> = (0..p).filter(|i| mask >> i & 1 == 1).collect();
            let mut mu = vec![0.0; p];
            if !idx.is_empty() {
                let wpp = w.principal_submatrix(&idx);
                let rhs: Vec<f64> = idx.iter().map(|&i| wx[i]).collect();
                let z = wpp.cholesky().unwrap().solve(&rhs);
                for (k, &i) in idx.iter().enumerate() {
                    if z[k] < 0.0 {
                        continue 'subset;
                    }
                    mu[i] = z[k];
                }
            }
            let resid: Vec<f64> = x.iter().zip(&mu).map(|(a, b)| a - b).collect();
            let s = w.mul_vec(&resid);
            for i in 0..p {
                if !idx.contains(&i) && s[i] > 1e-9 {
                    continue 'subset;
                }
            }
            return mu;
        }
        panic!("no feasible support found");
    }

    fn random_spd(rng: &mut StreamRng, n: usize) -> Matrix {
        let mut b = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                b[(i, j)] = rng.next_normal();
            }
        }
        Matrix::from_fn(n, |i, j| {
            (0..n).map(|k| b[(i, k)] * b[(j, k)]).sum::<f64>()
                + if i == j { 0.5 * n as f64 } else { 0.0 }
        })
    }

    #[test]
    fn interior_point_projects_to_itself() {
        let w = Matrix::identity(3);
        let x = [1.0, 2.0, 0.5];
        let p = project_nonneg_orthant_precision(&w, &x).unwrap();
        for k in 0..3 {
            assert!((p.mu_hat[k] - x[k]).abs() < 1e-12);
        }
        assert!(p.objective.abs() < 1e-12);
        assert!(kkt_satisfied(&p));
    }

    #[test]
    fn nonpositive_input_with_diagonal_metric_projects_to_zero() {
        let w = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 0.5]]).unwrap();
        let x = [-1.0, -3.0];
        let p = project_nonneg_orthant_precision(&w, &x).unwrap();
        assert_eq!(p.mu_hat, vec![0.0, 0.0]);
        let want = 2.0 * 1.0 + 0.5 * 9.0;
        assert!((p.objective - want).abs() < 1e-12);
        assert!(kkt_satisfied(&p));
    }

    #[test]
    fn matches_exhaustive_enumeration() {
        let mut rng = StreamRng::new(31337, 0);
        for trial in 0..200 {
            let n = 1 + (rng.next_u64() % 12) as usize;
            let w = random_spd(&mut rng, n);
            let x: Vec<f64> = (0..n).map(|_| 2.0 * rng.next_normal()).collect();
            let got = project_nonneg_orthant_precision(&w, &x).unwrap();
            assert!(kkt_satisfied(&got), "trial {trial} KKT");
            let want = brute_force(&w, &x);
            for k in 0..n {
                assert!(
                    (got.mu_hat[k] - want[k]).abs() < 1e-8,
                    "trial {trial} k={k}: {} vs {}",
                    got.mu_hat[k],
                    want[k]
                );
            }
        }
    }

    #[test]
    fn covariance_entry_point_inverts() {
        let sigma = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let x = [1.0, -2.0];
        let via_cov = project_nonneg_orthant(&sigma, &x).unwrap();
        let w = sigma.cholesky().unwrap().inverse();
        let via_prec = project_nonneg_orthant_precision(&w, &x).unwrap();
        for k in 0..2 {
            assert!((via_cov.mu_hat[k] - via_prec.mu_hat[k]).abs() < 1e-12);
        }
    }
}
