//! Self-check suite: closed forms against the generic engines, the shift
//! and convexity sweeps, and the step-down inadmissibility witness.
//!
//! Everything here runs against the public production paths; the CLI
//! `verify` subcommand prints one line per check and fails the process if
//! any check fails.

use crate::covariance::{
    intraclass_inverse, succ_det, succ_inverse_first_row, tridiag_inverse_boundary_rows,
    ActiveSet, CovarianceModel,
};
use crate::critical_values::CriticalSchedule;
use crate::matrix::Matrix;
use crate::procedures::{lrsd, mrd, Sidedness};
use crate::residuals::{
    residual_changepoint_closed_form, residual_vector, residual_vector_generic,
};
use crate::rng::StreamRng;
use crate::Result;

/// Outcome of one named check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn pass(name: &str, detail: String) -> Self {
        CheckResult {
            name: name.into(),
            passed: true,
            detail,
        }
    }

    fn fail(name: &str, detail: String) -> Self {
        CheckResult {
            name: name.into(),
            passed: false,
            detail,
        }
    }

    fn from_worst(name: &str, worst: f64, tol: f64) -> Self {
        if worst <= tol {
            CheckResult::pass(name, format!("max deviation {worst:.3e} <= {tol:.0e}"))
        } else {
            CheckResult::fail(name, format!("max deviation {worst:.3e} > {tol:.0e}"))
        }
    }
}

/// Runs the full suite.
pub fn run_all(seed: u64) -> Vec<CheckResult> {
    vec![
        check_intraclass_inverse(),
        check_boundary_rows(),
        check_successive_recursions(),
        check_active_kernels(seed),
        check_intraclass_fast_residuals(seed),
        check_changepoint_closed_form(seed),
        check_shift_property(seed),
        check_convexity_sweep(seed),
        check_lrsd_witness(),
        check_matrix_csv_round_trip(),
    ]
}

fn check_intraclass_inverse() -> CheckResult {
    let mut worst = 0.0f64;
    for p in 1..=12 {
        let lo = -1.0 / (p as f64 - 1.0).max(1.0) + 0.02;
        for k in 0..8 {
            let rho = lo + (0.97 - lo) * k as f64 / 7.0;
            let inv = match intraclass_inverse(rho, p) {
                Ok(m) => m,
                Err(e) => return CheckResult::fail("intraclass_inverse", e.to_string()),
            };
            let m = Matrix::from_fn(p, |i, j| if i == j { 1.0 } else { rho });
            for i in 0..p {
                for j in 0..p {
                    let prod: f64 = (0..p).map(|t| inv[(i, t)] * m[(t, j)]).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    worst = worst.max((prod - want).abs());
                }
            }
        }
    }
    CheckResult::from_worst("intraclass_inverse * matrix = I", worst, 1e-10)
}

fn check_boundary_rows() -> CheckResult {
    let mut worst = 0.0f64;
    for p in 1..=12 {
        let model = CovarianceModel::change_point(p, 1.0).unwrap();
        let inv = match model.unit_matrix().cholesky().map(|c| c.inverse()) {
            Ok(m) => m,
            Err(e) => return CheckResult::fail("tridiag_boundary_rows", e.to_string()),
        };
        let (first, last) = tridiag_inverse_boundary_rows(p).unwrap();
        for j in 0..p {
            worst = worst.max((first[j] - inv[(0, j)]).abs());
            worst = worst.max((last[j] - inv[(p - 1, j)]).abs());
        }
    }
    CheckResult::from_worst("tridiagonal inverse boundary rows", worst, 1e-10)
}

fn check_successive_recursions() -> CheckResult {
    let mut worst = 0.0f64;
    for r in 1..=20usize {
        for &rho in &[-0.49, -0.2, 0.25, 0.49] {
            let m = Matrix::from_fn(r, |i, j| {
                if i == j {
                    1.0
                } else if i.abs_diff(j) == 1 {
                    rho
                } else {
                    0.0
                }
            });
            let chol = match m.cholesky() {
                Ok(c) => c,
                Err(e) => return CheckResult::fail("successive recursions", e.to_string()),
            };
            // det = prod of squared Cholesky pivots.
            let l = chol.factor();
            let det: f64 = (0..r).map(|i| l[(i, i)] * l[(i, i)]).product();
            let rec = succ_det(r, rho);
            worst = worst.max((rec - det).abs() / det.abs().max(1e-30));

            let inv_row = succ_inverse_first_row(r, rho).unwrap();
            let mut e0 = vec![0.0; r];
            e0[0] = 1.0;
            let col = chol.solve(&e0);
            for j in 0..r {
                worst = worst.max((inv_row[j] - col[j]).abs());
            }
        }
    }
    CheckResult::from_worst("successive-correlation det/first-row recursions", worst, 1e-10)
}

fn random_history(rng: &mut StreamRng, m: usize, max_frac: f64) -> ActiveSet {
    let mut active = ActiveSet::full(m);
    let cap = ((m as f64 * max_frac) as u64).max(1);
    let n_rej = rng.next_u64() % cap;
    for _ in 0..n_rej {
        let rem = active.remaining().to_vec();
        if rem.len() <= 1 {
            break;
        }
        let pick = rem[(rng.next_u64() % rem.len() as u64) as usize];
        active.reject(pick).unwrap();
    }
    active
}

fn check_active_kernels(seed: u64) -> CheckResult {
    let mut rng = StreamRng::new(seed, 101);
    let models = [
        CovarianceModel::intraclass(15, 0.5, 1.0).unwrap(),
        CovarianceModel::change_point(16, 1.0).unwrap(),
        CovarianceModel::successive(14, 0.45, 2.0).unwrap(),
    ];
    let mut worst = 0.0f64;
    for model in &models {
        let m = model.size();
        for _ in 0..40 {
            let active = random_history(&mut rng, m, 0.9);
            let rem = active.remaining().to_vec();
            let v: Vec<f64> = (0..rem.len()).map(|_| rng.next_normal()).collect();
            let fast = model.principal_submatrix_solve(&active, &v).unwrap();
            let dense = model
                .unit_matrix()
                .scaled(model.scale())
                .principal_submatrix(&rem);
            let want = dense.cholesky().unwrap().solve(&v);
            for k in 0..rem.len() {
                worst = worst.max((fast[k] - want[k]).abs());
            }
        }
    }
    CheckResult::from_worst("principal-submatrix fast kernels vs dense", worst, 1e-10)
}

fn check_intraclass_fast_residuals(seed: u64) -> CheckResult {
    let mut rng = StreamRng::new(seed, 102);
    let mut worst = 0.0f64;
    for _ in 0..120 {
        let m = 2 + (rng.next_u64() % 99) as usize;
        let rho_lo = -1.0 / (m as f64 - 1.0) + 0.01;
        let rho = rho_lo + (0.95 - rho_lo) * rng.next_f64();
        let model = CovarianceModel::intraclass(m, rho, 1.0).unwrap();
        let x: Vec<f64> = (0..m).map(|_| rng.next_normal()).collect();
        let active = random_history(&mut rng, m, 0.9);
        let fast = residual_vector(&model, &active, &x).unwrap();
        let generic = residual_vector_generic(&model, &active, &x).unwrap();
        for k in 0..fast.values.len() {
            worst = worst.max((fast.values[k] - generic.values[k]).abs());
        }
    }
    CheckResult::from_worst("intraclass fast residuals vs generic", worst, 1e-10)
}

/// Signature of the change-point closed-form statistic, injectable so the
/// suite itself can be mutation-tested.
pub type ChangepointEval = dyn Fn(&[f64], &[usize], usize) -> Result<f64>;

/// Closed-form change-point statistic vs the generic engine; the closed
/// form carries a global sign flip relative to the generic orientation,
/// which this check pins exactly.
pub fn check_changepoint_closed_form(seed: u64) -> CheckResult {
    check_changepoint_closed_form_with(seed, &|z, r, i| {
        residual_changepoint_closed_form(z, r, i)
    })
}

/// Same check with an injected evaluation (test hook).
pub fn check_changepoint_closed_form_with(seed: u64, eval: &ChangepointEval) -> CheckResult {
    let mut rng = StreamRng::new(seed, 103);
    let mut worst = 0.0f64;
    for _ in 0..120 {
        let m = 2 + (rng.next_u64() % 99) as usize;
        let zbar: Vec<f64> = (0..=m).map(|_| rng.next_normal()).collect();
        let x: Vec<f64> = (0..m).map(|i| zbar[i + 1] - zbar[i]).collect();
        let model = CovarianceModel::change_point(m, 1.0).unwrap();
        let active = random_history(&mut rng, m, 0.9);
        let generic = residual_vector_generic(&model, &active, &x).unwrap();
        for (k, &i) in generic.indices.iter().enumerate() {
            let closed = match eval(&zbar, active.rejected(), i) {
                Ok(v) => v,
                Err(e) => {
                    return CheckResult::fail("change-point closed form", e.to_string())
                }
            };
            worst = worst.max((closed + generic.values[k]).abs());
        }
    }
    CheckResult::from_worst(
        "change-point closed form = -(generic residual)",
        worst,
        1e-9,
    )
}

fn check_shift_property(seed: u64) -> CheckResult {
    let mut rng = StreamRng::new(seed, 104);
    let mut worst = 0.0f64;
    for trial in 0..200 {
        let m = 2 + (rng.next_u64() % 30) as usize;
        let model = match trial % 3 {
            0 => CovarianceModel::intraclass(m, 0.1 + 0.8 * rng.next_f64(), 1.0).unwrap(),
            1 => CovarianceModel::change_point(m, 1.0).unwrap(),
            _ => CovarianceModel::successive(m, 0.45 * rng.next_f64(), 1.0).unwrap(),
        };
        let x: Vec<f64> = (0..m).map(|_| rng.next_normal()).collect();
        let mut active = ActiveSet::full(m);
        let n_rej = rng.next_u64() % (m as u64 / 2).max(1);
        for _ in 0..n_rej {
            let rem: Vec<usize> = active
                .remaining()
                .iter()
                .copied()
                .filter(|&i| i != 0)
                .collect();
            if rem.is_empty() {
                break;
            }
            active
                .reject(rem[(rng.next_u64() % rem.len() as u64) as usize])
                .unwrap();
        }
        let r = [2.0, -2.0, 0.5, -0.5][(rng.next_u64() % 4) as usize];
        let base = residual_vector(&model, &active, &x).unwrap();
        let pos0 = base.indices.iter().position(|&i| i == 0).unwrap();
        // Scale g by the conditional sd so the residual shift is exactly r.
        let g: Vec<f64> = (0..m)
            .map(|i| model.unit_entry(i, 0) / base.cond_sd[pos0])
            .collect();
        let shifted: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + r * b).collect();
        let moved = residual_vector(&model, &active, &shifted).unwrap();
        worst = worst.max(((moved.values[pos0] - base.values[pos0]) - r).abs());
        for k in 0..base.values.len() {
            if k != pos0 {
                worst = worst.max((moved.values[k] - base.values[k]).abs());
            }
        }
    }
    CheckResult::from_worst("shift property along first covariance column", worst, 1e-9)
}

fn check_convexity_sweep(seed: u64) -> CheckResult {
    let mut rng = StreamRng::new(seed, 105);
    for trial in 0..200u64 {
        let m = 2 + (rng.next_u64() % 8) as usize;
        let model = match trial % 4 {
            0 => CovarianceModel::intraclass(m, 0.25, 1.0).unwrap(),
            1 => CovarianceModel::intraclass(m, 0.5, 1.0).unwrap(),
            2 => CovarianceModel::intraclass(m, 0.75, 1.0).unwrap(),
            _ => CovarianceModel::change_point(m, 1.0).unwrap(),
        };
        let sided = if trial % 2 == 0 {
            Sidedness::OneSided
        } else {
            Sidedness::TwoSided
        };
        let x: Vec<f64> = (0..m).map(|_| 1.5 * rng.next_normal()).collect();
        let values: Vec<f64> = (0..m).map(|k| 2.2 - 0.12 * k as f64).collect();
        let schedule = CriticalSchedule::from_values(values, "sweep").unwrap();
        let g: Vec<f64> = (0..m).map(|i| model.unit_entry(i, 0)).collect();
        let pattern: Vec<bool> = (0..64)
            .map(|t| {
                let r = -6.0 + 12.0 * t as f64 / 63.0;
                let xs: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + r * b).collect();
                mrd(&xs, &model, &schedule, sided, None).unwrap().reject[0]
            })
            .collect();
        if let Some(grid) = reversal_point(&pattern) {
            return CheckResult::fail(
                "convexity sweep (Lemma 3.3)",
                format!("trial {trial}: reject->accept reversal at grid point {grid}"),
            );
        }
    }
    CheckResult::pass("convexity sweep (Lemma 3.3)", "200 sweeps, no reversal".into())
}

/// First grid index that violates "an accept below a reject forces reject
/// everywhere above", if any.
pub fn reversal_point(pattern: &[bool]) -> Option<usize> {
    for a in 0..pattern.len() {
        if pattern[a] {
            continue;
        }
        for r0 in (a + 1)..pattern.len() {
            if pattern[r0] {
                for above in (r0 + 1)..pattern.len() {
                    if !pattern[above] {
                        return Some(above);
                    }
                }
                break;
            }
        }
    }
    None
}

/// The section-4 inadmissibility discriminant (difference between the
/// stage-2 quadratic forms at the witness and its shift).
pub fn eq46_discriminant(a: f64, b: f64, delta: f64, eps: f64, rho: f64) -> f64 {
    (1.0 / (1.0 + rho - 2.0 * rho * rho))
        * (4.0 * delta * b * rho
            - eps * eps * (rho - 1.0 + 1.0 / rho + 1.0 / (rho * rho))
            - eps
                * (2.0 * a / rho + 2.0 * a - 4.0 * a * rho - 2.0 * rho * delta
                    + 2.0 * (1.0 + rho) * b))
}

/// The two-sided LRSD inadmissibility witness: sample point, shift
/// direction, shift size, model and a schedule under which LRSD rejects
/// H_1 at `x_star` but accepts it at `x_star + gamma g`.
pub struct LrsdWitness {
    pub model: CovarianceModel,
    pub x_star: Vec<f64>,
    pub g: Vec<f64>,
    pub gamma: f64,
    pub schedule: CriticalSchedule,
    pub discriminant: f64,
}

/// Builds the witness with a = 2, b = 4, delta = 1, eps = 0.1, rho = 0.5
/// (gamma = eps / rho = 0.2).
pub fn lrsd_witness() -> LrsdWitness {
    let rho = 0.5;
    let x_star = vec![2.0, -3.0, 4.0, -4.1];
    let model = CovarianceModel::intraclass(4, rho, 1.0).unwrap();
    let g: Vec<f64> = (0..4).map(|i| model.unit_entry(i, 0)).collect();

    // C2 equals the stage-2 quadratic form at the witness (boundary ties
    // reject); C1 sits between it and the stage-1 form; C3/C4 below the
    // later stage forms.
    let full = ActiveSet::full(4);
    let q1 = model
        .active_quadratic_form(&full, &x_star)
        .expect("witness form");
    let stage2 = ActiveSet::with_rejected(4, &[3]).unwrap();
    let x2: Vec<f64> = stage2.remaining().iter().map(|&i| x_star[i]).collect();
    let q2 = model.active_quadratic_form(&stage2, &x2).expect("witness form");
    let schedule = CriticalSchedule::from_values(
        vec![0.5 * (q1 + q2), q2, 25.0, 3.9],
        "lrsd witness (a=2, b=4, delta=1, eps=0.1, rho=0.5)",
    )
    .unwrap();

    LrsdWitness {
        model,
        x_star,
        g,
        gamma: 0.2,
        schedule,
        discriminant: eq46_discriminant(2.0, 4.0, 1.0, 0.1, rho),
    }
}

fn check_lrsd_witness() -> CheckResult {
    let w = lrsd_witness();
    if (w.discriminant - 6.045).abs() > 1e-9 {
        return CheckResult::fail(
            "lrsd inadmissibility witness",
            format!("discriminant {} != 6.045", w.discriminant),
        );
    }
    let at_star = match lrsd(&w.x_star, &w.model, &w.schedule, Sidedness::TwoSided) {
        Ok(d) => d,
        Err(e) => return CheckResult::fail("lrsd inadmissibility witness", e.to_string()),
    };
    let shifted: Vec<f64> = w
        .x_star
        .iter()
        .zip(&w.g)
        .map(|(a, b)| a + w.gamma * b)
        .collect();
    let at_shift = match lrsd(&shifted, &w.model, &w.schedule, Sidedness::TwoSided) {
        Ok(d) => d,
        Err(e) => return CheckResult::fail("lrsd inadmissibility witness", e.to_string()),
    };
    if !at_star.reject[0] {
        return CheckResult::fail(
            "lrsd inadmissibility witness",
            "H1 not rejected at the witness point".into(),
        );
    }
    if at_shift.reject[0] {
        return CheckResult::fail(
            "lrsd inadmissibility witness",
            "H1 still rejected after the shift".into(),
        );
    }

    // MRD shows no such reversal along the same direction.
    let schedule = crate::critical_values::schedule_mrd_two_sided(4, 0.05, 0.71).unwrap();
    let pattern: Vec<bool> = (0..64)
        .map(|t| {
            let r = -6.0 + 12.0 * t as f64 / 63.0;
            let xs: Vec<f64> = w
                .x_star
                .iter()
                .zip(&w.g)
                .map(|(a, b)| a + r * b)
                .collect();
            mrd(&xs, &w.model, &schedule, Sidedness::TwoSided, None)
                .unwrap()
                .reject[0]
        })
        .collect();
    if let Some(grid) = reversal_point(&pattern) {
        return CheckResult::fail(
            "lrsd inadmissibility witness",
            format!("MRD shows a reversal at grid point {grid}"),
        );
    }
    CheckResult::pass(
        "lrsd inadmissibility witness",
        format!(
            "LRSD rejects H1 at x*, accepts at x*+{}g; discriminant = {:.3}; MRD sweep clean",
            w.gamma, w.discriminant
        ),
    )
}

fn check_matrix_csv_round_trip() -> CheckResult {
    let m = Matrix::from_fn(4, |i, j| {
        if i == j {
            1.0 + i as f64 / 3.0
        } else {
            ((i * 7 + j * 3) as f64).sin() / 5.0
        }
    });
    let sym = Matrix::from_fn(4, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]));
    match Matrix::from_csv(&sym.to_csv()) {
        Ok(back) if back == sym => {
            CheckResult::pass("dense matrix CSV round-trip", "bit-exact".into())
        }
        Ok(_) => CheckResult::fail("dense matrix CSV round-trip", "values changed".into()),
        Err(e) => CheckResult::fail("dense matrix CSV round-trip", e.to_string()),
    }
}
