//! Structured covariance models and their linear-algebra kernels.
//!
//! A [`CovarianceModel`] is a unit-scale structure (intraclass, change-point
//! tridiagonal, successive correlation, or dense SPD) times a positive
//! scalar `scale` (for example `2 sigma^2 / n` in the treatments-vs-control
//! construction). The closed forms work on the unit-scale structure and the
//! scale is applied once at each kernel boundary, so the exact rational
//! results of the structured paths are preserved.
//!
//! Deleting indices from an intraclass matrix leaves a smaller intraclass
//! matrix, and deleting indices from a tridiagonal matrix splits it into
//! independent tridiagonal segments; both facts give O(p) per-stage kernels
//! that the residual engine relies on at simulation scale.

use crate::matrix::Matrix;
use crate::{Error, Result};

/// The unit-scale covariance structure.
#[derive(Debug, Clone)]
pub enum Structure {
    /// Exchangeable: unit diagonal, constant off-diagonal correlation.
    Intraclass { size: usize, rho: f64 },
    /// Diagonal 2, off-diagonal -1 at |i-j| = 1 (consecutive differences).
    ChangePoint { size: usize },
    /// Unit diagonal, correlation rho at |i-j| = 1, zero elsewhere.
    SuccessiveCorrelation { size: usize, rho: f64 },
    /// Arbitrary symmetric positive definite matrix.
    Dense(Matrix),
}

/// A scaled covariance model `scale * Sigma`.
#[derive(Debug, Clone)]
pub struct CovarianceModel {
    structure: Structure,
    scale: f64,
}

impl CovarianceModel {
    pub fn intraclass(size: usize, rho: f64, scale: f64) -> Result<Self> {
        check_scale(scale)?;
        if size == 0 {
            return Err(Error::ParameterDomain("intraclass size must be >= 1".into()));
        }
        check_intraclass_pd(rho, size)?;
        Ok(CovarianceModel {
            structure: Structure::Intraclass { size, rho },
            scale,
        })
    }

    pub fn change_point(size: usize, scale: f64) -> Result<Self> {
        check_scale(scale)?;
        if size == 0 {
            return Err(Error::ParameterDomain("change-point size must be >= 1".into()));
        }
        Ok(CovarianceModel {
            structure: Structure::ChangePoint { size },
            scale,
        })
    }

    pub fn successive(size: usize, rho: f64, scale: f64) -> Result<Self> {
        check_scale(scale)?;
        if size == 0 {
            return Err(Error::ParameterDomain("successive size must be >= 1".into()));
        }
        // Positive definite iff every leading determinant of the recursion
        // stays positive.
        let mut dets = SuccDets::new(rho);
        for r in 1..=size {
            if dets.next_det() <= 0.0 {
                return Err(Error::ParameterDomain(format!(
                    "successive-correlation matrix not PD at size {r} (rho={rho})"
                )));
            }
        }
        Ok(CovarianceModel {
            structure: Structure::SuccessiveCorrelation { size, rho },
            scale,
        })
    }

    pub fn dense(matrix: Matrix, scale: f64) -> Result<Self> {
        check_scale(scale)?;
        let n = matrix.size();
        if n == 0 {
            return Err(Error::ParameterDomain("dense model must be non-empty".into()));
        }
        for i in 0..n {
            for j in 0..i {
                if (matrix[(i, j)] - matrix[(j, i)]).abs()
                    > 1e-12 * matrix[(i, i)].abs().max(1.0)
                {
                    return Err(Error::Validation(format!(
                        "dense covariance not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        matrix.cholesky()?; // SPD check up front
        Ok(CovarianceModel {
            structure: Structure::Dense(matrix),
            scale,
        })
    }

    /// Identity covariance (intraclass with rho = 0).
    pub fn identity(size: usize) -> Self {
        CovarianceModel::intraclass(size, 0.0, 1.0).expect("identity is PD")
    }

    pub fn structure(&self) -> &Structure {
        &self.structure
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn size(&self) -> usize {
        match &self.structure {
            Structure::Intraclass { size, .. } => *size,
            Structure::ChangePoint { size } => *size,
            Structure::SuccessiveCorrelation { size, .. } => *size,
            Structure::Dense(m) => m.size(),
        }
    }

    /// Entry (i, j) of the unit-scale structure.
    pub fn unit_entry(&self, i: usize, j: usize) -> f64 {
        match &self.structure {
            Structure::Intraclass { rho, .. } => {
                if i == j {
                    1.0
                } else {
                    *rho
                }
            }
            Structure::ChangePoint { .. } => {
                if i == j {
                    2.0
                } else if i.abs_diff(j) == 1 {
                    -1.0
                } else {
                    0.0
                }
            }
            Structure::SuccessiveCorrelation { rho, .. } => {
                if i == j {
                    1.0
                } else if i.abs_diff(j) == 1 {
                    *rho
                } else {
                    0.0
                }
            }
            Structure::Dense(m) => m[(i, j)],
        }
    }

    /// Dense realization of the unit-scale structure.
    pub fn unit_matrix(&self) -> Matrix {
        Matrix::from_fn(self.size(), |i, j| self.unit_entry(i, j))
    }

    /// Marginal variance of coordinate i, scale included.
    pub fn marginal_variance(&self, i: usize) -> f64 {
        self.scale * self.unit_entry(i, i)
    }

    /// Lower-triangular L with L L' = scale * Sigma.
    pub fn cholesky_factor(&self) -> Result<Matrix> {
        let l = self.unit_matrix().cholesky()?.factor();
        Ok(l.scaled(self.scale.sqrt()))
    }

    /// Solves (scale * Sigma_A) y = v on the remaining index set.
    pub fn principal_submatrix_solve(&self, active: &ActiveSet, v: &[f64]) -> Result<Vec<f64>> {
        let remaining = active.remaining();
        if v.len() != remaining.len() {
            return Err(Error::Validation(format!(
                "principal_submatrix_solve: vector length {} != |remaining| {}",
                v.len(),
                remaining.len()
            )));
        }
        let kernel = self.active_kernel(remaining)?;
        let mut out = kernel.solve(v);
        for y in out.iter_mut() {
            *y /= self.scale;
        }
        Ok(out)
    }

    /// x' (scale * Sigma_A)^-1 x on the remaining index set.
    pub fn active_quadratic_form(&self, active: &ActiveSet, x_active: &[f64]) -> Result<f64> {
        let y = self.principal_submatrix_solve(active, x_active)?;
        Ok(y.iter().zip(x_active).map(|(a, b)| a * b).sum())
    }

    /// Unit-scale kernel for the principal submatrix on `remaining`
    /// (strictly increasing indices): applies Sigma_A^-1 and exposes
    /// diag(Sigma_A^-1).
    pub fn active_kernel(&self, remaining: &[usize]) -> Result<ActiveKernel> {
        debug_assert!(remaining.windows(2).all(|w| w[0] < w[1]));
        if remaining.is_empty() {
            return Err(Error::Validation("empty active set".into()));
        }
        if *remaining.last().unwrap() >= self.size() {
            return Err(Error::Validation("active index out of range".into()));
        }
        match &self.structure {
            Structure::Intraclass { rho, .. } => Ok(ActiveKernel {
                p: remaining.len(),
                inner: KernelInner::Intraclass { rho: *rho },
            }),
            Structure::ChangePoint { .. } => Ok(ActiveKernel {
                p: remaining.len(),
                inner: KernelInner::Segments {
                    segments: segments(remaining),
                    kind: SegmentKind::ChangePoint,
                },
            }),
            Structure::SuccessiveCorrelation { rho, .. } => {
                // Longest segment determines the PD requirement.
                let segs = segments(remaining);
                let mut dets = SuccDets::new(*rho);
                let longest = segs.iter().map(|s| s.len).max().unwrap_or(0);
                for r in 1..=longest {
                    if dets.next_det() <= 0.0 {
                        return Err(Error::NotPositiveDefinite {
                            index: r - 1,
                            pivot: dets.current(),
                        });
                    }
                }
                Ok(ActiveKernel {
                    p: remaining.len(),
                    inner: KernelInner::Segments {
                        segments: segs,
                        kind: SegmentKind::Successive { rho: *rho },
                    },
                })
            }
            Structure::Dense(m) => {
                let sub = m.principal_submatrix(remaining);
                let chol = sub.cholesky()?;
                Ok(ActiveKernel {
                    p: remaining.len(),
                    inner: KernelInner::Dense(chol),
                })
            }
        }
    }
}

fn check_scale(scale: f64) -> Result<()> {
    if scale > 0.0 && scale.is_finite() {
        Ok(())
    } else {
        Err(Error::ParameterDomain(format!(
            "scale must be positive and finite, got {scale}"
        )))
    }
}

fn check_intraclass_pd(rho: f64, p: usize) -> Result<()> {
    if rho < 1.0 && 1.0 + (p as f64 - 1.0) * rho > 0.0 {
        Ok(())
    } else {
        Err(Error::ParameterDomain(format!(
            "intraclass(rho={rho}, p={p}) is not positive definite"
        )))
    }
}

/// Hypotheses not yet rejected (`remaining`, ascending) and the rejected
/// ones in rejection order. Indices are 0-based; together they partition
/// `0..m`.
#[derive(Debug, Clone)]
pub struct ActiveSet {
    remaining: Vec<usize>,
    rejected: Vec<usize>,
}

impl ActiveSet {
    /// All m hypotheses active.
    pub fn full(m: usize) -> Self {
        ActiveSet {
            remaining: (0..m).collect(),
            rejected: Vec::new(),
        }
    }

    /// Rebuilds a history: `rejected` in rejection order over `0..m`.
    pub fn with_rejected(m: usize, rejected: &[usize]) -> Result<Self> {
        let mut set = ActiveSet::full(m);
        for &j in rejected {
            set.reject(j)?;
        }
        Ok(set)
    }

    /// Moves `index` from remaining to rejected.
    pub fn reject(&mut self, index: usize) -> Result<()> {
        match self.remaining.binary_search(&index) {
            Ok(pos) => {
                self.remaining.remove(pos);
                self.rejected.push(index);
                Ok(())
            }
            Err(_) => Err(Error::Validation(format!(
                "index {index} is not in the remaining set"
            ))),
        }
    }

    pub fn remaining(&self) -> &[usize] {
        &self.remaining
    }

    pub fn rejected(&self) -> &[usize] {
        &self.rejected
    }

    /// Stage number = |rejected| + 1 (1-based, as in the procedure).
    pub fn stage(&self) -> usize {
        self.rejected.len() + 1
    }

    pub fn len_total(&self) -> usize {
        self.remaining.len() + self.rejected.len()
    }

    pub fn is_exhausted(&self) -> bool {
        self.remaining.is_empty()
    }
}

/// Maximal run of consecutive original indices inside the remaining set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    /// Position of the first element within the remaining slice.
    pub offset: usize,
    pub len: usize,
}

/// Splits the (ascending) remaining indices into maximal consecutive runs.
pub fn segments(remaining: &[usize]) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=remaining.len() {
        if i == remaining.len() || remaining[i] != remaining[i - 1] + 1 {
            out.push(Segment {
                offset: start,
                len: i - start,
            });
            start = i;
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
enum SegmentKind {
    ChangePoint,
    Successive { rho: f64 },
}

enum KernelInner {
    Intraclass { rho: f64 },
    Segments {
        segments: Vec<Segment>,
        kind: SegmentKind,
    },
    Dense(crate::matrix::Cholesky),
}

/// Applies the inverse of a unit-scale principal submatrix, with its
/// diagonal, without forming the submatrix on the structured paths.
pub struct ActiveKernel {
    p: usize,
    inner: KernelInner,
}

impl ActiveKernel {
    /// Sigma_A^-1 v.
    pub fn solve(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.p);
        match &self.inner {
            KernelInner::Intraclass { rho } => {
                let g = rho / (1.0 + (self.p as f64 - 1.0) * rho);
                let s: f64 = v.iter().sum();
                v.iter().map(|x| (x - g * s) / (1.0 - rho)).collect()
            }
            KernelInner::Segments { segments, kind } => {
                let mut out = vec![0.0; v.len()];
                for seg in segments {
                    let sl = &v[seg.offset..seg.offset + seg.len];
                    let solved = match kind {
                        SegmentKind::ChangePoint => change_point_segment_solve(sl),
                        SegmentKind::Successive { rho } => successive_segment_solve(sl, *rho),
                    };
                    out[seg.offset..seg.offset + seg.len].copy_from_slice(&solved);
                }
                out
            }
            KernelInner::Dense(chol) => chol.solve(v),
        }
    }

    /// diag(Sigma_A^-1).
    pub fn inverse_diagonal(&self) -> Vec<f64> {
        match &self.inner {
            KernelInner::Intraclass { rho } => {
                let g = rho / (1.0 + (self.p as f64 - 1.0) * rho);
                vec![(1.0 - g) / (1.0 - rho); self.p]
            }
            KernelInner::Segments { segments, kind } => {
                let mut out = vec![0.0; self.p];
                for seg in segments {
                    let l = seg.len;
                    match kind {
                        SegmentKind::ChangePoint => {
                            // (Sigma(L)^-1)_{uu} = u (L+1-u) / (L+1), 1-based.
                            for u in 1..=l {
                                out[seg.offset + u - 1] =
                                    (u * (l + 1 - u)) as f64 / (l + 1) as f64;
                            }
                        }
                        SegmentKind::Successive { rho } => {
                            let d = succ_det_table(l, *rho);
                            for u in 1..=l {
                                out[seg.offset + u - 1] = d[u - 1] * d[l - u] / d[l];
                            }
                        }
                    }
                }
                out
            }
            KernelInner::Dense(chol) => chol.inverse_diagonal(),
        }
    }
}

// Solve Sigma(L) y = v for the (2,-1) tridiagonal via the closed-form
// inverse min(u,v)(L+1-max(u,v))/(L+1), evaluated with prefix sums in O(L).
fn change_point_segment_solve(v: &[f64]) -> Vec<f64> {
    let l = v.len();
    let lp1 = (l + 1) as f64;
    // pre[u] = sum_{t<=u} t v_t, suf[u] = sum_{t>u} (L+1-t) v_t (1-based t).
    let mut pre = vec![0.0; l + 1];
    for t in 1..=l {
        pre[t] = pre[t - 1] + t as f64 * v[t - 1];
    }
    let mut suf = vec![0.0; l + 2];
    for t in (1..=l).rev() {
        suf[t] = suf[t + 1] + (lp1 - t as f64) * v[t - 1];
    }
    (1..=l)
        .map(|u| ((lp1 - u as f64) * pre[u] + u as f64 * suf[u + 1]) / lp1)
        .collect()
}

// Solve the unit-diagonal tridiagonal (off-diagonal rho) by symmetric
// Cholesky sweeps in O(L).
fn successive_segment_solve(v: &[f64], rho: f64) -> Vec<f64> {
    let l = v.len();
    let mut diag = vec![0.0f64; l];
    let mut sub = vec![0.0; l.saturating_sub(1)];
    diag[0] = 1.0;
    for i in 0..l.saturating_sub(1) {
        let m = rho / diag[i].sqrt();
        sub[i] = m;
        diag[i + 1] = 1.0 - m * m;
    }
    let ld: Vec<f64> = diag.iter().map(|d| d.sqrt()).collect();
    let mut y = v.to_vec();
    y[0] /= ld[0];
    for i in 1..l {
        y[i] = (y[i] - sub[i - 1] * y[i - 1]) / ld[i];
    }
    let mut x = y;
    x[l - 1] /= ld[l - 1];
    for i in (0..l - 1).rev() {
        x[i] = (x[i] - sub[i] * x[i + 1]) / ld[i];
    }
    x
}

/// Exact inverse of the unit-scale intraclass matrix (size p, correlation
/// rho): diagonal `(1+(p-2)rho) / ((1-rho)(1+(p-1)rho))`, off-diagonal
/// `-rho / ((1-rho)(1+(p-1)rho))`.
pub fn intraclass_inverse(rho: f64, p: usize) -> Result<Matrix> {
    if p == 0 {
        return Err(Error::ParameterDomain("p must be >= 1".into()));
    }
    check_intraclass_pd(rho, p)?;
    let denom = (1.0 - rho) * (1.0 + (p as f64 - 1.0) * rho);
    let diag = (1.0 + (p as f64 - 2.0) * rho) / denom;
    let off = -rho / denom;
    Ok(Matrix::from_fn(p, |i, j| if i == j { diag } else { off }))
}

/// First and last rows of the inverse of the p x p (2,-1) tridiagonal:
/// `(p, p-1, ..., 1) / (p+1)` and `(1, 2, ..., p) / (p+1)`.
pub fn tridiag_inverse_boundary_rows(p: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if p == 0 {
        return Err(Error::ParameterDomain("p must be >= 1".into()));
    }
    let lp1 = (p + 1) as f64;
    let first = (0..p).map(|j| (p - j) as f64 / lp1).collect();
    let last = (0..p).map(|j| (j + 1) as f64 / lp1).collect();
    Ok((first, last))
}

// Running determinant pair for the successive-correlation recursion
// |Sigma(r)| = |Sigma(r-1)| - rho^2 |Sigma(r-2)|, |Sigma(0)| = 1.
struct SuccDets {
    rho2: f64,
    prev2: f64, // |Sigma(r-2)|
    prev1: f64, // |Sigma(r-1)|
    r: usize,
}

impl SuccDets {
    fn new(rho: f64) -> Self {
        SuccDets {
            rho2: rho * rho,
            prev2: 1.0,
            prev1: 1.0,
            r: 0,
        }
    }

    /// Advances to the next size and returns |Sigma(r)|.
    fn next_det(&mut self) -> f64 {
        self.r += 1;
        if self.r == 1 {
            return 1.0;
        }
        let d = self.prev1 - self.rho2 * self.prev2;
        self.prev2 = self.prev1;
        self.prev1 = d;
        d
    }

    fn current(&self) -> f64 {
        self.prev1
    }
}

/// Determinant of the r x r successive-correlation matrix by the running
/// recursion (iterative, no stack growth). `succ_det(0, _) = 1`.
pub fn succ_det(r: usize, rho: f64) -> f64 {
    succ_det_table(r, rho)[r]
}

// |Sigma(0)| ..= |Sigma(r)| as a table.
fn succ_det_table(r: usize, rho: f64) -> Vec<f64> {
    let mut d = Vec::with_capacity(r + 1);
    d.push(1.0);
    if r >= 1 {
        d.push(1.0);
    }
    let rho2 = rho * rho;
    for k in 2..=r {
        let v = d[k - 1] - rho2 * d[k - 2];
        d.push(v);
    }
    d
}

/// First row `(d_{1,r}, ..., d_{r,r})` of the successive-correlation
/// inverse: `d_{i,r} = (-rho)^{i-1} |Sigma(r-i)| / |Sigma(r)|`.
pub fn succ_inverse_first_row(r: usize, rho: f64) -> Result<Vec<f64>> {
    if r == 0 {
        return Err(Error::ParameterDomain("r must be >= 1".into()));
    }
    let d = succ_det_table(r, rho);
    for (k, &det) in d.iter().enumerate().skip(1) {
        if det <= 0.0 {
            return Err(Error::NotPositiveDefinite {
                index: k - 1,
                pivot: det,
            });
        }
    }
    let mut row = Vec::with_capacity(r);
    let mut sign_pow = 1.0; // (-rho)^(i-1)
    for i in 1..=r {
        row.push(sign_pow * d[r - i] / d[r]);
        sign_pow *= -rho;
    }
    Ok(row)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;

    // Independent dense-inversion oracle (Gauss-Jordan with partial
    // pivoting), used instead of the production Cholesky path.
    pub fn gj_inverse(a: &Matrix) -> Matrix {
        let n = a.size();
        let mut aug = vec![vec![0.0; 2 * n]; n];
        for i in 0..n {
            for j in 0..n {
                aug[i][j] = a[(i, j)];
            }
            aug[i][n + i] = 1.0;
        }
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&p, &q| aug[p][col].abs().total_cmp(&aug[q][col].abs()))
                .unwrap();
            aug.swap(col, piv);
            let d = aug[col][col];
            for v in aug[col].iter_mut() {
                *v /= d;
            }
            for r in 0..n {
                if r != col {
                    let f = aug[r][col];
                    for c in 0..2 * n {
                        aug[r][c] -= f * aug[col][c];
                    }
                }
            }
        }
        Matrix::from_fn(n, |i, j| aug[i][n + j])
    }

    // Determinant oracle: LU with partial pivoting.
    fn lu_det(a: &Matrix) -> f64 {
        let n = a.size();
        let mut m = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                m[i][j] = a[(i, j)];
            }
        }
        let mut det = 1.0;
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&p, &q| m[p][col].abs().total_cmp(&m[q][col].abs()))
                .unwrap();
            if piv != col {
                m.swap(col, piv);
                det = -det;
            }
            let d = m[col][col];
            if d == 0.0 {
                return 0.0;
            }
            det *= d;
            for r in (col + 1)..n {
                let f = m[r][col] / d;
                for c in col..n {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
        det
    }

    fn succ_matrix(r: usize, rho: f64) -> Matrix {
        Matrix::from_fn(r, |i, j| {
            if i == j {
                1.0
            } else if i.abs_diff(j) == 1 {
                rho
            } else {
                0.0
            }
        })
    }

    fn tridiag_matrix(p: usize) -> Matrix {
        Matrix::from_fn(p, |i, j| {
            if i == j {
                2.0
            } else if i.abs_diff(j) == 1 {
                -1.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn intraclass_inverse_examples() {
        // rho = 0 is the identity.
        let id = intraclass_inverse(0.0, 3).unwrap();
        assert!(id.max_abs_diff(&Matrix::identity(3)) < 1e-15);

        // Direct 2x2 inversion oracle: [[1,.5],[.5,1]]^-1 = [[4/3,-2/3],..].
        let inv2 = intraclass_inverse(0.5, 2).unwrap();
        assert!((inv2[(0, 0)] - 4.0 / 3.0).abs() < 1e-15);
        assert!((inv2[(0, 1)] + 2.0 / 3.0).abs() < 1e-15);

        // p = 3, rho = 0.5: diagonal 1.5, off-diagonal -0.5.
        let inv3 = intraclass_inverse(0.5, 3).unwrap();
        assert!((inv3[(0, 0)] - 1.5).abs() < 1e-15);
        assert!((inv3[(1, 2)] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn intraclass_inverse_times_matrix_is_identity() {
        for p in 1..=12 {
            let lo = -1.0 / (p as f64 - 1.0).max(1.0) + 0.02;
            for k in 0..8 {
                let rho = lo + (0.97 - lo) * k as f64 / 7.0;
                let inv = intraclass_inverse(rho, p).unwrap();
                let m = Matrix::from_fn(p, |i, j| if i == j { 1.0 } else { rho });
                let mut prod = Matrix::zeros(p);
                for i in 0..p {
                    for j in 0..p {
                        prod[(i, j)] = (0..p).map(|t| inv[(i, t)] * m[(t, j)]).sum();
                    }
                }
                assert!(
                    prod.max_abs_diff(&Matrix::identity(p)) < 1e-10,
                    "p={p} rho={rho}"
                );
            }
        }
    }

    #[test]
    fn intraclass_inverse_rejects_non_pd() {
        assert!(intraclass_inverse(-0.6, 3).is_err());
        assert!(intraclass_inverse(1.0, 2).is_err());
        assert!(intraclass_inverse(0.5, 0).is_err());
    }

    #[test]
    fn boundary_rows_examples() {
        let (f, l) = tridiag_inverse_boundary_rows(1).unwrap();
        assert_eq!(f, vec![0.5]);
        assert_eq!(l, vec![0.5]);

        let (f, l) = tridiag_inverse_boundary_rows(2).unwrap();
        assert!((f[0] - 2.0 / 3.0).abs() < 1e-15 && (f[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!((l[0] - 1.0 / 3.0).abs() < 1e-15 && (l[1] - 2.0 / 3.0).abs() < 1e-15);

        let (f, _) = tridiag_inverse_boundary_rows(5).unwrap();
        for (j, want) in [5.0, 4.0, 3.0, 2.0, 1.0].iter().enumerate() {
            assert!((f[j] - want / 6.0).abs() < 1e-15);
        }

        assert!(tridiag_inverse_boundary_rows(0).is_err());
    }

    #[test]
    fn boundary_rows_match_dense_inverse() {
        for p in 1..=12 {
            let inv = gj_inverse(&tridiag_matrix(p));
            let (f, l) = tridiag_inverse_boundary_rows(p).unwrap();
            for j in 0..p {
                assert!((f[j] - inv[(0, j)]).abs() < 1e-10, "p={p} first[{j}]");
                assert!((l[j] - inv[(p - 1, j)]).abs() < 1e-10, "p={p} last[{j}]");
            }
        }
    }

    #[test]
    fn succ_det_examples_and_oracle() {
        assert_eq!(succ_det(0, 0.3), 1.0);
        assert_eq!(succ_det(1, 0.9), 1.0);
        assert!((succ_det(3, 0.5) - 0.5).abs() < 1e-15);

        for r in 1..=20 {
            for &rho in &[-0.49, -0.2, 0.0, 0.25, 0.49] {
                let got = succ_det(r, rho);
                let want = lu_det(&succ_matrix(r, rho));
                assert!(
                    (got - want).abs() <= 1e-10 * want.abs().max(1e-30),
                    "r={r} rho={rho}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn succ_inverse_first_row_examples_and_oracle() {
        assert_eq!(succ_inverse_first_row(1, 0.4).unwrap(), vec![1.0]);

        let row = succ_inverse_first_row(2, 0.5).unwrap();
        assert!((row[0] - 4.0 / 3.0).abs() < 1e-15);
        assert!((row[1] + 2.0 / 3.0).abs() < 1e-15);

        let row = succ_inverse_first_row(3, 0.5).unwrap();
        for (got, want) in row.iter().zip([1.5, -1.0, 0.5]) {
            assert!((got - want).abs() < 1e-14);
        }

        for r in 1..=20 {
            for &rho in &[-0.49, -0.15, 0.3, 0.49] {
                let got = succ_inverse_first_row(r, rho).unwrap();
                let inv = gj_inverse(&succ_matrix(r, rho));
                for j in 0..r {
                    assert!((got[j] - inv[(0, j)]).abs() < 1e-10, "r={r} rho={rho} j={j}");
                }
            }
        }

        // rho = 0.8 makes Sigma(3) indefinite: 1 - 2*0.64 < 0.
        assert!(succ_inverse_first_row(3, 0.8).is_err());
    }

    #[test]
    fn principal_submatrix_solve_examples() {
        // Identity model returns v unchanged.
        let model = CovarianceModel::identity(4);
        let active = ActiveSet::full(4);
        let v = vec![1.0, -2.0, 0.5, 3.0];
        let got = model.principal_submatrix_solve(&active, &v).unwrap();
        for (a, b) in got.iter().zip(&v) {
            assert!((a - b).abs() < 1e-14);
        }

        // Intraclass rho=0.5, M=2: matches the closed-form inverse row.
        let model = CovarianceModel::intraclass(2, 0.5, 1.0).unwrap();
        let got = model
            .principal_submatrix_solve(&ActiveSet::full(2), &[1.0, 0.0])
            .unwrap();
        assert!((got[0] - 4.0 / 3.0).abs() < 1e-14);
        assert!((got[1] + 2.0 / 3.0).abs() < 1e-14);

        // Change-point p=2: Sigma(2) (1,1)' = (1,1)'.
        let model = CovarianceModel::change_point(2, 1.0).unwrap();
        let got = model
            .principal_submatrix_solve(&ActiveSet::full(2), &[1.0, 1.0])
            .unwrap();
        assert!((got[0] - 1.0).abs() < 1e-14 && (got[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn principal_submatrix_solve_matches_dense_on_random_spd() {
        let mut rng = StreamRng::new(2024, 0);
        for trial in 0..20 {
            let n = 2 + (rng.next_u64() % 49) as usize; // up to 50
            // Random SPD: B B' + n I.
            let mut b = Matrix::zeros(n);
            for i in 0..n {
                for j in 0..n {
                    b[(i, j)] = rng.next_normal();
                }
            }
            let mut a = Matrix::zeros(n);
            for i in 0..n {
                for j in 0..n {
                    a[(i, j)] = (0..n).map(|k| b[(i, k)] * b[(j, k)]).sum::<f64>()
                        + if i == j { n as f64 } else { 0.0 };
                }
            }
            let scale = 0.25 + rng.next_f64();
            let model = CovarianceModel::dense(a.clone(), scale).unwrap();
            let v: Vec<f64> = (0..n).map(|_| rng.next_normal()).collect();
            let got = model
                .principal_submatrix_solve(&ActiveSet::full(n), &v)
                .unwrap();
            let inv = gj_inverse(&a.scaled(scale));
            let want = inv.mul_vec(&v);
            for i in 0..n {
                assert!((got[i] - want[i]).abs() < 1e-10, "trial {trial} i={i}");
            }
        }
    }

    #[test]
    fn cholesky_factor_examples() {
        let id = CovarianceModel::identity(3).cholesky_factor().unwrap();
        assert!(id.max_abs_diff(&Matrix::identity(3)) < 1e-15);

        let m = CovarianceModel::intraclass(2, 0.5, 1.0).unwrap();
        let l = m.cholesky_factor().unwrap();
        assert!((l[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((l[(1, 0)] - 0.5).abs() < 1e-15);
        assert!((l[(1, 1)] - 0.75f64.sqrt()).abs() < 1e-15);

        let m = CovarianceModel::change_point(2, 1.0).unwrap();
        let l = m.cholesky_factor().unwrap();
        assert!((l[(0, 0)] - 2f64.sqrt()).abs() < 1e-15);
        assert!((l[(1, 0)] + 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert!((l[(1, 1)] - 1.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn cholesky_factor_residual_small() {
        let m = CovarianceModel::successive(7, 0.45, 2.5).unwrap();
        let l = m.cholesky_factor().unwrap();
        let n = m.size();
        let target = m.unit_matrix().scaled(m.scale());
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let rec: f64 = (0..n).map(|k| l[(i, k)] * l[(j, k)]).sum();
                worst = worst.max((rec - target[(i, j)]).abs() / target[(0, 0)].abs());
            }
        }
        assert!(worst <= 1e-12, "relative residual {worst}");
    }

    #[test]
    fn active_kernel_fast_paths_match_dense() {
        let mut rng = StreamRng::new(77, 3);
        let specs: Vec<CovarianceModel> = vec![
            CovarianceModel::intraclass(12, 0.5, 1.0).unwrap(),
            CovarianceModel::intraclass(9, -0.1, 3.0).unwrap(),
            CovarianceModel::change_point(14, 1.0).unwrap(),
            CovarianceModel::successive(13, 0.45, 1.0).unwrap(),
            CovarianceModel::successive(11, -0.3, 0.5).unwrap(),
        ];
        for model in &specs {
            let m = model.size();
            for _ in 0..30 {
                // Random rejection history.
                let mut active = ActiveSet::full(m);
                let n_rej = (rng.next_u64() % (m as u64 - 1)) as usize;
                for _ in 0..n_rej {
                    let rem = active.remaining().to_vec();
                    let pick = rem[(rng.next_u64() % rem.len() as u64) as usize];
                    active.reject(pick).unwrap();
                }
                let rem = active.remaining().to_vec();
                let v: Vec<f64> = (0..rem.len()).map(|_| rng.next_normal()).collect();

                let kernel = model.active_kernel(&rem).unwrap();
                let fast_solve = kernel.solve(&v);
                let fast_diag = kernel.inverse_diagonal();

                let dense = model.unit_matrix().principal_submatrix(&rem);
                let inv = gj_inverse(&dense);
                let want_solve = inv.mul_vec(&v);
                for i in 0..rem.len() {
                    assert!(
                        (fast_solve[i] - want_solve[i]).abs() < 1e-10,
                        "solve mismatch {:?}",
                        model.structure()
                    );
                    assert!(
                        (fast_diag[i] - inv[(i, i)]).abs() < 1e-10,
                        "diag mismatch {:?}",
                        model.structure()
                    );
                }
            }
        }
    }

    #[test]
    fn active_set_partitions() {
        let mut a = ActiveSet::full(5);
        a.reject(3).unwrap();
        a.reject(0).unwrap();
        assert_eq!(a.remaining(), &[1, 2, 4]);
        assert_eq!(a.rejected(), &[3, 0]);
        assert_eq!(a.stage(), 3);
        assert!(a.reject(3).is_err());
    }

    #[test]
    fn segments_split_on_gaps() {
        let segs = segments(&[0, 1, 2, 5, 6, 9]);
        assert_eq!(
            segs,
            vec![
                Segment { offset: 0, len: 3 },
                Segment { offset: 3, len: 2 },
                Segment { offset: 5, len: 1 }
            ]
        );
    }

    #[test]
    fn intraclass_single_coordinate_degenerates() {
        let m = CovarianceModel::intraclass(1, 0.0, 4.0).unwrap();
        assert_eq!(m.size(), 1);
        assert!((m.marginal_variance(0) - 4.0).abs() < 1e-15);
        let got = m
            .principal_submatrix_solve(&ActiveSet::full(1), &[2.0])
            .unwrap();
        assert!((got[0] - 0.5).abs() < 1e-15);
    }
}
