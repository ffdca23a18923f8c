//! Dense linear-algebra kernels: least-squares solves, Moore–Penrose
//! pseudoinverse, and an incrementally updatable factorization of the
//! hidden-layer output matrix.
//!
//! Three independent solve routes exist on purpose: `lstsq` (Householder QR),
//! `pinv` (one-sided Jacobi SVD) and [`IncrementalLS`] (modified Gram–Schmidt
//! with append/discard). They cross-check each other in the test suites.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Scalar> Matrix<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = F::one();
        }
        m
    }

    pub fn from_rows(rows: &[Vec<F>]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(nrows * ncols);
        for r in rows {
            if r.len() != ncols {
                return Err(Error::Dimension {
                    context: "Matrix::from_rows",
                    expected: ncols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: nrows,
            cols: ncols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> F) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<F> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Dimension {
                context: "Matrix::matmul",
                expected: self.cols,
                got: other.rows,
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == F::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, v: &[F]) -> Result<Vec<F>> {
        if self.cols != v.len() {
            return Err(Error::Dimension {
                context: "Matrix::mul_vec",
                expected: self.cols,
                got: v.len(),
            });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    pub fn frobenius_norm(&self) -> F {
        self.data
            .iter()
            .map(|&v| v * v)
            .fold(F::zero(), |a, b| a + b)
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl<F> std::ops::Index<(usize, usize)> for Matrix<F> {
    type Output = F;
    fn index(&self, (i, j): (usize, usize)) -> &F {
        &self.data[i * self.cols + j]
    }
}

impl<F> std::ops::IndexMut<(usize, usize)> for Matrix<F> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut F {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn norm<F: Scalar>(v: &[F]) -> F {
    dot(v, v).sqrt()
}

fn axpy<F: Scalar>(alpha: F, x: &[F], y: &mut [F]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Default relative rank tolerance: values below `max(rows, cols)·ε` times the
/// matrix scale are treated as zero.
pub fn default_rank_tolerance<F: Scalar>(rows: usize, cols: usize) -> F {
    F::from_usize_lossy(rows.max(cols)) * F::epsilon()
}

/// Moore–Penrose pseudoinverse via one-sided Jacobi SVD.
///
/// Singular values below `tol` times the largest singular value are treated as
/// zero; `None` selects the [`default_rank_tolerance`].
pub fn pinv<F: Scalar>(m: &Matrix<F>, tol: Option<F>) -> Result<Matrix<F>> {
    if !m.is_finite() {
        return Err(Error::NonFinite("pinv input"));
    }
    let tol = tol.unwrap_or_else(|| default_rank_tolerance::<F>(m.rows(), m.cols()));
    if tol < F::zero() {
        return Err(Error::Numerical("pinv tolerance must be >= 0".into()));
    }
    // One-sided Jacobi wants tall matrices; pinv(Mᵀ) = pinv(M)ᵀ.
    if m.rows() < m.cols() {
        return Ok(pinv(&m.transpose(), Some(tol))?.transpose());
    }

    let (u, v) = jacobi_svd_factors(m);
    let ncols = m.cols();
    let sigma: Vec<F> = (0..ncols).map(|j| norm(&u.column(j))).collect();
    let sigma_max = sigma.iter().cloned().fold(F::zero(), F::max);
    let cutoff = tol * sigma_max;

    // M⁺ = Σ_j v_j σ_j⁻¹ ũ_jᵀ over the retained spectrum.
    let mut out = Matrix::zeros(ncols, m.rows());
    for (j, &sj) in sigma.iter().enumerate() {
        if sj <= cutoff || sj == F::zero() {
            continue;
        }
        let inv_sq = F::one() / (sj * sj);
        let uj = u.column(j);
        let vj = v.column(j);
        for a in 0..ncols {
            let scale = vj[a] * inv_sq;
            for b in 0..m.rows() {
                out[(a, b)] += scale * uj[b];
            }
        }
    }
    Ok(out)
}

/// One-sided Jacobi iteration: returns (U, V) with M·V = U and U's columns
/// mutually orthogonal, so M = (U/σ)·diag(σ)·Vᵀ.
fn jacobi_svd_factors<F: Scalar>(m: &Matrix<F>) -> (Matrix<F>, Matrix<F>) {
    let n = m.cols();
    let mut u = m.clone();
    let mut v = Matrix::identity(n);
    let eps = F::epsilon();
    let max_sweeps = 60;

    for _ in 0..max_sweeps {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let mut app = F::zero();
                let mut aqq = F::zero();
                let mut apq = F::zero();
                for i in 0..u.rows() {
                    let up = u[(i, p)];
                    let uq = u[(i, q)];
                    app += up * up;
                    aqq += uq * uq;
                    apq += up * uq;
                }
                if app == F::zero() || aqq == F::zero() {
                    continue;
                }
                if apq.abs() <= eps * (app * aqq).sqrt() {
                    continue;
                }
                rotated = true;
                let two = F::from_f64_lossy(2.0);
                let zeta = (aqq - app) / (two * apq);
                let t = zeta.signum() / (zeta.abs() + (F::one() + zeta * zeta).sqrt());
                let cs = F::one() / (F::one() + t * t).sqrt();
                let sn = cs * t;
                for i in 0..u.rows() {
                    let up = u[(i, p)];
                    let uq = u[(i, q)];
                    u[(i, p)] = cs * up - sn * uq;
                    u[(i, q)] = sn * up + cs * uq;
                }
                for i in 0..n {
                    let vp = v[(i, p)];
                    let vq = v[(i, q)];
                    v[(i, p)] = cs * vp - sn * vq;
                    v[(i, q)] = sn * vp + cs * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    (u, v)
}

/// Minimum-norm least-squares solve via Householder QR with a rank cutoff on
/// the triangular diagonal.
pub fn lstsq<F: Scalar>(m: &Matrix<F>, y: &[F]) -> Result<Vec<F>> {
    if m.rows() != y.len() {
        return Err(Error::Dimension {
            context: "lstsq",
            expected: m.rows(),
            got: y.len(),
        });
    }
    if !m.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("lstsq input"));
    }
    let rows = m.rows();
    let cols = m.cols();
    if cols == 0 {
        return Ok(Vec::new());
    }

    let max_col_norm = (0..cols)
        .map(|j| norm(&m.column(j)))
        .fold(F::zero(), F::max);
    let tol = default_rank_tolerance::<F>(rows, cols) * max_col_norm;

    let mut a = m.clone();
    let mut rhs = y.to_vec();
    let steps = rows.min(cols);
    for j in 0..steps {
        // Householder reflector annihilating a[j+1.., j].
        let x0 = a[(j, j)];
        let col_tail_sq: F = (j..rows)
            .map(|i| a[(i, j)] * a[(i, j)])
            .fold(F::zero(), |s, t| s + t);
        let xnorm = col_tail_sq.sqrt();
        if xnorm == F::zero() {
            continue;
        }
        let alpha = if x0 >= F::zero() { -xnorm } else { xnorm };
        let mut v: Vec<F> = (j..rows).map(|i| a[(i, j)]).collect();
        v[0] -= alpha;
        let vnorm_sq = dot(&v, &v);
        if vnorm_sq == F::zero() {
            continue;
        }
        let beta = F::from_f64_lossy(2.0) / vnorm_sq;
        for c in j..cols {
            let mut proj = F::zero();
            for (vi, i) in v.iter().zip(j..rows) {
                proj += *vi * a[(i, c)];
            }
            let s = beta * proj;
            for (vi, i) in v.iter().zip(j..rows) {
                a[(i, c)] -= s * *vi;
            }
        }
        let mut proj = F::zero();
        for (vi, i) in v.iter().zip(j..rows) {
            proj += *vi * rhs[i];
        }
        let s = beta * proj;
        for (vi, i) in v.iter().zip(j..rows) {
            rhs[i] -= s * *vi;
        }
        a[(j, j)] = alpha;
    }

    // Upper-trapezoidal system R β = d, with rank decided on the diagonal.
    let r_rows: Vec<Vec<F>> = (0..steps)
        .map(|i| (0..cols).map(|j| if j >= i { a[(i, j)] } else { F::zero() }).collect())
        .collect();
    let d: Vec<F> = rhs[..steps].to_vec();
    let active: Vec<usize> = (0..steps).filter(|&i| r_rows[i][i].abs() > tol).collect();
    min_norm_upper_solve(&r_rows, &d, &active, cols)
}

/// Minimum-norm solution of `R β = d` restricted to the `active` rows of an
/// upper-trapezoidal `R`. Falls back to plain back-substitution when the
/// system is square and full-rank.
fn min_norm_upper_solve<F: Scalar>(
    r_rows: &[Vec<F>],
    d: &[F],
    active: &[usize],
    cols: usize,
) -> Result<Vec<F>> {
    if active.len() == cols && r_rows.len() >= cols {
        let mut beta = vec![F::zero(); cols];
        for j in (0..cols).rev() {
            let mut s = d[j];
            for l in (j + 1)..cols {
                s -= r_rows[j][l] * beta[l];
            }
            beta[j] = s / r_rows[j][j];
        }
        return Ok(beta);
    }
    if active.is_empty() {
        return Ok(vec![F::zero(); cols]);
    }
    // Min-norm via QR of the transposed active block: with Aᵀ = Q U the
    // solution of A β = d_A is β = Q U⁻ᵀ d_A. Working on Aᵀ directly avoids
    // the Gram matrix and its squared condition number.
    let k = active.len();
    let mut at = Matrix::zeros(cols, k);
    for (a, &i) in active.iter().enumerate() {
        for (c, v) in r_rows[i].iter().enumerate() {
            at[(c, a)] = *v;
        }
    }
    let mut reflectors: Vec<(Vec<F>, F)> = Vec::with_capacity(k);
    for j in 0..k {
        let mut v: Vec<F> = (j..cols).map(|i| at[(i, j)]).collect();
        let alpha = norm(&v);
        if alpha == F::zero() {
            reflectors.push((Vec::new(), F::zero()));
            continue;
        }
        let alpha = if v[0] > F::zero() { -alpha } else { alpha };
        v[0] -= alpha;
        let vnorm_sq = dot(&v, &v);
        if vnorm_sq == F::zero() {
            at[(j, j)] = alpha;
            reflectors.push((Vec::new(), F::zero()));
            continue;
        }
        let beta = (F::one() + F::one()) / vnorm_sq;
        for c in j..k {
            let mut proj = F::zero();
            for (vi, i) in v.iter().zip(j..cols) {
                proj += *vi * at[(i, c)];
            }
            let s = beta * proj;
            for (vi, i) in v.iter().zip(j..cols) {
                at[(i, c)] -= s * *vi;
            }
        }
        at[(j, j)] = alpha;
        reflectors.push((v, beta));
    }
    // Forward substitution on Uᵀ z = d_A, dropping directions whose diagonal
    // has collapsed below the rank tolerance.
    let max_diag = (0..k).fold(F::zero(), |m, i| m.max(at[(i, i)].abs()));
    let tol = default_rank_tolerance::<F>(cols, k) * max_diag;
    let mut z = vec![F::zero(); cols];
    for j in 0..k {
        if at[(j, j)].abs() <= tol {
            continue;
        }
        let mut s = d[active[j]];
        for i in 0..j {
            s -= at[(i, j)] * z[i];
        }
        z[j] = s / at[(j, j)];
    }
    // β = Q z, applying the stored reflectors in reverse.
    for j in (0..k).rev() {
        let (v, beta) = &reflectors[j];
        if v.is_empty() {
            continue;
        }
        let mut proj = F::zero();
        for (vi, i) in v.iter().zip(j..cols) {
            proj += *vi * z[i];
        }
        let s = *beta * proj;
        for (vi, i) in v.iter().zip(j..cols) {
            z[i] -= s * *vi;
        }
    }
    Ok(z)
}

/// Post-append view of a tentative column: enough to run the acceptance test
/// without committing.
#[derive(Debug, Clone, Copy)]
pub struct Candidate<F> {
    /// Training residual norm if the column were committed.
    pub residual_norm: F,
    /// True when the column is numerically in the span of the committed ones.
    pub dependent: bool,
}

struct PendingColumn<F> {
    q: Vec<F>,
    r: Vec<F>,
    d: F,
    residual_norm: F,
    col_norm: F,
}

/// Incrementally updatable least-squares state over a growing column set.
///
/// Orthonormal columns live in `q`, the triangular factor in `r` (column
/// `j` holds the coefficients of appended column `j` in the basis). A column
/// numerically dependent on the committed span is kept with an empty `q`
/// entry and a zero diagonal; solves then take the minimum-norm route.
pub struct IncrementalLS<F> {
    rows: usize,
    q: Vec<Vec<F>>,
    r: Vec<Vec<F>>,
    d: Vec<F>,
    resid: Vec<F>,
    resid_norm: F,
    max_col_norm: F,
    pending: Option<PendingColumn<F>>,
}

impl<F: Scalar> IncrementalLS<F> {
    pub fn new(y: Vec<F>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::Dimension {
                context: "IncrementalLS::new",
                expected: 1,
                got: 0,
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("IncrementalLS targets"));
        }
        let resid_norm = norm(&y);
        Ok(IncrementalLS {
            rows: y.len(),
            resid: y,
            q: Vec::new(),
            r: Vec::new(),
            d: Vec::new(),
            resid_norm,
            max_col_norm: F::zero(),
            pending: None,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of committed columns.
    pub fn ncols(&self) -> usize {
        self.r.len()
    }

    /// Residual norm over the committed columns.
    pub fn residual_norm(&self) -> F {
        self.resid_norm
    }

    /// Relative diagonal cutoff actually in force for rank decisions.
    pub fn rank_tolerance(&self) -> F {
        default_rank_tolerance::<F>(self.rows, self.ncols() + 1)
    }

    /// Tentatively append a column; the factorization is extended without
    /// committing. Fails if a previous candidate is still unresolved.
    pub fn append_column(&mut self, col: &[F]) -> Result<Candidate<F>> {
        if self.pending.is_some() {
            return Err(Error::SolverState(
                "append_column called with an unresolved candidate",
            ));
        }
        if col.len() != self.rows {
            return Err(Error::Dimension {
                context: "IncrementalLS::append_column",
                expected: self.rows,
                got: col.len(),
            });
        }
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("IncrementalLS column"));
        }

        let col_norm = norm(col);
        let mut w = col.to_vec();
        let mut r = vec![F::zero(); self.ncols()];
        // Two Gram–Schmidt passes keep the basis orthonormal.
        for _ in 0..2 {
            for (j, qj) in self.q.iter().enumerate() {
                if qj.is_empty() {
                    continue;
                }
                let c = dot(qj, &w);
                axpy(-c, qj, &mut w);
                r[j] += c;
            }
        }
        let wnorm = norm(&w);
        let scale = self.max_col_norm.max(col_norm);
        let dependent = wnorm <= self.rank_tolerance() * scale;

        let pending = if dependent {
            r.push(F::zero());
            PendingColumn {
                q: Vec::new(),
                r,
                d: F::zero(),
                residual_norm: self.resid_norm,
                col_norm,
            }
        } else {
            let inv = F::one() / wnorm;
            for v in &mut w {
                *v *= inv;
            }
            let d = dot(&w, &self.resid);
            let mut rnorm_sq = F::zero();
            for (ri, qi) in self.resid.iter().zip(&w) {
                let t = *ri - d * *qi;
                rnorm_sq += t * t;
            }
            // The summed form can overshoot the old norm by ~N·eps when d is
            // tiny; in that regime sqrt(old² - d²) is cancellation-free and
            // algebraically equal, so the smaller of the two keeps the
            // residual norm non-increasing at roundoff scale. When d is
            // large the difference form cancels and only the sum is trusted.
            let old_sq = self.resid_norm * self.resid_norm;
            let mut residual_norm = rnorm_sq.sqrt();
            if d * d <= old_sq / (F::one() + F::one()) {
                residual_norm = residual_norm.min((old_sq - d * d).max(F::zero()).sqrt());
            }
            r.push(wnorm);
            PendingColumn {
                q: w,
                r,
                d,
                residual_norm,
                col_norm,
            }
        };
        let view = Candidate {
            residual_norm: pending.residual_norm,
            dependent,
        };
        self.pending = Some(pending);
        Ok(view)
    }

    /// Output weights including the pending column.
    pub fn candidate_beta(&self) -> Result<Vec<F>> {
        if self.pending.is_none() {
            return Err(Error::SolverState("candidate_beta without a candidate"));
        }
        self.solve(true)
    }

    /// Residual norm including the pending column.
    pub fn candidate_residual_norm(&self) -> Result<F> {
        self.pending
            .as_ref()
            .map(|p| p.residual_norm)
            .ok_or(Error::SolverState(
                "candidate_residual_norm without a candidate",
            ))
    }

    /// Make the pending column permanent.
    pub fn commit(&mut self) -> Result<()> {
        let p = self
            .pending
            .take()
            .ok_or(Error::SolverState("commit without a candidate"))?;
        if !p.q.is_empty() {
            for (ri, qi) in self.resid.iter_mut().zip(&p.q) {
                *ri -= p.d * *qi;
            }
        }
        self.resid_norm = p.residual_norm;
        self.max_col_norm = self.max_col_norm.max(p.col_norm);
        self.q.push(p.q);
        self.r.push(p.r);
        self.d.push(p.d);
        Ok(())
    }

    /// Drop the pending column, restoring the pre-append state.
    pub fn discard(&mut self) -> Result<()> {
        if self.pending.take().is_none() {
            return Err(Error::SolverState("discard without a candidate"));
        }
        Ok(())
    }

    /// Output weights over the committed columns.
    pub fn beta(&self) -> Result<Vec<F>> {
        self.solve(false)
    }

    fn solve(&self, include_pending: bool) -> Result<Vec<F>> {
        let k = self.ncols() + usize::from(include_pending);
        if k == 0 {
            return Ok(Vec::new());
        }
        // Row i of R gathered from the stored columns.
        let col = |j: usize| -> &Vec<F> {
            if j < self.r.len() {
                &self.r[j]
            } else {
                &self.pending.as_ref().expect("pending present").r
            }
        };
        let r_rows: Vec<Vec<F>> = (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| {
                        let rc = col(j);
                        if i < rc.len() {
                            if i <= j {
                                rc[i]
                            } else {
                                F::zero()
                            }
                        } else {
                            F::zero()
                        }
                    })
                    .collect()
            })
            .collect();
        let mut d: Vec<F> = self.d.clone();
        if include_pending {
            d.push(self.pending.as_ref().expect("pending present").d);
        }
        let active: Vec<usize> = (0..k).filter(|&i| r_rows[i][i] != F::zero()).collect();
        min_norm_upper_solve(&r_rows, &d, &active, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Independent pseudoinverse oracle for full-column-rank matrices:
    /// (MᵀM)⁻¹Mᵀ by Gauss–Jordan elimination.
    fn normal_equations_pinv(m: &Matrix<f64>) -> Matrix<f64> {
        let mt = m.transpose();
        let g = mt.matmul(m).unwrap();
        let n = g.rows();
        let mut aug = Matrix::zeros(n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                aug[(i, j)] = g[(i, j)];
            }
            aug[(i, n + i)] = 1.0;
        }
        for col in 0..n {
            let pivot_row = (col..n)
                .max_by(|&a, &b| aug[(a, col)].abs().partial_cmp(&aug[(b, col)].abs()).unwrap())
                .unwrap();
            if pivot_row != col {
                for j in 0..2 * n {
                    let t = aug[(col, j)];
                    aug[(col, j)] = aug[(pivot_row, j)];
                    aug[(pivot_row, j)] = t;
                }
            }
            let p = aug[(col, col)];
            assert!(p.abs() > 1e-12, "oracle requires full rank");
            for j in 0..2 * n {
                aug[(col, j)] /= p;
            }
            for i in 0..n {
                if i == col {
                    continue;
                }
                let f = aug[(i, col)];
                for j in 0..2 * n {
                    aug[(i, j)] -= f * aug[(col, j)];
                }
            }
        }
        let g_inv = Matrix::from_fn(n, n, |i, j| aug[(i, n + j)]);
        g_inv.matmul(&mt).unwrap()
    }

    fn assert_close(a: &Matrix<f64>, b: &Matrix<f64>, tol: f64) {
        assert_eq!(a.rows(), b.rows());
        assert_eq!(a.cols(), b.cols());
        let mut diff = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                diff += (a[(i, j)] - b[(i, j)]).powi(2);
                scale += b[(i, j)].powi(2);
            }
        }
        let rel = diff.sqrt() / scale.sqrt().max(1.0);
        assert!(rel < tol, "relative Frobenius error {rel} exceeds {tol}");
    }

    fn check_moore_penrose(m: &Matrix<f64>, p: &Matrix<f64>, tol: f64) {
        let mp = m.matmul(p).unwrap();
        let pm = p.matmul(m).unwrap();
        let scale = m.frobenius_norm().max(1.0);
        let c1 = m.matmul(&pm).unwrap();
        let c2 = p.matmul(&mp).unwrap();
        let d1: f64 = (0..m.rows())
            .map(|i| (0..m.cols()).map(|j| (c1[(i, j)] - m[(i, j)]).powi(2)).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        assert!(d1 / scale < tol, "MPM != M: {}", d1 / scale);
        let pscale = p.frobenius_norm().max(1.0);
        let d2: f64 = (0..p.rows())
            .map(|i| (0..p.cols()).map(|j| (c2[(i, j)] - p[(i, j)]).powi(2)).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        assert!(d2 / pscale < tol, "PMP != P: {}", d2 / pscale);
        let d3: f64 = (0..mp.rows())
            .map(|i| (0..mp.cols()).map(|j| (mp[(i, j)] - mp[(j, i)]).powi(2)).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        assert!(d3 / scale < tol, "(MP)ᵀ != MP: {}", d3 / scale);
        let d4: f64 = (0..pm.rows())
            .map(|i| (0..pm.cols()).map(|j| (pm[(i, j)] - pm[(j, i)]).powi(2)).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        assert!(d4 / scale < tol, "(PM)ᵀ != PM: {}", d4 / scale);
    }

    #[test]
    fn pinv_identity() {
        let i3 = Matrix::<f64>::identity(3);
        let p = pinv(&i3, None).unwrap();
        assert_close(&p, &i3, 1e-12);
    }

    #[test]
    fn pinv_zero_matrix_has_transposed_shape() {
        let z = Matrix::<f64>::zeros(4, 2);
        let p = pinv(&z, None).unwrap();
        assert_eq!((p.rows(), p.cols()), (2, 4));
        assert!(p.frobenius_norm() == 0.0);
    }

    #[test]
    fn pinv_hand_computed_2x2_cases() {
        // Diagonal projector is its own pseudoinverse.
        let m = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let p = pinv(&m, None).unwrap();
        assert_close(&p, &m, 1e-12);

        // Nilpotent shift: pinv is the transpose.
        let m = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let p = pinv(&m, None).unwrap();
        assert_close(&p, &m.transpose(), 1e-12);

        // Rank-1: (uvᵀ)⁺ = vuᵀ / (‖u‖²‖v‖²).
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        let expect = Matrix::from_rows(&[vec![1.0 / 25.0, 2.0 / 25.0], vec![2.0 / 25.0, 4.0 / 25.0]])
            .unwrap();
        let p = pinv(&m, None).unwrap();
        assert_close(&p, &expect, 1e-12);
    }

    #[test]
    fn pinv_matches_normal_equations_oracle_on_full_rank_5x3() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = random_matrix(&mut rng, 5, 3);
        let p = pinv(&m, None).unwrap();
        let oracle = normal_equations_pinv(&m);
        assert_close(&p, &oracle, 1e-8);
    }

    #[test]
    fn pinv_four_conditions_on_random_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(r, c) in &[(1, 1), (3, 3), (5, 2), (2, 5), (10, 7), (20, 20), (50, 20), (20, 50)] {
            let m = random_matrix(&mut rng, r, c);
            let p = pinv(&m, None).unwrap();
            check_moore_penrose(&m, &p, 1e-8);
        }
    }

    #[test]
    fn pinv_four_conditions_rank_deficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let base = random_matrix(&mut rng, 8, 3);
        // Duplicate a column and append a linear combination.
        let m = Matrix::from_fn(8, 5, |i, j| match j {
            0..=2 => base[(i, j)],
            3 => base[(i, 0)],
            _ => base[(i, 1)] - 2.0 * base[(i, 2)],
        });
        let p = pinv(&m, None).unwrap();
        check_moore_penrose(&m, &p, 1e-8);
    }

    #[test]
    fn pinv_rejects_non_finite() {
        let mut m = Matrix::<f64>::zeros(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(matches!(pinv(&m, None), Err(Error::NonFinite(_))));
    }

    #[test]
    fn lstsq_identity_system() {
        let m = Matrix::<f64>::identity(3);
        let beta = lstsq(&m, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(beta, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn lstsq_overdetermined_consistent_is_exact() {
        // y = 2x + 1 sampled at four points; system is exactly consistent.
        let xs = [0.0, 1.0, 2.0, 3.0];
        let m = Matrix::from_fn(4, 2, |i, j| if j == 0 { xs[i] } else { 1.0 });
        let y: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let beta = lstsq(&m, &y).unwrap();
        assert!((beta[0] - 2.0).abs() < 1e-12);
        assert!((beta[1] - 1.0).abs() < 1e-12);
        let fitted = m.mul_vec(&beta).unwrap();
        let resid: f64 = fitted.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
        assert!(resid.sqrt() < 1e-12);
    }

    #[test]
    fn lstsq_duplicate_columns_matches_pinv_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let base = random_matrix(&mut rng, 10, 2);
        let m = Matrix::from_fn(10, 4, |i, j| match j {
            0 | 2 => base[(i, 0)],
            1 => base[(i, 1)],
            _ => base[(i, 1)],
        });
        let y: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let beta = lstsq(&m, &y).unwrap();
        let p = pinv(&m, None).unwrap();
        let beta_pinv = p.mul_vec(&y).unwrap();
        for (a, b) in beta.iter().zip(&beta_pinv) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn lstsq_normal_equations_orthogonality() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let m = random_matrix(&mut rng, 12, 4);
        let y: Vec<f64> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
        let beta = lstsq(&m, &y).unwrap();
        let fitted = m.mul_vec(&beta).unwrap();
        let r: Vec<f64> = fitted.iter().zip(&y).map(|(a, b)| a - b).collect();
        let ynorm = norm(&y);
        for j in 0..m.cols() {
            let c = dot(&m.column(j), &r);
            assert!(c.abs() < 1e-8 * ynorm, "column {j}: Mᵀr = {c}");
        }
    }

    #[test]
    fn lstsq_residual_is_locally_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let m = random_matrix(&mut rng, 15, 5);
        let y: Vec<f64> = (0..15).map(|_| rng.random_range(-1.0..1.0)).collect();
        let beta = lstsq(&m, &y).unwrap();
        let resid_norm = {
            let f = m.mul_vec(&beta).unwrap();
            norm(&f.iter().zip(&y).map(|(a, b)| a - b).collect::<Vec<_>>())
        };
        for _ in 0..100 {
            let perturbed: Vec<f64> = beta
                .iter()
                .map(|b| b + rng.random_range(-0.1..0.1))
                .collect();
            let f = m.mul_vec(&perturbed).unwrap();
            let r = norm(&f.iter().zip(&y).map(|(a, b)| a - b).collect::<Vec<_>>());
            assert!(r + 1e-12 >= resid_norm);
        }
    }

    #[test]
    fn ils_first_column_is_scalar_projection() {
        let y = vec![1.0f64, 2.0, 3.0];
        let h = vec![1.0f64, 1.0, 2.0];
        let mut ils = IncrementalLS::new(y.clone()).unwrap();
        ils.append_column(&h).unwrap();
        let beta = ils.candidate_beta().unwrap();
        let expect = dot(&y, &h) / dot(&h, &h);
        assert!((beta[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn ils_duplicate_column_keeps_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let y: Vec<f64> = (0..20).map(|_| rng.random_range(0.0..1.0)).collect();
        let col: Vec<f64> = (0..20).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut ils = IncrementalLS::new(y).unwrap();
        ils.append_column(&col).unwrap();
        ils.commit().unwrap();
        let before = ils.residual_norm();
        let cand = ils.append_column(&col).unwrap();
        assert!(cand.dependent);
        assert!((cand.residual_norm - before).abs() < 1e-10);
    }

    #[test]
    fn ils_candidate_matches_scratch_lstsq() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 30;
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut ils = IncrementalLS::new(y.clone()).unwrap();
        let mut committed: Vec<Vec<f64>> = Vec::new();
        for _ in 0..6 {
            let col: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            ils.append_column(&col).unwrap();
            let beta = ils.candidate_beta().unwrap();
            committed.push(col);
            let h = Matrix::from_fn(n, committed.len(), |i, j| committed[j][i]);
            let oracle = lstsq(&h, &y).unwrap();
            for (a, b) in beta.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-8);
            }
            ils.commit().unwrap();
        }
    }

    #[test]
    fn ils_discard_restores_candidate_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let n = 25;
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut ils = IncrementalLS::new(y).unwrap();
        for _ in 0..3 {
            let col: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            ils.append_column(&col).unwrap();
            ils.commit().unwrap();
        }
        let probe: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let first = ils.append_column(&probe).unwrap();
        ils.discard().unwrap();
        let second = ils.append_column(&probe).unwrap();
        assert_eq!(first.residual_norm, second.residual_norm);
        ils.discard().unwrap();
    }

    #[test]
    fn ils_double_consumption_errors() {
        let mut ils = IncrementalLS::new(vec![1.0, 2.0]).unwrap();
        assert!(matches!(ils.commit(), Err(Error::SolverState(_))));
        assert!(matches!(ils.discard(), Err(Error::SolverState(_))));
        ils.append_column(&[1.0, 0.0]).unwrap();
        assert!(matches!(
            ils.append_column(&[0.0, 1.0]),
            Err(Error::SolverState(_))
        ));
        ils.commit().unwrap();
        assert!(matches!(ils.commit(), Err(Error::SolverState(_))));
        assert_eq!(ils.ncols(), 1);
    }

    #[test]
    fn ils_commit_increments_column_count() {
        let mut ils = IncrementalLS::new(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(ils.ncols(), 0);
        ils.append_column(&[1.0, 0.0, 0.0]).unwrap();
        ils.commit().unwrap();
        assert_eq!(ils.ncols(), 1);
    }

    #[test]
    fn ils_mixed_commit_discard_matches_scratch_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let n = 40;
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut ils = IncrementalLS::new(y.clone()).unwrap();
        let mut committed: Vec<Vec<f64>> = Vec::new();
        let mut commits = 0;
        let mut attempts = 0;
        while attempts < 50 {
            attempts += 1;
            let col: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            ils.append_column(&col).unwrap();
            // 30 of the 50 appends get discarded.
            if attempts % 5 < 3 && commits >= 1 {
                ils.discard().unwrap();
            } else {
                ils.commit().unwrap();
                committed.push(col);
                commits += 1;
            }
        }
        assert_eq!(ils.ncols(), committed.len());
        let beta = ils.beta().unwrap();
        let h = Matrix::from_fn(n, committed.len(), |i, j| committed[j][i]);
        let oracle = lstsq(&h, &y).unwrap();
        for (a, b) in beta.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn ils_append_never_increases_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let n = 30;
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut ils = IncrementalLS::new(y).unwrap();
        for _ in 0..12 {
            let before = ils.residual_norm();
            let col: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let cand = ils.append_column(&col).unwrap();
            assert!(cand.residual_norm <= before + 1e-10);
            ils.commit().unwrap();
        }
    }

    #[test]
    fn ils_rank_deficient_solve_matches_pinv() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let n = 15;
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c0: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let c1: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut ils = IncrementalLS::new(y.clone()).unwrap();
        for col in [&c0, &c1, &c0] {
            ils.append_column(col).unwrap();
            ils.commit().unwrap();
        }
        let beta = ils.beta().unwrap();
        let h = Matrix::from_fn(n, 3, |i, j| match j {
            0 => c0[i],
            1 => c1[i],
            _ => c0[i],
        });
        let p = pinv(&h, None).unwrap();
        let oracle = p.mul_vec(&y).unwrap();
        for (a, b) in beta.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }
}
