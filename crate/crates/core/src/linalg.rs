//! Dense real linear algebra: the numeric substrate for the whole crate.
//!
//! Row-major storage, 64-bit by default (see the crate-root aliases). The SVD
//! is a one-sided Jacobi: slow asymptotically but accurate and robust at the
//! matrix sizes this crate targets (a few thousand per side), and it doubles
//! as the oracle behind every spectrum assertion in the test suites.

use crate::scalar::Scalar;
use crate::threads;

/// Errors from dense linear algebra operations.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinalgError {
    #[error("shape mismatch: left is {left_rows}x{left_cols}, right is {right_rows}x{right_cols}")]
    ShapeMismatch {
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },
    #[error("data length {got} does not match {rows}x{cols}")]
    BadDataLength { rows: usize, cols: usize, got: usize },
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("singular matrix in linear solve (pivot {pivot} at column {col})")]
    Singular { col: usize, pivot: f64 },
    #[error("SVD did not converge after {sweeps} sweeps (residual {residual})")]
    SvdNoConvergence { sweeps: usize, residual: f64 },
    #[error("permutation length {perm_len} does not match dimension {dim}")]
    PermutationLength { perm_len: usize, dim: usize },
    #[error("index array is not a permutation of 0..{dim}")]
    NotAPermutation { dim: usize },
}

/// Which side of a matrix an action applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Dense real matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Scalar> DenseMatrix<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![F::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = F::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::BadDataLength { rows, cols, got: data.len() });
        }
        Ok(Self { rows, cols, data })
    }

    /// Test/construction convenience; panics on ragged input.
    pub fn from_rows(rows: &[&[F]]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged row");
            data.extend_from_slice(row);
        }
        Self { rows: r, cols: c, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> F {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: F) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn data(&self) -> &[F] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn column(&self, j: usize) -> Vec<F> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Dense product `self * rhs`.
    pub fn matmul(&self, rhs: &Self) -> Result<Self, LinalgError> {
        if self.cols != rhs.rows {
            return Err(LinalgError::ShapeMismatch {
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: rhs.rows,
                right_cols: rhs.cols,
            });
        }
        let (m, k, n) = (self.rows, self.cols, rhs.cols);
        let mut out = Self::zeros(m, n);
        let a = &self.data;
        let b = &rhs.data;
        let parallel = m * k * n >= 1 << 16;
        let kernel = |row0: usize, block: &mut [F]| {
            for (local, out_row) in block.chunks_mut(n).enumerate() {
                let i = row0 + local;
                let a_row = &a[i * k..(i + 1) * k];
                for (kk, &aik) in a_row.iter().enumerate() {
                    if aik == F::zero() {
                        continue;
                    }
                    let b_row = &b[kk * n..(kk + 1) * n];
                    for (o, &bv) in out_row.iter_mut().zip(b_row.iter()) {
                        *o = *o + aik * bv;
                    }
                }
            }
        };
        if parallel {
            threads::for_each_row_block(&mut out.data, n, kernel);
        } else {
            kernel(0, &mut out.data);
        }
        Ok(out)
    }

    pub fn add(&self, rhs: &Self) -> Result<Self, LinalgError> {
        if self.shape() != rhs.shape() {
            return Err(LinalgError::ShapeMismatch {
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: rhs.rows,
                right_cols: rhs.cols,
            });
        }
        let data = self.data.iter().zip(&rhs.data).map(|(&a, &b)| a + b).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self, LinalgError> {
        if self.shape() != rhs.shape() {
            return Err(LinalgError::ShapeMismatch {
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: rhs.rows,
                right_cols: rhs.cols,
            });
        }
        let data = self.data.iter().zip(&rhs.data).map(|(&a, &b)| a - b).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn scale(&self, c: F) -> Self {
        let data = self.data.iter().map(|&a| a * c).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    pub fn max_abs(&self) -> F {
        self.data.iter().fold(F::zero(), |acc, x| acc.max(x.abs()))
    }
}

/// Frobenius norm, accumulated in the scalar type.
pub fn frobenius_norm<F: Scalar>(a: &DenseMatrix<F>) -> F {
    let mut s = F::zero();
    for &x in a.data() {
        s = s + x * x;
    }
    s.sqrt()
}

/// `||a - b||_F`; shapes must match.
pub fn frobenius_distance<F: Scalar>(a: &DenseMatrix<F>, b: &DenseMatrix<F>) -> F {
    assert_eq!(a.shape(), b.shape(), "frobenius_distance shape mismatch");
    let mut s = F::zero();
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = x - y;
        s = s + d * d;
    }
    s.sqrt()
}

/// A permutation of `0..m`, stored as an index array (never materialized as a
/// matrix). `apply` with `Side::Left` maps row `i` of the output to row
/// `perm[i]` of the input, which is the action of the permutation matrix
/// `Psi` with `Psi[i, perm[i]] = 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationSpec {
    perm: Vec<usize>,
}

impl PermutationSpec {
    pub fn identity(m: usize) -> Self {
        Self { perm: (0..m).collect() }
    }

    pub fn from_indices(perm: Vec<usize>) -> Result<Self, LinalgError> {
        let m = perm.len();
        let mut seen = vec![false; m];
        for &p in &perm {
            if p >= m || seen[p] {
                return Err(LinalgError::NotAPermutation { dim: m });
            }
            seen[p] = true;
        }
        Ok(Self { perm })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    #[inline]
    pub fn indices(&self) -> &[usize] {
        &self.perm
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0usize; self.perm.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            inv[p] = i;
        }
        Self { perm: inv }
    }
}

/// Reorder rows (`Side::Left`, output row `i` = input row `perm[i]`) or
/// columns (`Side::Right`, output column `j` = input column `perm[j]`).
pub fn apply_permutation<F: Scalar>(
    p: &PermutationSpec,
    a: &DenseMatrix<F>,
    side: Side,
) -> Result<DenseMatrix<F>, LinalgError> {
    let dim = match side {
        Side::Left => a.rows(),
        Side::Right => a.cols(),
    };
    if p.len() != dim {
        return Err(LinalgError::PermutationLength { perm_len: p.len(), dim });
    }
    let mut out = DenseMatrix::zeros(a.rows(), a.cols());
    match side {
        Side::Left => {
            for (i, &src) in p.indices().iter().enumerate() {
                out.row_mut(i).copy_from_slice(a.row(src));
            }
        }
        Side::Right => {
            for i in 0..a.rows() {
                let src_row = a.row(i);
                let dst_row = out.row_mut(i);
                for (j, &src) in p.indices().iter().enumerate() {
                    dst_row[j] = src_row[src];
                }
            }
        }
    }
    Ok(out)
}

/// Solve `a * x = rhs` for `x` by LU with partial pivoting.
pub fn lu_solve<F: Scalar>(
    a: &DenseMatrix<F>,
    rhs: &DenseMatrix<F>,
) -> Result<DenseMatrix<F>, LinalgError> {
    let n = a.rows();
    if a.cols() != n {
        return Err(LinalgError::NotSquare { rows: a.rows(), cols: a.cols() });
    }
    if rhs.rows() != n {
        return Err(LinalgError::ShapeMismatch {
            left_rows: a.rows(),
            left_cols: a.cols(),
            right_rows: rhs.rows(),
            right_cols: rhs.cols(),
        });
    }
    let mut lu = a.clone();
    let mut x = rhs.clone();
    let nrhs = rhs.cols();
    for col in 0..n {
        // Pivot selection.
        let mut pivot_row = col;
        let mut pivot_val = lu.get(col, col).abs();
        for r in col + 1..n {
            let v = lu.get(r, col).abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = r;
            }
        }
        if pivot_val == F::zero() || !pivot_val.is_finite() {
            return Err(LinalgError::Singular { col, pivot: pivot_val.as_f64() });
        }
        if pivot_row != col {
            for j in 0..n {
                let t = lu.get(col, j);
                lu.set(col, j, lu.get(pivot_row, j));
                lu.set(pivot_row, j, t);
            }
            for j in 0..nrhs {
                let t = x.get(col, j);
                x.set(col, j, x.get(pivot_row, j));
                x.set(pivot_row, j, t);
            }
        }
        let inv_p = F::one() / lu.get(col, col);
        for r in col + 1..n {
            let factor = lu.get(r, col) * inv_p;
            if factor == F::zero() {
                continue;
            }
            lu.set(r, col, factor);
            for j in col + 1..n {
                let v = lu.get(r, j) - factor * lu.get(col, j);
                lu.set(r, j, v);
            }
            for j in 0..nrhs {
                let v = x.get(r, j) - factor * x.get(col, j);
                x.set(r, j, v);
            }
        }
    }
    // Back substitution.
    for col in (0..n).rev() {
        let inv_p = F::one() / lu.get(col, col);
        for j in 0..nrhs {
            let mut s = x.get(col, j);
            for k in col + 1..n {
                s = s - lu.get(col, k) * x.get(k, j);
            }
            x.set(col, j, s * inv_p);
        }
    }
    Ok(x)
}

/// Determinant by LU with partial pivoting; zero for singular inputs.
pub fn determinant<F: Scalar>(a: &DenseMatrix<F>) -> Result<F, LinalgError> {
    let n = a.rows();
    if a.cols() != n {
        return Err(LinalgError::NotSquare { rows: a.rows(), cols: a.cols() });
    }
    let mut lu = a.clone();
    let mut det = F::one();
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_val = lu.get(col, col).abs();
        for r in col + 1..n {
            let v = lu.get(r, col).abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = r;
            }
        }
        if pivot_val == F::zero() {
            return Ok(F::zero());
        }
        if pivot_row != col {
            det = -det;
            for j in 0..n {
                let t = lu.get(col, j);
                lu.set(col, j, lu.get(pivot_row, j));
                lu.set(pivot_row, j, t);
            }
        }
        let p = lu.get(col, col);
        det = det * p;
        let inv_p = F::one() / p;
        for r in col + 1..n {
            let factor = lu.get(r, col) * inv_p;
            if factor == F::zero() {
                continue;
            }
            for j in col + 1..n {
                let v = lu.get(r, j) - factor * lu.get(col, j);
                lu.set(r, j, v);
            }
        }
    }
    Ok(det)
}

/// Thin SVD `a = u * diag(sigma) * vt` with `sigma` sorted descending.
#[derive(Debug, Clone)]
pub struct SvdResult<F> {
    pub u: DenseMatrix<F>,
    pub sigma: Vec<F>,
    pub vt: DenseMatrix<F>,
}

impl<F: Scalar> SvdResult<F> {
    /// `u * diag(sigma) * vt`, for residual checks.
    pub fn reconstruct(&self) -> DenseMatrix<F> {
        let r = self.sigma.len();
        let mut scaled = self.vt.clone();
        for (i, &s) in self.sigma.iter().enumerate().take(r) {
            for v in scaled.row_mut(i) {
                *v = *v * s;
            }
        }
        self.u.matmul(&scaled).expect("svd shapes")
    }
}

const SVD_MAX_SWEEPS: usize = 60;

fn svd_rel_tol<F: Scalar>() -> F {
    F::of(1e-12).max(F::epsilon() * F::of(4.0))
}

/// One-sided Jacobi SVD. Deterministic for a fixed input; errors if the
/// off-diagonal mass has not dropped below the relative threshold after the
/// sweep cap.
pub fn svd<F: Scalar>(a: &DenseMatrix<F>) -> Result<SvdResult<F>, LinalgError> {
    if !a.all_finite() {
        return Err(LinalgError::NonFinite);
    }
    if a.rows() >= a.cols() {
        svd_tall(a)
    } else {
        // Decompose the transpose and swap factors.
        let t = svd_tall(&a.transpose())?;
        Ok(SvdResult { u: t.vt.transpose(), sigma: t.sigma, vt: t.u.transpose() })
    }
}

/// One-sided Jacobi for `m >= n`. Works on the transposed layout so column
/// operations touch contiguous memory.
fn svd_tall<F: Scalar>(a: &DenseMatrix<F>) -> Result<SvdResult<F>, LinalgError> {
    let (m, n) = a.shape();
    // w row j = column j of a; vt row j = column j of the accumulated V.
    let mut w = a.transpose();
    let mut vt = DenseMatrix::<F>::identity(n);
    let tol = svd_rel_tol::<F>();
    let mut residual = F::zero();
    let mut converged = n <= 1;

    for _sweep in 0..SVD_MAX_SWEEPS {
        if converged {
            break;
        }
        let mut norms2: Vec<F> = (0..n).map(|j| dot(w.row(j), w.row(j))).collect();
        let mut max_rel = F::zero();
        for p in 0..n {
            for q in p + 1..n {
                let npp = norms2[p];
                let nqq = norms2[q];
                if npp == F::zero() || nqq == F::zero() {
                    continue;
                }
                let apq = dot(w.row(p), w.row(q));
                let denom = (npp * nqq).sqrt();
                let rel = apq.abs() / denom;
                max_rel = max_rel.max(rel);
                if rel <= tol {
                    continue;
                }
                // Rutishauser rotation annihilating the (p, q) Gram entry.
                let tau = (nqq - npp) / (apq + apq);
                let t = {
                    let s = if tau >= F::zero() { F::one() } else { -F::one() };
                    s / (tau.abs() + (F::one() + tau * tau).sqrt())
                };
                let c = F::one() / (F::one() + t * t).sqrt();
                let s = c * t;
                rotate_rows(&mut w, p, q, c, s);
                rotate_rows(&mut vt, p, q, c, s);
                norms2[p] = c * c * npp - (c + c) * s * apq + s * s * nqq;
                norms2[q] = s * s * npp + (c + c) * s * apq + c * c * nqq;
            }
        }
        residual = max_rel;
        converged = max_rel <= tol;
    }
    if !converged {
        return Err(LinalgError::SvdNoConvergence {
            sweeps: SVD_MAX_SWEEPS,
            residual: residual.as_f64(),
        });
    }

    // Extract singular values and sort descending (stable).
    let mut sigma: Vec<F> = (0..n).map(|j| dot(w.row(j), w.row(j)).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].partial_cmp(&sigma[i]).unwrap().then(i.cmp(&j)));
    sigma = order.iter().map(|&j| sigma[j]).collect();

    let sigma_max = sigma.first().copied().unwrap_or_else(F::zero);
    let cutoff = sigma_max * F::of(m.max(n) as f64) * F::epsilon();

    let mut u = DenseMatrix::<F>::zeros(m, n);
    let mut filled: Vec<usize> = Vec::new();
    for (new_j, &old_j) in order.iter().enumerate() {
        let s = sigma[new_j];
        if s > cutoff && s > F::zero() {
            let inv = F::one() / s;
            for i in 0..m {
                u.set(i, new_j, w.get(old_j, i) * inv);
            }
        } else {
            // Numerically null direction: fill with a basis vector
            // orthogonalized against the columns already placed.
            fill_null_column(&mut u, new_j, &filled);
        }
        filled.push(new_j);
    }

    let mut vt_sorted = DenseMatrix::<F>::zeros(n, n);
    for (new_j, &old_j) in order.iter().enumerate() {
        vt_sorted.row_mut(new_j).copy_from_slice(vt.row(old_j));
    }
    Ok(SvdResult { u, sigma, vt: vt_sorted })
}

fn fill_null_column<F: Scalar>(u: &mut DenseMatrix<F>, col: usize, existing: &[usize]) {
    let m = u.rows();
    for basis in 0..m {
        let mut v = vec![F::zero(); m];
        v[basis] = F::one();
        for &j in existing {
            let mut proj = F::zero();
            for i in 0..m {
                proj = proj + u.get(i, j) * v[i];
            }
            for (i, vi) in v.iter_mut().enumerate() {
                *vi = *vi - proj * u.get(i, j);
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > F::of(0.5) {
            let inv = F::one() / norm;
            for (i, vi) in v.iter().enumerate() {
                u.set(i, col, *vi * inv);
            }
            return;
        }
    }
    // Unreachable for col < m: m basis vectors cannot all lie in a
    // subspace of dimension < m.
    panic!("failed to complete orthonormal basis");
}

#[inline]
fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    let mut s = F::zero();
    for (&x, &y) in a.iter().zip(b) {
        s = s + x * y;
    }
    s
}

#[inline]
fn rotate_rows<F: Scalar>(w: &mut DenseMatrix<F>, p: usize, q: usize, c: F, s: F) {
    debug_assert!(p < q);
    let cols = w.cols();
    let (head, tail) = w.data_mut().split_at_mut(q * cols);
    let row_p = &mut head[p * cols..(p + 1) * cols];
    let row_q = &mut tail[..cols];
    for (xp, xq) in row_p.iter_mut().zip(row_q.iter_mut()) {
        let vp = *xp;
        let vq = *xq;
        *xp = c * vp - s * vq;
        *xq = s * vp + c * vq;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type M = DenseMatrix<f64>;

    #[test]
    fn matmul_identity_is_noop() {
        let a = M::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], &[7.0, 8.0, 9.0]]);
        let i = M::identity(3);
        assert_eq!(i.matmul(&a).unwrap(), a);
    }

    #[test]
    fn matmul_permutation_swaps_columns() {
        let a = M::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let p = M::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let prod = a.matmul(&p).unwrap();
        assert_eq!(prod, M::from_rows(&[&[2.0, 1.0], &[4.0, 3.0]]));
    }

    #[test]
    fn matmul_rejects_shape_mismatch() {
        let a = M::zeros(2, 3);
        let b = M::zeros(2, 3);
        let err = a.matmul(&b).unwrap_err();
        match err {
            LinalgError::ShapeMismatch { left_cols, right_rows, .. } => {
                assert_eq!(left_cols, 3);
                assert_eq!(right_rows, 2);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn frobenius_closed_forms() {
        assert_eq!(frobenius_norm(&M::zeros(3, 4)), 0.0);
        assert!((frobenius_norm(&M::identity(9)) - 3.0).abs() < 1e-15);
        let a = M::from_rows(&[&[3.0, 4.0]]);
        assert!((frobenius_norm(&a) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn permutation_left_swaps_rows() {
        let a = M::from_rows(&[&[1.0], &[2.0]]);
        let p = PermutationSpec::from_indices(vec![1, 0]).unwrap();
        let out = apply_permutation(&p, &a, Side::Left).unwrap();
        assert_eq!(out, M::from_rows(&[&[2.0], &[1.0]]));
        let id = PermutationSpec::identity(2);
        assert_eq!(apply_permutation(&id, &a, Side::Left).unwrap(), a);
    }

    #[test]
    fn permutation_validation() {
        assert!(PermutationSpec::from_indices(vec![0, 0, 1]).is_err());
        assert!(PermutationSpec::from_indices(vec![0, 3]).is_err());
        let a = M::zeros(2, 2);
        let p = PermutationSpec::identity(3);
        assert!(apply_permutation(&p, &a, Side::Left).is_err());
    }

    #[test]
    fn svd_diagonal() {
        let a = M::from_rows(&[&[3.0, 0.0], &[0.0, 1.0]]);
        let r = svd(&a).unwrap();
        assert!((r.sigma[0] - 3.0).abs() < 1e-12);
        assert!((r.sigma[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn svd_rejects_non_finite() {
        let mut a = M::zeros(2, 2);
        a.set(0, 0, f64::NAN);
        assert!(matches!(svd(&a), Err(LinalgError::NonFinite)));
    }

    #[test]
    fn svd_zero_matrix_still_orthonormal() {
        let a = M::zeros(4, 3);
        let r = svd(&a).unwrap();
        assert!(r.sigma.iter().all(|&s| s == 0.0));
        let utu = r.u.transpose().matmul(&r.u).unwrap();
        assert!(frobenius_distance(&utu, &M::identity(3)) < 1e-12);
    }

    #[test]
    fn lu_solve_round_trip() {
        let a = M::from_rows(&[&[4.0, 1.0, 0.0], &[1.0, 3.0, 1.0], &[0.0, 1.0, 2.0]]);
        let x_true = M::from_rows(&[&[1.0], &[-2.0], &[0.5]]);
        let b = a.matmul(&x_true).unwrap();
        let x = lu_solve(&a, &b).unwrap();
        assert!(frobenius_distance(&x, &x_true) < 1e-12);
    }

    #[test]
    fn lu_solve_flags_singular() {
        let a = M::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]);
        let b = M::from_rows(&[&[1.0], &[1.0]]);
        assert!(matches!(lu_solve(&a, &b), Err(LinalgError::Singular { .. })));
    }
}
