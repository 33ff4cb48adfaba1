//! Learnable orthogonality.
//!
//! A skew-symmetric matrix `Q` is stored as its strict upper triangle (the
//! trainable degrees of freedom). The exact Cayley transform
//! `(I + Q)(I - Q)^-1` serves as the test oracle; the training path uses the
//! truncated Neumann form `(I + Q)(I + sum_{i=1..k} Q^i)`, which avoids the
//! inverse entirely. The backward pass differentiates the polynomial
//! analytically, never through a solve.

use crate::linalg::{frobenius_norm, lu_solve, DenseMatrix, LinalgError};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OrthoError {
    #[error("theta length {got} does not match dim {dim} (expected {expected})")]
    BadThetaLength { dim: usize, expected: usize, got: usize },
    #[error("input is not skew-symmetric (max |Q + Q^T| = {0})")]
    NotSkew(f64),
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("Neumann order must be at least 1")]
    BadOrder,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Number of terms kept in the truncated Neumann series.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeumannOrder(usize);

impl NeumannOrder {
    pub fn new(k: usize) -> Result<Self, OrthoError> {
        if k < 1 {
            return Err(OrthoError::BadOrder);
        }
        Ok(Self(k))
    }

    #[inline]
    pub fn get(self) -> usize {
        self.0
    }
}

/// Strict upper triangle of a skew-symmetric `dim x dim` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewParams<F> {
    dim: usize,
    theta: Vec<F>,
}

impl<F: Scalar> SkewParams<F> {
    pub fn param_len(dim: usize) -> usize {
        dim * (dim.saturating_sub(1)) / 2
    }

    pub fn zeros(dim: usize) -> Self {
        Self { dim, theta: vec![F::zero(); Self::param_len(dim)] }
    }

    pub fn from_theta(dim: usize, theta: Vec<F>) -> Result<Self, OrthoError> {
        let expected = Self::param_len(dim);
        if theta.len() != expected {
            return Err(OrthoError::BadThetaLength { dim, expected, got: theta.len() });
        }
        Ok(Self { dim, theta })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn theta(&self) -> &[F] {
        &self.theta
    }

    #[inline]
    pub fn theta_mut(&mut self) -> &mut [F] {
        &mut self.theta
    }

    pub fn is_zero(&self) -> bool {
        self.theta.iter().all(|&t| t == F::zero())
    }

    pub fn reset(&mut self) {
        for t in &mut self.theta {
            *t = F::zero();
        }
    }
}

/// Materialize the full antisymmetric matrix.
pub fn skew_materialize<F: Scalar>(p: &SkewParams<F>) -> DenseMatrix<F> {
    let b = p.dim();
    let mut q = DenseMatrix::zeros(b, b);
    let mut idx = 0;
    for i in 0..b {
        for j in i + 1..b {
            let t = p.theta()[idx];
            q.set(i, j, t);
            q.set(j, i, -t);
            idx += 1;
        }
    }
    q
}

/// Strict upper triangle of a square matrix, row-major; inverse of
/// [`skew_materialize`] on its image.
pub fn extract_upper<F: Scalar>(q: &DenseMatrix<F>) -> Result<SkewParams<F>, OrthoError> {
    let b = q.rows();
    if q.cols() != b {
        return Err(OrthoError::NotSquare { rows: q.rows(), cols: q.cols() });
    }
    let mut theta = Vec::with_capacity(SkewParams::<F>::param_len(b));
    for i in 0..b {
        for j in i + 1..b {
            theta.push(q.get(i, j));
        }
    }
    SkewParams::from_theta(b, theta)
}

fn check_skew<F: Scalar>(q: &DenseMatrix<F>) -> Result<(), OrthoError> {
    let n = q.rows();
    if q.cols() != n {
        return Err(OrthoError::NotSquare { rows: q.rows(), cols: q.cols() });
    }
    let tol = F::of(1e-12) * F::one().max(q.max_abs());
    let mut worst = F::zero();
    for i in 0..n {
        for j in i..n {
            let r = (q.get(i, j) + q.get(j, i)).abs();
            worst = worst.max(r);
        }
    }
    if worst > tol {
        return Err(OrthoError::NotSkew(worst.as_f64()));
    }
    Ok(())
}

/// Exact Cayley transform `(I + Q)(I - Q)^-1`. Test oracle; not on the
/// training path.
pub fn cayley_exact<F: Scalar>(q: &DenseMatrix<F>) -> Result<DenseMatrix<F>, OrthoError> {
    check_skew(q)?;
    let n = q.rows();
    let eye = DenseMatrix::identity(n);
    let plus = eye.add(q)?;
    let minus = eye.sub(q)?;
    // (I+Q) and (I-Q)^-1 commute, so solving (I-Q) R = (I+Q) gives the
    // same matrix as (I+Q)(I-Q)^-1.
    Ok(lu_solve(&minus, &plus)?)
}

/// Truncated Cayley-Neumann parameterization
/// `(I + Q)(I + sum_{i=1..k} Q^i)`. Approximation quality is the caller's
/// concern; see [`orth_error`].
pub fn cayley_neumann<F: Scalar>(q: &DenseMatrix<F>, order: NeumannOrder) -> DenseMatrix<F> {
    cayley_neumann_cached(q, order).r
}

/// Forward pass of the Neumann parameterization plus everything the
/// backward pass reuses (the powers of `Q` computed along the way).
#[derive(Debug, Clone)]
pub struct CnpCache<F> {
    /// The (approximately orthogonal) output matrix.
    pub r: DenseMatrix<F>,
    order: usize,
    /// `Q^0 .. Q^(k-1)`.
    q_pows: Vec<DenseMatrix<F>>,
    /// `sum_{i=0..k} Q^i`.
    series: DenseMatrix<F>,
}

pub fn cayley_neumann_cached<F: Scalar>(q: &DenseMatrix<F>, order: NeumannOrder) -> CnpCache<F> {
    let n = q.rows();
    assert_eq!(q.cols(), n, "skew matrix must be square");
    let k = order.get();
    let mut q_pows = Vec::with_capacity(k);
    q_pows.push(DenseMatrix::identity(n));
    let mut series = DenseMatrix::identity(n);
    let mut power = q.clone();
    for i in 1..=k {
        series = series.add(&power).expect("same shape");
        if i < k {
            q_pows.push(power.clone());
            power = power.matmul(q).expect("square");
        }
    }
    // R = (I + Q) * S = S + Q * S.
    let r = series.add(&q.matmul(&series).expect("square")).expect("same shape");
    CnpCache { r, order: k, q_pows, series }
}

/// Gradient of a scalar loss through the Neumann polynomial: given
/// `dL/dR`, returns the dense `dL/dQ`.
pub fn cnp_backward<F: Scalar>(
    q: &DenseMatrix<F>,
    cache: &CnpCache<F>,
    upstream: &DenseMatrix<F>,
) -> DenseMatrix<F> {
    let k = cache.order;
    // R = (I + Q) S with S = sum_{i=0..k} Q^i.
    // dL/dQ gets G * S^T from the (I + Q) factor...
    let mut dq = upstream.matmul(&cache.series.transpose()).expect("square");
    // ...and sum_{a+b<=k-1} (Q^T)^a H (Q^T)^b from the series, with
    // H = (I + Q)^T G.
    let h = {
        let qt_g = q.transpose().matmul(upstream).expect("square");
        upstream.add(&qt_g).expect("same shape")
    };
    let pows_t: Vec<DenseMatrix<F>> = cache.q_pows.iter().map(|p| p.transpose()).collect();
    // Suffix sums Z_t = sum_{b=0..t} (Q^T)^b.
    let mut z = Vec::with_capacity(k);
    let mut acc = pows_t[0].clone();
    z.push(acc.clone());
    for p in pows_t.iter().take(k).skip(1) {
        acc = acc.add(p).expect("same shape");
        z.push(acc.clone());
    }
    for a in 0..k {
        let term = pows_t[a].matmul(&h.matmul(&z[k - 1 - a]).expect("square")).expect("square");
        dq = dq.add(&term).expect("same shape");
    }
    dq
}

/// Project a dense `dL/dQ` onto the free parameters of the skew storage:
/// `dL/dtheta_(i,j) = dQ[i,j] - dQ[j,i]` for `i < j`.
pub fn skew_param_grad<F: Scalar>(dq: &DenseMatrix<F>) -> Vec<F> {
    let b = dq.rows();
    debug_assert_eq!(dq.cols(), b);
    let mut g = Vec::with_capacity(SkewParams::<F>::param_len(b));
    for i in 0..b {
        for j in i + 1..b {
            g.push(dq.get(i, j) - dq.get(j, i));
        }
    }
    g
}

/// Relative orthogonality error `||R R^T - I||_F / ||I||_F`.
pub fn orth_error<F: Scalar>(r: &DenseMatrix<F>) -> Result<F, OrthoError> {
    let n = r.rows();
    if r.cols() != n {
        return Err(OrthoError::NotSquare { rows: r.rows(), cols: r.cols() });
    }
    let gram = r.matmul(&r.transpose())?;
    let mut resid = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { F::one() } else { F::zero() };
            resid.set(i, j, gram.get(i, j) - target);
        }
    }
    Ok(frobenius_norm(&resid) / F::of(n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    type M = DenseMatrix<f64>;

    fn skew2(a: f64) -> M {
        M::from_rows(&[&[0.0, a], &[-a, 0.0]])
    }

    #[test]
    fn skew_materialize_basics() {
        let z = SkewParams::<f64>::zeros(4);
        assert_eq!(skew_materialize(&z), M::zeros(4, 4));

        let p = SkewParams::from_theta(2, vec![0.7]).unwrap();
        assert_eq!(skew_materialize(&p), skew2(0.7));
    }

    #[test]
    fn skew_round_trip_bit_exact() {
        let theta = vec![0.1, -2.5, 3.75, 1e-8, -0.0625, 9.0];
        let p = SkewParams::from_theta(4, theta.clone()).unwrap();
        let q = skew_materialize(&p);
        let back = extract_upper(&q).unwrap();
        assert_eq!(back.theta(), &theta[..]);
    }

    #[test]
    fn theta_length_checked() {
        assert!(SkewParams::from_theta(3, vec![1.0]).is_err());
    }

    #[test]
    fn cayley_zero_is_identity() {
        let r = cayley_exact(&M::zeros(3, 3)).unwrap();
        assert!((&r.sub(&M::identity(3)).unwrap()).max_abs() < 1e-15);
        let k = NeumannOrder::new(4).unwrap();
        let rn = cayley_neumann(&M::zeros(3, 3), k);
        assert_eq!(rn, M::identity(3));
    }

    #[test]
    fn cayley_2x2_closed_form() {
        // For Q = [[0, a], [-a, 0]]: rotation with cos = (1-a^2)/(1+a^2),
        // sin = 2a/(1+a^2). At a = 1 this is the quarter-turn [[0,1],[-1,0]].
        let r = cayley_exact(&skew2(1.0)).unwrap();
        let expect = M::from_rows(&[&[0.0, 1.0], &[-1.0, 0.0]]);
        assert!(r.sub(&expect).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn cayley_neumann_2x2_matches_series() {
        // Q^2 = -a^2 I collapses the series to a scalar geometric sum.
        let k = NeumannOrder::new(5).unwrap();
        let r = cayley_neumann(&skew2(0.1), k);
        assert!((r.get(0, 0) - 0.980199).abs() < 1e-6);
        assert!((r.get(0, 1) - 0.198020).abs() < 1e-6);
        let exact = cayley_exact(&skew2(0.1)).unwrap();
        assert!(r.sub(&exact).unwrap().max_abs() <= 2e-6);
    }

    #[test]
    fn cayley_rejects_non_skew() {
        let m = M::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert!(matches!(cayley_exact(&m), Err(OrthoError::NotSkew(_))));
    }

    #[test]
    fn orth_error_closed_form() {
        // 2 I_n: ||4I - I||_F / ||I||_F = 3.
        let r = M::identity(5).scale(2.0);
        let e = orth_error(&r).unwrap();
        assert!((e - 3.0).abs() < 1e-12);
        assert!(orth_error(&M::zeros(2, 3)).is_err());
    }
}
