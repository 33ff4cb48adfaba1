//! Stochastic primitive optimization.
//!
//! A large orthogonal factor is never stored densely. At any moment exactly
//! one cheap primitive per side is live:
//!
//! - fully stochastic (FS): one `b x b` re-orthogonalized block embedded in
//!   the identity on a randomly sampled index set;
//! - block stochastic (BS): a random permutation conjugating a block-diagonal
//!   of `m / b` small orthogonal blocks, so every coordinate moves each step.
//!
//! The product over many primitives is realized temporally: every merge cycle
//! folds the live primitive into the weight and resamples its support. The
//! constructive factorizer at the bottom shows the converse direction: any
//! rotation decomposes into such primitives with high probability.

use crate::linalg::{
    apply_permutation, determinant, frobenius_distance, DenseMatrix, LinalgError, PermutationSpec,
    Side,
};
use crate::ortho::{
    cayley_neumann_cached, cnp_backward, orth_error, skew_materialize, skew_param_grad, CnpCache,
    NeumannOrder, OrthoError, SkewParams,
};
use crate::rng::CounterRng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpoError {
    #[error("block size {b} out of range for ambient dimension {m}")]
    BadBlockSize { m: usize, b: usize },
    #[error("ambient dimension {m} is not divisible by block size {b}")]
    NotDivisible { m: usize, b: usize },
    #[error("index set is not strictly increasing within [0, {m})")]
    BadIndexSet { m: usize },
    #[error("primitive ambient dimension {expected} does not match operand dimension {got}")]
    AmbientMismatch { expected: usize, got: usize },
    #[error("factorization target must be orthogonal (e_orth = {0})")]
    TargetNotOrthogonal(f64),
    #[error("factorization target must have determinant +1, got {0}")]
    TargetNotRotation(f64),
    #[error(
        "primitive budget {budget} exhausted with {remaining} columns left \
         (subdiagonal mass {mass})"
    )]
    BudgetExhausted { budget: usize, remaining: usize, mass: f64 },
    #[error(transparent)]
    Ortho(#[from] OrthoError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Sorted, duplicate-free indices into `[0, m)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSet {
    m: usize,
    indices: Vec<usize>,
}

impl IndexSet {
    pub fn full(m: usize) -> Self {
        Self { m, indices: (0..m).collect() }
    }

    pub fn from_indices(m: usize, indices: Vec<usize>) -> Result<Self, SpoError> {
        if indices.len() > m {
            return Err(SpoError::BadBlockSize { m, b: indices.len() });
        }
        let strictly_increasing =
            indices.windows(2).all(|w| w[0] < w[1]) && indices.iter().all(|&i| i < m);
        if !strictly_increasing {
            return Err(SpoError::BadIndexSet { m });
        }
        Ok(Self { m, indices })
    }

    #[inline]
    pub fn ambient(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    #[inline]
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }
}

/// Uniform without-replacement sample of `b` indices from `[0, m)`, sorted.
pub fn sample_index_set(m: usize, b: usize, rng: &mut CounterRng) -> Result<IndexSet, SpoError> {
    if b == 0 || b > m {
        return Err(SpoError::BadBlockSize { m, b });
    }
    // Partial Fisher-Yates: the first b entries are a uniform sample.
    let mut pool: Vec<usize> = (0..m).collect();
    for i in 0..b {
        let j = i + rng.next_below(m - i);
        pool.swap(i, j);
    }
    let mut indices: Vec<usize> = pool[..b].to_vec();
    indices.sort_unstable();
    Ok(IndexSet { m, indices })
}

/// One live stochastic primitive: the learnable degrees of freedom for one
/// side of a reparameterized weight.
#[derive(Debug, Clone, PartialEq)]
pub enum PrimitiveSpec<F> {
    Fs {
        set: IndexSet,
        block: SkewParams<F>,
    },
    Bs {
        perm: PermutationSpec,
        blocks: Vec<SkewParams<F>>,
        block_size: usize,
    },
    /// Fixed identity side (zero trainable parameters).
    Identity { ambient: usize },
}

/// Backward-pass state captured by [`PrimitiveSpec::apply_cached`].
#[derive(Debug, Clone)]
pub enum PrimitiveCache<F> {
    Fs(CnpCache<F>),
    Bs(Vec<CnpCache<F>>),
    Identity,
}

impl<F: Scalar> PrimitiveSpec<F> {
    pub fn fs(set: IndexSet) -> Self {
        let b = set.len();
        Self::Fs { set, block: SkewParams::zeros(b) }
    }

    pub fn bs(perm: PermutationSpec, block_size: usize) -> Result<Self, SpoError> {
        let m = perm.len();
        if block_size == 0 || block_size > m {
            return Err(SpoError::BadBlockSize { m, b: block_size });
        }
        if m % block_size != 0 {
            return Err(SpoError::NotDivisible { m, b: block_size });
        }
        let blocks = (0..m / block_size).map(|_| SkewParams::zeros(block_size)).collect();
        Ok(Self::Bs { perm, blocks, block_size })
    }

    pub fn identity(ambient: usize) -> Self {
        Self::Identity { ambient }
    }

    pub fn ambient(&self) -> usize {
        match self {
            Self::Fs { set, .. } => set.ambient(),
            Self::Bs { perm, .. } => perm.len(),
            Self::Identity { ambient } => *ambient,
        }
    }

    /// Number of trainable parameters.
    pub fn param_count(&self) -> usize {
        match self {
            Self::Fs { block, .. } => block.theta().len(),
            Self::Bs { blocks, .. } => blocks.iter().map(|b| b.theta().len()).sum(),
            Self::Identity { .. } => 0,
        }
    }

    /// All theta vectors (one per block; FS has a single block).
    pub fn theta_blocks(&self) -> Vec<&[F]> {
        match self {
            Self::Fs { block, .. } => vec![block.theta()],
            Self::Bs { blocks, .. } => blocks.iter().map(|b| b.theta()).collect(),
            Self::Identity { .. } => Vec::new(),
        }
    }

    pub fn theta_blocks_mut(&mut self) -> Vec<&mut [F]> {
        match self {
            Self::Fs { block, .. } => vec![block.theta_mut()],
            Self::Bs { blocks, .. } => blocks.iter_mut().map(|b| b.theta_mut()).collect(),
            Self::Identity { .. } => Vec::new(),
        }
    }

    pub fn is_identity(&self) -> bool {
        match self {
            Self::Fs { block, .. } => block.is_zero(),
            Self::Bs { blocks, .. } => blocks.iter().all(|b| b.is_zero()),
            Self::Identity { .. } => true,
        }
    }

    /// Reset all theta to zero and resample the support (index set or
    /// permutation) from `rng`.
    pub fn reinitialize(&mut self, rng: &mut CounterRng) {
        match self {
            Self::Fs { set, block } => {
                let (m, b) = (set.ambient(), set.len());
                *set = sample_index_set(m, b, rng).expect("sizes validated at construction");
                block.reset();
            }
            Self::Bs { perm, blocks, .. } => {
                *perm = PermutationSpec::from_indices(rng.permutation(perm.len()))
                    .expect("Fisher-Yates output is a permutation");
                for b in blocks {
                    b.reset();
                }
            }
            Self::Identity { .. } => {}
        }
    }

    /// Apply the primitive orthogonal action to `w` without materializing the
    /// ambient matrix: `G * w` for `Side::Left`, `w * G` for `Side::Right`.
    /// With all theta zero the input is returned bit-exactly.
    pub fn apply(
        &self,
        k: NeumannOrder,
        w: &DenseMatrix<F>,
        side: Side,
    ) -> Result<DenseMatrix<F>, SpoError> {
        self.check_ambient(w, side)?;
        if self.is_identity() {
            return Ok(w.clone());
        }
        match self {
            Self::Fs { set, block } => {
                let g = cayley_neumann_cached(&skew_materialize(block), k).r;
                Ok(fs_apply_dense(set, &g, w, side))
            }
            Self::Bs { perm, blocks, .. } => {
                let gs: Vec<DenseMatrix<F>> = blocks
                    .iter()
                    .map(|b| cayley_neumann_cached(&skew_materialize(b), k).r)
                    .collect();
                Ok(bs_apply_dense(perm, &gs, w, side))
            }
            Self::Identity { .. } => unreachable!("identity handled above"),
        }
    }

    /// Like [`apply`](Self::apply) but also returns the per-block Neumann
    /// caches the backward pass needs. The output still short-circuits to a
    /// bit-exact copy at theta = 0; the caches are built regardless so
    /// gradients flow from the identity point.
    pub fn apply_cached(
        &self,
        k: NeumannOrder,
        w: &DenseMatrix<F>,
        side: Side,
    ) -> Result<(DenseMatrix<F>, PrimitiveCache<F>), SpoError> {
        self.check_ambient(w, side)?;
        match self {
            Self::Fs { set, block } => {
                let cache = cayley_neumann_cached(&skew_materialize(block), k);
                let out = if block.is_zero() {
                    w.clone()
                } else {
                    fs_apply_dense(set, &cache.r, w, side)
                };
                Ok((out, PrimitiveCache::Fs(cache)))
            }
            Self::Bs { perm, blocks, .. } => {
                let caches: Vec<CnpCache<F>> = blocks
                    .iter()
                    .map(|b| cayley_neumann_cached(&skew_materialize(b), k))
                    .collect();
                let out = if self.is_identity() {
                    w.clone()
                } else {
                    let gs: Vec<DenseMatrix<F>> = caches.iter().map(|c| c.r.clone()).collect();
                    bs_apply_dense(perm, &gs, w, side)
                };
                Ok((out, PrimitiveCache::Bs(caches)))
            }
            Self::Identity { .. } => Ok((w.clone(), PrimitiveCache::Identity)),
        }
    }

    /// Apply the transpose of the primitive action; used by the backward
    /// pass, with the dense blocks taken from the forward cache.
    pub fn apply_transposed(
        &self,
        cache: &PrimitiveCache<F>,
        w: &DenseMatrix<F>,
        side: Side,
    ) -> Result<DenseMatrix<F>, SpoError> {
        self.check_ambient(w, side)?;
        match (self, cache) {
            (Self::Fs { set, .. }, PrimitiveCache::Fs(c)) => {
                Ok(fs_apply_dense(set, &c.r.transpose(), w, side))
            }
            (Self::Bs { perm, .. }, PrimitiveCache::Bs(cs)) => {
                let gs: Vec<DenseMatrix<F>> = cs.iter().map(|c| c.r.transpose()).collect();
                Ok(bs_apply_dense(perm, &gs, w, side))
            }
            (Self::Identity { .. }, _) => Ok(w.clone()),
            _ => panic!("cache does not match primitive variant"),
        }
    }

    /// Gradient of the loss with respect to this primitive's theta blocks,
    /// given the upstream gradient `u = dL/d(out)` and the input `w` of the
    /// forward application.
    pub fn theta_grads(
        &self,
        cache: &PrimitiveCache<F>,
        w: &DenseMatrix<F>,
        upstream: &DenseMatrix<F>,
        side: Side,
    ) -> Vec<Vec<F>> {
        match (self, cache) {
            (Self::Fs { set, block }, PrimitiveCache::Fs(c)) => {
                // out rows/cols on the set are G~ * sub (left) or sub * G~
                // (right); dG~ contracts upstream and input on the set.
                let dg = match side {
                    Side::Left => {
                        let u_s = gather_rows(upstream, set.indices());
                        let w_s = gather_rows(w, set.indices());
                        u_s.matmul(&w_s.transpose()).expect("b x b")
                    }
                    Side::Right => {
                        let u_s = gather_cols(upstream, set.indices());
                        let w_s = gather_cols(w, set.indices());
                        w_s.transpose().matmul(&u_s).expect("b x b")
                    }
                };
                let q = skew_materialize(block);
                vec![skew_param_grad(&cnp_backward(&q, c, &dg))]
            }
            (Self::Bs { perm, blocks, block_size }, PrimitiveCache::Bs(cs)) => {
                let b = *block_size;
                let (u_p, w_p) = match side {
                    Side::Left => (
                        apply_permutation(perm, upstream, Side::Left).expect("checked"),
                        apply_permutation(perm, w, Side::Left).expect("checked"),
                    ),
                    Side::Right => (
                        apply_permutation(perm, upstream, Side::Right).expect("checked"),
                        apply_permutation(perm, w, Side::Right).expect("checked"),
                    ),
                };
                blocks
                    .iter()
                    .enumerate()
                    .map(|(j, blk)| {
                        let range: Vec<usize> = (j * b..(j + 1) * b).collect();
                        let dg = match side {
                            Side::Left => {
                                let u_s = gather_rows(&u_p, &range);
                                let w_s = gather_rows(&w_p, &range);
                                u_s.matmul(&w_s.transpose()).expect("b x b")
                            }
                            Side::Right => {
                                let u_s = gather_cols(&u_p, &range);
                                let w_s = gather_cols(&w_p, &range);
                                w_s.transpose().matmul(&u_s).expect("b x b")
                            }
                        };
                        let q = skew_materialize(blk);
                        skew_param_grad(&cnp_backward(&q, &cs[j], &dg))
                    })
                    .collect()
            }
            (Self::Identity { .. }, _) => Vec::new(),
            _ => panic!("cache does not match primitive variant"),
        }
    }

    /// Materialize the full ambient orthogonal matrix. Test/oracle route
    /// only; the training path never calls this.
    pub fn materialize(&self, k: NeumannOrder) -> DenseMatrix<F> {
        let m = self.ambient();
        let eye = DenseMatrix::identity(m);
        self.apply(k, &eye, Side::Left).expect("ambient matches")
    }

    /// Orthogonality error of the primitive action, computed blockwise
    /// (equal to `orth_error` of the materialized matrix).
    pub fn orth_error(&self, k: NeumannOrder) -> F {
        let m = self.ambient();
        let norm = F::of(m as f64).sqrt();
        match self {
            Self::Identity { .. } => F::zero(),
            Self::Fs { set: _, block } => {
                let g = cayley_neumann_cached(&skew_materialize(block), k).r;
                let b = g.rows();
                // Off-identity residual lives only on the sampled block.
                let e_block = orth_error(&g).expect("square") * F::of(b as f64).sqrt();
                e_block / norm
            }
            Self::Bs { blocks, .. } => {
                let mut sum_sq = F::zero();
                for blk in blocks {
                    let g = cayley_neumann_cached(&skew_materialize(blk), k).r;
                    let e = orth_error(&g).expect("square") * F::of(g.rows() as f64).sqrt();
                    sum_sq = sum_sq + e * e;
                }
                sum_sq.sqrt() / norm
            }
        }
    }

    fn check_ambient(&self, w: &DenseMatrix<F>, side: Side) -> Result<(), SpoError> {
        let got = match side {
            Side::Left => w.rows(),
            Side::Right => w.cols(),
        };
        if got != self.ambient() {
            return Err(SpoError::AmbientMismatch { expected: self.ambient(), got });
        }
        Ok(())
    }
}

pub(crate) fn gather_rows<F: Scalar>(a: &DenseMatrix<F>, idx: &[usize]) -> DenseMatrix<F> {
    let mut out = DenseMatrix::zeros(idx.len(), a.cols());
    for (r, &src) in idx.iter().enumerate() {
        out.row_mut(r).copy_from_slice(a.row(src));
    }
    out
}

pub(crate) fn gather_cols<F: Scalar>(a: &DenseMatrix<F>, idx: &[usize]) -> DenseMatrix<F> {
    let mut out = DenseMatrix::zeros(a.rows(), idx.len());
    for i in 0..a.rows() {
        for (c, &src) in idx.iter().enumerate() {
            out.set(i, c, a.get(i, src));
        }
    }
    out
}

/// `(I + D(S)(G - I)D(S)^T) * w` for `Side::Left` (or the mirrored right
/// action): rows (columns) outside the set are copied bit-exactly.
pub fn fs_apply_dense<F: Scalar>(
    set: &IndexSet,
    g: &DenseMatrix<F>,
    w: &DenseMatrix<F>,
    side: Side,
) -> DenseMatrix<F> {
    let mut out = w.clone();
    match side {
        Side::Left => {
            let sub = gather_rows(w, set.indices());
            let rotated = g.matmul(&sub).expect("block ambient");
            for (r, &dst) in set.indices().iter().enumerate() {
                out.row_mut(dst).copy_from_slice(rotated.row(r));
            }
        }
        Side::Right => {
            let sub = gather_cols(w, set.indices());
            let rotated = sub.matmul(g).expect("block ambient");
            for i in 0..w.rows() {
                for (c, &dst) in set.indices().iter().enumerate() {
                    out.set(i, dst, rotated.get(i, c));
                }
            }
        }
    }
    out
}

/// `Psi^T Diag(G_1..G_{m/b}) Psi * w` for `Side::Left` (mirrored for
/// `Side::Right`): permute, act blockwise, un-permute.
pub fn bs_apply_dense<F: Scalar>(
    perm: &PermutationSpec,
    blocks: &[DenseMatrix<F>],
    w: &DenseMatrix<F>,
    side: Side,
) -> DenseMatrix<F> {
    let b = blocks.first().map(|g| g.rows()).unwrap_or(0);
    let inv = perm.inverse();
    match side {
        Side::Left => {
            let mut p = apply_permutation(perm, w, Side::Left).expect("length checked");
            for (j, g) in blocks.iter().enumerate() {
                let range: Vec<usize> = (j * b..(j + 1) * b).collect();
                let sub = gather_rows(&p, &range);
                let rotated = g.matmul(&sub).expect("block size");
                for (r, &dst) in range.iter().enumerate() {
                    p.row_mut(dst).copy_from_slice(rotated.row(r));
                }
            }
            apply_permutation(&inv, &p, Side::Left).expect("length checked")
        }
        Side::Right => {
            let mut p = apply_permutation(perm, w, Side::Right).expect("length checked");
            for (j, g) in blocks.iter().enumerate() {
                let range: Vec<usize> = (j * b..(j + 1) * b).collect();
                let sub = gather_cols(&p, &range);
                let rotated = sub.matmul(g).expect("block size");
                for i in 0..p.rows() {
                    for (c, &dst) in range.iter().enumerate() {
                        p.set(i, dst, rotated.get(i, c));
                    }
                }
            }
            apply_permutation(&inv, &p, Side::Right).expect("length checked")
        }
    }
}

/// An FS primitive whose block is stored as an explicit orthogonal matrix;
/// produced by [`factorize_target`].
#[derive(Debug, Clone)]
pub struct DenseFsPrimitive<F> {
    pub set: IndexSet,
    pub block: DenseMatrix<F>,
}

impl<F: Scalar> DenseFsPrimitive<F> {
    /// `G * a`.
    pub fn apply_left(&self, a: &DenseMatrix<F>) -> DenseMatrix<F> {
        fs_apply_dense(&self.set, &self.block, a, Side::Left)
    }
}

/// Result of a constructive factorization.
#[derive(Debug, Clone)]
pub struct Factorization<F> {
    /// Stored primitives; the left-fold `G_n * ... * G_1` reconstructs the
    /// target.
    pub primitives: Vec<DenseFsPrimitive<F>>,
    /// Index sets sampled in total, including ones that contributed nothing
    /// (the budget counts these too).
    pub sampled: usize,
    /// `||G_n ... G_1 - R||_F` of the explicit reconstruction.
    pub residual: f64,
}

const FACTORIZE_ZERO_TOL: f64 = 1e-10;

/// Express an orthogonal `r_target` (determinant +1) as a product of FS
/// primitives by zeroing the subdiagonal of `R^T` column after column within
/// randomly sampled index sets. The primitive budget is
/// `ceil(alpha * m * ln(m) * (m/b)^2)`.
pub fn factorize_target<F: Scalar>(
    r_target: &DenseMatrix<F>,
    b: usize,
    alpha: f64,
    rng: &mut CounterRng,
) -> Result<Factorization<F>, SpoError> {
    let m = r_target.rows();
    if r_target.cols() != m {
        return Err(SpoError::Linalg(LinalgError::NotSquare {
            rows: r_target.rows(),
            cols: r_target.cols(),
        }));
    }
    if b < 2 || b > m {
        return Err(SpoError::BadBlockSize { m, b });
    }
    let e = orth_error(r_target)?.as_f64();
    if e > 1e-8 {
        return Err(SpoError::TargetNotOrthogonal(e));
    }
    let det = determinant(r_target)?.as_f64();
    if det < 0.0 {
        return Err(SpoError::TargetNotRotation(det));
    }

    if b == m {
        // One full-size block: the target itself.
        return Ok(Factorization {
            primitives: vec![DenseFsPrimitive {
                set: IndexSet::full(m),
                block: r_target.clone(),
            }],
            sampled: 1,
            residual: 0.0,
        });
    }

    let budget =
        (alpha * m as f64 * (m as f64).ln() * (m as f64 / b as f64).powi(2)).ceil() as usize;
    let ztol = F::of(FACTORIZE_ZERO_TOL);

    // Work on A = R^T; zeroing its strict subdiagonal with det +1 primitives
    // drives A to the identity, and the applied product then equals R.
    let mut a = r_target.transpose();
    let mut primitives: Vec<DenseFsPrimitive<F>> = Vec::new();
    let mut sampled = 0usize;

    for col in 0..m {
        loop {
            if column_reduced(&a, col, ztol) {
                break;
            }
            if sampled >= budget {
                let (remaining, mass) = subdiagonal_mass(&a, col);
                return Err(SpoError::BudgetExhausted { budget, remaining, mass });
            }
            sampled += 1;
            let set = sample_index_set(m, b, rng)?;
            if !set.contains(col) {
                continue;
            }
            if let Some(g) = alignment_block(&a, col, &set, ztol) {
                let prim = DenseFsPrimitive { set, block: g };
                a = prim.apply_left(&a);
                primitives.push(prim);
            }
        }
    }

    // Explicit reconstruction for the reported residual.
    let mut product = DenseMatrix::identity(m);
    for p in &primitives {
        product = p.apply_left(&product);
    }
    let residual = frobenius_distance(&product, r_target).as_f64();
    Ok(Factorization { primitives, sampled, residual })
}

fn column_reduced<F: Scalar>(a: &DenseMatrix<F>, col: usize, ztol: F) -> bool {
    for r in col + 1..a.rows() {
        if a.get(r, col).abs() > ztol {
            return false;
        }
    }
    a.get(col, col) >= -ztol
}

fn subdiagonal_mass<F: Scalar>(a: &DenseMatrix<F>, from_col: usize) -> (usize, f64) {
    let m = a.rows();
    let mut mass = 0.0;
    for c in from_col..m {
        for r in c + 1..m {
            mass += a.get(r, c).as_f64().powi(2);
        }
    }
    (m - from_col, mass.sqrt())
}

/// Build the det +1 block that aligns the in-set tail of column `col` with
/// the basis direction of `col`, fixing coordinates below `col`. Returns
/// `None` when the set cannot make progress (tail already aligned, or a
/// one-dimensional tail).
fn alignment_block<F: Scalar>(
    a: &DenseMatrix<F>,
    col: usize,
    set: &IndexSet,
    ztol: F,
) -> Option<DenseMatrix<F>> {
    let idx = set.indices();
    let b = idx.len();
    let head = idx.iter().take_while(|&&s| s < col).count();
    let tail = b - head;
    debug_assert!(idx[head] == col, "col must be the first tail element");
    if tail < 2 {
        return None;
    }
    let u: Vec<F> = idx[head..].iter().map(|&s| a.get(s, col)).collect();
    let off_mass = u.iter().skip(1).fold(F::zero(), |acc, &x| acc.max(x.abs()));
    if off_mass <= ztol && u[0] >= -ztol {
        return None;
    }
    let norm = u.iter().fold(F::zero(), |acc, &x| acc + x * x).sqrt();
    if norm <= ztol {
        return None;
    }

    // Householder reflection sending u to +/-||u|| e_1 (sign chosen against
    // cancellation), then one row flip to restore det +1.
    let positive_pivot = u[0] > F::zero();
    let mut v = u.clone();
    if positive_pivot {
        v[0] = v[0] + norm;
    } else {
        v[0] = v[0] - norm;
    }
    let v_norm2 = v.iter().fold(F::zero(), |acc, &x| acc + x * x);
    let mut q = DenseMatrix::identity(tail);
    if v_norm2 > F::zero() {
        let scale = F::of(2.0) / v_norm2;
        for i in 0..tail {
            for j in 0..tail {
                let val = q.get(i, j) - scale * v[i] * v[j];
                q.set(i, j, val);
            }
        }
    }
    // positive pivot: H u = -||u|| e_1, flip row 0; otherwise H u = +||u|| e_1,
    // flip the last row (never touching the e_1 image).
    let flip_row = if positive_pivot { 0 } else { tail - 1 };
    for j in 0..tail {
        let val: F = q.get(flip_row, j);
        q.set(flip_row, j, -val);
    }

    let mut g = DenseMatrix::identity(b);
    for i in 0..tail {
        for j in 0..tail {
            g.set(head + i, head + j, q.get(i, j));
        }
    }
    Some(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngKey;

    type M = DenseMatrix<f64>;

    fn k5() -> NeumannOrder {
        NeumannOrder::new(5).unwrap()
    }

    #[test]
    fn sample_index_set_bounds() {
        let mut rng = RngKey::from_seed(1).stream();
        assert!(sample_index_set(4, 0, &mut rng).is_err());
        assert!(sample_index_set(4, 5, &mut rng).is_err());
        let full = sample_index_set(4, 4, &mut rng).unwrap();
        assert_eq!(full.indices(), &[0, 1, 2, 3]);
    }

    #[test]
    fn sample_index_set_deterministic() {
        let a = sample_index_set(100, 7, &mut RngKey::from_seed(9).stream()).unwrap();
        let b = sample_index_set(100, 7, &mut RngKey::from_seed(9).stream()).unwrap();
        assert_eq!(a, b);
        let singleton = sample_index_set(4, 1, &mut RngKey::from_seed(5).stream()).unwrap();
        assert_eq!(singleton.len(), 1);
    }

    #[test]
    fn fs_zero_theta_is_bit_exact_identity() {
        let mut rng = RngKey::from_seed(2).stream();
        let set = sample_index_set(6, 3, &mut rng).unwrap();
        let prim = PrimitiveSpec::<f64>::fs(set);
        let w = M::from_rows(&[
            &[1.0, -2.0, 3.0],
            &[0.5, 0.25, -0.125],
            &[9.0, 8.0, 7.0],
            &[-1.0, -2.0, -3.0],
            &[0.1, 0.2, 0.3],
            &[5.0, 6.0, 7.0],
        ]);
        let out = prim.apply(k5(), &w, Side::Left).unwrap();
        assert_eq!(out, w);
    }

    #[test]
    fn bs_zero_theta_is_bit_exact_identity() {
        let mut rng = RngKey::from_seed(3).stream();
        let perm = PermutationSpec::from_indices(rng.permutation(4)).unwrap();
        let prim = PrimitiveSpec::<f64>::bs(perm, 2).unwrap();
        let w = M::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0], &[7.0, 8.0]]);
        assert_eq!(prim.apply(k5(), &w, Side::Left).unwrap(), w);
    }

    #[test]
    fn bs_requires_divisibility() {
        let perm = PermutationSpec::identity(6);
        assert!(matches!(
            PrimitiveSpec::<f64>::bs(perm, 4),
            Err(SpoError::NotDivisible { m: 6, b: 4 })
        ));
    }

    #[test]
    fn bs_identity_perm_decouples_blocks() {
        let perm = PermutationSpec::identity(4);
        let mut prim = PrimitiveSpec::<f64>::bs(perm, 2).unwrap();
        if let PrimitiveSpec::Bs { blocks, .. } = &mut prim {
            blocks[0].theta_mut()[0] = 0.3;
            blocks[1].theta_mut()[0] = -0.7;
        }
        let w = M::identity(4);
        let out = prim.apply(k5(), &w, Side::Left).unwrap();
        // Independent small rotations on rows {0,1} and {2,3}.
        for (r, c) in [(0, 2), (0, 3), (1, 2), (1, 3)] {
            assert_eq!(out.get(r, c), 0.0);
            assert_eq!(out.get(c, r), 0.0);
        }
    }

    #[test]
    fn ambient_mismatch_is_reported() {
        let set = IndexSet::from_indices(5, vec![0, 2]).unwrap();
        let prim = PrimitiveSpec::<f64>::fs(set);
        let w = M::zeros(4, 3);
        assert!(matches!(
            prim.apply(k5(), &w, Side::Left),
            Err(SpoError::AmbientMismatch { expected: 5, got: 4 })
        ));
    }

    #[test]
    fn factorize_identity_is_immediate() {
        let mut rng = RngKey::from_seed(4).stream();
        let f = factorize_target(&M::identity(8), 3, 4.0, &mut rng).unwrap();
        assert!(f.primitives.is_empty());
        assert!(f.residual < 1e-12);
    }

    #[test]
    fn factorize_full_block_is_target() {
        let mut rng = RngKey::from_seed(4).stream();
        let r = M::from_rows(&[&[0.0, 1.0], &[-1.0, 0.0]]);
        let f = factorize_target(&r, 2, 4.0, &mut rng).unwrap();
        assert_eq!(f.primitives.len(), 1);
        assert!(f.residual < 1e-12);
    }

    #[test]
    fn factorize_rejects_non_orthogonal() {
        let mut rng = RngKey::from_seed(4).stream();
        let bad = M::identity(4).scale(2.0);
        assert!(matches!(
            factorize_target(&bad, 2, 4.0, &mut rng),
            Err(SpoError::TargetNotOrthogonal(_))
        ));
    }

    #[test]
    fn factorize_rejects_reflections() {
        let mut rng = RngKey::from_seed(4).stream();
        let mut refl = M::identity(4);
        refl.set(0, 0, -1.0);
        assert!(matches!(
            factorize_target(&refl, 2, 4.0, &mut rng),
            Err(SpoError::TargetNotRotation(_))
        ));
    }

    #[test]
    fn factorize_small_budget_fails_gracefully() {
        use crate::ortho::cayley_exact;
        let mut gen = RngKey::from_seed(77).child_named("target").stream();
        let mut q = M::zeros(8, 8);
        for i in 0..8 {
            for j in i + 1..8 {
                let v = gen.next_gaussian() * 0.5;
                q.set(i, j, v);
                q.set(j, i, -v);
            }
        }
        let r = cayley_exact(&q).unwrap();
        let mut rng = RngKey::from_seed(5).stream();
        match factorize_target(&r, 2, 0.1, &mut rng) {
            Err(SpoError::BudgetExhausted { mass, .. }) => assert!(mass > 0.0),
            other => panic!("expected budget exhaustion, got {other:?}"),
        }
    }
}
