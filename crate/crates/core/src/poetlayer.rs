//! The reparameterized linear layer.
//!
//! A layer owns a frozen weight `w` (m x n) and one live primitive per side;
//! the effective weight is `R w P`, computed as two side-applications (the
//! ambient orthogonal matrices are never materialized on the training path).
//! Folding the primitives into `w` and resampling their supports is a
//! representation change only: forwards immediately before and after a merge
//! agree.

use crate::linalg::{DenseMatrix, Side};
use crate::ortho::NeumannOrder;
use crate::rng::RngKey;
use crate::scalar::Scalar;
use crate::spo::{sample_index_set, PrimitiveCache, PrimitiveSpec, SpoError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LayerError {
    #[error("input has {got} columns but the layer expects {expected}")]
    InputWidth { expected: usize, got: usize },
    #[error("upstream gradient shape {got_rows}x{got_cols} does not match output {rows}x{cols}")]
    UpstreamShape { rows: usize, cols: usize, got_rows: usize, got_cols: usize },
    #[error(transparent)]
    Spo(#[from] SpoError),
}

/// Trainable-parameter and float-memory accounting for one weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub trainable: usize,
    /// Stored floats including the two optimizer moments per trainable
    /// parameter: `m*n + 3 * trainable`.
    pub memory_units: usize,
}

/// Block-size description used by the parameter-count formulas.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariantDims {
    Fs { b_r: usize, b_p: usize },
    Bs { b: usize },
}

fn skew_params(b: usize) -> usize {
    b * b.saturating_sub(1) / 2
}

/// Closed-form parameter counts for one `m x n` weight.
pub fn count_params(variant: VariantDims, m: usize, n: usize) -> Result<ParamCount, SpoError> {
    let trainable = match variant {
        VariantDims::Fs { b_r, b_p } => {
            if b_r > m {
                return Err(SpoError::BadBlockSize { m, b: b_r });
            }
            if b_p > n {
                return Err(SpoError::BadBlockSize { m: n, b: b_p });
            }
            skew_params(b_r) + skew_params(b_p)
        }
        VariantDims::Bs { b } => {
            if b == 0 || b > m.min(n) {
                return Err(SpoError::BadBlockSize { m: m.min(n), b });
            }
            if m % b != 0 {
                return Err(SpoError::NotDivisible { m, b });
            }
            if n % b != 0 {
                return Err(SpoError::NotDivisible { m: n, b });
            }
            // (m/b + n/b) blocks of b(b-1)/2 each = (m+n)(b-1)/2.
            (m / b) * skew_params(b) + (n / b) * skew_params(b)
        }
    };
    Ok(ParamCount { trainable, memory_units: m * n + 3 * trainable })
}

/// FS block sizes for a fractional budget: `floor(m * fraction)` for the
/// left factor and `floor(n * fraction)` for the right.
pub fn fs_block_sizes(m: usize, n: usize, fraction: f64) -> (usize, usize) {
    let clamp = |x: f64, hi: usize| -> usize { (x.floor().max(0.0) as usize).min(hi) };
    (clamp(m as f64 * fraction, m), clamp(n as f64 * fraction, n))
}

/// Gradients of one layer application.
#[derive(Debug, Clone)]
pub struct LayerGrads<F> {
    /// Per-block theta gradients for the left primitive.
    pub r_theta: Vec<Vec<F>>,
    /// Per-block theta gradients for the right primitive.
    pub p_theta: Vec<Vec<F>>,
    /// Gradient with respect to the layer input.
    pub input: DenseMatrix<F>,
}

/// Forward-pass state reused by the backward pass (intermediate weights and
/// the per-block Neumann caches).
#[derive(Debug, Clone)]
pub struct LayerCache<F> {
    w1: DenseMatrix<F>,
    w_eff: DenseMatrix<F>,
    r_cache: PrimitiveCache<F>,
    p_cache: PrimitiveCache<F>,
}

impl<F: Scalar> LayerCache<F> {
    pub fn effective_weight(&self) -> &DenseMatrix<F> {
        &self.w_eff
    }
}

#[derive(Debug, Clone)]
pub struct PoetLayer<F> {
    name: String,
    w: DenseMatrix<F>,
    r_prim: PrimitiveSpec<F>,
    p_prim: PrimitiveSpec<F>,
    k: NeumannOrder,
    support_key: RngKey,
    merge_count: u64,
    steps_since_merge: usize,
}

impl<F: Scalar> PoetLayer<F> {
    /// Fully stochastic layer; a zero block size fixes that side at the
    /// identity (the orthogonal-training special cases).
    pub fn new_fs(
        name: impl Into<String>,
        w: DenseMatrix<F>,
        b_r: usize,
        b_p: usize,
        k: NeumannOrder,
        support_key: RngKey,
    ) -> Result<Self, LayerError> {
        let (m, n) = w.shape();
        let cycle = support_key.child(0);
        let r_prim = if b_r == 0 {
            PrimitiveSpec::identity(m)
        } else {
            PrimitiveSpec::fs(sample_index_set(m, b_r, &mut cycle.child(0).stream())?)
        };
        let p_prim = if b_p == 0 {
            PrimitiveSpec::identity(n)
        } else {
            PrimitiveSpec::fs(sample_index_set(n, b_p, &mut cycle.child(1).stream())?)
        };
        Ok(Self {
            name: name.into(),
            w,
            r_prim,
            p_prim,
            k,
            support_key,
            merge_count: 0,
            steps_since_merge: 0,
        })
    }

    /// Block-stochastic layer; `b` must divide both dimensions.
    pub fn new_bs(
        name: impl Into<String>,
        w: DenseMatrix<F>,
        b: usize,
        k: NeumannOrder,
        support_key: RngKey,
    ) -> Result<Self, LayerError> {
        let (m, n) = w.shape();
        let cycle = support_key.child(0);
        let perm_r = crate::linalg::PermutationSpec::from_indices(
            cycle.child(0).stream().permutation(m),
        )
        .expect("permutation");
        let perm_p = crate::linalg::PermutationSpec::from_indices(
            cycle.child(1).stream().permutation(n),
        )
        .expect("permutation");
        Ok(Self {
            name: name.into(),
            w,
            r_prim: PrimitiveSpec::bs(perm_r, b)?,
            p_prim: PrimitiveSpec::bs(perm_p, b)?,
            k,
            support_key,
            merge_count: 0,
            steps_since_merge: 0,
        })
    }

    /// Both sides fixed at the identity: the frozen-weight baseline.
    pub fn new_frozen(
        name: impl Into<String>,
        w: DenseMatrix<F>,
        k: NeumannOrder,
        support_key: RngKey,
    ) -> Self {
        let (m, n) = w.shape();
        Self {
            name: name.into(),
            r_prim: PrimitiveSpec::identity(m),
            p_prim: PrimitiveSpec::identity(n),
            w,
            k,
            support_key,
            merge_count: 0,
            steps_since_merge: 0,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> (usize, usize) {
        self.w.shape()
    }

    pub fn neumann_order(&self) -> NeumannOrder {
        self.k
    }

    pub fn base_weight(&self) -> &DenseMatrix<F> {
        &self.w
    }

    pub fn r_prim(&self) -> &PrimitiveSpec<F> {
        &self.r_prim
    }

    pub fn p_prim(&self) -> &PrimitiveSpec<F> {
        &self.p_prim
    }

    pub fn r_prim_mut(&mut self) -> &mut PrimitiveSpec<F> {
        &mut self.r_prim
    }

    pub fn p_prim_mut(&mut self) -> &mut PrimitiveSpec<F> {
        &mut self.p_prim
    }

    pub fn steps_since_merge(&self) -> usize {
        self.steps_since_merge
    }

    pub fn note_step(&mut self) {
        self.steps_since_merge += 1;
    }

    pub fn param_count(&self) -> usize {
        self.r_prim.param_count() + self.p_prim.param_count()
    }

    /// The dense effective weight `R w P` at the current parameters.
    /// Bit-exactly `w` when all theta are zero.
    pub fn merged_weight(&self) -> DenseMatrix<F> {
        let w1 = self.r_prim.apply(self.k, &self.w, Side::Left).expect("ambient m");
        self.p_prim.apply(self.k, &w1, Side::Right).expect("ambient n")
    }

    /// `y = x (R w P)` for a `batch x m` input.
    pub fn forward(&self, x: &DenseMatrix<F>) -> Result<DenseMatrix<F>, LayerError> {
        self.check_input(x)?;
        Ok(x.matmul(&self.merged_weight()).expect("width checked"))
    }

    /// Forward pass that also captures the state the backward pass reuses.
    pub fn forward_cached(
        &self,
        x: &DenseMatrix<F>,
    ) -> Result<(DenseMatrix<F>, LayerCache<F>), LayerError> {
        self.check_input(x)?;
        let (w1, r_cache) = self.r_prim.apply_cached(self.k, &self.w, Side::Left)?;
        let (w_eff, p_cache) = self.p_prim.apply_cached(self.k, &w1, Side::Right)?;
        let y = x.matmul(&w_eff).expect("width checked");
        Ok((y, LayerCache { w1, w_eff, r_cache, p_cache }))
    }

    /// Exact gradients of the loss with respect to every theta entry and the
    /// layer input, given `upstream = dL/dy`.
    pub fn backward(
        &self,
        x: &DenseMatrix<F>,
        upstream: &DenseMatrix<F>,
        cache: &LayerCache<F>,
    ) -> Result<LayerGrads<F>, LayerError> {
        self.check_input(x)?;
        let (_, n) = self.w.shape();
        if upstream.rows() != x.rows() || upstream.cols() != n {
            return Err(LayerError::UpstreamShape {
                rows: x.rows(),
                cols: n,
                got_rows: upstream.rows(),
                got_cols: upstream.cols(),
            });
        }
        // dL/dW_eff = x^T g.
        let dw_eff = x.transpose().matmul(upstream).expect("shapes");
        // Right factor sees W_eff = W1 * G_P.
        let p_theta = self.p_prim.theta_grads(&cache.p_cache, &cache.w1, &dw_eff, Side::Right);
        // dL/dW1 = dW_eff * G_P^T.
        let dw1 = self.p_prim.apply_transposed(&cache.p_cache, &dw_eff, Side::Right)?;
        // Left factor sees W1 = G_R * w.
        let r_theta = self.r_prim.theta_grads(&cache.r_cache, &self.w, &dw1, Side::Left);
        // dL/dx = g W_eff^T.
        let input = upstream.matmul(&cache.w_eff.transpose()).expect("shapes");
        Ok(LayerGrads { r_theta, p_theta, input })
    }

    /// Fold the live primitives into the weight (`w <- R w P` along the same
    /// Neumann path the forward uses), reset all theta to zero, and resample
    /// supports from the layer's stream.
    pub fn merge_reinit(&mut self) {
        self.w = self.merged_weight();
        self.merge_count += 1;
        let cycle = self.support_key.child(self.merge_count);
        self.r_prim.reinitialize(&mut cycle.child(0).stream());
        self.p_prim.reinitialize(&mut cycle.child(1).stream());
        self.steps_since_merge = 0;
    }

    /// Apply the left orthogonal factor to a length-`m` vector (for probing).
    pub fn apply_r_to_vector(&self, v: &[F]) -> Vec<F> {
        let m = self.w.rows();
        assert_eq!(v.len(), m, "probe vector length");
        let col = DenseMatrix::from_vec(m, 1, v.to_vec()).expect("length checked");
        self.r_prim.apply(self.k, &col, Side::Left).expect("ambient m").into_data()
    }

    fn check_input(&self, x: &DenseMatrix<F>) -> Result<(), LayerError> {
        if x.cols() != self.w.rows() {
            return Err(LayerError::InputWidth { expected: self.w.rows(), got: x.cols() });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngKey;

    type M = DenseMatrix<f64>;

    fn k5() -> NeumannOrder {
        NeumannOrder::new(5).unwrap()
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> M {
        let mut s = RngKey::from_seed(seed).stream();
        let mut m = M::zeros(rows, cols);
        for v in m.data_mut() {
            *v = s.next_gaussian();
        }
        m
    }

    #[test]
    fn fresh_layer_forward_is_plain_linear() {
        let w = random_matrix(8, 6, 1);
        let layer = PoetLayer::new_fs("t", w.clone(), 4, 3, k5(), RngKey::from_seed(2)).unwrap();
        let x = random_matrix(5, 8, 3);
        let y = layer.forward(&x).unwrap();
        assert_eq!(y, x.matmul(&w).unwrap());
        assert_eq!(layer.merged_weight(), w);
    }

    #[test]
    fn merge_with_zero_theta_is_noop() {
        let w = random_matrix(6, 6, 4);
        let mut layer = PoetLayer::new_fs("t", w.clone(), 3, 3, k5(), RngKey::from_seed(5)).unwrap();
        for _ in 0..3 {
            layer.merge_reinit();
        }
        assert_eq!(*layer.base_weight(), w);
    }

    #[test]
    fn merge_preserves_forward_function() {
        let w = random_matrix(8, 4, 6);
        let mut layer = PoetLayer::new_fs("t", w, 4, 2, k5(), RngKey::from_seed(7)).unwrap();
        for blk in layer.r_prim_mut().theta_blocks_mut() {
            for (i, t) in blk.iter_mut().enumerate() {
                *t = 0.02 * (i as f64 + 1.0);
            }
        }
        for blk in layer.p_prim_mut().theta_blocks_mut() {
            for t in blk.iter_mut() {
                *t = -0.03;
            }
        }
        let x = random_matrix(3, 8, 8);
        let before = layer.forward(&x).unwrap();
        layer.merge_reinit();
        let after = layer.forward(&x).unwrap();
        let diff = before.sub(&after).unwrap().max_abs();
        assert!(diff <= 1e-12, "merge changed the function by {diff}");
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let w = random_matrix(8, 6, 9);
        let layer = PoetLayer::new_fs("t", w, 4, 3, k5(), RngKey::from_seed(10)).unwrap();
        let x = random_matrix(2, 8, 11);
        let (y, cache) = layer.forward_cached(&x).unwrap();
        let g = M::zeros(y.rows(), y.cols());
        let grads = layer.backward(&x, &g, &cache).unwrap();
        for blk in &grads.r_theta {
            assert!(blk.iter().all(|&v| v == 0.0));
        }
        for blk in &grads.p_theta {
            assert!(blk.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn count_params_formulas() {
        // Equal FS block sizes collapse to b(b-1).
        let c = count_params(VariantDims::Fs { b_r: 7, b_p: 7 }, 16, 16).unwrap();
        assert_eq!(c.trainable, 7 * 6);
        assert_eq!(c.memory_units, 16 * 16 + 3 * 42);
        // BS: (m+n)(b-1)/2.
        let c = count_params(VariantDims::Bs { b: 64 }, 512, 512).unwrap();
        assert_eq!(c.trainable, 32_256);
        assert!(count_params(VariantDims::Bs { b: 5 }, 512, 512).is_err());
    }

    #[test]
    fn fs_fraction_floors() {
        assert_eq!(fs_block_sizes(9, 7, 0.5), (4, 3));
        assert_eq!(fs_block_sizes(8, 8, 1.0), (8, 8));
        assert_eq!(fs_block_sizes(3, 3, 0.1), (0, 0));
    }

    #[test]
    fn input_width_checked() {
        let w = random_matrix(4, 3, 12);
        let layer = PoetLayer::new_fs("t", w, 2, 2, k5(), RngKey::from_seed(13)).unwrap();
        let x = M::zeros(2, 5);
        assert!(matches!(layer.forward(&x), Err(LayerError::InputWidth { expected: 4, got: 5 })));
    }
}
