//! Trainable parameter containers, the projection abstraction (reparameterized
//! or direct), and the two-moons MLP.

use crate::linalg::DenseMatrix;
use crate::poetlayer::{LayerCache, LayerGrads, PoetLayer};
use crate::scalar::Scalar;
use crate::trainer::optim::{adamw_step, AdamState, OptimError};

/// Which learning rate a parameter group uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    /// Skew parameters of the orthogonal factors.
    Theta,
    /// Everything trained directly: biases, norms, embeddings, dense weights.
    Direct,
}

/// Per-parameter update arguments shared by one optimizer step.
#[derive(Debug, Clone, Copy)]
pub struct UpdateArgs {
    pub lr_theta: f64,
    pub lr_direct: f64,
    pub weight_decay: f64,
    pub grad_scale: f64,
}

impl UpdateArgs {
    fn lr(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Theta => self.lr_theta,
            ParamGroup::Direct => self.lr_direct,
        }
    }
}

/// Directly trained dense matrix (embeddings, head, baseline weights).
#[derive(Debug, Clone)]
pub struct DirectMatrix<F> {
    pub name: String,
    pub value: DenseMatrix<F>,
    pub grad: DenseMatrix<F>,
    pub adam: AdamState<F>,
}

impl<F: Scalar> DirectMatrix<F> {
    pub fn new(name: impl Into<String>, value: DenseMatrix<F>) -> Self {
        let (r, c) = value.shape();
        Self {
            name: name.into(),
            grad: DenseMatrix::zeros(r, c),
            adam: AdamState::new(r * c),
            value,
        }
    }

    pub fn zero_grad(&mut self) {
        for g in self.grad.data_mut() {
            *g = F::zero();
        }
    }

    pub fn update(&mut self, args: &UpdateArgs) -> Result<(), OptimError> {
        adamw_step(
            self.value.data_mut(),
            self.grad.data(),
            &mut self.adam,
            args.lr(ParamGroup::Direct),
            args.weight_decay,
            args.grad_scale,
        )
    }
}

/// Directly trained vector (bias, norm gain).
#[derive(Debug, Clone)]
pub struct DirectVector<F> {
    pub name: String,
    pub value: Vec<F>,
    pub grad: Vec<F>,
    pub adam: AdamState<F>,
}

impl<F: Scalar> DirectVector<F> {
    pub fn new(name: impl Into<String>, value: Vec<F>) -> Self {
        let n = value.len();
        Self { name: name.into(), grad: vec![F::zero(); n], adam: AdamState::new(n), value }
    }

    pub fn zeros(name: impl Into<String>, n: usize) -> Self {
        Self::new(name, vec![F::zero(); n])
    }

    pub fn ones(name: impl Into<String>, n: usize) -> Self {
        Self::new(name, vec![F::one(); n])
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grad {
            *g = F::zero();
        }
    }

    pub fn update(&mut self, args: &UpdateArgs) -> Result<(), OptimError> {
        adamw_step(
            &mut self.value,
            &self.grad,
            &mut self.adam,
            args.lr(ParamGroup::Direct),
            args.weight_decay,
            args.grad_scale,
        )
    }
}

/// A reparameterized layer plus its gradient buffers and optimizer state
/// (one Adam state per theta block).
#[derive(Debug, Clone)]
pub struct PoetParam<F> {
    pub layer: PoetLayer<F>,
    r_grads: Vec<Vec<F>>,
    p_grads: Vec<Vec<F>>,
    r_adam: Vec<AdamState<F>>,
    p_adam: Vec<AdamState<F>>,
}

impl<F: Scalar> PoetParam<F> {
    pub fn new(layer: PoetLayer<F>) -> Self {
        let r_shapes: Vec<usize> = layer.r_prim().theta_blocks().iter().map(|b| b.len()).collect();
        let p_shapes: Vec<usize> = layer.p_prim().theta_blocks().iter().map(|b| b.len()).collect();
        Self {
            r_grads: r_shapes.iter().map(|&n| vec![F::zero(); n]).collect(),
            p_grads: p_shapes.iter().map(|&n| vec![F::zero(); n]).collect(),
            r_adam: r_shapes.iter().map(|&n| AdamState::new(n)).collect(),
            p_adam: p_shapes.iter().map(|&n| AdamState::new(n)).collect(),
            layer,
        }
    }

    pub fn zero_grad(&mut self) {
        for blk in self.r_grads.iter_mut().chain(self.p_grads.iter_mut()) {
            for g in blk {
                *g = F::zero();
            }
        }
    }

    pub fn accumulate(&mut self, grads: &LayerGrads<F>) {
        for (buf, g) in self.r_grads.iter_mut().zip(&grads.r_theta) {
            for (b, &v) in buf.iter_mut().zip(g) {
                *b = *b + v;
            }
        }
        for (buf, g) in self.p_grads.iter_mut().zip(&grads.p_theta) {
            for (b, &v) in buf.iter_mut().zip(g) {
                *b = *b + v;
            }
        }
    }

    pub fn update(&mut self, args: &UpdateArgs) -> Result<(), OptimError> {
        let lr = args.lr(ParamGroup::Theta);
        let r_blocks = self.layer.r_prim_mut().theta_blocks_mut();
        for ((theta, grad), adam) in
            r_blocks.into_iter().zip(&self.r_grads).zip(self.r_adam.iter_mut())
        {
            adamw_step(theta, grad, adam, lr, args.weight_decay, args.grad_scale)?;
        }
        let p_blocks = self.layer.p_prim_mut().theta_blocks_mut();
        for ((theta, grad), adam) in
            p_blocks.into_iter().zip(&self.p_grads).zip(self.p_adam.iter_mut())
        {
            adamw_step(theta, grad, adam, lr, args.weight_decay, args.grad_scale)?;
        }
        Ok(())
    }

    /// Fold the primitives into the weight, resample supports, and reset the
    /// optimizer state (the old moments describe parameters that no longer
    /// exist).
    pub fn merge_reinit(&mut self) {
        self.layer.merge_reinit();
        for st in self.r_adam.iter_mut().chain(self.p_adam.iter_mut()) {
            *st = AdamState::new(st.m.len());
        }
    }

    pub fn grads(&self) -> impl Iterator<Item = &[F]> {
        self.r_grads.iter().chain(self.p_grads.iter()).map(|v| v.as_slice())
    }

    pub fn adam_states(&self) -> (&[AdamState<F>], &[AdamState<F>]) {
        (&self.r_adam, &self.p_adam)
    }

    pub fn adam_states_mut(&mut self) -> (&mut Vec<AdamState<F>>, &mut Vec<AdamState<F>>) {
        (&mut self.r_adam, &mut self.p_adam)
    }
}

/// One 2-d weight in a model: reparameterized or trained directly.
#[derive(Debug, Clone)]
pub enum Projection<F> {
    Poet(PoetParam<F>),
    Dense(DirectMatrix<F>),
}

#[derive(Debug, Clone)]
pub enum ProjCache<F> {
    Poet(LayerCache<F>),
    Dense,
}

impl<F: Scalar> Projection<F> {
    pub fn name(&self) -> &str {
        match self {
            Self::Poet(p) => p.layer.name(),
            Self::Dense(d) => &d.name,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            Self::Poet(p) => p.layer.shape(),
            Self::Dense(d) => d.value.shape(),
        }
    }

    /// The dense weight currently implementing this projection.
    pub fn effective_weight(&self) -> DenseMatrix<F> {
        match self {
            Self::Poet(p) => p.layer.merged_weight(),
            Self::Dense(d) => d.value.clone(),
        }
    }

    pub fn forward_cached(&self, x: &DenseMatrix<F>) -> (DenseMatrix<F>, ProjCache<F>) {
        match self {
            Self::Poet(p) => {
                let (y, cache) = p.layer.forward_cached(x).expect("shape fixed by model");
                (y, ProjCache::Poet(cache))
            }
            Self::Dense(d) => {
                (x.matmul(&d.value).expect("shape fixed by model"), ProjCache::Dense)
            }
        }
    }

    /// Accumulate this projection's gradients and return `dL/dx`.
    pub fn backward(
        &mut self,
        x: &DenseMatrix<F>,
        upstream: &DenseMatrix<F>,
        cache: &ProjCache<F>,
    ) -> DenseMatrix<F> {
        match (self, cache) {
            (Self::Poet(p), ProjCache::Poet(c)) => {
                let grads = p.layer.backward(x, upstream, c).expect("shapes fixed by model");
                p.accumulate(&grads);
                grads.input
            }
            (Self::Dense(d), ProjCache::Dense) => {
                let dw = x.transpose().matmul(upstream).expect("shapes");
                let acc = d.grad.add(&dw).expect("same shape");
                d.grad = acc;
                upstream.matmul(&d.value.transpose()).expect("shapes")
            }
            _ => panic!("projection cache mismatch"),
        }
    }

    pub fn zero_grad(&mut self) {
        match self {
            Self::Poet(p) => p.zero_grad(),
            Self::Dense(d) => d.zero_grad(),
        }
    }

    pub fn update(&mut self, args: &UpdateArgs) -> Result<(), OptimError> {
        match self {
            Self::Poet(p) => p.update(args),
            Self::Dense(d) => d.update(args),
        }
    }

    pub fn poet(&self) -> Option<&PoetParam<F>> {
        match self {
            Self::Poet(p) => Some(p),
            Self::Dense(_) => None,
        }
    }

    pub fn poet_mut(&mut self) -> Option<&mut PoetParam<F>> {
        match self {
            Self::Poet(p) => Some(p),
            Self::Dense(_) => None,
        }
    }

    pub fn for_each_grad(&self, f: &mut dyn FnMut(&[F])) {
        match self {
            Self::Poet(p) => {
                for g in p.grads() {
                    f(g);
                }
            }
            Self::Dense(d) => f(d.grad.data()),
        }
    }
}

/// Mean cross-entropy over rows of `logits` and the matching gradient
/// (already divided by the row count).
pub fn softmax_cross_entropy<F: Scalar>(
    logits: &DenseMatrix<F>,
    targets: &[usize],
) -> (f64, DenseMatrix<F>) {
    let (n, v) = logits.shape();
    assert_eq!(n, targets.len(), "one target per row");
    let mut dlogits = DenseMatrix::zeros(n, v);
    let mut loss = 0.0;
    let inv_n = F::of(1.0 / n as f64);
    for i in 0..n {
        let row = logits.row(i);
        let max = row.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
        let mut denom = F::zero();
        for &x in row {
            denom = denom + (x - max).exp();
        }
        let log_denom = denom.ln();
        let target = targets[i];
        loss += (log_denom - (row[target] - max)).as_f64();
        let drow = dlogits.row_mut(i);
        for (j, &x) in row.iter().enumerate() {
            let p = ((x - max) - log_denom).exp();
            drow[j] = p * inv_n;
        }
        drow[target] = drow[target] - inv_n;
    }
    (loss / n as f64, dlogits)
}

fn add_bias_rows<F: Scalar>(x: &mut DenseMatrix<F>, bias: &[F]) {
    let cols = x.cols();
    assert_eq!(cols, bias.len());
    for i in 0..x.rows() {
        let row = x.row_mut(i);
        for (r, &b) in row.iter_mut().zip(bias) {
            *r = *r + b;
        }
    }
}

fn column_sums_into<F: Scalar>(g: &DenseMatrix<F>, acc: &mut [F]) {
    for i in 0..g.rows() {
        for (a, &v) in acc.iter_mut().zip(g.row(i)) {
            *a = *a + v;
        }
    }
}

/// Two-layer ReLU classifier for the two-moons task.
#[derive(Debug, Clone)]
pub struct MlpModel<F> {
    pub l1: Projection<F>,
    pub b1: DirectVector<F>,
    pub l2: Projection<F>,
    pub b2: DirectVector<F>,
}

impl<F: Scalar> MlpModel<F> {
    pub fn new(l1: Projection<F>, l2: Projection<F>) -> Self {
        let hidden = l1.shape().1;
        let out = l2.shape().1;
        Self {
            l1,
            b1: DirectVector::zeros("b1", hidden),
            l2,
            b2: DirectVector::zeros("b2", out),
        }
    }

    fn logits(&self, x: &DenseMatrix<F>) -> (DenseMatrix<F>, MlpCache<F>) {
        let (mut h_pre, c1) = self.l1.forward_cached(x);
        add_bias_rows(&mut h_pre, &self.b1.value);
        let mut h = h_pre.clone();
        for v in h.data_mut() {
            *v = v.max(F::zero());
        }
        let (mut logits, c2) = self.l2.forward_cached(&h);
        add_bias_rows(&mut logits, &self.b2.value);
        (logits, MlpCache { c1, c2, h_pre, h })
    }

    /// Forward + backward on one batch; gradients accumulate into the
    /// parameter buffers. Returns the mean loss.
    pub fn train_step(&mut self, x: &DenseMatrix<F>, y: &[usize]) -> f64 {
        let (logits, cache) = self.logits(x);
        let (loss, dlogits) = softmax_cross_entropy(&logits, y);
        column_sums_into(&dlogits, &mut self.b2.grad);
        let dh = self.l2.backward(&cache.h, &dlogits, &cache.c2);
        let mut dh_pre = dh;
        for (g, &pre) in dh_pre.data_mut().iter_mut().zip(cache.h_pre.data()) {
            if pre <= F::zero() {
                *g = F::zero();
            }
        }
        column_sums_into(&dh_pre, &mut self.b1.grad);
        let _dx = self.l1.backward(x, &dh_pre, &cache.c1);
        loss
    }

    pub fn eval_loss(&self, x: &DenseMatrix<F>, y: &[usize]) -> f64 {
        let (logits, _) = self.logits(x);
        softmax_cross_entropy(&logits, y).0
    }

    pub fn projections(&self) -> Vec<&Projection<F>> {
        vec![&self.l1, &self.l2]
    }

    pub fn projections_mut(&mut self) -> Vec<&mut Projection<F>> {
        vec![&mut self.l1, &mut self.l2]
    }

    pub fn zero_grads(&mut self) {
        self.l1.zero_grad();
        self.b1.zero_grad();
        self.l2.zero_grad();
        self.b2.zero_grad();
    }

    pub fn for_each_grad(&self, f: &mut dyn FnMut(&[F])) {
        self.l1.for_each_grad(f);
        f(&self.b1.grad);
        self.l2.for_each_grad(f);
        f(&self.b2.grad);
    }

    pub fn update(&mut self, args: &UpdateArgs) -> Result<(), OptimError> {
        self.l1.update(args)?;
        self.b1.update(args)?;
        self.l2.update(args)?;
        self.b2.update(args)
    }
}

struct MlpCache<F> {
    c1: ProjCache<F>,
    c2: ProjCache<F>,
    h_pre: DenseMatrix<F>,
    h: DenseMatrix<F>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_uniform_logits() {
        let logits = DenseMatrix::<f64>::zeros(4, 2);
        let (loss, grad) = softmax_cross_entropy(&logits, &[0, 1, 0, 1]);
        assert!((loss - (2.0f64).ln()).abs() < 1e-12);
        // Gradient rows sum to zero.
        for i in 0..4 {
            let s: f64 = grad.row(i).iter().sum();
            assert!(s.abs() < 1e-15);
        }
    }

    #[test]
    fn cross_entropy_matches_finite_difference() {
        let mut logits = DenseMatrix::<f64>::zeros(2, 3);
        for (i, v) in logits.data_mut().iter_mut().enumerate() {
            *v = (i as f64) * 0.3 - 0.7;
        }
        let targets = [2usize, 0];
        let (_, grad) = softmax_cross_entropy(&logits, &targets);
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..3 {
                let mut plus = logits.clone();
                plus.set(i, j, plus.get(i, j) + h);
                let mut minus = logits.clone();
                minus.set(i, j, minus.get(i, j) - h);
                let fd = (softmax_cross_entropy(&plus, &targets).0
                    - softmax_cross_entropy(&minus, &targets).0)
                    / (2.0 * h);
                assert!((grad.get(i, j) - fd).abs() < 1e-8);
            }
        }
    }
}
