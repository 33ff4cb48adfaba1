//! Character-level decoder-only transformer at desk scale.
//!
//! Pre-norm blocks with causal multi-head attention and a gated MLP, so one
//! model exercises all seven projection types (query, key, value, output,
//! up, gate, down). Embeddings, norms, and the output head are trained
//! directly; the seven projections go through [`Projection`].

use crate::linalg::DenseMatrix;
use crate::scalar::Scalar;
use crate::trainer::data::TokenBatch;
use crate::trainer::model::{
    softmax_cross_entropy, DirectMatrix, DirectVector, ProjCache, Projection, UpdateArgs,
};
use crate::trainer::optim::OptimError;

const RMS_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LmDims {
    pub vocab: usize,
    pub hidden: usize,
    pub heads: usize,
    pub context: usize,
    pub ffn: usize,
}

impl LmDims {
    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

#[derive(Debug, Clone)]
pub struct LmBlock<F> {
    pub ln1: DirectVector<F>,
    pub wq: Projection<F>,
    pub wk: Projection<F>,
    pub wv: Projection<F>,
    pub wo: Projection<F>,
    pub ln2: DirectVector<F>,
    pub w_up: Projection<F>,
    pub w_gate: Projection<F>,
    pub w_down: Projection<F>,
}

impl<F: Scalar> LmBlock<F> {
    pub fn projections(&self) -> Vec<&Projection<F>> {
        vec![&self.wq, &self.wk, &self.wv, &self.wo, &self.w_up, &self.w_gate, &self.w_down]
    }

    pub fn projections_mut(&mut self) -> Vec<&mut Projection<F>> {
        vec![
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.w_up,
            &mut self.w_gate,
            &mut self.w_down,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct LmModel<F> {
    pub dims: LmDims,
    pub tok_emb: DirectMatrix<F>,
    pub pos_emb: DirectMatrix<F>,
    pub blocks: Vec<LmBlock<F>>,
    pub lnf: DirectVector<F>,
    pub head: DirectMatrix<F>,
}

struct BlockCache<F> {
    x_in: DenseMatrix<F>,
    xn1: DenseMatrix<F>,
    inv1: Vec<F>,
    q: DenseMatrix<F>,
    k: DenseMatrix<F>,
    v: DenseMatrix<F>,
    cq: ProjCache<F>,
    ck: ProjCache<F>,
    cv: ProjCache<F>,
    probs: Vec<DenseMatrix<F>>,
    att: DenseMatrix<F>,
    co: ProjCache<F>,
    x1: DenseMatrix<F>,
    xn2: DenseMatrix<F>,
    inv2: Vec<F>,
    up: DenseMatrix<F>,
    gate: DenseMatrix<F>,
    cup: ProjCache<F>,
    cgate: ProjCache<F>,
    hff: DenseMatrix<F>,
    cdown: ProjCache<F>,
}

struct LmCache<F> {
    x_last: DenseMatrix<F>,
    blocks: Vec<BlockCache<F>>,
    xnf: DenseMatrix<F>,
    invf: Vec<F>,
}

fn rmsnorm_fwd<F: Scalar>(x: &DenseMatrix<F>, gain: &[F]) -> (DenseMatrix<F>, Vec<F>) {
    let (n, d) = x.shape();
    let mut y = DenseMatrix::zeros(n, d);
    let mut inv = Vec::with_capacity(n);
    let eps = F::of(RMS_EPS);
    let inv_d = F::of(1.0 / d as f64);
    for i in 0..n {
        let row = x.row(i);
        let mut ms = F::zero();
        for &v in row {
            ms = ms + v * v;
        }
        let r = F::one() / (ms * inv_d + eps).sqrt();
        inv.push(r);
        let out = y.row_mut(i);
        for ((o, &v), &g) in out.iter_mut().zip(row).zip(gain) {
            *o = v * r * g;
        }
    }
    (y, inv)
}

fn rmsnorm_bwd<F: Scalar>(
    x: &DenseMatrix<F>,
    gain: &[F],
    inv: &[F],
    dy: &DenseMatrix<F>,
    dgain: &mut [F],
) -> DenseMatrix<F> {
    let (n, d) = x.shape();
    let mut dx = DenseMatrix::zeros(n, d);
    let inv_d = F::of(1.0 / d as f64);
    for i in 0..n {
        let r = inv[i];
        let xr = x.row(i);
        let dyr = dy.row(i);
        // dgain_j += dy_j * x_j * r
        for ((dg, &xv), &dyv) in dgain.iter_mut().zip(xr).zip(dyr) {
            *dg = *dg + dyv * xv * r;
        }
        // dxn = dy .* gain; dx = r*dxn - x * r^3 * mean(dxn .* x)
        let mut dot = F::zero();
        for ((&dyv, &g), &xv) in dyr.iter().zip(gain).zip(xr) {
            dot = dot + dyv * g * xv;
        }
        let coeff = r * r * r * dot * inv_d;
        let out = dx.row_mut(i);
        for ((o, (&dyv, &g)), &xv) in out.iter_mut().zip(dyr.iter().zip(gain)).zip(xr) {
            *o = r * dyv * g - coeff * xv;
        }
    }
    dx
}

fn head_slice<F: Scalar>(
    m: &DenseMatrix<F>,
    seq: usize,
    t: usize,
    h: usize,
    dh: usize,
) -> DenseMatrix<F> {
    let mut out = DenseMatrix::zeros(t, dh);
    for i in 0..t {
        let src = m.row(seq * t + i);
        out.row_mut(i).copy_from_slice(&src[h * dh..(h + 1) * dh]);
    }
    out
}

fn head_slice_add<F: Scalar>(
    dst: &mut DenseMatrix<F>,
    part: &DenseMatrix<F>,
    seq: usize,
    t: usize,
    h: usize,
    dh: usize,
) {
    for i in 0..t {
        let dst_row = dst.row_mut(seq * t + i);
        for (j, &v) in part.row(i).iter().enumerate() {
            dst_row[h * dh + j] = dst_row[h * dh + j] + v;
        }
    }
}

fn silu<F: Scalar>(z: F) -> F {
    z / (F::one() + (-z).exp())
}

fn silu_prime<F: Scalar>(z: F) -> F {
    let s = F::one() / (F::one() + (-z).exp());
    s * (F::one() + z * (F::one() - s))
}

impl<F: Scalar> LmModel<F> {
    fn inputs_and_targets(&self, batch: &TokenBatch) -> (Vec<usize>, Vec<usize>) {
        let span = batch.context + 1;
        let mut inputs = Vec::with_capacity(batch.batch * batch.context);
        let mut targets = Vec::with_capacity(batch.batch * batch.context);
        for b in 0..batch.batch {
            let w = &batch.windows[b * span..(b + 1) * span];
            for t in 0..batch.context {
                inputs.push(w[t] as usize);
                targets.push(w[t + 1] as usize);
            }
        }
        (inputs, targets)
    }

    fn forward(&self, inputs: &[usize], seqs: usize, t: usize) -> (DenseMatrix<F>, LmCache<F>) {
        let d = self.dims.hidden;
        let heads = self.dims.heads;
        let dh = self.dims.head_dim();
        let n = seqs * t;
        let mut x = DenseMatrix::zeros(n, d);
        for (row, &id) in inputs.iter().enumerate() {
            let pos = row % t;
            let dst = x.row_mut(row);
            for (j, v) in dst.iter_mut().enumerate() {
                *v = self.tok_emb.value.get(id, j) + self.pos_emb.value.get(pos, j);
            }
        }

        let scale = F::of(1.0 / (dh as f64).sqrt());
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            let x_in = x;
            let (xn1, inv1) = rmsnorm_fwd(&x_in, &blk.ln1.value);
            let (q, cq) = blk.wq.forward_cached(&xn1);
            let (k, ck) = blk.wk.forward_cached(&xn1);
            let (v, cv) = blk.wv.forward_cached(&xn1);

            let mut att = DenseMatrix::zeros(n, d);
            let mut probs = Vec::with_capacity(seqs * heads);
            for s in 0..seqs {
                for h in 0..heads {
                    let qs = head_slice(&q, s, t, h, dh);
                    let ks = head_slice(&k, s, t, h, dh);
                    let vs = head_slice(&v, s, t, h, dh);
                    let mut scores = qs.matmul(&ks.transpose()).expect("t x t").scale(scale);
                    // Causal softmax row by row over the unmasked prefix.
                    let mut p = DenseMatrix::zeros(t, t);
                    for i in 0..t {
                        let row = scores.row_mut(i);
                        let mut max = F::neg_infinity();
                        for &val in row.iter().take(i + 1) {
                            max = max.max(val);
                        }
                        let mut denom = F::zero();
                        for val in row.iter_mut().take(i + 1) {
                            *val = (*val - max).exp();
                            denom = denom + *val;
                        }
                        let inv_den = F::one() / denom;
                        let prow = p.row_mut(i);
                        for (j, val) in row.iter().enumerate().take(i + 1) {
                            prow[j] = *val * inv_den;
                        }
                    }
                    let out = p.matmul(&vs).expect("t x dh");
                    head_slice_add(&mut att, &out, s, t, h, dh);
                    probs.push(p);
                }
            }
            let (o, co) = blk.wo.forward_cached(&att);
            let x1 = x_in.add(&o).expect("same shape");

            let (xn2, inv2) = rmsnorm_fwd(&x1, &blk.ln2.value);
            let (up, cup) = blk.w_up.forward_cached(&xn2);
            let (gate, cgate) = blk.w_gate.forward_cached(&xn2);
            let mut hff = up.clone();
            for (hv, &g) in hff.data_mut().iter_mut().zip(gate.data()) {
                *hv = *hv * silu(g);
            }
            let (down, cdown) = blk.w_down.forward_cached(&hff);
            x = x1.add(&down).expect("same shape");

            blocks.push(BlockCache {
                x_in,
                xn1,
                inv1,
                q,
                k,
                v,
                cq,
                ck,
                cv,
                probs,
                att,
                co,
                x1,
                xn2,
                inv2,
                up,
                gate,
                cup,
                cgate,
                hff,
                cdown,
            });
        }

        let (xnf, invf) = rmsnorm_fwd(&x, &self.lnf.value);
        let logits = xnf.matmul(&self.head.value).expect("n x vocab");
        (logits, LmCache { x_last: x, blocks, xnf, invf })
    }

    /// Forward + backward on one token batch; returns the mean
    /// next-character cross entropy.
    pub fn train_step(&mut self, batch: &TokenBatch) -> f64 {
        let (inputs, targets) = self.inputs_and_targets(batch);
        let (seqs, t) = (batch.batch, batch.context);
        let (logits, cache) = self.forward(&inputs, seqs, t);
        let (loss, dlogits) = softmax_cross_entropy(&logits, &targets);

        // Head and final norm.
        let dhead = cache.xnf.transpose().matmul(&dlogits).expect("d x v");
        self.head.grad = self.head.grad.add(&dhead).expect("same shape");
        let dxnf = dlogits.matmul(&self.head.value.transpose()).expect("n x d");
        let mut dx =
            rmsnorm_bwd(&cache.x_last, &self.lnf.value, &cache.invf, &dxnf, &mut self.lnf.grad);

        let heads = self.dims.heads;
        let dh = self.dims.head_dim();
        let scale = F::of(1.0 / (dh as f64).sqrt());
        for (blk, bc) in self.blocks.iter_mut().zip(cache.blocks.iter()).rev() {
            // x2 = x1 + down(hff)
            let dhff = blk.w_down.backward(&bc.hff, &dx, &bc.cdown);
            let mut dup = dhff.clone();
            let mut dgate = dhff;
            for ((du, dg), (&u, &g)) in dup
                .data_mut()
                .iter_mut()
                .zip(dgate.data_mut().iter_mut())
                .zip(bc.up.data().iter().zip(bc.gate.data()))
            {
                let s = silu(g);
                let sp = silu_prime(g);
                let upstream = *du;
                *du = upstream * s;
                *dg = upstream * u * sp;
            }
            let dxn2_a = blk.w_up.backward(&bc.xn2, &dup, &bc.cup);
            let dxn2_b = blk.w_gate.backward(&bc.xn2, &dgate, &bc.cgate);
            let dxn2 = dxn2_a.add(&dxn2_b).expect("same shape");
            let dx1_norm = rmsnorm_bwd(&bc.x1, &blk.ln2.value, &bc.inv2, &dxn2, &mut blk.ln2.grad);
            let dx1 = dx.add(&dx1_norm).expect("same shape");

            // x1 = x_in + o(att)
            let datt = blk.wo.backward(&bc.att, &dx1, &bc.co);
            let n = dx1.rows();
            let d = dx1.cols();
            let mut dq = DenseMatrix::zeros(n, d);
            let mut dk = DenseMatrix::zeros(n, d);
            let mut dv = DenseMatrix::zeros(n, d);
            for s in 0..seqs {
                for h in 0..heads {
                    let p = &bc.probs[s * heads + h];
                    let qs = head_slice(&bc.q, s, t, h, dh);
                    let ks = head_slice(&bc.k, s, t, h, dh);
                    let vs = head_slice(&bc.v, s, t, h, dh);
                    let dout = head_slice(&datt, s, t, h, dh);
                    let dvs = p.transpose().matmul(&dout).expect("t x dh");
                    let dp = dout.matmul(&vs.transpose()).expect("t x t");
                    // Softmax backward per causal row.
                    let mut ds = DenseMatrix::zeros(t, t);
                    for i in 0..t {
                        let prow = p.row(i);
                        let dprow = dp.row(i);
                        let mut inner = F::zero();
                        for j in 0..=i {
                            inner = inner + prow[j] * dprow[j];
                        }
                        let dsrow = ds.row_mut(i);
                        for j in 0..=i {
                            dsrow[j] = prow[j] * (dprow[j] - inner);
                        }
                    }
                    let dqs = ds.matmul(&ks).expect("t x dh").scale(scale);
                    let dks = ds.transpose().matmul(&qs).expect("t x dh").scale(scale);
                    head_slice_add(&mut dq, &dqs, s, t, h, dh);
                    head_slice_add(&mut dk, &dks, s, t, h, dh);
                    head_slice_add(&mut dv, &dvs, s, t, h, dh);
                }
            }
            let dxn1_q = blk.wq.backward(&bc.xn1, &dq, &bc.cq);
            let dxn1_k = blk.wk.backward(&bc.xn1, &dk, &bc.ck);
            let dxn1_v = blk.wv.backward(&bc.xn1, &dv, &bc.cv);
            let dxn1 =
                dxn1_q.add(&dxn1_k).expect("same shape").add(&dxn1_v).expect("same shape");
            let dx_norm = rmsnorm_bwd(&bc.x_in, &blk.ln1.value, &bc.inv1, &dxn1, &mut blk.ln1.grad);
            dx = dx1.add(&dx_norm).expect("same shape");
        }

        // Embeddings.
        for (row, &id) in inputs.iter().enumerate() {
            let pos = row % t;
            let src = dx.row(row);
            for (j, &g) in src.iter().enumerate() {
                let tv = self.tok_emb.grad.get(id, j);
                self.tok_emb.grad.set(id, j, tv + g);
                let pv = self.pos_emb.grad.get(pos, j);
                self.pos_emb.grad.set(pos, j, pv + g);
            }
        }
        loss
    }

    pub fn eval_loss(&self, batch: &TokenBatch) -> f64 {
        let (inputs, targets) = self.inputs_and_targets(batch);
        let (logits, _) = self.forward(&inputs, batch.batch, batch.context);
        softmax_cross_entropy(&logits, &targets).0
    }

    pub fn projections(&self) -> Vec<&Projection<F>> {
        self.blocks.iter().flat_map(|b| b.projections()).collect()
    }

    pub fn projections_mut(&mut self) -> Vec<&mut Projection<F>> {
        self.blocks.iter_mut().flat_map(|b| b.projections_mut()).collect()
    }

    pub fn zero_grads(&mut self) {
        self.tok_emb.zero_grad();
        self.pos_emb.zero_grad();
        for blk in &mut self.blocks {
            blk.ln1.zero_grad();
            blk.ln2.zero_grad();
            for p in blk.projections_mut() {
                p.zero_grad();
            }
        }
        self.lnf.zero_grad();
        self.head.zero_grad();
    }

    pub fn for_each_grad(&self, f: &mut dyn FnMut(&[F])) {
        f(self.tok_emb.grad.data());
        f(self.pos_emb.grad.data());
        for blk in &self.blocks {
            f(&blk.ln1.grad);
            f(&blk.ln2.grad);
            for p in blk.projections() {
                p.for_each_grad(f);
            }
        }
        f(&self.lnf.grad);
        f(self.head.grad.data());
    }

    pub fn update(&mut self, args: &UpdateArgs) -> Result<(), OptimError> {
        self.tok_emb.update(args)?;
        self.pos_emb.update(args)?;
        for blk in &mut self.blocks {
            blk.ln1.update(args)?;
            blk.ln2.update(args)?;
            for p in blk.projections_mut() {
                p.update(args)?;
            }
        }
        self.lnf.update(args)?;
        self.head.update(args)
    }
}
