//! The full training algorithm: AdamW over the skew parameters, cosine
//! schedule, global-norm clipping with a tightened post-merge window, the
//! merge cadence, and the two desk-scale tasks (two-moons MLP and a tiny
//! character LM).

pub mod data;
pub mod lm;
pub mod model;
pub mod optim;
pub mod schedule;

use std::path::PathBuf;

use crate::diagnostics::{
    hyperspherical_energy, svd_entropy, DiagError, MatrixMetrics, MetricsRecord,
};
use crate::linalg::svd;
use crate::ortho::NeumannOrder;
use crate::poetlayer::{count_params, fs_block_sizes, LayerError, ParamCount, PoetLayer, VariantDims};
use crate::randinit::{init_matrix_keyed, InitError, InitKind, InitScheme};
use crate::rng::RngKey;
use crate::scalar::Scalar;
use crate::spo::SpoError;
use data::{moons_batch, two_moons, MoonsSplit, TextData, TokenBatch};
use lm::{LmBlock, LmDims, LmModel};
use model::{DirectMatrix, DirectVector, MlpModel, PoetParam, Projection, UpdateArgs};
use optim::{clip_scale, global_grad_norm, post_merge_threshold, OptimError};
use schedule::cosine_lr;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("training diverged at step {step} (non-finite loss or gradient)")]
    Diverged { step: u64 },
    #[error("failed to read dataset {path}: {source}")]
    Data { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Init(#[from] InitError),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Spo(#[from] SpoError),
    #[error(transparent)]
    Diag(#[from] DiagError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

/// How the projection weights are trained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpoVariant {
    /// Fully stochastic with a fractional block budget (block sizes
    /// `floor(m * fraction)` and `floor(n * fraction)`).
    Fs { fraction: f64 },
    /// Block stochastic with an absolute block size.
    Bs { block_size: usize },
    /// Plain AdamW on the dense weights (the comparison baseline).
    Direct,
    /// Weights fixed at initialization; only direct parameters train.
    Frozen,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelSpec {
    Mlp { hidden: usize },
    TinyLm { hidden: usize, heads: usize, blocks: usize, context: usize, ffn: usize },
    /// Transformer dimensions used for parameter counting only.
    LlamaLike { hidden: usize, intermediate: usize, layers: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSpec {
    TwoMoons { n_train: usize, n_val: usize, noise: f64 },
    Text { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelSpec,
    pub init_kind: InitKind,
    pub init_std: f64,
    pub variant: SpoVariant,
    /// Optional trainable-budget split between the left and right factors
    /// (1.0 = all left). Applies to the FS variant.
    pub budget_ratio: Option<f64>,
    pub neumann_k: usize,
    /// Merge-then-reinitialize period, in optimizer steps.
    pub merge_every: usize,
    pub lr_poet: f64,
    pub lr_direct: f64,
    pub weight_decay: f64,
    pub clip_threshold: f64,
    pub post_merge_clip_steps: usize,
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub min_lr_ratio: f64,
    pub batch_size: usize,
    pub data: DataSpec,
    pub eval_every: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: String| Err(TrainError::Config(msg));
        if self.merge_every == 0 {
            return fail("merge_every (T_m) must be at least 1".into());
        }
        if self.neumann_k == 0 || self.neumann_k > 8 {
            return fail(format!("neumann_k must be in 1..=8, got {}", self.neumann_k));
        }
        if self.total_steps == 0 {
            return fail("total_steps must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.eval_every == 0 {
            return fail("eval_every must be at least 1".into());
        }
        if self.clip_threshold <= 0.0 {
            return fail("clip_threshold must be positive".into());
        }
        if self.lr_poet < 0.0 || self.lr_direct < 0.0 {
            return fail("learning rates must be nonnegative".into());
        }
        if !(0.0..=1.0).contains(&self.min_lr_ratio) {
            return fail(format!("min_lr_ratio must be in [0, 1], got {}", self.min_lr_ratio));
        }
        if let Some(r) = self.budget_ratio {
            if !(0.0..=1.0).contains(&r) {
                return fail(format!("budget_ratio must be in [0, 1], got {r}"));
            }
        }
        match self.variant {
            SpoVariant::Fs { fraction } => {
                if !(fraction > 0.0 && fraction <= 1.0) {
                    return fail(format!("fs fraction must be in (0, 1], got {fraction}"));
                }
            }
            SpoVariant::Bs { block_size } => {
                if block_size == 0 {
                    return fail("bs block_size must be at least 1".into());
                }
            }
            SpoVariant::Direct | SpoVariant::Frozen => {}
        }
        match &self.model {
            ModelSpec::Mlp { hidden } => {
                if *hidden == 0 {
                    return fail("mlp hidden width must be at least 1".into());
                }
            }
            ModelSpec::TinyLm { hidden, heads, blocks, context, ffn } => {
                if *hidden == 0 || *blocks == 0 || *context == 0 || *ffn == 0 {
                    return fail("tiny_lm dimensions must be at least 1".into());
                }
                if *heads == 0 || hidden % heads != 0 {
                    return fail(format!("heads ({heads}) must divide hidden ({hidden})"));
                }
            }
            ModelSpec::LlamaLike { hidden, intermediate, layers } => {
                if *hidden == 0 || *intermediate == 0 || *layers == 0 {
                    return fail("llama_like dimensions must be at least 1".into());
                }
            }
        }
        if matches!(self.model, ModelSpec::TinyLm { .. }) && matches!(self.data, DataSpec::TwoMoons { .. })
        {
            return fail("tiny_lm requires a text dataset".into());
        }
        if matches!(self.model, ModelSpec::Mlp { .. }) && matches!(self.data, DataSpec::Text { .. })
        {
            return fail("mlp requires the two_moons dataset".into());
        }
        Ok(())
    }
}

/// Reparameterized projection shapes of a model, in a fixed order.
pub fn projection_dims(model: &ModelSpec) -> Vec<(String, usize, usize)> {
    match model {
        ModelSpec::Mlp { hidden } => {
            vec![("l1".into(), 2, *hidden), ("l2".into(), *hidden, 2)]
        }
        ModelSpec::TinyLm { hidden, blocks, ffn, .. } => {
            let mut out = Vec::new();
            for b in 0..*blocks {
                for name in ["q", "k", "v", "o"] {
                    out.push((format!("blk{b}.{name}"), *hidden, *hidden));
                }
                out.push((format!("blk{b}.up"), *hidden, *ffn));
                out.push((format!("blk{b}.gate"), *hidden, *ffn));
                out.push((format!("blk{b}.down"), *ffn, *hidden));
            }
            out
        }
        ModelSpec::LlamaLike { hidden, intermediate, layers } => {
            let mut out = Vec::new();
            for b in 0..*layers {
                for name in ["q", "k", "v", "o"] {
                    out.push((format!("blk{b}.{name}"), *hidden, *hidden));
                }
                out.push((format!("blk{b}.up"), *hidden, *intermediate));
                out.push((format!("blk{b}.gate"), *hidden, *intermediate));
                out.push((format!("blk{b}.down"), *intermediate, *hidden));
            }
            out
        }
    }
}

/// Per-matrix parameter counts for a config.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountRow {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub count: ParamCount,
}

/// Trainable/memory accounting over every reparameterized projection.
pub fn count_params_for(
    model: &ModelSpec,
    variant: SpoVariant,
    budget_ratio: Option<f64>,
) -> Result<(Vec<CountRow>, ParamCount), TrainError> {
    let mut rows = Vec::new();
    let mut total = ParamCount { trainable: 0, memory_units: 0 };
    for (name, m, n) in projection_dims(model) {
        let count = match variant {
            SpoVariant::Fs { fraction } => {
                let (b_r, b_p) = fs_sizes_with_ratio(m, n, fraction, budget_ratio)?;
                count_params(VariantDims::Fs { b_r, b_p }, m, n)?
            }
            SpoVariant::Bs { block_size } => {
                count_params(VariantDims::Bs { b: block_size }, m, n)?
            }
            SpoVariant::Direct => ParamCount { trainable: m * n, memory_units: 3 * m * n },
            SpoVariant::Frozen => ParamCount { trainable: 0, memory_units: m * n },
        };
        total.trainable += count.trainable;
        total.memory_units += count.memory_units;
        rows.push(CountRow { name, rows: m, cols: n, count });
    }
    Ok((rows, total))
}

/// Split a total theta budget between the two factors as `ratio : 1 - ratio`
/// and return the block sizes realizing each share (0 = that side fixed at
/// the identity).
pub fn budget_split(
    total_budget: usize,
    ratio: f64,
    m: usize,
    n: usize,
) -> Result<(usize, usize), TrainError> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(TrainError::Config(format!("budget ratio must be in [0, 1], got {ratio}")));
    }
    let share_r = ratio * total_budget as f64;
    let share_p = (1.0 - ratio) * total_budget as f64;
    if share_r < 1.0 && share_p < 1.0 {
        return Err(TrainError::Config(format!(
            "budget {total_budget} with ratio {ratio} leaves less than one parameter per side"
        )));
    }
    let block_for = |share: f64, cap: usize| -> usize {
        if share < 1.0 {
            return 0;
        }
        // Largest b with b(b-1)/2 <= share.
        let b = ((1.0 + (1.0 + 8.0 * share).sqrt()) / 2.0).floor() as usize;
        b.min(cap)
    };
    Ok((block_for(share_r, m), block_for(share_p, n)))
}

fn fs_sizes_with_ratio(
    m: usize,
    n: usize,
    fraction: f64,
    ratio: Option<f64>,
) -> Result<(usize, usize), TrainError> {
    let (b_r, b_p) = fs_block_sizes(m, n, fraction);
    match ratio {
        None => Ok((b_r, b_p)),
        Some(r) => {
            let budget = b_r * b_r.saturating_sub(1) / 2 + b_p * b_p.saturating_sub(1) / 2;
            budget_split(budget, r, m, n)
        }
    }
}

/// A training batch, matching the model kind.
pub enum Batch<F> {
    Moons(MoonsSplit<F>),
    Text(TokenBatch),
}

/// The dataset held for a whole run.
pub enum Dataset<F> {
    Moons { train: MoonsSplit<F>, val: MoonsSplit<F> },
    Text { data: TextData, context: usize },
}

const LM_VAL_WINDOWS: usize = 32;

impl<F: Scalar> Dataset<F> {
    pub fn new(cfg: &TrainConfig) -> Result<Self, TrainError> {
        let root = RngKey::from_seed(cfg.seed).child_named("data");
        match &cfg.data {
            DataSpec::TwoMoons { n_train, n_val, noise } => Ok(Dataset::Moons {
                train: two_moons(*n_train, *noise, root.child(0)),
                val: two_moons(*n_val, *noise, root.child(1)),
            }),
            DataSpec::Text { path } => {
                let context = match cfg.model {
                    ModelSpec::TinyLm { context, .. } => context,
                    _ => return Err(TrainError::Config("text data requires tiny_lm".into())),
                };
                let data = TextData::load(path)
                    .map_err(|source| TrainError::Data { path: path.clone(), source })?;
                let span = context + 1;
                if data.len() < span * 10 {
                    return Err(TrainError::Config(format!(
                        "corpus has {} tokens; need at least {} for context {}",
                        data.len(),
                        span * 10,
                        context
                    )));
                }
                Ok(Dataset::Text { data, context })
            }
        }
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            Dataset::Moons { .. } => 2,
            Dataset::Text { data, .. } => data.vocab_size(),
        }
    }

    fn batch(&self, batch_size: usize, key: RngKey) -> Batch<F> {
        match self {
            Dataset::Moons { train, .. } => Batch::Moons(moons_batch(train, batch_size, key)),
            Dataset::Text { data, context } => {
                Batch::Text(data.train_batch(batch_size, *context, key))
            }
        }
    }
}

/// The two desk-scale model kinds.
pub enum Model<F> {
    Mlp(MlpModel<F>),
    Lm(LmModel<F>),
}

impl<F: Scalar> Model<F> {
    pub fn zero_grads(&mut self) {
        match self {
            Model::Mlp(m) => m.zero_grads(),
            Model::Lm(m) => m.zero_grads(),
        }
    }

    pub fn train_step(&mut self, batch: &Batch<F>) -> f64 {
        match (self, batch) {
            (Model::Mlp(m), Batch::Moons(b)) => m.train_step(&b.x, &b.y),
            (Model::Lm(m), Batch::Text(b)) => m.train_step(b),
            _ => panic!("batch kind does not match model kind"),
        }
    }

    pub fn eval_loss(&self, dataset: &Dataset<F>) -> f64 {
        match (self, dataset) {
            (Model::Mlp(m), Dataset::Moons { val, .. }) => m.eval_loss(&val.x, &val.y),
            (Model::Lm(m), Dataset::Text { data, context }) => {
                m.eval_loss(&data.val_windows(LM_VAL_WINDOWS, *context))
            }
            _ => panic!("dataset kind does not match model kind"),
        }
    }

    pub fn for_each_grad(&self, f: &mut dyn FnMut(&[F])) {
        match self {
            Model::Mlp(m) => m.for_each_grad(f),
            Model::Lm(m) => m.for_each_grad(f),
        }
    }

    pub fn update(&mut self, args: &UpdateArgs) -> Result<(), OptimError> {
        match self {
            Model::Mlp(m) => m.update(args),
            Model::Lm(m) => m.update(args),
        }
    }

    pub fn projections(&self) -> Vec<&Projection<F>> {
        match self {
            Model::Mlp(m) => m.projections(),
            Model::Lm(m) => m.projections(),
        }
    }

    pub fn projections_mut(&mut self) -> Vec<&mut Projection<F>> {
        match self {
            Model::Mlp(m) => m.projections_mut(),
            Model::Lm(m) => m.projections_mut(),
        }
    }

    pub fn poet_layers(&self) -> Vec<&PoetLayer<F>> {
        self.projections().into_iter().filter_map(|p| p.poet()).map(|p| &p.layer).collect()
    }

    /// Merge every reparameterized layer and reset its optimizer state.
    pub fn merge_all(&mut self) {
        for proj in self.projections_mut() {
            if let Some(p) = proj.poet_mut() {
                p.merge_reinit();
            }
        }
    }

    fn note_step(&mut self) {
        for proj in self.projections_mut() {
            if let Some(p) = proj.poet_mut() {
                p.layer.note_step();
            }
        }
    }
}

fn make_projection<F: Scalar>(
    cfg: &TrainConfig,
    name: &str,
    index: u64,
    m: usize,
    n: usize,
) -> Result<Projection<F>, TrainError> {
    let scheme = InitScheme::new(cfg.init_kind, cfg.init_std, cfg.seed);
    let root = RngKey::from_seed(cfg.seed);
    let w = init_matrix_keyed(&scheme, m, n, root.child_named("init").child(index))?;
    let support = root.child_named("support").child(index);
    let k = NeumannOrder::new(cfg.neumann_k).expect("validated");
    let proj = match cfg.variant {
        SpoVariant::Direct => Projection::Dense(DirectMatrix::new(name, w)),
        SpoVariant::Frozen => {
            Projection::Poet(PoetParam::new(PoetLayer::new_frozen(name, w, k, support)))
        }
        SpoVariant::Fs { fraction } => {
            let (b_r, b_p) = fs_sizes_with_ratio(m, n, fraction, cfg.budget_ratio)?;
            Projection::Poet(PoetParam::new(PoetLayer::new_fs(name, w, b_r, b_p, k, support)?))
        }
        SpoVariant::Bs { block_size } => {
            Projection::Poet(PoetParam::new(PoetLayer::new_bs(name, w, block_size, k, support)?))
        }
    };
    Ok(proj)
}

/// Build the model described by the config. `vocab` is taken from the
/// dataset for the LM.
pub fn build_model<F: Scalar>(cfg: &TrainConfig, vocab: usize) -> Result<Model<F>, TrainError> {
    let root = RngKey::from_seed(cfg.seed);
    let dims = projection_dims(&cfg.model);
    match &cfg.model {
        ModelSpec::Mlp { .. } => {
            let (n1, m1, c1) = (&dims[0].0, dims[0].1, dims[0].2);
            let (n2, m2, c2) = (&dims[1].0, dims[1].1, dims[1].2);
            let l1 = make_projection(cfg, n1, 0, m1, c1)?;
            let l2 = make_projection(cfg, n2, 1, m2, c2)?;
            Ok(Model::Mlp(MlpModel::new(l1, l2)))
        }
        ModelSpec::TinyLm { hidden, heads, blocks, context, ffn } => {
            let lm_dims =
                LmDims { vocab, hidden: *hidden, heads: *heads, context: *context, ffn: *ffn };
            let emb_scheme = InitScheme::new(InitKind::Standard, 0.02, cfg.seed);
            let emb_key = root.child_named("direct");
            let tok_emb = DirectMatrix::new(
                "tok_emb",
                init_matrix_keyed(&emb_scheme, vocab, *hidden, emb_key.child(0))?,
            );
            let pos_emb = DirectMatrix::new(
                "pos_emb",
                init_matrix_keyed(&emb_scheme, *context, *hidden, emb_key.child(1))?,
            );
            let head = DirectMatrix::new(
                "head",
                init_matrix_keyed(&emb_scheme, *hidden, vocab, emb_key.child(2))?,
            );
            let mut lm_blocks = Vec::with_capacity(*blocks);
            let mut dim_iter = dims.iter().enumerate();
            for b in 0..*blocks {
                let mut next = || {
                    let (i, (name, m, n)) = dim_iter.next().expect("dims cover all blocks");
                    make_projection(cfg, name, i as u64, *m, *n)
                };
                let wq = next()?;
                let wk = next()?;
                let wv = next()?;
                let wo = next()?;
                let w_up = next()?;
                let w_gate = next()?;
                let w_down = next()?;
                lm_blocks.push(LmBlock {
                    ln1: DirectVector::ones(format!("blk{b}.ln1"), *hidden),
                    wq,
                    wk,
                    wv,
                    wo,
                    ln2: DirectVector::ones(format!("blk{b}.ln2"), *hidden),
                    w_up,
                    w_gate,
                    w_down,
                });
            }
            Ok(Model::Lm(LmModel {
                dims: lm_dims,
                tok_emb,
                pos_emb,
                blocks: lm_blocks,
                lnf: DirectVector::ones("lnf", *hidden),
                head,
            }))
        }
        ModelSpec::LlamaLike { .. } => Err(TrainError::Config(
            "llama_like models are for parameter counting, not training".into(),
        )),
    }
}

/// One tracked probe: a fixed unit vector in the row space of a projection.
#[derive(Debug, Clone)]
pub struct ProbeVector<F> {
    pub matrix: String,
    pub v: Vec<F>,
}

/// Everything the training loop carries across steps; checkpoints store and
/// restore exactly this.
pub struct TrainState<F> {
    pub model: Model<F>,
    /// Completed optimizer steps.
    pub step: u64,
    pub steps_since_merge: Option<u64>,
    pub probes: Vec<ProbeVector<F>>,
    /// `(step, cosine)` per probe, aligned with `probes`.
    pub probe_history: Vec<Vec<(u64, f64)>>,
    /// `(step, descending sigmas)` per tracked matrix.
    pub sigma_history: Vec<Vec<(u64, Vec<f64>)>>,
}

/// Result of a completed run.
pub struct TrainOutcome<F> {
    pub state: TrainState<F>,
    pub records: Vec<MetricsRecord>,
}

fn draw_probes<F: Scalar>(model: &Model<F>, seed: u64) -> Vec<ProbeVector<F>> {
    let key = RngKey::from_seed(seed).child_named("probe");
    model
        .projections()
        .iter()
        .enumerate()
        .map(|(i, proj)| {
            let m = proj.shape().0;
            let mut stream = key.child(i as u64).stream();
            let mut v: Vec<F> = (0..m).map(|_| F::of(stream.next_gaussian())).collect();
            let norm = v.iter().fold(F::zero(), |acc, &x| acc + x * x).sqrt();
            for x in &mut v {
                *x = *x / norm;
            }
            ProbeVector { matrix: proj.name().to_string(), v }
        })
        .collect()
}

fn probe_value<F: Scalar>(proj: &Projection<F>, v: &[F]) -> f64 {
    let rv: Vec<F> = match proj {
        Projection::Poet(p) => p.layer.apply_r_to_vector(v),
        Projection::Dense(_) => v.to_vec(),
    };
    let mut num = F::zero();
    let mut den = F::zero();
    for (&a, &b) in v.iter().zip(&rv) {
        num = num + a * b;
        den = den + a * a;
    }
    // Exact 1.0 at the identity: the numerator and denominator are the
    // same accumulation when R v == v bitwise.
    (num / den).as_f64()
}

/// Fresh run state: model, probes, and the step-zero history rows.
pub fn init_state<F: Scalar>(
    cfg: &TrainConfig,
    dataset: &Dataset<F>,
) -> Result<TrainState<F>, TrainError> {
    let model = build_model(cfg, dataset.vocab_size())?;
    let probes = draw_probes(&model, cfg.seed);
    let mut probe_history = Vec::with_capacity(probes.len());
    let mut sigma_history = Vec::with_capacity(probes.len());
    for (proj, probe) in model.projections().iter().zip(&probes) {
        probe_history.push(vec![(0, probe_value(proj, &probe.v))]);
        let sigma = svd(&proj.effective_weight())
            .map(|f| f.sigma.iter().map(|s| s.as_f64()).collect())
            .unwrap_or_default();
        sigma_history.push(vec![(0, sigma)]);
    }
    Ok(TrainState { model, step: 0, steps_since_merge: None, probes, probe_history, sigma_history })
}

fn eval_record<F: Scalar>(
    cfg: &TrainConfig,
    state: &mut TrainState<F>,
    dataset: &Dataset<F>,
    step_done: u64,
    train_loss: f64,
    lr: f64,
) -> Result<MetricsRecord, TrainError> {
    let val_loss = state.model.eval_loss(dataset);
    let k = NeumannOrder::new(cfg.neumann_k).expect("validated");
    let mut he_total = 0.0;
    let mut entropy_sum = 0.0;
    let mut e_orth_max = 0.0f64;
    let mut per_matrix = Vec::new();
    let projections = state.model.projections();
    for (i, proj) in projections.iter().enumerate() {
        let w_eff = proj.effective_weight();
        he_total += hyperspherical_energy(&w_eff)?.as_f64();
        let f = svd(&w_eff).map_err(DiagError::from)?;
        entropy_sum += svd_entropy(&f.sigma)?.as_f64();
        if let Some(p) = proj.poet() {
            e_orth_max = e_orth_max
                .max(p.layer.r_prim().orth_error(k).as_f64())
                .max(p.layer.p_prim().orth_error(k).as_f64());
        }
        let probe_cos = probe_value(proj, &state.probes[i].v);
        let sigma_max = f.sigma.first().map(|s| s.as_f64()).unwrap_or(0.0);
        let sigma_min = f.sigma.last().map(|s| s.as_f64()).unwrap_or(0.0);
        state.probe_history[i].push((step_done, probe_cos));
        state.sigma_history[i].push((step_done, f.sigma.iter().map(|s| s.as_f64()).collect()));
        per_matrix.push(MatrixMetrics {
            name: proj.name().to_string(),
            probe_cos,
            sigma_max,
            sigma_min,
        });
    }
    Ok(MetricsRecord {
        step: step_done,
        train_loss,
        val_loss,
        lr,
        he_total,
        svd_entropy_mean: entropy_sum / projections.len().max(1) as f64,
        e_orth_max,
        per_matrix,
    })
}

/// Run (or continue) training; `observer` sees each metrics record as it is
/// produced. Fully deterministic for a fixed config.
pub fn train_from_state<F: Scalar>(
    cfg: &TrainConfig,
    mut state: TrainState<F>,
    dataset: &Dataset<F>,
    observer: &mut dyn FnMut(&MetricsRecord),
) -> Result<TrainOutcome<F>, TrainError> {
    cfg.validate()?;
    let root = RngKey::from_seed(cfg.seed);
    let batch_key = root.child_named("batch");
    let mut records = Vec::new();

    for step in state.step..cfg.total_steps as u64 {
        let batch = dataset.batch(cfg.batch_size, batch_key.child(step));
        state.model.zero_grads();
        let train_loss = state.model.train_step(&batch);
        if !train_loss.is_finite() {
            return Err(TrainError::Diverged { step });
        }

        let mut norm2 = 0.0;
        state.model.for_each_grad(&mut |g| {
            norm2 += global_grad_norm(&[g]).powi(2);
        });
        let norm = norm2.sqrt();
        let threshold = match state.steps_since_merge {
            Some(s) => post_merge_threshold(
                cfg.clip_threshold,
                s as usize,
                cfg.post_merge_clip_steps,
            ),
            None => cfg.clip_threshold,
        };
        let grad_scale = clip_scale(norm, threshold);

        let lr_theta =
            cosine_lr(step as usize, cfg.total_steps, cfg.lr_poet, cfg.warmup_steps, cfg.min_lr_ratio);
        let lr_direct = cosine_lr(
            step as usize,
            cfg.total_steps,
            cfg.lr_direct,
            cfg.warmup_steps,
            cfg.min_lr_ratio,
        );
        let args = UpdateArgs {
            lr_theta,
            lr_direct,
            weight_decay: cfg.weight_decay,
            grad_scale,
        };
        state.model.update(&args).map_err(|_| TrainError::Diverged { step })?;
        state.model.note_step();
        state.steps_since_merge = state.steps_since_merge.map(|s| s + 1);

        let step_done = step + 1;
        if step_done % cfg.merge_every as u64 == 0 {
            state.model.merge_all();
            state.steps_since_merge = Some(0);
        }
        if step_done % cfg.eval_every as u64 == 0 || step_done == cfg.total_steps as u64 {
            let record = eval_record(cfg, &mut state, dataset, step_done, train_loss, lr_theta)?;
            observer(&record);
            records.push(record);
        }
        state.step = step_done;
    }
    Ok(TrainOutcome { state, records })
}

/// Run a config from scratch.
pub fn train<F: Scalar>(
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&MetricsRecord),
) -> Result<TrainOutcome<F>, TrainError> {
    cfg.validate()?;
    let dataset = Dataset::new(cfg)?;
    let state = init_state(cfg, &dataset)?;
    train_from_state(cfg, state, &dataset, observer)
}

/// Compare every analytic theta gradient of `layer` against central finite
/// differences of the scalar loss; returns the worst relative error.
/// `loss` maps the layer output to `(value, dL/dy)`.
pub fn finite_diff_check<F: Scalar>(
    layer: &mut PoetLayer<F>,
    x: &crate::linalg::DenseMatrix<F>,
    loss: &dyn Fn(&crate::linalg::DenseMatrix<F>) -> (F, crate::linalg::DenseMatrix<F>),
    h: f64,
) -> f64 {
    let (y, cache) = layer.forward_cached(x).expect("shapes");
    let (_, dy) = loss(&y);
    let grads = layer.backward(x, &dy, &cache).expect("shapes");

    let mut worst = 0.0f64;
    let sides: [(usize, &Vec<Vec<F>>); 2] = [(0, &grads.r_theta), (1, &grads.p_theta)];
    for (side, analytic) in sides {
        for blk in 0..analytic.len() {
            for idx in 0..analytic[blk].len() {
                let a = analytic[blk][idx].as_f64();
                let fd = {
                    let mut eval_at = |delta: f64| -> f64 {
                        {
                            let mut blocks = if side == 0 {
                                layer.r_prim_mut().theta_blocks_mut()
                            } else {
                                layer.p_prim_mut().theta_blocks_mut()
                            };
                            blocks[blk][idx] = blocks[blk][idx] + F::of(delta);
                        }
                        let y = layer.forward(x).expect("shapes");
                        let (l, _) = loss(&y);
                        {
                            let mut blocks = if side == 0 {
                                layer.r_prim_mut().theta_blocks_mut()
                            } else {
                                layer.p_prim_mut().theta_blocks_mut()
                            };
                            blocks[blk][idx] = blocks[blk][idx] - F::of(delta);
                        }
                        l.as_f64()
                    };
                    (eval_at(h) - eval_at(-h)) / (2.0 * h)
                };
                let rel = (a - fd).abs() / (a.abs() + 1e-12);
                worst = worst.max(rel);
            }
        }
    }
    worst
}
