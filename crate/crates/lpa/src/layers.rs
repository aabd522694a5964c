//! Model building blocks: dense and factored linear maps, causal
//! multi-head attention, both feed-forward variants, norms, and residual
//! blocks in three normalization arrangements.
//!
//! A factored linear replaces one `d_in x d_out` weight with the pair
//! `W_A (d_in x r)`, `W_B (r x d_out)` applied in sequence. It carries
//! `r*(d_in + d_out)` parameters, fewer than dense exactly when
//! `r < d_in*d_out/(d_in + d_out)`; construction above that break-even
//! point is allowed but logs a warning. Attention carves heads out of the
//! *output* of the (possibly factored) full-width projections, so the
//! bottleneck sits before the head split.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Which per-row normalizer a block uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    /// Mean-centered, variance-normalized, with gain and bias.
    Layer,
    /// Root-mean-square rescaling with gain only.
    Rms,
}

impl NormKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NormKind::Layer => "layer",
            NormKind::Rms => "rms",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "layer" => Some(NormKind::Layer),
            "rms" => Some(NormKind::Rms),
            _ => None,
        }
    }
}

/// Where the normalizer sits relative to the sublayer and the residual
/// add. The config-file spellings are historical labels; the variants
/// here name the actual composition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockOrder {
    /// `y = x + Norm(Sublayer(x))` — spelled `setting1`.
    NormAfterSublayer,
    /// `y = x + Sublayer(Norm(x))` — spelled `setting2`.
    NormBeforeSublayer,
    /// `y = Norm(x + Sublayer(x))` — spelled `postnorm_classic`.
    NormAfterResidual,
}

impl BlockOrder {
    pub fn as_str(self) -> &'static str {
        match self {
            BlockOrder::NormAfterSublayer => "setting1",
            BlockOrder::NormBeforeSublayer => "setting2",
            BlockOrder::NormAfterResidual => "postnorm_classic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "setting1" => Some(BlockOrder::NormAfterSublayer),
            "setting2" => Some(BlockOrder::NormBeforeSublayer),
            "postnorm_classic" => Some(BlockOrder::NormAfterResidual),
            _ => None,
        }
    }
}

/// Feed-forward variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FfnKind {
    /// Two matrices with a relu between: `relu(x W_U) W_D`.
    Relu2,
    /// Three matrices with a silu gate: `(silu(x W_G) ⊙ (x W_U)) W_D`.
    Swiglu3,
}

impl FfnKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FfnKind::Relu2 => "relu2",
            FfnKind::Swiglu3 => "swiglu3",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu2" => Some(FfnKind::Relu2),
            "swiglu3" => Some(FfnKind::Swiglu3),
            _ => None,
        }
    }

    /// Number of weight matrices the variant owns (2 without a gate,
    /// 3 with one).
    pub fn matrix_count(self) -> usize {
        match self {
            FfnKind::Relu2 => 2,
            FfnKind::Swiglu3 => 3,
        }
    }
}

fn normal_tensor<T: Scalar>(rng: &mut Rng, shape: &[usize], std: f64) -> Tensor<T> {
    let numel: usize = shape.iter().product();
    let vals: Vec<T> = (0..numel).map(|_| T::from_f64(rng.normal(std))).collect();
    Tensor::parameter(vals, shape).expect("shape and buffer sized together")
}

/// Single dense weight, applied as `x · W`.
pub struct DenseLinear<T: Scalar> {
    w: Tensor<T>,
}

impl<T: Scalar> DenseLinear<T> {
    /// Fan-in init: entries drawn from Normal(0, 1/d_in).
    pub fn init(d_in: usize, d_out: usize, rng: &mut Rng) -> Self {
        let std = (1.0 / d_in as f64).sqrt();
        DenseLinear {
            w: normal_tensor(rng, &[d_in, d_out], std),
        }
    }

    pub fn from_weight(w: Tensor<T>) -> Result<Self> {
        if w.shape().len() != 2 {
            return Err(Error::Config(format!(
                "linear weight must be rank 2, got {:?}",
                w.shape()
            )));
        }
        Ok(DenseLinear { w })
    }

    pub fn weight(&self) -> &Tensor<T> {
        &self.w
    }

    pub fn d_in(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.matmul(&self.w)
    }

    /// Parameters of a dense `d_in x d_out` map.
    pub fn param_count_for(d_in: usize, d_out: usize) -> u64 {
        (d_in * d_out) as u64
    }

    pub fn param_count(&self) -> u64 {
        self.w.numel() as u64
    }
}

/// Low-dimensional factor pair, applied as `(x · W_A) · W_B`.
pub struct FactoredLinear<T: Scalar> {
    w_a: Tensor<T>,
    w_b: Tensor<T>,
}

impl<T: Scalar> FactoredLinear<T> {
    /// Both factors trainable from scratch: `W_A ~ Normal(0, 1/d_in)` and
    /// `W_B ~ Normal(0, 1/r)`, so the product variance matches dense
    /// fan-in init. (Zero-initializing `W_B` would kill the gradient to
    /// `W_A` and leave the module dead.)
    pub fn init(d_in: usize, d_out: usize, rank: usize, rng: &mut Rng) -> Result<Self> {
        if rank == 0 {
            return Err(Error::Config("factored rank must be positive".into()));
        }
        if rank * (d_in + d_out) >= d_in * d_out {
            log::warn!(
                "factored {d_in}x{d_out} map at rank {rank} holds {} parameters, \
                 not fewer than the {} of the dense map it replaces",
                rank * (d_in + d_out),
                d_in * d_out
            );
        }
        let w_a = normal_tensor(rng, &[d_in, rank], (1.0 / d_in as f64).sqrt());
        let w_b = normal_tensor(rng, &[rank, d_out], (1.0 / rank as f64).sqrt());
        Ok(FactoredLinear { w_a, w_b })
    }

    /// Best rank-`r` factorization of an existing dense weight, splitting
    /// the singular values evenly across the two factors. At full rank
    /// the product reproduces the dense map.
    pub fn from_dense_svd(dense: &DenseLinear<T>, rank: usize) -> Result<Self> {
        let (d_in, d_out) = (dense.d_in(), dense.d_out());
        if rank == 0 || rank > d_in.min(d_out) {
            return Err(Error::Config(format!(
                "svd rank {rank} outside 1..={} for a {d_in}x{d_out} weight",
                d_in.min(d_out)
            )));
        }
        let w64: Vec<f64> = dense.weight().values().iter().map(|&v| v.to_f64()).collect();
        let mat = nalgebra::DMatrix::from_row_slice(d_in, d_out, &w64);
        let svd = mat.svd(true, true);
        let u = svd.u.as_ref().expect("svd requested u");
        let vt = svd.v_t.as_ref().expect("svd requested v_t");
        let mut a = vec![T::zero(); d_in * rank];
        let mut b = vec![T::zero(); rank * d_out];
        for j in 0..rank {
            let s = svd.singular_values[j].max(0.0).sqrt();
            for i in 0..d_in {
                a[i * rank + j] = T::from_f64(u[(i, j)] * s);
            }
            for k in 0..d_out {
                b[j * d_out + k] = T::from_f64(s * vt[(j, k)]);
            }
        }
        Ok(FactoredLinear {
            w_a: Tensor::parameter(a, &[d_in, rank])?,
            w_b: Tensor::parameter(b, &[rank, d_out])?,
        })
    }

    pub fn factor_a(&self) -> &Tensor<T> {
        &self.w_a
    }

    pub fn factor_b(&self) -> &Tensor<T> {
        &self.w_b
    }

    pub fn d_in(&self) -> usize {
        self.w_a.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.w_b.shape()[1]
    }

    pub fn rank(&self) -> usize {
        self.w_a.shape()[1]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.matmul(&self.w_a)?.matmul(&self.w_b)
    }

    /// Parameters of a rank-`r` factored `d_in x d_out` map.
    pub fn param_count_for(d_in: usize, d_out: usize, rank: usize) -> u64 {
        (rank * (d_in + d_out)) as u64
    }

    pub fn param_count(&self) -> u64 {
        (self.w_a.numel() + self.w_b.numel()) as u64
    }
}

/// A linear map that is dense or factored depending on placement.
pub enum Linear<T: Scalar> {
    Dense(DenseLinear<T>),
    Factored(FactoredLinear<T>),
}

impl<T: Scalar> Linear<T> {
    pub fn init(d_in: usize, d_out: usize, rank: Option<usize>, rng: &mut Rng) -> Result<Self> {
        Ok(match rank {
            None => Linear::Dense(DenseLinear::init(d_in, d_out, rng)),
            Some(r) => Linear::Factored(FactoredLinear::init(d_in, d_out, r, rng)?),
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Linear::Dense(l) => l.forward(x),
            Linear::Factored(l) => l.forward(x),
        }
    }

    pub fn d_in(&self) -> usize {
        match self {
            Linear::Dense(l) => l.d_in(),
            Linear::Factored(l) => l.d_in(),
        }
    }

    pub fn d_out(&self) -> usize {
        match self {
            Linear::Dense(l) => l.d_out(),
            Linear::Factored(l) => l.d_out(),
        }
    }

    pub fn is_factored(&self) -> bool {
        matches!(self, Linear::Factored(_))
    }

    pub fn as_dense(&self) -> Option<&DenseLinear<T>> {
        match self {
            Linear::Dense(l) => Some(l),
            Linear::Factored(_) => None,
        }
    }

    pub fn as_factored(&self) -> Option<&FactoredLinear<T>> {
        match self {
            Linear::Dense(_) => None,
            Linear::Factored(l) => Some(l),
        }
    }

    pub fn param_count(&self) -> u64 {
        match self {
            Linear::Dense(l) => l.param_count(),
            Linear::Factored(l) => l.param_count(),
        }
    }

    pub fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        match self {
            Linear::Dense(l) => f(format!("{prefix}.w"), &l.w),
            Linear::Factored(l) => {
                f(format!("{prefix}.w_a"), &l.w_a);
                f(format!("{prefix}.w_b"), &l.w_b);
            }
        }
    }
}

/// Per-row normalizer with learned gain (and bias for the centered kind).
pub struct Norm<T: Scalar> {
    kind: NormKind,
    gain: Tensor<T>,
    bias: Option<Tensor<T>>,
}

impl<T: Scalar> Norm<T> {
    /// Gains start at one, biases at zero.
    pub fn init(kind: NormKind, dim: usize) -> Self {
        let gain = Tensor::parameter(vec![T::one(); dim], &[dim]).expect("sized locally");
        let bias = match kind {
            NormKind::Layer => {
                Some(Tensor::parameter(vec![T::zero(); dim], &[dim]).expect("sized locally"))
            }
            NormKind::Rms => None,
        };
        Norm { kind, gain, bias }
    }

    pub fn kind(&self) -> NormKind {
        self.kind
    }

    pub fn gain(&self) -> &Tensor<T> {
        &self.gain
    }

    pub fn bias(&self) -> Option<&Tensor<T>> {
        self.bias.as_ref()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self.kind {
            NormKind::Layer => x.layer_norm(&self.gain, self.bias.as_ref().expect("layer has bias")),
            NormKind::Rms => x.rms_norm(&self.gain),
        }
    }

    pub fn param_count(&self) -> u64 {
        (self.gain.numel() + self.bias.as_ref().map_or(0, |b| b.numel())) as u64
    }

    pub fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f(format!("{prefix}.gain"), &self.gain);
        if let Some(b) = &self.bias {
            f(format!("{prefix}.bias"), b);
        }
    }
}

/// Position-wise feed-forward sublayer.
pub struct FeedForward<T: Scalar> {
    kind: FfnKind,
    gate: Option<Linear<T>>,
    up: Linear<T>,
    down: Linear<T>,
}

impl<T: Scalar> FeedForward<T> {
    /// When `rank` is set, every matrix in the variant is factored (two
    /// for the relu form, all three for the gated form). Draw order:
    /// gate, up, down.
    pub fn init(
        d_model: usize,
        ffn_dim: usize,
        kind: FfnKind,
        rank: Option<usize>,
        rng: &mut Rng,
    ) -> Result<Self> {
        let gate = match kind {
            FfnKind::Swiglu3 => Some(Linear::init(d_model, ffn_dim, rank, rng)?),
            FfnKind::Relu2 => None,
        };
        let up = Linear::init(d_model, ffn_dim, rank, rng)?;
        let down = Linear::init(ffn_dim, d_model, rank, rng)?;
        Ok(FeedForward {
            kind,
            gate,
            up,
            down,
        })
    }

    pub fn from_parts(
        kind: FfnKind,
        gate: Option<Linear<T>>,
        up: Linear<T>,
        down: Linear<T>,
    ) -> Result<Self> {
        if (kind == FfnKind::Swiglu3) != gate.is_some() {
            return Err(Error::Config(
                "gate weight present iff the variant is gated".into(),
            ));
        }
        Ok(FeedForward {
            kind,
            gate,
            up,
            down,
        })
    }

    pub fn kind(&self) -> FfnKind {
        self.kind
    }

    pub fn up(&self) -> &Linear<T> {
        &self.up
    }

    pub fn down(&self) -> &Linear<T> {
        &self.down
    }

    pub fn gate(&self) -> Option<&Linear<T>> {
        self.gate.as_ref()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self.kind {
            FfnKind::Relu2 => self.down.forward(&self.up.forward(x)?.relu()),
            FfnKind::Swiglu3 => {
                let gate = self.gate.as_ref().expect("gated variant");
                let g = gate.forward(x)?.silu();
                let u = self.up.forward(x)?;
                self.down.forward(&g.mul(&u)?)
            }
        }
    }

    pub fn param_count(&self) -> u64 {
        self.gate.as_ref().map_or(0, |g| g.param_count())
            + self.up.param_count()
            + self.down.param_count()
    }

    pub fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        if let Some(g) = &self.gate {
            g.visit_params(&format!("{prefix}.gate"), f);
        }
        self.up.visit_params(&format!("{prefix}.up"), f);
        self.down.visit_params(&format!("{prefix}.down"), f);
    }
}

/// Causal multi-head self-attention.
///
/// The four projections are full-width (`d_model -> d_attn` for Q/K/V,
/// `d_attn -> d_model` for O) and individually dense or factored; heads
/// are column slices of the projection outputs. Scores use the per-head
/// scale `1/sqrt(d_attn/heads)`. When a rotary base is supplied, per-head
/// Q and K rows are rotated by position before scoring.
pub struct AttentionLayer<T: Scalar> {
    q: Linear<T>,
    k: Linear<T>,
    v: Linear<T>,
    o: Linear<T>,
    heads: usize,
}

impl<T: Scalar> AttentionLayer<T> {
    /// `ranks` selects dense (`None`) or factored (`Some(r)`) per
    /// projection, in Q, K, V, O order — also the parameter draw order.
    pub fn init(
        d_model: usize,
        d_attn: usize,
        heads: usize,
        ranks: [Option<usize>; 4],
        rng: &mut Rng,
    ) -> Result<Self> {
        if heads == 0 || !d_attn.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "attention width {d_attn} not divisible into {heads} heads"
            )));
        }
        let q = Linear::init(d_model, d_attn, ranks[0], rng)?;
        let k = Linear::init(d_model, d_attn, ranks[1], rng)?;
        let v = Linear::init(d_model, d_attn, ranks[2], rng)?;
        let o = Linear::init(d_attn, d_model, ranks[3], rng)?;
        Ok(AttentionLayer { q, k, v, o, heads })
    }

    pub fn from_parts(
        q: Linear<T>,
        k: Linear<T>,
        v: Linear<T>,
        o: Linear<T>,
        heads: usize,
    ) -> Result<Self> {
        let d_attn = q.d_out();
        if k.d_out() != d_attn || v.d_out() != d_attn || o.d_in() != d_attn {
            return Err(Error::Config("attention projection widths disagree".into()));
        }
        if heads == 0 || !d_attn.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "attention width {d_attn} not divisible into {heads} heads"
            )));
        }
        Ok(AttentionLayer { q, k, v, o, heads })
    }

    pub fn query(&self) -> &Linear<T> {
        &self.q
    }

    pub fn key(&self) -> &Linear<T> {
        &self.k
    }

    pub fn value(&self) -> &Linear<T> {
        &self.v
    }

    pub fn output(&self) -> &Linear<T> {
        &self.o
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn head_dim(&self) -> usize {
        self.q.d_out() / self.heads
    }

    pub fn forward(&self, x: &Tensor<T>, rotary_base: Option<f64>) -> Result<Tensor<T>> {
        let q = self.q.forward(x)?;
        let k = self.k.forward(x)?;
        let v = self.v.forward(x)?;
        let dh = self.head_dim();
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());
        let mut merged = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let mut qh = q.narrow_cols(h * dh, dh)?;
            let mut kh = k.narrow_cols(h * dh, dh)?;
            if let Some(base) = rotary_base {
                qh = qh.rope(base)?;
                kh = kh.rope(base)?;
            }
            let vh = v.narrow_cols(h * dh, dh)?;
            let weights = qh.matmul_nt(&kh)?.scale(scale).causal_softmax()?;
            merged.push(weights.matmul(&vh)?);
        }
        self.o.forward(&Tensor::concat_cols(&merged)?)
    }

    pub fn param_count(&self) -> u64 {
        self.q.param_count()
            + self.k.param_count()
            + self.v.param_count()
            + self.o.param_count()
    }

    pub fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.q.visit_params(&format!("{prefix}.q"), f);
        self.k.visit_params(&format!("{prefix}.k"), f);
        self.v.visit_params(&format!("{prefix}.v"), f);
        self.o.visit_params(&format!("{prefix}.o"), f);
    }
}

/// One residual block: attention sub-block then feed-forward sub-block,
/// each arranged per the configured [`BlockOrder`].
pub struct Block<T: Scalar> {
    attn: AttentionLayer<T>,
    ffn: FeedForward<T>,
    norm_attn: Norm<T>,
    norm_ffn: Norm<T>,
    order: BlockOrder,
}

/// Everything needed to build one block. `attn_ranks`/`ffn_rank` select
/// factored projections; `None` everywhere is the dense baseline.
pub struct BlockSpec {
    pub d_model: usize,
    pub d_attn: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub norm: NormKind,
    pub order: BlockOrder,
    pub ffn_kind: FfnKind,
    pub attn_ranks: [Option<usize>; 4],
    pub ffn_rank: Option<usize>,
}

impl<T: Scalar> Block<T> {
    /// Draw order: attention (Q, K, V, O), then ffn (gate, up, down).
    /// Norm gains/biases are constant-initialized and draw nothing.
    pub fn init(spec: &BlockSpec, rng: &mut Rng) -> Result<Self> {
        let attn = AttentionLayer::init(
            spec.d_model,
            spec.d_attn,
            spec.heads,
            spec.attn_ranks,
            rng,
        )?;
        let ffn = FeedForward::init(spec.d_model, spec.ffn_dim, spec.ffn_kind, spec.ffn_rank, rng)?;
        Ok(Block {
            attn,
            ffn,
            norm_attn: Norm::init(spec.norm, spec.d_model),
            norm_ffn: Norm::init(spec.norm, spec.d_model),
            order: spec.order,
        })
    }

    pub fn attention(&self) -> &AttentionLayer<T> {
        &self.attn
    }

    pub fn feed_forward(&self) -> &FeedForward<T> {
        &self.ffn
    }

    pub fn attn_norm(&self) -> &Norm<T> {
        &self.norm_attn
    }

    pub fn ffn_norm(&self) -> &Norm<T> {
        &self.norm_ffn
    }

    pub fn order(&self) -> BlockOrder {
        self.order
    }

    fn residual(
        &self,
        x: &Tensor<T>,
        norm: &Norm<T>,
        sub: impl Fn(&Tensor<T>) -> Result<Tensor<T>>,
    ) -> Result<Tensor<T>> {
        match self.order {
            BlockOrder::NormAfterSublayer => x.add(&norm.forward(&sub(x)?)?),
            BlockOrder::NormBeforeSublayer => x.add(&sub(&norm.forward(x)?)?),
            BlockOrder::NormAfterResidual => norm.forward(&x.add(&sub(x)?)?),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, rotary_base: Option<f64>) -> Result<Tensor<T>> {
        let after_attn =
            self.residual(x, &self.norm_attn, |inp| self.attn.forward(inp, rotary_base))?;
        self.residual(&after_attn, &self.norm_ffn, |inp| self.ffn.forward(inp))
    }

    pub fn param_count(&self) -> u64 {
        self.attn.param_count()
            + self.ffn.param_count()
            + self.norm_attn.param_count()
            + self.norm_ffn.param_count()
    }

    pub fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.attn.visit_params(&format!("{prefix}.attn"), f);
        self.norm_attn.visit_params(&format!("{prefix}.norm_attn"), f);
        self.ffn.visit_params(&format!("{prefix}.ffn"), f);
        self.norm_ffn.visit_params(&format!("{prefix}.norm_ffn"), f);
    }
}

/// Sublayer family probed by [`jacobian_dependence`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Attention,
    Ffn,
}

/// Which input rows each output row of a randomly initialized sublayer
/// depends on, measured through the gradient: entry `(i, j)` of the
/// returned row-major `len x len` matrix is true iff nudging input row
/// `j` moves output row `i`, i.e. some element of `d(sum of row i)/dx_j`
/// exceeds 1e-8 in magnitude.
///
/// The feed-forward probe uses the smooth gated variant so that generic
/// nonzeros cannot be hidden by a dead relu.
pub fn jacobian_dependence(kind: LayerKind, len: usize, dim: usize) -> Result<Vec<bool>> {
    type ForwardFn = Box<dyn Fn(&Tensor<f64>) -> Result<Tensor<f64>>>;
    const THRESHOLD: f64 = 1e-8;
    let mut rng = Rng::seed_from_u64(0x6a63_6f62);
    let x_vals: Vec<f64> = (0..len * dim).map(|_| rng.normal(1.0)).collect();
    let x = Tensor::<f64>::input(x_vals, &[len, dim])?;
    let forward: ForwardFn = match kind {
        LayerKind::Attention => {
            let layer = AttentionLayer::<f64>::init(dim, dim, 1, [None; 4], &mut rng)?;
            Box::new(move |inp| layer.forward(inp, None))
        }
        LayerKind::Ffn => {
            let layer =
                FeedForward::<f64>::init(dim, 2 * dim, FfnKind::Swiglu3, None, &mut rng)?;
            Box::new(move |inp| layer.forward(inp))
        }
    };
    let mut dep = vec![false; len * len];
    for i in 0..len {
        x.zero_grad();
        let y = forward(&x)?;
        y.narrow_rows(i, 1)?.sum_all().backward()?;
        let grad = x.grad().unwrap_or_else(|| vec![0.0; len * dim]);
        for j in 0..len {
            dep[i * len + j] = grad[j * dim..(j + 1) * dim]
                .iter()
                .any(|g| g.abs() > THRESHOLD);
        }
    }
    Ok(dep)
}

#[cfg(test)]
mod tests;
