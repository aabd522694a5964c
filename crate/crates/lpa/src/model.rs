//! Whole decoder-only language models: configuration, placement
//! resolution, assembly, the LM objective, sampling, and checkpoints.

mod checkpoint;

pub use checkpoint::{load_checkpoint, peek_config, save_checkpoint, TrainState};

use crate::error::{Error, Result};
use crate::layers::{Block, BlockOrder, BlockSpec, DenseLinear, FfnKind, Norm, NormKind};
use crate::rng::Rng;
use crate::scalar::{Precision, Scalar};
use crate::tensor::Tensor;

/// Rotation frequency base used when positions are rotary.
pub const ROTARY_BASE: f64 = 10000.0;

/// Attention projections that placement can factor, as a set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttnSubset(u8);

impl AttnSubset {
    pub const Q: AttnSubset = AttnSubset(1);
    pub const K: AttnSubset = AttnSubset(2);
    pub const V: AttnSubset = AttnSubset(4);
    pub const O: AttnSubset = AttnSubset(8);

    pub const EMPTY: AttnSubset = AttnSubset(0);
    pub const ALL: AttnSubset = AttnSubset(15);

    pub fn union(self, other: AttnSubset) -> AttnSubset {
        AttnSubset(self.0 | other.0)
    }

    pub fn contains(self, member: AttnSubset) -> bool {
        self.0 & member.0 == member.0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Rebuild from the backing bits (Q=1, K=2, V=4, O=8); `None` if any
    /// higher bit is set.
    pub fn from_bits(bits: u8) -> Option<AttnSubset> {
        (bits <= Self::ALL.0).then_some(AttnSubset(bits))
    }

    /// Canonical spelling: the included projections in `qkvo` order,
    /// lower-case (empty set renders as an empty string).
    pub fn as_string(self) -> String {
        let mut s = String::new();
        for (bit, ch) in [(Self::Q, 'q'), (Self::K, 'k'), (Self::V, 'v'), (Self::O, 'o')] {
            if self.contains(bit) {
                s.push(ch);
            }
        }
        s
    }

    /// Accepts any order and case; rejects other characters.
    pub fn parse(s: &str) -> Option<Self> {
        let mut set = Self::EMPTY;
        for ch in s.chars() {
            set = set.union(match ch.to_ascii_lowercase() {
                'q' => Self::Q,
                'k' => Self::K,
                'v' => Self::V,
                'o' => Self::O,
                _ => return None,
            });
        }
        Some(set)
    }
}

/// Where factored modules go.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlacementMode {
    /// Fully dense baseline.
    None,
    /// Factor the selected attention projections only.
    Attn,
    /// Factor the feed-forward matrices only.
    Ffn,
    /// Factor the selected attention projections and the feed-forward.
    All,
}

impl PlacementMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PlacementMode::None => "none",
            PlacementMode::Attn => "attn",
            PlacementMode::Ffn => "ffn",
            PlacementMode::All => "all",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(PlacementMode::None),
            "attn" => Some(PlacementMode::Attn),
            "ffn" => Some(PlacementMode::Ffn),
            "all" => Some(PlacementMode::All),
            _ => None,
        }
    }
}

/// Which linear maps are factored, and at what rank.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlacementSpec {
    pub mode: PlacementMode,
    /// Attention projections affected; read when `mode` is attn or all.
    pub attn_sublayers: AttnSubset,
    /// Factor rank; read whenever `mode` is not none.
    pub rank: usize,
}

impl PlacementSpec {
    pub fn dense() -> Self {
        PlacementSpec {
            mode: PlacementMode::None,
            attn_sublayers: AttnSubset::ALL,
            rank: 0,
        }
    }

    /// The canonical factored-attention placement: all four projections.
    pub fn attn_all(rank: usize) -> Self {
        PlacementSpec {
            mode: PlacementMode::Attn,
            attn_sublayers: AttnSubset::ALL,
            rank,
        }
    }

    pub fn attn_subset(subset: AttnSubset, rank: usize) -> Self {
        PlacementSpec {
            mode: PlacementMode::Attn,
            attn_sublayers: subset,
            rank,
        }
    }

    pub fn ffn(rank: usize) -> Self {
        PlacementSpec {
            mode: PlacementMode::Ffn,
            attn_sublayers: AttnSubset::ALL,
            rank,
        }
    }

    pub fn all(rank: usize) -> Self {
        PlacementSpec {
            mode: PlacementMode::All,
            attn_sublayers: AttnSubset::ALL,
            rank,
        }
    }

    /// Per-projection ranks in Q, K, V, O order.
    pub fn attn_ranks(&self) -> [Option<usize>; 4] {
        let active = matches!(self.mode, PlacementMode::Attn | PlacementMode::All);
        let pick = |member: AttnSubset| {
            (active && self.attn_sublayers.contains(member)).then_some(self.rank)
        };
        [
            pick(AttnSubset::Q),
            pick(AttnSubset::K),
            pick(AttnSubset::V),
            pick(AttnSubset::O),
        ]
    }

    pub fn ffn_rank(&self) -> Option<usize> {
        matches!(self.mode, PlacementMode::Ffn | PlacementMode::All).then_some(self.rank)
    }
}

/// How absolute position enters the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PositionKind {
    /// Learned position embedding table added to token embeddings.
    Learned,
    /// Rotary: per-head Q/K rows rotated by position inside attention.
    Rotary,
}

impl PositionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PositionKind::Learned => "learned",
            PositionKind::Rotary => "rotary",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "learned" => Some(PositionKind::Learned),
            "rotary" => Some(PositionKind::Rotary),
            _ => None,
        }
    }
}

/// Complete architecture description; everything needed to build a model
/// (and to price one without building it).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub head_count: usize,
    pub ffn_dim: usize,
    pub layer_count: usize,
    pub max_seq_len: usize,
    pub norm: NormKind,
    pub order: BlockOrder,
    pub ffn_variant: FfnKind,
    pub placement: PlacementSpec,
    /// Attention projection width: Q/K/V map `d_model -> attn_inner_dim`
    /// and O maps back. Defaults to `d_model`; widened by surplus
    /// reallocation.
    pub attn_inner_dim: usize,
    pub position: PositionKind,
    pub tie_embeddings: bool,
    pub precision: Precision,
}

impl ModelConfig {
    /// A config with the given core dims and every knob at its default:
    /// dense placement, layer norm, post-order `setting1`, relu-style
    /// ffn, learned positions, untied embeddings, f32.
    pub fn new(
        vocab_size: usize,
        d_model: usize,
        head_count: usize,
        ffn_dim: usize,
        layer_count: usize,
        max_seq_len: usize,
    ) -> Self {
        ModelConfig {
            vocab_size,
            d_model,
            head_count,
            ffn_dim,
            layer_count,
            max_seq_len,
            norm: NormKind::Layer,
            order: BlockOrder::NormAfterSublayer,
            ffn_variant: FfnKind::Relu2,
            placement: PlacementSpec::dense(),
            attn_inner_dim: d_model,
            position: PositionKind::Learned,
            tie_embeddings: false,
            precision: Precision::F32,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.attn_inner_dim / self.head_count
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("head_count", self.head_count),
            ("ffn_dim", self.ffn_dim),
            ("layer_count", self.layer_count),
            ("max_seq_len", self.max_seq_len),
            ("attn_inner_dim", self.attn_inner_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.attn_inner_dim.is_multiple_of(self.head_count) {
            return Err(Error::Config(format!(
                "attn_inner_dim {} not divisible by head_count {}",
                self.attn_inner_dim, self.head_count
            )));
        }
        if self.placement.mode != PlacementMode::None && self.placement.rank == 0 {
            return Err(Error::Config(
                "placement rank must be positive when placement is active".into(),
            ));
        }
        if self.position == PositionKind::Rotary && !self.head_dim().is_multiple_of(2) {
            return Err(Error::Config(format!(
                "rotary positions need an even head dim, got {}",
                self.head_dim()
            )));
        }
        Ok(())
    }

    /// Canonical `key=value` record: one line per field, keys sorted,
    /// trailing newline. This is what checkpoints embed.
    pub fn to_record(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("attn_inner_dim={}\n", self.attn_inner_dim));
        s.push_str(&format!(
            "attn_sublayers={}\n",
            self.placement.attn_sublayers.as_string()
        ));
        s.push_str(&format!("d_model={}\n", self.d_model));
        s.push_str(&format!("ffn_dim={}\n", self.ffn_dim));
        s.push_str(&format!("ffn_variant={}\n", self.ffn_variant.as_str()));
        s.push_str(&format!("head_count={}\n", self.head_count));
        s.push_str(&format!("layer_count={}\n", self.layer_count));
        s.push_str(&format!("max_seq_len={}\n", self.max_seq_len));
        s.push_str(&format!("norm={}\n", self.norm.as_str()));
        s.push_str(&format!("order={}\n", self.order.as_str()));
        s.push_str(&format!("placement_mode={}\n", self.placement.mode.as_str()));
        s.push_str(&format!("placement_rank={}\n", self.placement.rank));
        s.push_str(&format!("position={}\n", self.position.as_str()));
        s.push_str(&format!("precision={}\n", self.precision.as_str()));
        s.push_str(&format!("tie_embeddings={}\n", self.tie_embeddings));
        s.push_str(&format!("vocab_size={}\n", self.vocab_size));
        s
    }

    /// Parse a record produced by [`ModelConfig::to_record`]. Unknown
    /// keys are rejected except `trainstate.*`, which belong to the
    /// optional training state riding in the same record.
    pub fn from_record(record: &str) -> Result<Self> {
        let mut cfg = ModelConfig::new(1, 1, 1, 1, 1, 1);
        let mut placement_mode = PlacementMode::None;
        let mut placement_rank = 0usize;
        let mut subset = AttnSubset::ALL;
        let mut seen = std::collections::BTreeSet::new();
        let bad = |key: &str, value: &str| {
            Error::Format(format!("config record: bad value {value:?} for {key}"))
        };
        for line in record.lines() {
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("config record: malformed line {line:?}")))?;
            if !seen.insert(key.to_string()) {
                return Err(Error::Format(format!(
                    "config record: duplicate key {key}"
                )));
            }
            let parse_num = |v: &str| v.parse::<usize>().map_err(|_| bad(key, v));
            match key {
                "attn_inner_dim" => cfg.attn_inner_dim = parse_num(value)?,
                "attn_sublayers" => {
                    subset = AttnSubset::parse(value).ok_or_else(|| bad(key, value))?
                }
                "d_model" => cfg.d_model = parse_num(value)?,
                "ffn_dim" => cfg.ffn_dim = parse_num(value)?,
                "ffn_variant" => {
                    cfg.ffn_variant = FfnKind::parse(value).ok_or_else(|| bad(key, value))?
                }
                "head_count" => cfg.head_count = parse_num(value)?,
                "layer_count" => cfg.layer_count = parse_num(value)?,
                "max_seq_len" => cfg.max_seq_len = parse_num(value)?,
                "norm" => cfg.norm = NormKind::parse(value).ok_or_else(|| bad(key, value))?,
                "order" => cfg.order = BlockOrder::parse(value).ok_or_else(|| bad(key, value))?,
                "placement_mode" => {
                    placement_mode = PlacementMode::parse(value).ok_or_else(|| bad(key, value))?
                }
                "placement_rank" => placement_rank = parse_num(value)?,
                "position" => {
                    cfg.position = PositionKind::parse(value).ok_or_else(|| bad(key, value))?
                }
                "precision" => {
                    cfg.precision = Precision::parse(value).ok_or_else(|| bad(key, value))?
                }
                "tie_embeddings" => {
                    cfg.tie_embeddings = match value {
                        "true" => true,
                        "false" => false,
                        _ => return Err(bad(key, value)),
                    }
                }
                "vocab_size" => cfg.vocab_size = parse_num(value)?,
                _ if key.starts_with("trainstate.") => {}
                _ => {
                    return Err(Error::Format(format!(
                        "config record: unknown key {key}"
                    )))
                }
            }
        }
        cfg.placement = PlacementSpec {
            mode: placement_mode,
            attn_sublayers: subset,
            rank: placement_rank,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A built decoder-only language model.
pub struct Model<T: Scalar> {
    config: ModelConfig,
    embed: Tensor<T>,
    pos: Option<Tensor<T>>,
    blocks: Vec<Block<T>>,
    final_norm: Norm<T>,
    head: Option<DenseLinear<T>>,
}

impl<T: Scalar> std::fmt::Debug for Model<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("config", &self.config)
            .field("param_count", &self.param_count())
            .finish_non_exhaustive()
    }
}

/// Initialization spread for the embedding tables.
const EMBED_STD: f64 = 0.02;

/// Build a model from its config, deterministically in `seed`.
///
/// Parameter draw order is fixed: token embedding, learned positions (if
/// configured), each block in layer order (attention Q/K/V/O then ffn),
/// untied output head last. Norm parameters are constant-initialized.
pub fn build_model<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<Model<T>> {
    config.validate()?;
    if T::PRECISION != config.precision {
        return Err(Error::Config(format!(
            "config precision {} does not match element type {}",
            config.precision,
            T::PRECISION
        )));
    }
    let mut rng = Rng::seed_from_u64(seed);
    let normal = |rng: &mut Rng, shape: &[usize], std: f64| -> Tensor<T> {
        let numel: usize = shape.iter().product();
        let vals: Vec<T> = (0..numel).map(|_| T::from_f64(rng.normal(std))).collect();
        Tensor::parameter(vals, shape).expect("shape and buffer sized together")
    };
    let embed = normal(&mut rng, &[config.vocab_size, config.d_model], EMBED_STD);
    let pos = match config.position {
        PositionKind::Learned => Some(normal(
            &mut rng,
            &[config.max_seq_len, config.d_model],
            EMBED_STD,
        )),
        PositionKind::Rotary => None,
    };
    let block_spec = BlockSpec {
        d_model: config.d_model,
        d_attn: config.attn_inner_dim,
        heads: config.head_count,
        ffn_dim: config.ffn_dim,
        norm: config.norm,
        order: config.order,
        ffn_kind: config.ffn_variant,
        attn_ranks: config.placement.attn_ranks(),
        ffn_rank: config.placement.ffn_rank(),
    };
    let blocks = (0..config.layer_count)
        .map(|_| Block::init(&block_spec, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let final_norm = Norm::init(config.norm, config.d_model);
    let head = if config.tie_embeddings {
        None
    } else {
        Some(DenseLinear::init(config.d_model, config.vocab_size, &mut rng))
    };
    Ok(Model {
        config: config.clone(),
        embed,
        pos,
        blocks,
        final_norm,
        head,
    })
}

impl<T: Scalar> Model<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn blocks(&self) -> &[Block<T>] {
        &self.blocks
    }

    pub fn embedding(&self) -> &Tensor<T> {
        &self.embed
    }

    /// Every trainable tensor with its checkpoint name, in the fixed
    /// model walk order.
    pub fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out: Vec<(String, Tensor<T>)> = Vec::new();
        let mut push = |name: String, t: &Tensor<T>| out.push((name, t.clone()));
        push("embed.w".into(), &self.embed);
        if let Some(p) = &self.pos {
            push("pos.w".into(), p);
        }
        for (i, block) in self.blocks.iter().enumerate() {
            block.visit_params(&format!("block{i}"), &mut push);
        }
        self.final_norm.visit_params("final_norm", &mut push);
        if let Some(h) = &self.head {
            push("head.w".into(), h.weight());
        }
        out
    }

    /// Walked parameter count (sums actual tensor sizes).
    pub fn param_count(&self) -> u64 {
        self.named_params()
            .iter()
            .map(|(_, t)| t.numel() as u64)
            .sum()
    }

    /// Number of factored linear modules in the model (a factored module
    /// contributes one `.w_a`/`.w_b` tensor pair).
    pub fn factored_module_count(&self) -> usize {
        self.named_params()
            .iter()
            .filter(|(name, _)| name.ends_with(".w_a"))
            .count()
    }

    fn rotary_base(&self) -> Option<f64> {
        match self.config.position {
            PositionKind::Rotary => Some(ROTARY_BASE),
            PositionKind::Learned => None,
        }
    }

    /// Logits `[len, vocab_size]` for one token sequence.
    pub fn forward_tokens(&self, tokens: &[usize]) -> Result<Tensor<T>> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("forward over zero tokens"));
        }
        if tokens.len() > self.config.max_seq_len {
            return Err(Error::Config(format!(
                "sequence length {} exceeds max_seq_len {}",
                tokens.len(),
                self.config.max_seq_len
            )));
        }
        let mut x = self.embed.gather_rows(tokens)?;
        if let Some(pos) = &self.pos {
            let positions: Vec<usize> = (0..tokens.len()).collect();
            x = x.add(&pos.gather_rows(&positions)?)?;
        }
        for block in &self.blocks {
            x = block.forward(&x, self.rotary_base())?;
        }
        let x = self.final_norm.forward(&x)?;
        match &self.head {
            Some(head) => head.forward(&x),
            None => x.matmul_nt(&self.embed),
        }
    }

    /// Mean next-token cross entropy over a batch of windows. Every row
    /// holds `T+1` tokens: positions `0..T` are inputs, `1..=T` targets,
    /// so the loss averages over `B*T` predictions.
    pub fn lm_loss(&self, batch: &[Vec<usize>]) -> Result<Tensor<T>> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("loss over an empty batch"));
        }
        let len = batch[0].len();
        if len < 2 {
            return Err(Error::Config(
                "loss windows need at least two tokens (input and target)".into(),
            ));
        }
        let mut total: Option<Tensor<T>> = None;
        for row in batch {
            if row.len() != len {
                return Err(Error::Config(format!(
                    "ragged batch: window of {} tokens among windows of {}",
                    row.len(),
                    len
                )));
            }
            let logits = self.forward_tokens(&row[..len - 1])?;
            let loss = logits.cross_entropy(&row[1..])?;
            total = Some(match total {
                Some(acc) => acc.add(&loss)?,
                None => loss,
            });
        }
        Ok(total
            .expect("non-empty batch")
            .scale(T::from_f64(1.0 / batch.len() as f64)))
    }

    /// Continue `prompt` by `n_tokens` sampled tokens. Temperature zero
    /// is greedy argmax; otherwise logits are divided by the temperature
    /// and sampled with the seeded generator. Attention is recomputed
    /// over the full (window-clamped) prefix each step.
    pub fn generate(
        &self,
        prompt: &[usize],
        n_tokens: usize,
        temperature: f64,
        seed: u64,
    ) -> Result<Vec<usize>> {
        if prompt.is_empty() {
            return Err(Error::EmptyInput("generation prompt"));
        }
        if prompt.len() > self.config.max_seq_len {
            return Err(Error::Config(format!(
                "prompt length {} exceeds max_seq_len {}",
                prompt.len(),
                self.config.max_seq_len
            )));
        }
        if temperature < 0.0 {
            return Err(Error::Config("temperature must be non-negative".into()));
        }
        let mut rng = Rng::seed_from_u64(seed);
        let mut tokens = prompt.to_vec();
        for _ in 0..n_tokens {
            let start = tokens.len().saturating_sub(self.config.max_seq_len);
            let logits = self.forward_tokens(&tokens[start..])?;
            let v = self.config.vocab_size;
            let vals = logits.values();
            let last = &vals[(logits.rows() - 1) * v..];
            let next = if temperature == 0.0 {
                let mut best = 0;
                for j in 1..v {
                    if last[j] > last[best] {
                        best = j;
                    }
                }
                best
            } else {
                let scaled: Vec<f64> = last.iter().map(|&l| l.to_f64() / temperature).collect();
                let max = scaled.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let unnorm: Vec<f64> = scaled.iter().map(|&l| (l - max).exp()).collect();
                let denom: f64 = unnorm.iter().sum();
                let probs: Vec<f64> = unnorm.iter().map(|&p| p / denom).collect();
                rng.categorical(&probs)
            };
            drop(vals);
            tokens.push(next);
        }
        Ok(tokens)
    }

    /// Zero every parameter gradient.
    pub fn zero_grads(&self) {
        for (_, p) in self.named_params() {
            p.zero_grad();
        }
    }
}
