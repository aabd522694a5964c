//! Closed-form parameter and FLOP arithmetic.
//!
//! Everything here prices a [`ModelConfig`] without building it: exact
//! per-component parameter counts, attention FLOP totals, the rank
//! threshold below which factoring saves parameters, and a solver that
//! spends a factored model's savings on extra width or depth. The
//! closed forms are contractually identical to a structural walk of a
//! built model (see the tests), so reports never drift from reality.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::layers::{DenseLinear, FactoredLinear, NormKind};
use crate::model::ModelConfig;

/// Exact parameter count of one linear map, dense or factored.
pub fn linear_params(d_in: usize, d_out: usize, rank: Option<usize>) -> u64 {
    match rank {
        None => DenseLinear::<f64>::param_count_for(d_in, d_out),
        Some(r) => FactoredLinear::<f64>::param_count_for(d_in, d_out, r),
    }
}

/// Rank below which a factored `d_in × d_out` map is strictly smaller
/// than the dense one: `d_in·d_out / (d_in + d_out)`.
pub fn savings_threshold(d_in: usize, d_out: usize) -> f64 {
    (d_in as f64 * d_out as f64) / (d_in as f64 + d_out as f64)
}

/// Forward FLOPs of one attention layer on a length-`l` sequence, with
/// all four projections dense (`rank = None`) or all factored at
/// `rank = Some(r)`.
///
/// Projection work is counted at two FLOPs per multiply-accumulate and
/// the score/value products at one, matching the convention of
/// [`crate::tensor::flops::FlopCount::weighted_flops`]:
///
/// * dense:    `8·L·d_in·d_out + 2·L²·d_out`
/// * factored: `8·L·r·(d_in + d_out) + 2·L²·d_out`
///
/// `d_in` is the residual width and `d_out` the attention inner width
/// (equal unless the config was widened by surplus reallocation).
pub fn count_attention_flops(d_in: usize, d_out: usize, rank: Option<usize>, l: usize) -> u64 {
    let (l, d_in, d_out) = (l as u64, d_in as u64, d_out as u64);
    let projections = match rank {
        None => 8 * l * d_in * d_out,
        Some(r) => 8 * l * r as u64 * (d_in + d_out),
    };
    projections + 2 * l * l * d_out
}

/// Itemized parameter and FLOP bill for one configuration.
///
/// Component counts partition the total exactly. FLOP figures cover the
/// attention layers only (projections plus score/value products) at the
/// config's `max_seq_len`; `dense_total_params` re-prices the same dims
/// with factoring turned off, so `delta_vs_dense` is the savings the
/// placement buys.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AccountingReport {
    pub embedding_params: u64,
    pub attention_params: u64,
    pub ffn_params: u64,
    pub norm_params: u64,
    pub head_params: u64,
    pub total_params: u64,
    /// Sequence length the FLOP figures assume.
    pub seq_len: u64,
    pub attention_flops_per_token: u64,
    pub attention_flops_per_sequence: u64,
    /// Total of the same config with dense placement everywhere.
    pub dense_total_params: u64,
    /// `dense_total_params − total_params`: positive when the placement
    /// saves parameters, negative when a too-large rank costs extra,
    /// zero for dense configs.
    pub delta_vs_dense: i64,
}

impl AccountingReport {
    /// One JSON object on a single line, for scripting.
    pub fn to_record(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    /// Human-readable table.
    pub fn render_table(&self) -> String {
        let rows = [
            ("embeddings", self.embedding_params),
            ("attention", self.attention_params),
            ("ffn", self.ffn_params),
            ("norms", self.norm_params),
            ("output head", self.head_params),
            ("total", self.total_params),
            ("dense-equivalent total", self.dense_total_params),
        ];
        let mut out = String::new();
        for (label, count) in rows {
            out.push_str(&format!(
                "{label:<24} {count:>14}  ({})\n",
                human_count(count)
            ));
        }
        let sign = if self.delta_vs_dense < 0 { "-" } else { "" };
        out.push_str(&format!(
            "{:<24} {:>14}  ({sign}{})\n",
            "savings vs dense",
            self.delta_vs_dense,
            human_count(self.delta_vs_dense.unsigned_abs())
        ));
        out.push_str(&format!(
            "attention flops @ L={:<6} {:>14} per sequence, {} per token\n",
            self.seq_len, self.attention_flops_per_sequence, self.attention_flops_per_token
        ));
        out
    }
}

/// Render a count the way the reports do: decimal billions ("B") or
/// millions ("M") with two decimals, plain digits below a million.
pub fn human_count(n: u64) -> String {
    if n >= 1_000_000_000 {
        format!("{:.2}B", n as f64 / 1e9)
    } else if n >= 1_000_000 {
        format!("{:.2}M", n as f64 / 1e6)
    } else {
        n.to_string()
    }
}

/// Price a configuration by closed form.
///
/// The total equals `build_model(config, seed).param_count()` exactly,
/// for every valid config; the FLOP figures evaluate the attention
/// closed forms at `config.max_seq_len`.
pub fn count_params(config: &ModelConfig) -> AccountingReport {
    let body = body_counts(config);
    let dense = body_counts(&dense_twin(config));
    let per_seq = attention_flops_for(config, config.max_seq_len);
    AccountingReport {
        embedding_params: body.embedding,
        attention_params: body.attention,
        ffn_params: body.ffn,
        norm_params: body.norms,
        head_params: body.head,
        total_params: body.total(),
        seq_len: config.max_seq_len as u64,
        attention_flops_per_token: per_seq / config.max_seq_len.max(1) as u64,
        attention_flops_per_sequence: per_seq,
        dense_total_params: dense.total(),
        delta_vs_dense: dense.total() as i64 - body.total() as i64,
    }
}

/// Attention FLOPs per sequence of length `l`, summed over layers and
/// honoring per-projection placement (partial subsets price each
/// projection individually).
pub fn attention_flops_for(config: &ModelConfig, l: usize) -> u64 {
    let (d, d_a) = (config.d_model, config.attn_inner_dim);
    let ranks = config.placement.attn_ranks();
    let dims = [(d, d_a), (d, d_a), (d, d_a), (d_a, d)];
    let projections: u64 = ranks
        .iter()
        .zip(dims)
        .map(|(rank, (din, dout))| {
            let macs = match rank {
                None => din as u64 * dout as u64,
                Some(r) => *r as u64 * (din + dout) as u64,
            };
            2 * l as u64 * macs
        })
        .sum();
    config.layer_count as u64 * (projections + 2 * (l as u64).pow(2) * d_a as u64)
}

struct ComponentCounts {
    embedding: u64,
    attention: u64,
    ffn: u64,
    norms: u64,
    head: u64,
}

impl ComponentCounts {
    fn total(&self) -> u64 {
        self.embedding + self.attention + self.ffn + self.norms + self.head
    }
}

fn body_counts(config: &ModelConfig) -> ComponentCounts {
    let (v, d, d_a, f) = (
        config.vocab_size as u64,
        config.d_model,
        config.attn_inner_dim,
        config.ffn_dim,
    );
    let layers = config.layer_count as u64;

    let mut embedding = v * d as u64;
    if config.position == crate::model::PositionKind::Learned {
        embedding += config.max_seq_len as u64 * d as u64;
    }

    let ranks = config.placement.attn_ranks();
    let attn_per_layer = linear_params(d, d_a, ranks[0])
        + linear_params(d, d_a, ranks[1])
        + linear_params(d, d_a, ranks[2])
        + linear_params(d_a, d, ranks[3]);

    let ffn_rank = config.placement.ffn_rank();
    // Expanding maps (d→f) plus the contraction (f→d); a gated variant
    // has two of the former.
    let expanding = (config.ffn_variant.matrix_count() - 1) as u64;
    let ffn_per_layer =
        expanding * linear_params(d, f, ffn_rank) + linear_params(f, d, ffn_rank);

    let norm_each = match config.norm {
        NormKind::Layer => 2 * d as u64,
        NormKind::Rms => d as u64,
    };
    let norms = (2 * layers + 1) * norm_each;

    let head = if config.tie_embeddings {
        0
    } else {
        d as u64 * v
    };

    ComponentCounts {
        embedding,
        attention: layers * attn_per_layer,
        ffn: layers * ffn_per_layer,
        norms,
        head,
    }
}

/// The same dims with factoring switched off everywhere.
fn dense_twin(config: &ModelConfig) -> ModelConfig {
    let mut twin = config.clone();
    twin.placement = crate::model::PlacementSpec::dense();
    twin
}

/// Where to spend a factored model's parameter savings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocationStrategy {
    /// Widen the attention inner width (multiples of `head_count`).
    AttnDim,
    /// Widen the feed-forward hidden width (integer steps).
    FfnDim,
    /// Add whole layers.
    LayerNum,
}

impl AllocationStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            AllocationStrategy::AttnDim => "attn_dim",
            AllocationStrategy::FfnDim => "ffn_dim",
            AllocationStrategy::LayerNum => "layer_num",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "attn_dim" => Some(AllocationStrategy::AttnDim),
            "ffn_dim" => Some(AllocationStrategy::FfnDim),
            "layer_num" => Some(AllocationStrategy::LayerNum),
            _ => None,
        }
    }
}

/// Result of [`allocate_surplus`]: the enlarged config, its exact
/// total, and the parameter cost of one more rounding step (the amount
/// by which the target may be undershot).
#[derive(Debug, Clone)]
pub struct Allocation {
    pub config: ModelConfig,
    pub achieved_total: u64,
    pub quantum: u64,
}

/// Grow one knob of `config` until its total is as close to
/// `target_total` as possible without exceeding it.
///
/// The knob is the strategy's free variable: attention inner width in
/// steps of `head_count`, feed-forward width in steps of one, or layer
/// count in steps of one. Growth is monotone, so the largest feasible
/// step count is found by bisection; the result satisfies
/// `achieved_total ≤ target_total < achieved_total + quantum`.
pub fn allocate_surplus(
    config: &ModelConfig,
    target_total: u64,
    strategy: AllocationStrategy,
) -> Result<Allocation> {
    let current = count_params(config).total_params;
    if target_total < current {
        return Err(Error::Infeasible(format!(
            "target {target_total} is below the current total {current}"
        )));
    }

    let at = |steps: u64| -> ModelConfig {
        let mut c = config.clone();
        match strategy {
            AllocationStrategy::AttnDim => {
                c.attn_inner_dim += config.head_count * steps as usize;
            }
            AllocationStrategy::FfnDim => c.ffn_dim += steps as usize,
            AllocationStrategy::LayerNum => c.layer_count += steps as usize,
        }
        c
    };
    let total_at = |steps: u64| count_params(&at(steps)).total_params;

    let step_cost = total_at(1) - current;
    if step_cost == 0 {
        return Err(Error::Infeasible(
            "growth step adds no parameters".to_string(),
        ));
    }
    // Growth is affine in the step count, so this lands on or next to
    // the answer; the loops absorb any rounding.
    let mut steps = (target_total - current) / step_cost;
    while total_at(steps + 1) <= target_total {
        steps += 1;
    }
    while steps > 0 && total_at(steps) > target_total {
        steps -= 1;
    }

    let grown = at(steps);
    let achieved_total = count_params(&grown).total_params;
    let quantum = total_at(steps + 1) - achieved_total;
    debug_assert!(achieved_total <= target_total && target_total < achieved_total + quantum);
    Ok(Allocation {
        config: grown,
        achieved_total,
        quantum,
    })
}

#[cfg(test)]
mod tests;
