//! Runnable self-checks.
//!
//! Each suite re-derives a property the rest of the crate relies on —
//! gradient correctness, the dependence structure of the two sublayer
//! kinds, dense/factored equivalence at full rank, and the closed-form
//! parameter and FLOP arithmetic — and reports one pass/fail outcome per
//! check. Outcomes serialize to one JSON object per line so a harness can
//! grep for failures; [`run_suite`] never panics on a failing property,
//! it records the failure instead.

use std::collections::HashMap;

use serde::Serialize;

use crate::accounting::{
    allocate_surplus, count_attention_flops, count_params, linear_params, savings_threshold,
    AllocationStrategy,
};
use crate::error::{Error, Result};
use crate::layers::{
    jacobian_dependence, AttentionLayer, BlockOrder, DenseLinear, FactoredLinear, FeedForward,
    FfnKind, LayerKind, Linear, NormKind,
};
use crate::model::{build_model, AttnSubset, Model, ModelConfig, PlacementSpec, PositionKind};
use crate::rng::Rng;
use crate::scalar::Precision;
use crate::tensor::{flops, params_grad_check, Tensor};

/// Which family of checks to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    /// Analytic gradients vs central finite differences on full models.
    Grad,
    /// Which input rows each output row of a sublayer depends on.
    Jacobian,
    /// Full-rank factored modules reproducing their dense counterparts.
    Equivalence,
    /// Closed-form parameter/FLOP arithmetic and the surplus allocator.
    Accounting,
    /// Every suite above, in order.
    All,
}

impl Suite {
    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Grad => "grad",
            Suite::Jacobian => "jacobian",
            Suite::Equivalence => "equivalence",
            Suite::Accounting => "accounting",
            Suite::All => "all",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "grad" => Some(Suite::Grad),
            "jacobian" => Some(Suite::Jacobian),
            "equivalence" => Some(Suite::Equivalence),
            "accounting" => Some(Suite::Accounting),
            "all" => Some(Suite::All),
            _ => None,
        }
    }
}

/// Result of a single named check.
#[derive(Clone, Debug, Serialize)]
pub struct CheckOutcome {
    pub suite: &'static str,
    pub check: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    /// One JSON object on one line.
    pub fn render_line(&self) -> String {
        serde_json::to_string(self).expect("outcome serializes")
    }
}

/// Run one suite (or all of them) and collect every outcome.
pub fn run_suite(suite: Suite) -> Vec<CheckOutcome> {
    match suite {
        Suite::Grad => grad_checks(),
        Suite::Jacobian => jacobian_checks(),
        Suite::Equivalence => equivalence_checks(),
        Suite::Accounting => accounting_checks(),
        Suite::All => {
            let mut out = grad_checks();
            out.extend(jacobian_checks());
            out.extend(equivalence_checks());
            out.extend(accounting_checks());
            out
        }
    }
}

pub fn all_passed(outcomes: &[CheckOutcome]) -> bool {
    outcomes.iter().all(|o| o.passed)
}

/// Run a check body, turning an internal error into a failed outcome so a
/// broken invariant (or a broken harness) always surfaces as `passed:
/// false` rather than an abort.
fn check(
    suite: &'static str,
    name: &str,
    body: impl FnOnce() -> Result<(bool, String)>,
) -> CheckOutcome {
    let (passed, detail) = match body() {
        Ok((passed, detail)) => (passed, detail),
        Err(e) => (false, format!("check aborted: {e}")),
    };
    CheckOutcome {
        suite,
        check: name.to_string(),
        passed,
        detail,
    }
}

// ---------------------------------------------------------------------------
// grad: full-model analytic gradients vs central finite differences
// ---------------------------------------------------------------------------

/// A model small enough to finite-difference every tensor quickly, in
/// either block family: the post-norm family (layer norm, norm after the
/// sublayer, two-matrix relu feed-forward, learned positions) or the
/// pre-norm family (rms norm, norm before the sublayer, gated three-matrix
/// feed-forward, rotary positions).
fn tiny_config(prenorm_family: bool, placement: PlacementSpec) -> ModelConfig {
    let mut config = ModelConfig::new(11, 8, 2, 16, 2, 8);
    config.precision = Precision::F64;
    config.placement = placement;
    if prenorm_family {
        config.norm = NormKind::Rms;
        config.order = BlockOrder::NormBeforeSublayer;
        config.ffn_variant = FfnKind::Swiglu3;
        config.position = PositionKind::Rotary;
    }
    config
}

const GRAD_TOLERANCE: f64 = 1e-4;
const GRAD_FD_STEP: f64 = 1e-5;
const GRAD_PROBES_PER_TENSOR: usize = 4;

fn grad_outcome(name: String, config: ModelConfig) -> CheckOutcome {
    check("grad", &name, || {
        let model = build_model::<f64>(&config, 0xBEEF)?;
        let leaves = model.named_params();
        let batch = vec![vec![1usize, 3, 5, 7, 2]];
        let mut loss = || model.lm_loss(&batch);
        let report = params_grad_check(&leaves, &mut loss, GRAD_FD_STEP, GRAD_PROBES_PER_TENSOR)?;
        let worst = report.iter().map(|(_, err)| *err).fold(0.0f64, f64::max);
        let worst_tensor = report
            .iter()
            .find(|(_, err)| *err == worst)
            .map(|(tensor, _)| tensor.as_str())
            .unwrap_or("none");
        Ok((
            !report.is_empty() && worst < GRAD_TOLERANCE,
            format!(
                "worst relative error {worst:.3e} (at {worst_tensor}) over {} tensors, \
                 tolerance {GRAD_TOLERANCE:.0e}",
                report.len()
            ),
        ))
    })
}

fn grad_checks() -> Vec<CheckOutcome> {
    let placements = [
        ("dense", PlacementSpec::dense()),
        ("low-attn", PlacementSpec::attn_all(2)),
        ("low-ffn", PlacementSpec::ffn(2)),
        ("low-all", PlacementSpec::all(2)),
    ];
    let mut out = Vec::new();
    for (family_name, prenorm) in [("postnorm", false), ("prenorm", true)] {
        for (placement_name, placement) in placements {
            out.push(grad_outcome(
                format!("{family_name}-{placement_name}"),
                tiny_config(prenorm, placement),
            ));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// jacobian: dependence structure of the two sublayer kinds
// ---------------------------------------------------------------------------

const DEP_LEN: usize = 6;
const DEP_DIM: usize = 8;

fn pattern_mismatches(dep: &[bool], len: usize, expected: impl Fn(usize, usize) -> bool) -> usize {
    let mut mismatches = 0;
    for i in 0..len {
        for j in 0..len {
            if dep[i * len + j] != expected(i, j) {
                mismatches += 1;
            }
        }
    }
    mismatches
}

fn jacobian_checks() -> Vec<CheckOutcome> {
    vec![
        check("jacobian", "ffn-diagonal", || {
            let dep = jacobian_dependence(LayerKind::Ffn, DEP_LEN, DEP_DIM)?;
            let mismatches = pattern_mismatches(&dep, DEP_LEN, |i, j| i == j);
            Ok((
                mismatches == 0,
                format!(
                    "feed-forward output row depends on its own input row only: \
                     {mismatches} of {} entries differ from the diagonal pattern",
                    DEP_LEN * DEP_LEN
                ),
            ))
        }),
        check("jacobian", "attention-causal", || {
            let dep = jacobian_dependence(LayerKind::Attention, DEP_LEN, DEP_DIM)?;
            let mismatches = pattern_mismatches(&dep, DEP_LEN, |i, j| j <= i);
            Ok((
                mismatches == 0,
                format!(
                    "attention output row depends on every input row at or before it \
                     and none after: {mismatches} of {} entries differ from the \
                     lower-triangular pattern",
                    DEP_LEN * DEP_LEN
                ),
            ))
        }),
    ]
}

// ---------------------------------------------------------------------------
// equivalence: full-rank factored modules reproduce dense ones
// ---------------------------------------------------------------------------

const EQUIV_TOLERANCE: f64 = 1e-6;

/// Replace a dense map with its exact full-rank factorization.
fn factored_full_rank(linear: &Linear<f64>) -> Result<Linear<f64>> {
    let dense = linear
        .as_dense()
        .ok_or_else(|| Error::Config("expected a dense map to factor".into()))?;
    let rank = dense.d_in().min(dense.d_out());
    Ok(Linear::Factored(FactoredLinear::from_dense_svd(
        dense, rank,
    )?))
}

fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let av = a.values();
    let bv = b.values();
    av.iter()
        .zip(bv.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f64, f64::max)
}

/// Build a model whose every in-scope linear map is factored at full
/// rank. Full rank saves nothing by construction — that is the point of
/// the equivalence check — so silence the non-saving-rank warning the
/// factored constructor would otherwise emit for each map.
fn build_full_rank_model(config: &ModelConfig, seed: u64) -> Result<Model<f64>> {
    let prior = log::max_level();
    log::set_max_level(log::LevelFilter::Error);
    let built = build_model(config, seed);
    log::set_max_level(prior);
    built
}

/// Overwrite every tensor of `factored` so it computes the same function
/// as `dense`: plain tensors are copied, and each factored pair is set to
/// the exact full-rank factorization of the matching dense weight.
fn transplant_full_rank(dense: &Model<f64>, factored: &Model<f64>) -> Result<()> {
    let dense_map: HashMap<String, Tensor<f64>> = dense.named_params().into_iter().collect();
    let factored_params = factored.named_params();
    let factored_map: HashMap<String, Tensor<f64>> = factored_params
        .iter()
        .map(|(n, t)| (n.clone(), t.clone()))
        .collect();
    let missing = |name: &str| Error::Config(format!("no counterpart for parameter {name}"));
    for (name, tensor) in &factored_params {
        if let Some(prefix) = name.strip_suffix(".w_a") {
            let source = dense_map
                .get(&format!("{prefix}.w"))
                .ok_or_else(|| missing(name))?;
            let weight = DenseLinear::from_weight(source.clone())?;
            let rank = weight.d_in().min(weight.d_out());
            let parts = FactoredLinear::from_dense_svd(&weight, rank)?;
            tensor.set_values(parts.factor_a().to_vec())?;
            factored_map
                .get(&format!("{prefix}.w_b"))
                .ok_or_else(|| missing(name))?
                .set_values(parts.factor_b().to_vec())?;
        } else if name.ends_with(".w_b") {
            continue; // written together with its .w_a partner
        } else {
            let source = dense_map.get(name).ok_or_else(|| missing(name))?;
            tensor.set_values(source.to_vec())?;
        }
    }
    Ok(())
}

fn model_equivalence(name: &str, prenorm_family: bool) -> CheckOutcome {
    check("equivalence", name, || {
        let mut config = ModelConfig::new(19, 16, 2, 24, 2, 12);
        config.precision = Precision::F64;
        if prenorm_family {
            config.norm = NormKind::Rms;
            config.order = BlockOrder::NormBeforeSublayer;
            config.ffn_variant = FfnKind::Swiglu3;
            config.position = PositionKind::Rotary;
        }
        let dense = build_model::<f64>(&config, 9)?;
        let mut factored_config = config.clone();
        factored_config.placement = PlacementSpec::all(16);
        let factored = build_full_rank_model(&factored_config, 10)?;
        transplant_full_rank(&dense, &factored)?;
        let tokens = [1usize, 2, 3, 4, 5, 0, 6, 2, 17, 9];
        let diff = max_abs_diff(
            &dense.forward_tokens(&tokens)?,
            &factored.forward_tokens(&tokens)?,
        );
        Ok((
            diff < EQUIV_TOLERANCE,
            format!("largest logit deviation {diff:.3e}, tolerance {EQUIV_TOLERANCE:.0e}"),
        ))
    })
}

fn equivalence_checks() -> Vec<CheckOutcome> {
    let mut out = vec![
        check("equivalence", "attention-sublayer", || {
            let mut rng = Rng::seed_from_u64(41);
            let dense = AttentionLayer::<f64>::init(16, 16, 4, [None; 4], &mut rng)?;
            let factored = AttentionLayer::from_parts(
                factored_full_rank(dense.query())?,
                factored_full_rank(dense.key())?,
                factored_full_rank(dense.value())?,
                factored_full_rank(dense.output())?,
                dense.heads(),
            )?;
            let x_vals: Vec<f64> = (0..6 * 16).map(|_| rng.normal(1.0)).collect();
            let x = Tensor::input(x_vals, &[6, 16])?;
            let diff = max_abs_diff(&dense.forward(&x, None)?, &factored.forward(&x, None)?);
            Ok((
                diff < EQUIV_TOLERANCE,
                format!("largest output deviation {diff:.3e}, tolerance {EQUIV_TOLERANCE:.0e}"),
            ))
        }),
        check("equivalence", "ffn-sublayer", || {
            let mut rng = Rng::seed_from_u64(42);
            let dense = FeedForward::<f64>::init(16, 24, FfnKind::Swiglu3, None, &mut rng)?;
            let gate = dense
                .gate()
                .ok_or_else(|| Error::Config("gated variant carries a gate".into()))?;
            let factored = FeedForward::from_parts(
                FfnKind::Swiglu3,
                Some(factored_full_rank(gate)?),
                factored_full_rank(dense.up())?,
                factored_full_rank(dense.down())?,
            )?;
            let x_vals: Vec<f64> = (0..6 * 16).map(|_| rng.normal(1.0)).collect();
            let x = Tensor::input(x_vals, &[6, 16])?;
            let diff = max_abs_diff(&dense.forward(&x)?, &factored.forward(&x)?);
            Ok((
                diff < EQUIV_TOLERANCE,
                format!("largest output deviation {diff:.3e}, tolerance {EQUIV_TOLERANCE:.0e}"),
            ))
        }),
    ];
    out.push(model_equivalence("model-postnorm", false));
    out.push(model_equivalence("model-prenorm", true));
    out
}

// ---------------------------------------------------------------------------
// accounting: closed-form arithmetic against published anchors
// ---------------------------------------------------------------------------

/// The published medium architecture the rank sweep and allocator anchors
/// use: d=1024, 8 heads, ffn 4096, 24 layers.
fn medium_config() -> ModelConfig {
    ModelConfig::new(32000, 1024, 8, 4096, 24, 1024)
}

/// The published multi-billion-parameter architecture: d=4096, 32 heads,
/// ffn 14436, 16 layers, pre-norm rms with rotary positions.
fn large_config() -> ModelConfig {
    let mut config = ModelConfig::new(32000, 4096, 32, 14436, 16, 4096);
    config.norm = NormKind::Rms;
    config.order = BlockOrder::NormBeforeSublayer;
    config.position = PositionKind::Rotary;
    config
}

fn delta_outcome(
    name: &str,
    base: &ModelConfig,
    placement: PlacementSpec,
    expected: u64,
) -> CheckOutcome {
    check("accounting", name, || {
        let dense_total = count_params(base).total_params;
        let mut factored = base.clone();
        factored.placement = placement;
        let factored_total = count_params(&factored).total_params;
        let saved = dense_total.saturating_sub(factored_total);
        Ok((
            saved == expected,
            format!("factoring saves {saved} parameters, expected {expected}"),
        ))
    })
}

fn accounting_checks() -> Vec<CheckOutcome> {
    let medium = medium_config();
    let mut out = Vec::new();
    for (rank, expected) in [
        (256usize, 50_331_648u64),
        (128, 75_497_472),
        (64, 88_080_384),
        (32, 94_371_840),
    ] {
        out.push(delta_outcome(
            &format!("rank-sweep-r{rank}"),
            &medium,
            PlacementSpec::attn_all(rank),
            expected,
        ));
    }
    out.push(delta_outcome(
        "subset-kv-r256",
        &medium,
        PlacementSpec::attn_subset(AttnSubset::K.union(AttnSubset::V), 256),
        25_165_824,
    ));
    out.push(delta_outcome(
        "subset-qkv-r256",
        &medium,
        PlacementSpec::attn_subset(
            AttnSubset::Q.union(AttnSubset::K).union(AttnSubset::V),
            256,
        ),
        37_748_736,
    ));
    out.push(delta_outcome(
        "large-model-r512",
        &large_config(),
        PlacementSpec::attn_all(512),
        805_306_368,
    ));

    out.push(check("accounting", "savings-threshold", || {
        let mut violations = 0u64;
        for d_in in 1..=64usize {
            for d_out in 1..=64usize {
                for rank in 1..=d_in.max(d_out) {
                    let saves =
                        linear_params(d_in, d_out, Some(rank)) < linear_params(d_in, d_out, None);
                    let predicted = (rank as f64) < savings_threshold(d_in, d_out);
                    if saves != predicted {
                        violations += 1;
                    }
                }
            }
        }
        Ok((
            violations == 0,
            format!(
                "savings iff rank below d_in*d_out/(d_in+d_out): {violations} violations \
                 over all dims 1..=64"
            ),
        ))
    }));

    out.push(check("accounting", "attention-flop-formula", || {
        let mut mismatches = Vec::new();
        let mut cases = 0;
        for l in [8usize, 64] {
            for d in [32usize, 128] {
                for rank in [None, Some(4usize), Some(16)] {
                    let mut rng = Rng::seed_from_u64(7);
                    let layer = AttentionLayer::<f64>::init(d, d, 4, [rank; 4], &mut rng)?;
                    let x_vals: Vec<f64> =
                        (0..l * d).map(|i| ((i as f64) * 0.37).sin() * 0.1).collect();
                    let x = Tensor::input(x_vals, &[l, d])?;
                    let (result, count) = flops::measure(|| layer.forward(&x, None));
                    result?;
                    let measured = count.weighted_flops();
                    let expected = count_attention_flops(d, d, rank, l);
                    cases += 1;
                    if measured != expected {
                        mismatches.push(format!(
                            "l={l} d={d} rank={rank:?}: measured {measured}, formula {expected}"
                        ));
                    }
                }
            }
        }
        Ok((
            mismatches.is_empty(),
            if mismatches.is_empty() {
                format!("instrumented forward matches the closed form in all {cases} cases")
            } else {
                mismatches.join("; ")
            },
        ))
    }));

    let dense_total = count_params(&medium).total_params;
    let mut factored_medium = medium.clone();
    factored_medium.placement = PlacementSpec::attn_all(256);
    out.push(check("accounting", "allocate-attn-dim", || {
        let alloc = allocate_surplus(&factored_medium, dense_total, AllocationStrategy::AttnDim)?;
        let d_a = alloc.config.attn_inner_dim;
        Ok((
            d_a == 3072 && alloc.achieved_total == dense_total,
            format!(
                "widening attention to {d_a} gives {} of target {dense_total}",
                alloc.achieved_total
            ),
        ))
    }));
    out.push(check("accounting", "allocate-ffn-dim", || {
        let alloc = allocate_surplus(&factored_medium, dense_total, AllocationStrategy::FfnDim)?;
        let width = alloc.config.ffn_dim;
        Ok((
            width == 5120 && alloc.achieved_total == dense_total,
            format!(
                "widening the feed-forward to {width} gives {} of target {dense_total}",
                alloc.achieved_total
            ),
        ))
    }));
    out.push(check("accounting", "allocate-layer-num", || {
        let alloc = allocate_surplus(&factored_medium, dense_total, AllocationStrategy::LayerNum)?;
        let layers = alloc.config.layer_count;
        let within = alloc.achieved_total <= dense_total
            && dense_total < alloc.achieved_total + alloc.quantum;
        Ok((
            layers == 28 && alloc.quantum == 10_489_856 && within,
            format!(
                "deepening to {layers} layers gives {} of target {dense_total} \
                 (quantum {})",
                alloc.achieved_total, alloc.quantum
            ),
        ))
    }));
    out
}

#[cfg(test)]
mod tests;
