//! Accounting tests. The published-total regressions check parameter
//! DELTAS (which don't depend on the vocabulary) and then reconstruct
//! each published total as `published_baseline − delta`, to within the
//! tables' ±1M (±0.02B at the billion scale) rounding.

use super::*;
use crate::layers::{AttentionLayer, BlockOrder, FfnKind, NormKind};
use crate::model::{build_model, AttnSubset, ModelConfig, PlacementSpec, PositionKind};
use crate::tensor::flops;
use crate::tensor::Tensor;

/// d=1024, h=8, ffn=4096, 24 layers; published dense total 369M.
fn medium_baseline() -> ModelConfig {
    ModelConfig::new(32000, 1024, 8, 4096, 24, 1024)
}

/// d=4096, h=32, ffn=14436, 16 layers; published dense total 3.23B.
/// The feed-forward width is as published, odd as it looks.
fn large_baseline() -> ModelConfig {
    let mut cfg = ModelConfig::new(32000, 4096, 32, 14436, 16, 4096);
    cfg.norm = NormKind::Rms;
    cfg.order = BlockOrder::NormBeforeSublayer;
    cfg.position = PositionKind::Rotary;
    cfg
}

#[test]
fn square_sublayer_at_width_four() {
    assert_eq!(linear_params(4, 4, None), 16);
    assert_eq!(linear_params(4, 4, Some(1)), 8);
}

#[test]
fn rank_sweep_recovers_published_totals() {
    let baseline = medium_baseline();
    let dense_total = count_params(&baseline).total_params;
    let published_baseline = 369_000_000u64;
    for (rank, published) in [
        (256usize, 319_000_000u64),
        (128, 293_000_000),
        (64, 281_000_000),
        (32, 274_000_000),
    ] {
        let mut lpa = baseline.clone();
        lpa.placement = PlacementSpec::attn_all(rank);
        let report = count_params(&lpa);
        let expected_delta = 24 * 4 * (1024 * 1024 - 2 * 1024 * rank as u64);
        assert_eq!(dense_total - report.total_params, expected_delta);
        assert_eq!(report.delta_vs_dense, expected_delta as i64);
        let reconstructed = published_baseline - expected_delta;
        assert!(
            reconstructed.abs_diff(published) <= 1_000_000,
            "rank {rank}: reconstructed {reconstructed} vs published {published}"
        );
    }
}

#[test]
fn projection_subsets_recover_published_totals() {
    let baseline = medium_baseline();
    let dense_total = count_params(&baseline).total_params;
    for (subset, published) in [
        (AttnSubset::K.union(AttnSubset::V), 344_000_000u64),
        (
            AttnSubset::Q.union(AttnSubset::K).union(AttnSubset::V),
            331_000_000,
        ),
    ] {
        let mut lpa = baseline.clone();
        lpa.placement = PlacementSpec::attn_subset(subset, 256);
        let delta = dense_total - count_params(&lpa).total_params;
        let expected = subset.len() as u64 * 24 * (1024 * 1024 - 2 * 1024 * 256);
        assert_eq!(delta, expected);
        let reconstructed = 369_000_000 - delta;
        assert!(
            reconstructed.abs_diff(published) <= 1_000_000,
            "subset {}: reconstructed {reconstructed}",
            subset.as_string()
        );
    }
}

#[test]
fn billion_scale_delta_recovers_published_total() {
    let baseline = large_baseline();
    let mut lpa = baseline.clone();
    lpa.placement = PlacementSpec::attn_all(512);
    let delta =
        count_params(&baseline).total_params - count_params(&lpa).total_params;
    assert_eq!(delta, 16 * 4 * (4096 * 4096 - 2 * 4096 * 512));
    assert_eq!(delta, 805_306_368);
    let reconstructed = 3_230_000_000u64 - delta;
    assert!(
        reconstructed.abs_diff(2_430_000_000) <= 20_000_000,
        "reconstructed {reconstructed}"
    );
}

#[test]
fn attention_flop_formula_at_unit_scale() {
    assert_eq!(count_attention_flops(1, 1, None, 1), 10);
}

#[test]
fn attention_flop_formula_at_published_scale() {
    assert_eq!(
        count_attention_flops(1024, 1024, None, 512),
        4_831_838_208
    );
    assert_eq!(
        count_attention_flops(1024, 1024, Some(256), 512),
        2_684_354_560
    );
}

#[test]
fn formulas_match_the_instrumented_counter_exactly() {
    for l in [8usize, 64] {
        for d in [32usize, 128] {
            for rank in [None, Some(4), Some(16)] {
                let mut rng = crate::rng::Rng::seed_from_u64(11);
                let attn = AttentionLayer::<f64>::init(d, d, 4, [rank; 4], &mut rng)
                    .unwrap();
                let x = Tensor::<f64>::from_vec(
                    (0..l * d).map(|i| (i as f64).sin() * 0.1).collect(),
                    &[l, d],
                )
                .unwrap();
                let (_, counted) = flops::measure(|| attn.forward(&x, None).unwrap());
                assert_eq!(
                    counted.weighted_flops(),
                    count_attention_flops(d, d, rank, l),
                    "L={l} d={d} rank={rank:?}"
                );
            }
        }
    }
}

#[test]
fn closed_form_matches_structural_walk_on_random_configs() {
    let mut state = 0x5eed_cafe_u64;
    let mut next = move |bound: usize| {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 33) as usize) % bound
    };
    for trial in 0..200 {
        let heads = [1, 2, 4][next(3)];
        let head_dim = [2, 4, 8][next(3)];
        let d = heads * head_dim;
        let mut cfg = ModelConfig::new(
            5 + next(36),
            d,
            heads,
            4 + next(61),
            1 + next(3),
            4 + next(29),
        );
        cfg.precision = crate::scalar::Precision::F64;
        cfg.attn_inner_dim = d + heads * next(3);
        cfg.norm = [NormKind::Layer, NormKind::Rms][next(2)];
        cfg.order = [
            BlockOrder::NormAfterSublayer,
            BlockOrder::NormBeforeSublayer,
            BlockOrder::NormAfterResidual,
        ][next(3)];
        cfg.ffn_variant = [FfnKind::Relu2, FfnKind::Swiglu3][next(2)];
        cfg.position = [PositionKind::Learned, PositionKind::Rotary][next(2)];
        if cfg.position == PositionKind::Rotary && (cfg.attn_inner_dim / heads) % 2 == 1 {
            cfg.position = PositionKind::Learned;
        }
        cfg.tie_embeddings = next(2) == 0;
        let rank = 1 + next(12);
        cfg.placement = match next(5) {
            0 => PlacementSpec::dense(),
            1 => PlacementSpec::attn_all(rank),
            2 => PlacementSpec::ffn(rank),
            3 => PlacementSpec::all(rank),
            _ => {
                let bits = 1 + next(15) as u8;
                PlacementSpec::attn_subset(AttnSubset::from_bits(bits).unwrap(), rank)
            }
        };
        let model = build_model::<f64>(&cfg, trial).unwrap();
        assert_eq!(
            count_params(&cfg).total_params,
            model.param_count(),
            "trial {trial}: {cfg:?}"
        );
    }
}

#[test]
fn report_components_partition_the_total() {
    for placement in [
        PlacementSpec::dense(),
        PlacementSpec::attn_all(8),
        PlacementSpec::ffn(8),
        PlacementSpec::all(8),
    ] {
        let mut cfg = ModelConfig::new(300, 64, 4, 256, 2, 128);
        cfg.placement = placement;
        let r = count_params(&cfg);
        assert_eq!(
            r.embedding_params + r.attention_params + r.ffn_params + r.norm_params
                + r.head_params,
            r.total_params
        );
        assert_eq!(
            r.attention_flops_per_token * r.seq_len,
            r.attention_flops_per_sequence
        );
    }
}

#[test]
fn savings_threshold_values() {
    assert_eq!(savings_threshold(1024, 1024), 512.0);
    assert!((savings_threshold(1024, 4096) - 819.2).abs() < 1e-9);
}

#[test]
fn savings_occur_exactly_below_the_threshold() {
    for d_in in 1..=64usize {
        for d_out in 1..=64usize {
            let dense = linear_params(d_in, d_out, None);
            let threshold = savings_threshold(d_in, d_out);
            for r in 1..=128usize {
                let saves = linear_params(d_in, d_out, Some(r)) < dense;
                assert_eq!(
                    saves,
                    (r as f64) < threshold,
                    "d_in={d_in} d_out={d_out} r={r}"
                );
            }
        }
    }
}

#[test]
fn totals_grow_strictly_in_each_dial() {
    let mut base = ModelConfig::new(300, 64, 4, 256, 2, 128);
    base.placement = PlacementSpec::all(8);
    let total = |c: &ModelConfig| count_params(c).total_params;

    let mut bigger = base.clone();
    bigger.placement = PlacementSpec::all(9);
    assert!(total(&bigger) > total(&base));

    let mut bigger = base.clone();
    bigger.d_model += base.head_count;
    bigger.attn_inner_dim += base.head_count;
    assert!(total(&bigger) > total(&base));

    let mut bigger = base.clone();
    bigger.ffn_dim += 1;
    assert!(total(&bigger) > total(&base));

    let mut bigger = base.clone();
    bigger.layer_count += 1;
    assert!(total(&bigger) > total(&base));
}

#[test]
fn widening_attention_recovers_the_dense_budget() {
    let baseline = medium_baseline();
    let target = count_params(&baseline).total_params;
    let mut lpa = baseline.clone();
    lpa.placement = PlacementSpec::attn_all(256);

    let out = allocate_surplus(&lpa, target, AllocationStrategy::AttnDim).unwrap();
    assert_eq!(out.config.attn_inner_dim, 3072);
    assert_eq!(out.achieved_total, target);
    assert_eq!(out.config.attn_inner_dim % out.config.head_count, 0);
    // Re-verify through the counter, as the consumer would.
    assert_eq!(count_params(&out.config).total_params, target);
}

#[test]
fn widening_ffn_recovers_the_dense_budget() {
    let baseline = medium_baseline();
    let target = count_params(&baseline).total_params;
    let mut lpa = baseline.clone();
    lpa.placement = PlacementSpec::attn_all(256);

    let out = allocate_surplus(&lpa, target, AllocationStrategy::FfnDim).unwrap();
    assert_eq!(out.config.ffn_dim, 5120);
    assert_eq!(out.achieved_total, target);
}

#[test]
fn adding_layers_fills_the_budget_to_within_one_layer() {
    let baseline = medium_baseline();
    let target = count_params(&baseline).total_params;
    let mut lpa = baseline.clone();
    lpa.placement = PlacementSpec::attn_all(256);

    let out = allocate_surplus(&lpa, target, AllocationStrategy::LayerNum).unwrap();
    assert_eq!(out.config.layer_count, 28);
    assert_eq!(out.quantum, 10_489_856);
    assert!(out.achieved_total <= target);
    assert!(target - out.achieved_total < out.quantum);
}

#[test]
fn exact_one_layer_surplus_adds_exactly_one_layer() {
    let mut cfg = ModelConfig::new(300, 64, 4, 256, 2, 128);
    cfg.placement = PlacementSpec::attn_all(8);
    let current = count_params(&cfg).total_params;
    let mut one_more = cfg.clone();
    one_more.layer_count += 1;
    let target = count_params(&one_more).total_params;

    let out = allocate_surplus(&cfg, target, AllocationStrategy::LayerNum).unwrap();
    assert_eq!(out.config.layer_count, 3);
    assert_eq!(out.achieved_total, target);
    assert!(target > current);
}

#[test]
fn allocation_below_current_total_is_infeasible() {
    let cfg = medium_baseline();
    let current = count_params(&cfg).total_params;
    assert!(matches!(
        allocate_surplus(&cfg, current - 1, AllocationStrategy::FfnDim),
        Err(Error::Infeasible(_))
    ));
    // Exactly the current total is feasible: zero steps.
    let out = allocate_surplus(&cfg, current, AllocationStrategy::LayerNum).unwrap();
    assert_eq!(out.achieved_total, current);
    assert_eq!(out.config, cfg);
}

#[test]
fn reports_render_and_serialize() {
    let mut cfg = medium_baseline();
    cfg.placement = PlacementSpec::attn_all(256);
    let report = count_params(&cfg);
    let record = report.to_record();
    assert!(!record.contains('\n'));
    assert!(record.contains("\"total_params\""));
    let table = report.render_table();
    assert!(table.contains("attention"));
    assert!(table.contains('M'), "medium model should render in millions");
    assert_eq!(human_count(50_331_648), "50.33M");
    assert_eq!(human_count(3_230_000_000), "3.23B");
    assert_eq!(human_count(999), "999");
}
