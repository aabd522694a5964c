//! Layer-level unit tests: hand oracles, factorization collapse,
//! parameter break-even arithmetic, dependence structure, and
//! finite-difference gradient checks.

use super::*;
use crate::tensor::grad_check;

type T64 = Tensor<f64>;

fn assert_close(got: &[f64], want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len());
    for (i, (&g, &w)) in got.iter().zip(want).enumerate() {
        assert!(
            (g - w).abs() <= tol,
            "index {i}: got {g}, want {w} (tol {tol})"
        );
    }
}

fn collect_params<T: Scalar>(
    visit: impl Fn(&mut dyn FnMut(String, &Tensor<T>)),
) -> Vec<(String, Tensor<T>)> {
    let mut out = Vec::new();
    visit(&mut |name, t| out.push((name, t.clone())));
    out
}

fn zero_params<T: Scalar>(params: &[(String, Tensor<T>)]) {
    for (_, p) in params {
        p.set_values(vec![T::zero(); p.numel()]).unwrap();
    }
}

#[test]
fn relu_ffn_with_identity_weights_is_relu() {
    let eye = |d: usize| {
        let mut v = vec![0.0f64; d * d];
        for i in 0..d {
            v[i * d + i] = 1.0;
        }
        Linear::Dense(DenseLinear::from_weight(T64::parameter(v, &[d, d]).unwrap()).unwrap())
    };
    let ffn = FeedForward::from_parts(FfnKind::Relu2, None, eye(2), eye(2)).unwrap();
    let x = T64::from_vec(vec![-1.0, 2.0], &[1, 2]).unwrap();
    let y = ffn.forward(&x).unwrap();
    assert_close(&y.to_vec(), &[0.0, 2.0], 0.0);
}

#[test]
fn single_token_attention_reduces_to_value_output_chain() {
    let mut rng = Rng::seed_from_u64(11);
    let layer = AttentionLayer::<f64>::init(4, 4, 2, [None; 4], &mut rng).unwrap();
    let x = T64::from_vec(vec![0.3, -0.8, 0.5, 1.1], &[1, 4]).unwrap();
    let got = layer.forward(&x, None).unwrap();
    // With one token the softmax weight is 1 regardless of scores, so the
    // layer is x -> x W_V W_O.
    let want = x
        .matmul(layer.value().as_dense().unwrap().weight())
        .unwrap()
        .matmul(layer.output().as_dense().unwrap().weight())
        .unwrap();
    assert_close(&got.to_vec(), &want.to_vec(), 1e-12);
}

#[test]
fn full_rank_svd_reproduces_dense_linear() {
    let mut rng = Rng::seed_from_u64(21);
    let dense = DenseLinear::<f64>::init(6, 4, &mut rng);
    let fact = FactoredLinear::from_dense_svd(&dense, 4).unwrap();
    let x = T64::from_vec((0..18).map(|i| (i as f64 * 0.7).sin()).collect(), &[3, 6]).unwrap();
    let a = dense.forward(&x).unwrap();
    let b = fact.forward(&x).unwrap();
    assert_close(&b.to_vec(), &a.to_vec(), 1e-6);
}

#[test]
fn truncated_svd_is_best_effort_not_exact() {
    let mut rng = Rng::seed_from_u64(22);
    let dense = DenseLinear::<f64>::init(6, 6, &mut rng);
    let fact = FactoredLinear::from_dense_svd(&dense, 2).unwrap();
    assert_eq!(fact.rank(), 2);
    assert_eq!(fact.param_count(), 2 * 12);
    // A generic random matrix is full rank, so rank 2 cannot reproduce it.
    let x = T64::from_vec(vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0], &[1, 6]).unwrap();
    let a = dense.forward(&x).unwrap().to_vec();
    let b = fact.forward(&x).unwrap().to_vec();
    let diff: f64 = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).sum();
    assert!(diff > 1e-6);
}

#[test]
fn full_rank_svd_attention_collapses_to_dense() {
    let mut rng = Rng::seed_from_u64(31);
    let dense = AttentionLayer::<f64>::init(6, 6, 2, [None; 4], &mut rng).unwrap();
    let refactor = |l: &Linear<f64>| {
        let d = l.as_dense().unwrap();
        Linear::Factored(FactoredLinear::from_dense_svd(d, d.d_in().min(d.d_out())).unwrap())
    };
    let fact = AttentionLayer::from_parts(
        refactor(dense.query()),
        refactor(dense.key()),
        refactor(dense.value()),
        refactor(dense.output()),
        2,
    )
    .unwrap();
    let x = T64::from_vec((0..30).map(|i| (i as f64 * 0.37).cos()).collect(), &[5, 6]).unwrap();
    let a = dense.forward(&x, None).unwrap();
    let b = fact.forward(&x, None).unwrap();
    assert_close(&b.to_vec(), &a.to_vec(), 1e-6);
}

#[test]
fn full_rank_svd_ffn_collapses_to_dense() {
    for kind in [FfnKind::Relu2, FfnKind::Swiglu3] {
        let mut rng = Rng::seed_from_u64(41);
        let dense = FeedForward::<f64>::init(5, 7, kind, None, &mut rng).unwrap();
        let refactor = |l: &Linear<f64>| {
            let d = l.as_dense().unwrap();
            Linear::Factored(FactoredLinear::from_dense_svd(d, d.d_in().min(d.d_out())).unwrap())
        };
        let fact = FeedForward::from_parts(
            kind,
            dense.gate().map(refactor),
            refactor(dense.up()),
            refactor(dense.down()),
        )
        .unwrap();
        let x = T64::from_vec((0..15).map(|i| (i as f64 * 0.21).sin()).collect(), &[3, 5]).unwrap();
        let a = dense.forward(&x).unwrap();
        let b = fact.forward(&x).unwrap();
        assert_close(&b.to_vec(), &a.to_vec(), 1e-6);
    }
}

#[test]
fn parameter_break_even_holds_exhaustively() {
    for d_in in 1..=64usize {
        for d_out in 1..=64usize {
            for r in 1..=128usize {
                let saves = FactoredLinear::<f64>::param_count_for(d_in, d_out, r)
                    < DenseLinear::<f64>::param_count_for(d_in, d_out);
                let below_threshold =
                    (r as f64) < (d_in * d_out) as f64 / (d_in + d_out) as f64;
                assert_eq!(
                    saves, below_threshold,
                    "d_in={d_in} d_out={d_out} r={r}"
                );
            }
        }
    }
}

#[test]
fn constructed_modules_match_closed_form_counts() {
    let mut rng = Rng::seed_from_u64(51);
    for (d_in, d_out, r) in [(8, 8, 2), (16, 4, 3), (5, 25, 4), (64, 64, 31)] {
        let dense = DenseLinear::<f64>::init(d_in, d_out, &mut rng);
        assert_eq!(
            dense.param_count(),
            DenseLinear::<f64>::param_count_for(d_in, d_out)
        );
        let fact = FactoredLinear::<f64>::init(d_in, d_out, r, &mut rng).unwrap();
        assert_eq!(
            fact.param_count(),
            FactoredLinear::<f64>::param_count_for(d_in, d_out, r)
        );
    }
}

#[test]
fn over_break_even_rank_constructs_with_more_parameters() {
    let mut rng = Rng::seed_from_u64(61);
    // 8x8 break-even is rank 4; rank 5 costs more than dense yet builds.
    let fat = FactoredLinear::<f64>::init(8, 8, 5, &mut rng).unwrap();
    assert!(fat.param_count() > DenseLinear::<f64>::param_count_for(8, 8));
}

#[test]
fn zero_rank_is_rejected() {
    let mut rng = Rng::seed_from_u64(62);
    assert!(FactoredLinear::<f64>::init(8, 8, 0, &mut rng).is_err());
}

#[test]
fn attention_rejects_indivisible_head_split() {
    let mut rng = Rng::seed_from_u64(63);
    assert!(AttentionLayer::<f64>::init(6, 6, 4, [None; 4], &mut rng).is_err());
    assert!(AttentionLayer::<f64>::init(6, 6, 0, [None; 4], &mut rng).is_err());
}

#[test]
fn zeroed_sublayers_make_prenorm_block_an_identity() {
    let spec = BlockSpec {
        d_model: 4,
        d_attn: 4,
        heads: 2,
        ffn_dim: 8,
        norm: NormKind::Rms,
        order: BlockOrder::NormBeforeSublayer,
        ffn_kind: FfnKind::Swiglu3,
        attn_ranks: [None; 4],
        ffn_rank: None,
    };
    let mut rng = Rng::seed_from_u64(71);
    let block = Block::<f64>::init(&spec, &mut rng).unwrap();
    zero_params(&collect_params(|f| block.attention().visit_params("a", f)));
    zero_params(&collect_params(|f| block.feed_forward().visit_params("f", f)));
    let x = T64::from_vec((0..12).map(|i| i as f64 * 0.3 - 1.0).collect(), &[3, 4]).unwrap();
    let y = block.forward(&x, None).unwrap();
    assert_close(&y.to_vec(), &x.to_vec(), 0.0);
}

#[test]
fn zeroed_sublayers_shift_postnorm_block_by_norm_bias() {
    let spec = BlockSpec {
        d_model: 4,
        d_attn: 4,
        heads: 2,
        ffn_dim: 8,
        norm: NormKind::Layer,
        order: BlockOrder::NormAfterSublayer,
        ffn_kind: FfnKind::Relu2,
        attn_ranks: [None; 4],
        ffn_rank: None,
    };
    let mut rng = Rng::seed_from_u64(72);
    let block = Block::<f64>::init(&spec, &mut rng).unwrap();
    zero_params(&collect_params(|f| block.attention().visit_params("a", f)));
    zero_params(&collect_params(|f| block.feed_forward().visit_params("f", f)));
    // Norm of an all-zero sublayer output is exactly its bias; set the two
    // biases to distinct constants to watch both residual adds.
    block
        .attn_norm()
        .bias()
        .unwrap()
        .set_values(vec![0.25; 4])
        .unwrap();
    block
        .ffn_norm()
        .bias()
        .unwrap()
        .set_values(vec![-0.5; 4])
        .unwrap();
    let x = T64::from_vec((0..8).map(|i| i as f64).collect(), &[2, 4]).unwrap();
    let y = block.forward(&x, None).unwrap();
    let want: Vec<f64> = x.to_vec().iter().map(|v| v + 0.25 - 0.5).collect();
    assert_close(&y.to_vec(), &want, 0.0);
}

#[test]
fn prenorm_block_matches_straight_line_reference() {
    let spec = BlockSpec {
        d_model: 4,
        d_attn: 4,
        heads: 1,
        ffn_dim: 6,
        norm: NormKind::Rms,
        order: BlockOrder::NormBeforeSublayer,
        ffn_kind: FfnKind::Swiglu3,
        attn_ranks: [None; 4],
        ffn_rank: None,
    };
    let mut rng = Rng::seed_from_u64(81);
    let block = Block::<f64>::init(&spec, &mut rng).unwrap();
    let x = T64::from_vec((0..20).map(|i| (i as f64 * 0.13).sin()).collect(), &[5, 4]).unwrap();
    let base = 10000.0;
    let got = block.forward(&x, Some(base)).unwrap();

    let w = |l: &Linear<f64>| l.as_dense().unwrap().weight().clone();
    let a = block.attention();
    let f = block.feed_forward();
    let nx = x.rms_norm(block.attn_norm().gain()).unwrap();
    let q = nx.matmul(&w(a.query())).unwrap().rope(base).unwrap();
    let k = nx.matmul(&w(a.key())).unwrap().rope(base).unwrap();
    let v = nx.matmul(&w(a.value())).unwrap();
    let scores = q.matmul_nt(&k).unwrap().scale(1.0 / 2.0);
    let attn = scores
        .causal_softmax()
        .unwrap()
        .matmul(&v)
        .unwrap()
        .matmul(&w(a.output()))
        .unwrap();
    let y1 = x.add(&attn).unwrap();
    let ny = y1.rms_norm(block.ffn_norm().gain()).unwrap();
    let gated = ny
        .matmul(&w(f.gate().unwrap()))
        .unwrap()
        .silu()
        .mul(&ny.matmul(&w(f.up())).unwrap())
        .unwrap();
    let want = y1.add(&gated.matmul(&w(f.down())).unwrap()).unwrap();
    assert_close(&got.to_vec(), &want.to_vec(), 1e-10);
}

#[test]
fn postnorm_block_matches_straight_line_reference() {
    let spec = BlockSpec {
        d_model: 4,
        d_attn: 4,
        heads: 2,
        ffn_dim: 6,
        norm: NormKind::Layer,
        order: BlockOrder::NormAfterSublayer,
        ffn_kind: FfnKind::Relu2,
        attn_ranks: [None, None, None, Some(2)],
        ffn_rank: None,
    };
    let mut rng = Rng::seed_from_u64(82);
    let block = Block::<f64>::init(&spec, &mut rng).unwrap();
    let x = T64::from_vec((0..16).map(|i| (i as f64 * 0.29).cos()).collect(), &[4, 4]).unwrap();
    let got = block.forward(&x, None).unwrap();

    let w = |l: &Linear<f64>| l.as_dense().unwrap().weight().clone();
    let a = block.attention();
    let f = block.feed_forward();
    let q = x.matmul(&w(a.query())).unwrap();
    let k = x.matmul(&w(a.key())).unwrap();
    let v = x.matmul(&w(a.value())).unwrap();
    let scale = 1.0 / (2.0f64).sqrt();
    let mut heads = Vec::new();
    for h in 0..2 {
        let qh = q.narrow_cols(h * 2, 2).unwrap();
        let kh = k.narrow_cols(h * 2, 2).unwrap();
        let vh = v.narrow_cols(h * 2, 2).unwrap();
        let wts = qh
            .matmul_nt(&kh)
            .unwrap()
            .scale(scale)
            .causal_softmax()
            .unwrap();
        heads.push(wts.matmul(&vh).unwrap());
    }
    let ofact = a.output().as_factored().unwrap();
    let attn = T64::concat_cols(&heads)
        .unwrap()
        .matmul(ofact.factor_a())
        .unwrap()
        .matmul(ofact.factor_b())
        .unwrap();
    let normed_attn = attn
        .layer_norm(
            block.attn_norm().gain(),
            block.attn_norm().bias().unwrap(),
        )
        .unwrap();
    let y1 = x.add(&normed_attn).unwrap();
    let ffn_out = y1
        .matmul(&w(f.up()))
        .unwrap()
        .relu()
        .matmul(&w(f.down()))
        .unwrap();
    let normed_ffn = ffn_out
        .layer_norm(block.ffn_norm().gain(), block.ffn_norm().bias().unwrap())
        .unwrap();
    let want = y1.add(&normed_ffn).unwrap();
    assert_close(&got.to_vec(), &want.to_vec(), 1e-10);
}

#[test]
fn attention_output_is_invariant_to_head_processing_order() {
    let mut rng = Rng::seed_from_u64(91);
    let layer = AttentionLayer::<f64>::init(8, 8, 4, [None, Some(3), None, Some(3)], &mut rng)
        .unwrap();
    let x = T64::from_vec((0..40).map(|i| (i as f64 * 0.17).sin()).collect(), &[5, 8]).unwrap();
    let direct = layer.forward(&x, None).unwrap();

    let q = layer.query().forward(&x).unwrap();
    let k = layer.key().forward(&x).unwrap();
    let v = layer.value().forward(&x).unwrap();
    let dh = layer.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs: Vec<Option<T64>> = vec![None; layer.heads()];
    for h in (0..layer.heads()).rev() {
        let qh = q.narrow_cols(h * dh, dh).unwrap();
        let kh = k.narrow_cols(h * dh, dh).unwrap();
        let vh = v.narrow_cols(h * dh, dh).unwrap();
        let wts = qh
            .matmul_nt(&kh)
            .unwrap()
            .scale(scale)
            .causal_softmax()
            .unwrap();
        outs[h] = Some(wts.matmul(&vh).unwrap());
    }
    let merged: Vec<T64> = outs.into_iter().map(|o| o.unwrap()).collect();
    let reversed_order = layer
        .output()
        .forward(&T64::concat_cols(&merged).unwrap())
        .unwrap();
    for (a, b) in direct.to_vec().iter().zip(reversed_order.to_vec()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn ffn_dependence_is_exactly_diagonal() {
    let dep = jacobian_dependence(LayerKind::Ffn, 6, 4).unwrap();
    for i in 0..6 {
        for j in 0..6 {
            assert_eq!(dep[i * 6 + j], i == j, "entry ({i},{j})");
        }
    }
}

#[test]
fn causal_attention_dependence_is_lower_triangular_and_dense() {
    let dep = jacobian_dependence(LayerKind::Attention, 6, 4).unwrap();
    for i in 0..6 {
        for j in 0..6 {
            assert_eq!(dep[i * 6 + j], j <= i, "entry ({i},{j})");
        }
    }
}

#[test]
fn single_token_attention_depends_on_itself() {
    assert_eq!(
        jacobian_dependence(LayerKind::Attention, 1, 4).unwrap(),
        vec![true]
    );
}

#[test]
fn block_gradients_match_finite_differences() {
    struct Case {
        order: BlockOrder,
        norm: NormKind,
        ffn_kind: FfnKind,
        factored: bool,
        rotary: Option<f64>,
    }
    let cases = [
        Case {
            order: BlockOrder::NormAfterSublayer,
            norm: NormKind::Layer,
            ffn_kind: FfnKind::Relu2,
            factored: false,
            rotary: None,
        },
        Case {
            order: BlockOrder::NormAfterSublayer,
            norm: NormKind::Layer,
            ffn_kind: FfnKind::Relu2,
            factored: true,
            rotary: None,
        },
        Case {
            order: BlockOrder::NormBeforeSublayer,
            norm: NormKind::Rms,
            ffn_kind: FfnKind::Swiglu3,
            factored: false,
            rotary: Some(10000.0),
        },
        Case {
            order: BlockOrder::NormBeforeSublayer,
            norm: NormKind::Rms,
            ffn_kind: FfnKind::Swiglu3,
            factored: true,
            rotary: Some(10000.0),
        },
        Case {
            order: BlockOrder::NormAfterResidual,
            norm: NormKind::Layer,
            ffn_kind: FfnKind::Swiglu3,
            factored: false,
            rotary: None,
        },
    ];
    for (ci, case) in cases.iter().enumerate() {
        let rank = if case.factored { Some(2) } else { None };
        let spec = BlockSpec {
            d_model: 6,
            d_attn: 6,
            heads: 3,
            ffn_dim: 8,
            norm: case.norm,
            order: case.order,
            ffn_kind: case.ffn_kind,
            attn_ranks: [rank; 4],
            ffn_rank: rank,
        };
        let mut rng = Rng::seed_from_u64(100 + ci as u64);
        let block = Block::<f64>::init(&spec, &mut rng).unwrap();
        let x = T64::input(
            (0..30).map(|i| (i as f64 * 0.23).sin() * 0.9).collect(),
            &[5, 6],
        )
        .unwrap();
        let mut leaves = vec![x.clone()];
        leaves.extend(
            collect_params(|f| block.visit_params("b", f))
                .into_iter()
                .map(|(_, t)| t),
        );
        let mut f = || -> crate::Result<T64> {
            let y = block.forward(&x, case.rotary)?;
            Ok(y.mul(&y)?.sum_all())
        };
        let worst = grad_check(&leaves, &mut f, 1e-5).unwrap();
        assert!(worst < 1e-4, "case {ci}: worst relative error {worst}");
    }
}
