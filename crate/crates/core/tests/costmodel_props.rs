use infercost::costmodel::{
    decode_op_costs, kv_cache_bytes, prefill_op_costs, OpKind, UpdateLayout,
};
use infercost::hardware::{
    attainable_flops, classify, lower_bound_time, ridge_point, BoundKind, HardwareSpec,
};
use infercost::ModelConfig;
use proptest::prelude::*;

fn arch() -> impl Strategy<Value = ModelConfig> {
    (
        1u64..=64,
        prop::sample::select(vec![16u64, 32, 64, 128]),
        1u64..=8,
        1u64..=48,
    )
        .prop_map(|(n, d, ff_mult, l)| ModelConfig {
            hidden_size: n * d,
            intermediate_size: n * d * ff_mult / 2 + 8,
            num_heads: n,
            head_dim: d,
            num_layers: l,
            bytes_per_scalar: 2,
        })
}

fn layout() -> impl Strategy<Value = UpdateLayout> {
    prop::sample::select(vec![
        UpdateLayout::Vanilla,
        UpdateLayout::Paged,
        UpdateLayout::TokenGranular,
    ])
}

proptest! {
    #[test]
    fn flops_linear_in_batch(cfg in arch(), b in 1u64..64, s in 1u64..2048, layout in layout()) {
        let one = prefill_op_costs(&cfg, b, s).unwrap();
        let two = prefill_op_costs(&cfg, 2 * b, s).unwrap();
        for (x, y) in one.iter().zip(&two) {
            prop_assert_eq!(2 * x.flops, y.flops);
        }
        let one = decode_op_costs(&cfg, b, s, layout).unwrap();
        let two = decode_op_costs(&cfg, 2 * b, s, layout).unwrap();
        for (x, y) in one.iter().zip(&two) {
            prop_assert_eq!(2 * x.flops, y.flops);
        }
    }

    #[test]
    fn prefill_attention_quadratic_in_s(cfg in arch(), b in 1u64..32, s in 1u64..2048) {
        let one = prefill_op_costs(&cfg, b, s).unwrap();
        let two = prefill_op_costs(&cfg, b, 2 * s).unwrap();
        for (x, y) in one.iter().zip(&two) {
            if x.kind == OpKind::Attention {
                prop_assert_eq!(4 * x.flops, y.flops);
            } else {
                prop_assert_eq!(2 * x.flops, y.flops);
            }
        }
    }

    #[test]
    fn decode_flops_independent_of_history(
        cfg in arch(), b in 1u64..64, s1 in 1u64..4096, s2 in 1u64..4096, layout in layout()
    ) {
        let a = decode_op_costs(&cfg, b, s1, layout).unwrap();
        let c = decode_op_costs(&cfg, b, s2, layout).unwrap();
        for (x, y) in a.iter().zip(&c) {
            if !matches!(x.kind, OpKind::Attention | OpKind::CacheUpdate) {
                prop_assert_eq!(x.flops, y.flops);
                prop_assert_eq!(x.mops, y.mops);
            }
        }
    }

    #[test]
    fn decode_projection_intensity_near_batch(b in 1u64..=64, s in 1u64..4096) {
        let cfg = ModelConfig::llama2_7b();
        let h = cfg.hidden_size as f64;
        for c in decode_op_costs(&cfg, b, s, UpdateLayout::Paged).unwrap() {
            if c.kind.is_projection() {
                let dev = (c.arithmetic_intensity - b as f64).abs() / b as f64;
                // the activation traffic costs at most 2b/h relative to weights
                prop_assert!(dev <= 2.0 * b as f64 / h + 1e-12, "{} b={} dev={}", c.kind, b, dev);
                if b <= 20 {
                    prop_assert!(dev < 0.01);
                }
            }
        }
    }

    #[test]
    fn ai_is_flops_over_bytes(cfg in arch(), b in 1u64..16, s in 1u64..1024) {
        for c in prefill_op_costs(&cfg, b, s).unwrap() {
            prop_assert!(c.mops > 0);
            prop_assert_eq!(c.arithmetic_intensity, c.flops as f64 / c.mops as f64);
        }
    }

    #[test]
    fn kv_bytes_linear(cfg in arch(), b in 0u64..64, s in 0u64..4096) {
        let one = kv_cache_bytes(&cfg, b, s).unwrap();
        prop_assert_eq!(one, 2 * 2 * cfg.hidden_size * cfg.num_layers * b * s);
    }

    #[test]
    fn classification_matches_knee(cfg in arch(), b in 1u64..64, s in 1u64..2048, dev in 0usize..3) {
        let hw = HardwareSpec::presets()[dev].clone();
        let peak = hw.peak_flops_per_s as f64;
        for c in prefill_op_costs(&cfg, b, s).unwrap() {
            let bound = classify(&c, &hw).unwrap();
            let compute = bound == BoundKind::ComputeBound;
            prop_assert_eq!(compute, c.arithmetic_intensity > ridge_point(&hw));
            if compute {
                prop_assert_eq!(attainable_flops(c.arithmetic_intensity, &hw), peak);
            } else {
                prop_assert!(attainable_flops(c.arithmetic_intensity, &hw) <= peak);
            }
            prop_assert!(lower_bound_time(&c, &hw) > 0.0);
        }
    }

    #[test]
    fn lower_bound_monotone(f1 in 0u64..1u64 << 50, f2 in 0u64..1u64 << 50, m1 in 1u64..1u64 << 40, m2 in 1u64..1u64 << 40) {
        let hw = HardwareSpec::a800();
        let mk = |flops: u64, mops: u64| infercost::costmodel::OpCost {
            kind: OpKind::QkvProj,
            flops,
            mops,
            arithmetic_intensity: flops as f64 / mops as f64,
        };
        let (fl, fh) = (f1.min(f2), f1.max(f2));
        let (ml, mh) = (m1.min(m2), m1.max(m2));
        prop_assert!(lower_bound_time(&mk(fl, ml), &hw) <= lower_bound_time(&mk(fh, ml), &hw));
        prop_assert!(lower_bound_time(&mk(fl, ml), &hw) <= lower_bound_time(&mk(fl, mh), &hw));
    }
}
