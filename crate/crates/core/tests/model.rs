mod common;

use common::{raster, rng, tiny_config, uniform};
use proptest::prelude::*;
use rand::Rng;
use spkf_core::model::{
    attention_current, attention_map, build_model, classify, count_parameters, encoder_block_forward, forward,
    model_forward, spiking_conv_forward, ssa_forward, ApproxLayers, ForwardOptions, Head,
};
use spkf_core::{ApproxConfig, ModelConfig, SpikingConformer, Tensor};

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

fn zero_biases(m: &mut SpikingConformer) {
    for t in [&mut m.conv.temporal_b, &mut m.conv.spatial_b, &mut m.conv.proj_b] {
        t.fill(0.0);
    }
    for e in &mut m.encoders {
        for t in [&mut e.bq, &mut e.bk, &mut e.bv, &mut e.bo, &mut e.mlp_b1, &mut e.mlp_b2] {
            t.fill(0.0);
        }
    }
    m.head.b1.fill(0.0);
    m.head.b2.fill(0.0);
}

#[test]
fn parameter_budget() {
    let det = count_parameters(&ModelConfig::detection());
    let pred = count_parameters(&ModelConfig::prediction());
    assert_eq!(det, 9_034);
    assert_eq!(pred, 38_130);
    assert!((7_920..=11_880).contains(&det));
    assert!((32_240..=48_360).contains(&pred));
    assert_eq!(build_model(&ModelConfig::detection(), 1).unwrap().parameter_count(), det);
    assert_eq!(build_model(&ModelConfig::prediction(), 1).unwrap().parameter_count(), pred);
}

#[test]
fn per_layer_counts() {
    let m = build_model(&ModelConfig::detection(), 0).unwrap();
    assert_eq!(m.conv.temporal_w.len() + m.conv.temporal_b.len(), 208);
    let p = build_model(&ModelConfig::prediction(), 0).unwrap();
    assert_eq!(p.conv.spatial_w.len() + p.conv.spatial_b.len(), 22_560);
    assert_eq!(p.encoders.len(), 2);
}

#[test]
fn presets() {
    let d = ModelConfig::detection();
    let p = ModelConfig::prediction();
    assert_eq!((d.conv_channels, d.encoders, d.timesteps), (8, 1, 8));
    assert_eq!((p.conv_channels, p.encoders, p.timesteps), (32, 2, 8));
    assert_eq!(d.temporal_width(), 1256);
    assert_eq!(d.n_tokens(), 24);
}

#[test]
fn token_raster_shape_and_binary() {
    let m = build_model(&ModelConfig::detection(), 3).unwrap();
    let seg = uniform(&mut rng(3), &[22, 1280], -2.0, 2.0);
    let tokens = spiking_conv_forward(&m, &seg).unwrap();
    assert_eq!(tokens.shape(), &[8, 24, 32]);
    assert!(tokens.is_binary());
    assert!(spiking_conv_forward(&m, &Tensor::zeros(&[21, 1280])).is_err());
}

#[test]
fn zero_segment_gives_zero_tokens() {
    let mut m = build_model(&ModelConfig::detection(), 4).unwrap();
    zero_biases(&mut m);
    let tokens = spiking_conv_forward(&m, &Tensor::zeros(&[1, 22, 1280])).unwrap();
    assert_eq!(tokens.count_nonzero(), 0);
}

#[test]
fn spatial_layer_collapses_electrodes() {
    let m = build_model(&ModelConfig::detection(), 5).unwrap();
    let x = uniform(&mut rng(5), &[2, 22, 1280], -1.0, 1.0);
    let mut opts = ForwardOptions::eval();
    opts.keep_cache = true;
    let out = forward(&m, &x, &opts).unwrap();
    let cache = out.cache.unwrap();
    assert_eq!(cache.s2.shape(), &[8 * 2, 8, 1, 1256]);
    assert_eq!(cache.tokens.shape(), &[8 * 2 * 24, 32]);
}

#[test]
fn zero_segment_logits_come_from_biases() {
    let cfg = tiny_config(1, 4);
    let mut m = build_model(&cfg, 6).unwrap();
    zero_biases(&mut m);
    m.head.b2 = Tensor::scalar_vec(&[0.25, -0.5]);
    let (logits, _, _) = model_forward(&m, &Tensor::zeros(&[3, 16])).unwrap();
    assert_eq!(logits.data(), &[0.25, -0.5]);
}

#[test]
fn classifier_examples() {
    let d = 4;
    let zeros = Tensor::zeros(&[2, 3, d]);
    let head = Head {
        w1: uniform(&mut rng(7), &[d, 5], -1.0, 1.0),
        b1: Tensor::zeros(&[5]),
        w2: uniform(&mut rng(8), &[5, 2], -1.0, 1.0),
        b2: Tensor::zeros(&[2]),
    };
    assert_eq!(classify(&zeros, &head).unwrap().data(), &[0.0, 0.0]);

    let j = 2;
    let mut w1 = Tensor::zeros(&[d, 1]);
    w1.set(&[j, 0], 1.0);
    let mut w2 = Tensor::zeros(&[1, 2]);
    w2.set(&[0, 0], 1.0);
    let probe = Head {
        w1,
        b1: Tensor::zeros(&[1]),
        w2,
        b2: Tensor::zeros(&[2]),
    };
    let mut r = Tensor::zeros(&[2, 3, d]);
    for t in 0..2 {
        for n in 0..3 {
            r.set(&[t, n, j], 1.0);
        }
    }
    assert_eq!(classify(&r, &probe).unwrap().data(), &[1.0, 0.0]);
    assert!(classify(&uniform(&mut rng(9), &[2, 3, d], 0.1, 0.9), &head).is_err());
}

#[test]
fn attention_hand_product() {
    let q = Tensor::new(&[1, 2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    let k = q.clone();
    let v = Tensor::new(&[1, 2, 2], vec![1.0, 1.0, 0.0, 0.0]).unwrap();
    assert_eq!(attention_map(&q, &k, 0).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
    assert_eq!(attention_current(&q, &k, &v, 1.0).unwrap().data(), &[1.0, 1.0, 0.0, 0.0]);
}

#[test]
fn encoder_with_silent_branches_is_identity() {
    let cfg = tiny_config(1, 4);
    let mut m = build_model(&cfg, 10).unwrap();
    zero_biases(&mut m);
    let e = &mut m.encoders[0];
    e.wo.fill(0.0);
    e.mlp_w2.fill(0.0);
    let zeros = Tensor::zeros(&[4, 3, 4]);
    assert_eq!(encoder_block_forward(&zeros, e, &cfg).unwrap().count_nonzero(), 0);
    for seed in 0..50 {
        let x = raster(&mut rng(seed), &[4, 3, 4], 0.5);
        let y = encoder_block_forward(&x, e, &cfg).unwrap();
        assert_eq!(y.data(), x.data());
    }
}

#[test]
fn encoder_preserves_shape_at_preset_size() {
    let cfg = ModelConfig::detection();
    let m = build_model(&cfg, 11).unwrap();
    let x = raster(&mut rng(11), &[8, 24, 32], 0.3);
    let y = encoder_block_forward(&x, &m.encoders[0], &cfg).unwrap();
    assert_eq!(y.shape(), &[8, 24, 32]);
    assert!(y.is_binary());
}

#[test]
fn seeds_drive_initialization() {
    let cfg = ModelConfig::detection();
    let a = build_model(&cfg, 42).unwrap();
    let b = build_model(&cfg, 42).unwrap();
    let c = build_model(&cfg, 43).unwrap();
    assert_eq!(a.state_dict(), b.state_dict());
    assert_ne!(a.conv.temporal_w, c.conv.temporal_w);
    for bn in a.bn_states() {
        assert!(bn.gamma.data().iter().all(|&g| g == 1.0));
        assert!(bn.beta.data().iter().all(|&b| b == 0.0));
    }
}

#[test]
fn state_dict_round_trip() {
    let cfg = ModelConfig::prediction();
    let m = build_model(&cfg, 12).unwrap();
    let back = SpikingConformer::from_state_dict(&cfg, &m.state_dict()).unwrap();
    assert_eq!(back, m);
}

#[test]
fn forward_is_deterministic_and_checked() {
    let m = build_model(&ModelConfig::detection(), 13).unwrap();
    let seg = uniform(&mut rng(13), &[22, 1280], -2.0, 2.0);
    let (a, spikes, _) = model_forward(&m, &seg).unwrap();
    let (b, _, _) = model_forward(&m, &seg).unwrap();
    assert_eq!(bits(&a), bits(&b));
    assert!(spikes.iter().all(|s| s.spikes <= s.neuron_steps));
}

fn approx_model(cfg: &ModelConfig, seed: u64, t_th: Option<usize>) -> SpikingConformer {
    let mut cfg = cfg.clone();
    cfg.approx = match t_th {
        Some(t) => ApproxConfig::new(cfg.timesteps, t),
        None => ApproxConfig::disabled(cfg.timesteps),
    };
    cfg.approx_layers = ApproxLayers::ALL;
    let mut m = build_model(&cfg, seed).unwrap();
    m.config = cfg;
    m
}

#[test]
fn preset_boundary_threshold_matches_exact() {
    let cfg = ModelConfig::detection();
    let exact = approx_model(&cfg, 14, None);
    let boundary = approx_model(&cfg, 14, Some(8));
    let seg = uniform(&mut rng(14), &[22, 1280], -2.0, 2.0);
    let (a, _, _) = model_forward(&exact, &seg).unwrap();
    let (b, _, skips) = model_forward(&boundary, &seg).unwrap();
    assert_eq!(bits(&a), bits(&b));
    assert!(skips.iter().all(|s| s.stats.updates_skipped == 0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn boundary_threshold_is_bit_identical(t in 1usize..=8, encoders in 1usize..=2, seed in any::<u64>()) {
        let cfg = tiny_config(encoders, t);
        let exact = approx_model(&cfg, seed, None);
        let boundary = approx_model(&cfg, seed, Some(t));
        let x = uniform(&mut rng(seed), &[2, 3, 16], -3.0, 3.0);
        let mut opts = ForwardOptions::eval();
        opts.checked = true;
        let a = forward(&exact, &x, &opts).unwrap();
        let b = forward(&boundary, &x, &opts).unwrap();
        prop_assert_eq!(bits(&a.logits), bits(&b.logits));
        prop_assert_eq!(&a.spikes, &b.spikes);
        prop_assert_eq!(b.total_skips().updates_skipped, 0);
    }

    #[test]
    fn ssa_is_nonnegative_and_binary(t in 1usize..=4, n in 1usize..6, p in 0.0f64..1.0, seed in any::<u64>()) {
        let cfg = tiny_config(1, t);
        let m = build_model(&cfg, seed).unwrap();
        let block = &m.encoders[0];
        let x = raster(&mut rng(seed), &[t, n, 4], p);
        let out = ssa_forward(&x, block, &cfg.lif, cfg.attention_scale).unwrap();
        for r in [&out.q, &out.k, &out.v, &out.output] {
            prop_assert!(r.is_binary());
            prop_assert_eq!(r.shape(), &[t, n, 4]);
        }
        for step in 0..t {
            prop_assert!(attention_map(&out.q, &out.k, step).unwrap().data().iter().all(|&a| a >= 0.0));
        }
        prop_assert!(attention_current(&out.q, &out.k, &out.v, 1.0).unwrap().data().iter().all(|&a| a >= 0.0));

        let mut silent = block.clone();
        for b in [&mut silent.bq, &mut silent.bk, &mut silent.bv, &mut silent.bo] {
            b.fill(0.0);
        }
        let zero = ssa_forward(&Tensor::zeros(&[t, n, 4]), &silent, &cfg.lif, cfg.attention_scale).unwrap();
        prop_assert_eq!(zero.output.count_nonzero(), 0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn batch_order_does_not_change_logits(encoders in 1usize..=2, b in 2usize..6, seed in any::<u64>()) {
        let cfg = tiny_config(encoders, 3);
        let m = build_model(&cfg, seed).unwrap();
        let mut r = rng(seed);
        let x = uniform(&mut r, &[b, 3, 16], -3.0, 3.0);
        let mut perm: Vec<usize> = (0..b).collect();
        for i in (1..b).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let seg = 3 * 16;
        let mut shuffled = Tensor::zeros(&[b, 3, 16]);
        for (dst, &src) in perm.iter().enumerate() {
            shuffled.data_mut()[dst * seg..(dst + 1) * seg].copy_from_slice(&x.data()[src * seg..(src + 1) * seg]);
        }
        let mut opts = ForwardOptions::eval();
        opts.approx = false;
        let a = forward(&m, &x, &opts).unwrap().logits;
        let s = forward(&m, &shuffled, &opts).unwrap().logits;
        for (dst, &src) in perm.iter().enumerate() {
            prop_assert_eq!(a.get(&[src, 0]).to_bits(), s.get(&[dst, 0]).to_bits());
            prop_assert_eq!(a.get(&[src, 1]).to_bits(), s.get(&[dst, 1]).to_bits());
        }
    }

    #[test]
    fn token_count_formula(len in 89usize..20_000) {
        let cfg = ModelConfig { sample_len: len, ..ModelConfig::detection() };
        prop_assert_eq!(cfg.n_tokens(), (len - 25 + 1 - 64) / 50 + 1);
    }
}
