//! End-to-end adjoint against central differences with the sigmoid
//! relaxation in the forward pass, where the model is smooth.

use spkf_core::data::Label;
use spkf_core::model::{backward, build_model, forward, BackwardOptions, ForwardOptions, SpikingConformer};
use spkf_core::neuron::SpikeFn;
use spkf_core::train::cross_entropy;
use spkf_core::Tensor;

use super::{rel_err, rng, tiny_config, uniform};

const ALPHA: f64 = 4.0;

fn soft_options() -> ForwardOptions {
    ForwardOptions {
        spike: SpikeFn::Sigmoid { alpha: ALPHA },
        ..ForwardOptions::train()
    }
}

fn loss(model: &SpikingConformer, x: &Tensor, labels: &[Label]) -> f64 {
    let mut opts = soft_options();
    opts.keep_cache = false;
    let out = forward(model, x, &opts).unwrap();
    labels
        .iter()
        .enumerate()
        .map(|(b, &l)| cross_entropy([out.logits.get(&[b, 0]), out.logits.get(&[b, 1])], l).0)
        .sum()
}

pub fn soft_gradient_error(encoders: usize, seed: u64) -> f64 {
    let cfg = tiny_config(encoders, 2);
    assert_eq!(cfg.n_tokens(), 3);
    let mut model = build_model(&cfg, seed).unwrap();
    let mut r = rng(seed ^ 0xabcdef);
    let batch = 3;
    let x = uniform(&mut r, &[batch, cfg.channels, cfg.sample_len], -3.0, 3.0);
    let labels = [Label::Positive, Label::Negative, Label::Positive];

    let out = forward(&model, &x, &soft_options()).unwrap();
    let mut g = Tensor::zeros(&[batch, 2]);
    for (b, &l) in labels.iter().enumerate() {
        let (_, d) = cross_entropy([out.logits.get(&[b, 0]), out.logits.get(&[b, 1])], l);
        g.set(&[b, 0], d[0]);
        g.set(&[b, 1], d[1]);
    }
    let opts = BackwardOptions {
        alpha: ALPHA,
        detach_reset: false,
    };
    let grads = backward(&model, out.cache.as_ref().unwrap(), &g, &opts).unwrap();
    let analytic: Vec<f64> = grads
        .named_parameters()
        .iter()
        .flat_map(|(_, t)| t.data().to_vec())
        .collect();

    let h = 1e-6;
    let sizes: Vec<usize> = model.parameters_mut().iter().map(|t| t.len()).collect();
    let mut numeric = Vec::with_capacity(analytic.len());
    for (p, &n) in sizes.iter().enumerate() {
        for i in 0..n {
            let orig = model.parameters_mut()[p].data()[i];
            model.parameters_mut()[p].data_mut()[i] = orig + h;
            let up = loss(&model, &x, &labels);
            model.parameters_mut()[p].data_mut()[i] = orig - h;
            let down = loss(&model, &x, &labels);
            model.parameters_mut()[p].data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
    }
    assert_eq!(numeric.len(), analytic.len());
    rel_err(&analytic, &numeric, 1e-8)
}

