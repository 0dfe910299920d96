#![allow(dead_code)]

pub mod grad;
pub mod interp;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spkf_core::model::{ApproxLayers, ModelConfig};
use spkf_core::tensor::{PoolSpec, Tensor};
use spkf_core::{ApproxConfig, LifParams, Task};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

pub fn raster(rng: &mut impl Rng, shape: &[usize], p: f64) -> Tensor {
    Tensor::from_fn(shape, |_| if rng.random_bool(p) { 1.0 } else { 0.0 })
}

/// Norm-wise relative error `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}

/// A model small enough for exhaustive checks: 3 tokens of dimension 4.
pub fn tiny_config(encoders: usize, timesteps: usize) -> ModelConfig {
    ModelConfig {
        task: Task::Detection,
        channels: 3,
        sample_len: 16,
        timesteps,
        conv_channels: 2,
        embed_dim: 4,
        encoders,
        mlp_ratio: 1.0,
        head_hidden: 3,
        temporal_kernel: 3,
        pool: PoolSpec {
            kernel: (1, 4),
            stride: (1, 4),
        },
        attention_scale: 0.5,
        lif: LifParams::default(),
        approx: ApproxConfig::disabled(timesteps),
        approx_layers: ApproxLayers::ALL,
    }
}
