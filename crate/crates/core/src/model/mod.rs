//! The spiking convolutional transformer: a spiking convolution front end,
//! stacked spiking encoder blocks with softmax-free self-attention, and a
//! two-layer classification head.

mod backward;
mod forward;
mod frontend;
mod ssa;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use backward::{backward, BackwardOptions};
pub use forward::{
    classify, encoder_block_forward, forward, model_forward, spiking_conv_forward, BlockCache,
    ForwardCache, ForwardOptions, ForwardOutput, GateRecord, LayerKind, LayerSkip, SpikeCount,
};
pub use ssa::{attention_current, attention_map, ssa_forward, SsaOutput};

use crate::error::{Error, Result};
use crate::math;
use crate::neuron::{ApproxConfig, LifParams};
use crate::tensor::{BatchNormState, ConvSpec, NormMode, PoolSpec, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    /// Ictal vs inter-ictal.
    Detection,
    /// Pre-ictal vs inter-ictal.
    Prediction,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Detection => "detection",
            Task::Prediction => "prediction",
        })
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "detection" => Ok(Task::Detection),
            "prediction" => Ok(Task::Prediction),
            other => Err(Error::InvalidConfig(format!("unknown task `{other}`"))),
        }
    }
}

/// Spiking layer families that may use approximate updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ApproxLayers(u8);

impl ApproxLayers {
    pub const SPATIAL: Self = Self(1);
    pub const PROJECTION: Self = Self(1 << 1);
    pub const QKV: Self = Self(1 << 2);
    pub const ATTENTION: Self = Self(1 << 3);
    pub const MLP: Self = Self(1 << 4);
    pub const ALL: Self = Self(0x1f);
    /// Every family except the MLP, whose output neurons carry the residual path.
    pub const DEFAULT: Self = Self(0x0f);
    pub const NONE: Self = Self(0);

    pub fn contains(self, other: Self) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn from_bits(bits: u8) -> Self {
        Self(bits & Self::ALL.0)
    }
}

impl core::ops::BitOr for ApproxLayers {
    type Output = Self;
    fn bitor(self, rhs: Self) -> Self {
        Self(self.0 | rhs.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub task: Task,
    /// EEG electrode count.
    pub channels: usize,
    pub sample_len: usize,
    pub timesteps: usize,
    /// Kernel count `k` of the convolution module.
    pub conv_channels: usize,
    pub embed_dim: usize,
    pub encoders: usize,
    pub mlp_ratio: f64,
    pub head_hidden: usize,
    pub temporal_kernel: usize,
    pub pool: PoolSpec,
    pub attention_scale: f64,
    pub lif: LifParams,
    pub approx: ApproxConfig,
    pub approx_layers: ApproxLayers,
}

impl ModelConfig {
    /// One encoder, `k = 8`.
    pub fn detection() -> Self {
        Self {
            task: Task::Detection,
            channels: 22,
            sample_len: 1280,
            timesteps: 8,
            conv_channels: 8,
            embed_dim: 32,
            encoders: 1,
            mlp_ratio: 1.0,
            head_hidden: 16,
            temporal_kernel: 25,
            pool: PoolSpec {
                kernel: (1, 64),
                stride: (1, 50),
            },
            attention_scale: 0.125,
            lif: LifParams::default(),
            approx: ApproxConfig {
                timesteps: 8,
                threshold: 2,
                enabled: false,
            },
            approx_layers: ApproxLayers::DEFAULT,
        }
    }

    /// Two encoders, `k = 32`.
    pub fn prediction() -> Self {
        Self {
            task: Task::Prediction,
            conv_channels: 32,
            encoders: 2,
            ..Self::detection()
        }
    }

    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Detection => Self::detection(),
            Task::Prediction => Self::prediction(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.channels == 0 || self.sample_len == 0 {
            return bad("channels and sample_len must be >= 1".into());
        }
        if self.timesteps == 0 {
            return bad("T must be >= 1".into());
        }
        if self.conv_channels == 0 || self.embed_dim == 0 || self.head_hidden == 0 {
            return bad("k, D and head_hidden must be >= 1".into());
        }
        if !(self.mlp_ratio > 0.0 && self.mlp_ratio.is_finite()) {
            return bad(format!("mlp_ratio must be > 0, got {}", self.mlp_ratio));
        }
        if !(self.attention_scale.is_finite() && self.attention_scale > 0.0) {
            return bad("attention_scale must be positive".into());
        }
        if self.temporal_kernel == 0 {
            return bad("temporal_kernel must be >= 1".into());
        }
        if self.temporal_width() == 0 {
            return bad(format!(
                "sample_len {} is shorter than the temporal kernel {}",
                self.sample_len, self.temporal_kernel
            ));
        }
        if self.pool.output_hw(1, self.temporal_width()).is_none() {
            return bad(format!(
                "sample_len {} too short for pooling window {:?}",
                self.sample_len, self.pool.kernel
            ));
        }
        if self.pool.kernel.0 != 1 || self.pool.stride.0 != 1 {
            return bad("pooling must act on the time axis only".into());
        }
        self.lif.validate()?;
        self.approx.validate()?;
        if self.approx.timesteps != self.timesteps {
            return bad(format!(
                "approximation T ({}) differs from model T ({})",
                self.approx.timesteps, self.timesteps
            ));
        }
        Ok(())
    }

    /// Width after the temporal convolution.
    pub fn temporal_width(&self) -> usize {
        (self.sample_len + 1).saturating_sub(self.temporal_kernel)
    }

    /// Number of tokens presented to the encoder blocks.
    pub fn n_tokens(&self) -> usize {
        self.pool
            .output_hw(1, self.temporal_width())
            .map(|(_, w)| w)
            .unwrap_or(0)
    }

    pub fn mlp_hidden(&self) -> usize {
        math::ceil(self.mlp_ratio * self.embed_dim as f64) as usize
    }

    pub fn temporal_spec(&self) -> ConvSpec {
        ConvSpec::valid(self.conv_channels, (1, self.temporal_kernel))
    }

    pub fn spatial_spec(&self) -> ConvSpec {
        ConvSpec::valid(self.conv_channels, (self.channels, 1))
    }
}

/// Exact number of learnable scalars for `cfg`.
pub fn count_parameters(cfg: &ModelConfig) -> usize {
    let k = cfg.conv_channels;
    let d = cfg.embed_dim;
    let dh = cfg.mlp_hidden();
    let h = cfg.head_hidden;
    let conv = (k * cfg.temporal_kernel + k) + 2 * k + (k * k * cfg.channels + k) + 2 * k + (d * k + d) + 2 * d;
    let encoder = 4 * (d * d + d) + (d * dh + dh) + 2 * dh + (dh * d + d) + 2 * d;
    let head = (d * h + h) + (h * 2 + 2);
    conv + cfg.encoders * encoder + head
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvModule {
    /// `[k, 1, 1, temporal_kernel]`
    pub temporal_w: Tensor,
    pub temporal_b: Tensor,
    pub bn1: BatchNormState,
    /// `[k, k, channels, 1]`
    pub spatial_w: Tensor,
    pub spatial_b: Tensor,
    pub bn2: BatchNormState,
    /// `[D, k, 1, 1]`
    pub proj_w: Tensor,
    pub proj_b: Tensor,
    pub bn3: BatchNormState,
}

/// Linear weights are stored `[in, out]` so a row of tokens multiplies on the left.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderBlock {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub mlp_w1: Tensor,
    pub mlp_b1: Tensor,
    pub bn_m1: BatchNormState,
    pub mlp_w2: Tensor,
    pub mlp_b2: Tensor,
    pub bn_m2: BatchNormState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

enum Entry<'a> {
    Param(&'a Tensor),
    Norm(&'a BatchNormState),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpikingConformer {
    pub config: ModelConfig,
    pub conv: ConvModule,
    pub encoders: Vec<EncoderBlock>,
    pub head: Head,
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn weight(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        let bound = math::sqrt(6.0 / fan_in as f64);
        Tensor::from_fn(shape, |_| self.rng.random_range(-bound..bound))
    }

    fn bias(&mut self, n: usize, fan_in: usize) -> Tensor {
        let bound = 1.0 / math::sqrt(fan_in as f64);
        Tensor::from_fn(&[n], |_| self.rng.random_range(-bound..bound))
    }
}

/// Deterministic construction: Kaiming-uniform weights scaled by fan-in,
/// fan-in-scaled uniform biases, batch norms at identity.
pub fn build_model(cfg: &ModelConfig, seed: u64) -> Result<SpikingConformer> {
    cfg.validate()?;
    let mut init = Init {
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let (k, d, dh, h, ch, kt) = (
        cfg.conv_channels,
        cfg.embed_dim,
        cfg.mlp_hidden(),
        cfg.head_hidden,
        cfg.channels,
        cfg.temporal_kernel,
    );
    let conv = ConvModule {
        temporal_w: init.weight(&[k, 1, 1, kt], kt),
        temporal_b: init.bias(k, kt),
        bn1: BatchNormState::new(k),
        spatial_w: init.weight(&[k, k, ch, 1], k * ch),
        spatial_b: init.bias(k, k * ch),
        bn2: BatchNormState::new(k),
        proj_w: init.weight(&[d, k, 1, 1], k),
        proj_b: init.bias(d, k),
        bn3: BatchNormState::new(d),
    };
    let encoders = (0..cfg.encoders)
        .map(|_| EncoderBlock {
            wq: init.weight(&[d, d], d),
            bq: init.bias(d, d),
            wk: init.weight(&[d, d], d),
            bk: init.bias(d, d),
            wv: init.weight(&[d, d], d),
            bv: init.bias(d, d),
            wo: init.weight(&[d, d], d),
            bo: init.bias(d, d),
            mlp_w1: init.weight(&[d, dh], d),
            mlp_b1: init.bias(dh, d),
            bn_m1: BatchNormState::new(dh),
            mlp_w2: init.weight(&[dh, d], dh),
            mlp_b2: init.bias(d, dh),
            bn_m2: BatchNormState::new(d),
        })
        .collect();
    let head = Head {
        w1: init.weight(&[d, h], d),
        b1: init.bias(h, d),
        w2: init.weight(&[h, 2], h),
        b2: init.bias(2, h),
    };
    let mut model = SpikingConformer {
        config: cfg.clone(),
        conv,
        encoders,
        head,
    };
    model.set_norm_mode(NormMode::Evaluation);
    Ok(model)
}

impl SpikingConformer {
    /// Calls `f` for every tensor and batch-norm state in a fixed order
    /// shared by every visitor.
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, Entry<'a>)) {
        let c = &self.conv;
        f("conv.temporal.weight", Entry::Param(&c.temporal_w));
        f("conv.temporal.bias", Entry::Param(&c.temporal_b));
        f("conv.bn1", Entry::Norm(&c.bn1));
        f("conv.spatial.weight", Entry::Param(&c.spatial_w));
        f("conv.spatial.bias", Entry::Param(&c.spatial_b));
        f("conv.bn2", Entry::Norm(&c.bn2));
        f("conv.proj.weight", Entry::Param(&c.proj_w));
        f("conv.proj.bias", Entry::Param(&c.proj_b));
        f("conv.bn3", Entry::Norm(&c.bn3));
        for (i, e) in self.encoders.iter().enumerate() {
            f(&format!("enc{i}.q.weight"), Entry::Param(&e.wq));
            f(&format!("enc{i}.q.bias"), Entry::Param(&e.bq));
            f(&format!("enc{i}.k.weight"), Entry::Param(&e.wk));
            f(&format!("enc{i}.k.bias"), Entry::Param(&e.bk));
            f(&format!("enc{i}.v.weight"), Entry::Param(&e.wv));
            f(&format!("enc{i}.v.bias"), Entry::Param(&e.bv));
            f(&format!("enc{i}.attn.weight"), Entry::Param(&e.wo));
            f(&format!("enc{i}.attn.bias"), Entry::Param(&e.bo));
            f(&format!("enc{i}.mlp1.weight"), Entry::Param(&e.mlp_w1));
            f(&format!("enc{i}.mlp1.bias"), Entry::Param(&e.mlp_b1));
            f(&format!("enc{i}.bn_mlp1"), Entry::Norm(&e.bn_m1));
            f(&format!("enc{i}.mlp2.weight"), Entry::Param(&e.mlp_w2));
            f(&format!("enc{i}.mlp2.bias"), Entry::Param(&e.mlp_b2));
            f(&format!("enc{i}.bn_mlp2"), Entry::Norm(&e.bn_m2));
        }
        let h = &self.head;
        f("head.fc1.weight", Entry::Param(&h.w1));
        f("head.fc1.bias", Entry::Param(&h.b1));
        f("head.fc2.weight", Entry::Param(&h.w2));
        f("head.fc2.bias", Entry::Param(&h.b2));
    }

    fn bn_states_mut(&mut self) -> Vec<&mut BatchNormState> {
        let mut out = Vec::new();
        out.push(&mut self.conv.bn1);
        out.push(&mut self.conv.bn2);
        out.push(&mut self.conv.bn3);
        for e in &mut self.encoders {
            out.push(&mut e.bn_m1);
            out.push(&mut e.bn_m2);
        }
        out
    }

    pub fn bn_states(&self) -> Vec<&BatchNormState> {
        let mut out = Vec::new();
        out.push(&self.conv.bn1);
        out.push(&self.conv.bn2);
        out.push(&self.conv.bn3);
        for e in &self.encoders {
            out.push(&e.bn_m1);
            out.push(&e.bn_m2);
        }
        out
    }

    /// Learnable tensors with stable names, in a fixed order.
    pub fn named_parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        self.visit(&mut |name, e| match e {
            Entry::Param(t) => out.push((name.into(), t)),
            Entry::Norm(b) => {
                out.push((format!("{name}.gamma"), &b.gamma));
                out.push((format!("{name}.beta"), &b.beta));
            }
        });
        out
    }

    /// Mutable learnable tensors in the same order as [`Self::named_parameters`].
    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let c = &mut self.conv;
        let mut out: Vec<&mut Tensor> = Vec::new();
        out.push(&mut c.temporal_w);
        out.push(&mut c.temporal_b);
        out.push(&mut c.bn1.gamma);
        out.push(&mut c.bn1.beta);
        out.push(&mut c.spatial_w);
        out.push(&mut c.spatial_b);
        out.push(&mut c.bn2.gamma);
        out.push(&mut c.bn2.beta);
        out.push(&mut c.proj_w);
        out.push(&mut c.proj_b);
        out.push(&mut c.bn3.gamma);
        out.push(&mut c.bn3.beta);
        for e in &mut self.encoders {
            out.push(&mut e.wq);
            out.push(&mut e.bq);
            out.push(&mut e.wk);
            out.push(&mut e.bk);
            out.push(&mut e.wv);
            out.push(&mut e.bv);
            out.push(&mut e.wo);
            out.push(&mut e.bo);
            out.push(&mut e.mlp_w1);
            out.push(&mut e.mlp_b1);
            out.push(&mut e.bn_m1.gamma);
            out.push(&mut e.bn_m1.beta);
            out.push(&mut e.mlp_w2);
            out.push(&mut e.mlp_b2);
            out.push(&mut e.bn_m2.gamma);
            out.push(&mut e.bn_m2.beta);
        }
        let h = &mut self.head;
        out.push(&mut h.w1);
        out.push(&mut h.b1);
        out.push(&mut h.w2);
        out.push(&mut h.b2);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_parameters().iter().map(|(_, t)| t.len()).sum()
    }

    /// Every tensor needed to restore the model: parameters plus batch-norm
    /// running statistics (`<bn>.running_mean`, `<bn>.running_var`).
    pub fn state_dict(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = Vec::new();
        self.visit(&mut |n, e| match e {
            Entry::Param(t) => out.push((n.into(), t.clone())),
            Entry::Norm(b) => {
                out.push((format!("{n}.gamma"), b.gamma.clone()));
                out.push((format!("{n}.beta"), b.beta.clone()));
                let c = b.channels();
                let (mean, var) = if b.is_initialized() {
                    (b.running_mean.clone(), b.running_var.clone())
                } else {
                    (alloc::vec![0.0; c], alloc::vec![1.0; c])
                };
                out.push((format!("{n}.running_mean"), Tensor::scalar_vec(&mean)));
                out.push((format!("{n}.running_var"), Tensor::scalar_vec(&var)));
            }
        });
        out
    }

    /// Inverse of [`Self::state_dict`]; every entry must be present with the
    /// shape `config` implies.
    pub fn from_state_dict(config: &ModelConfig, entries: &[(String, Tensor)]) -> Result<Self> {
        let mut model = build_model(config, 0)?;
        let lookup = |name: &str| -> Result<&Tensor> {
            entries
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::InvalidConfig(format!("checkpoint is missing `{name}`")))
        };
        let names: Vec<String> = model.named_parameters().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(model.parameters_mut()) {
            let t = lookup(name)?;
            if t.shape() != slot.shape() {
                return Err(Error::InvalidConfig(format!(
                    "checkpoint tensor `{name}` has shape {:?}, model expects {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
        let mut bn_names = Vec::new();
        model.visit(&mut |n, e| {
            if let Entry::Norm(_) = e {
                bn_names.push(String::from(n));
            }
        });
        for (name, bn) in bn_names.iter().zip(model.bn_states_mut()) {
            let mean = lookup(&format!("{name}.running_mean"))?;
            let var = lookup(&format!("{name}.running_var"))?;
            if mean.len() != bn.channels() || var.len() != bn.channels() {
                return Err(Error::InvalidConfig(format!(
                    "checkpoint running statistics for `{name}` have the wrong length"
                )));
            }
            bn.running_mean = mean.data().to_vec();
            bn.running_var = var.data().to_vec();
        }
        Ok(model)
    }

    /// Same architecture with every tensor zeroed; used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.parameters_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn set_norm_momentum(&mut self, momentum: f64) {
        for bn in self.bn_states_mut() {
            bn.momentum = momentum;
        }
    }

    pub fn set_norm_mode(&mut self, mode: NormMode) {
        for bn in self.bn_states_mut() {
            bn.mode = mode;
        }
    }

    /// Replaces running statistics with those computed by a training-mode
    /// forward pass (see [`ForwardOutput::bn_running`]).
    pub fn apply_running_stats(&mut self, running: &[(Vec<f64>, Vec<f64>)]) {
        for (bn, (mean, var)) in self.bn_states_mut().into_iter().zip(running) {
            bn.running_mean.clone_from(mean);
            bn.running_var.clone_from(var);
        }
    }
}
