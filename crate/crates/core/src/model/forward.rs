use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::frontend::{front_forward, transpose_weights, FrontDims, FrontScratch};
use super::ssa::attention_out_current;
use super::{ApproxLayers, EncoderBlock, Head, ModelConfig, SpikingConformer};
use crate::error::{Error, Result};
use crate::neuron::{step_slice, SkipStats, SpikeFn, UpdateGate};
use crate::tensor::{
    self, avg_pool2d, batch_norm_eval, batch_norm_train, conv2d, BatchNormCache,
    BatchNormState, Tensor,
};

/// Spiking layers of the network, in forward order within a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Temporal,
    Spatial,
    Projection,
    Query,
    Key,
    Value,
    Attention,
    MlpHidden,
    MlpOut,
}

impl LayerKind {
    /// Approximation family, `None` for layers that always update.
    pub fn family(self) -> Option<ApproxLayers> {
        match self {
            LayerKind::Temporal => None,
            LayerKind::Spatial => Some(ApproxLayers::SPATIAL),
            LayerKind::Projection => Some(ApproxLayers::PROJECTION),
            LayerKind::Query | LayerKind::Key | LayerKind::Value => Some(ApproxLayers::QKV),
            LayerKind::Attention => Some(ApproxLayers::ATTENTION),
            LayerKind::MlpHidden | LayerKind::MlpOut => Some(ApproxLayers::MLP),
        }
    }

    pub fn name(self, block: Option<usize>) -> String {
        let base = match self {
            LayerKind::Temporal => "conv.temporal",
            LayerKind::Spatial => "conv.spatial",
            LayerKind::Projection => "conv.proj",
            LayerKind::Query => "q",
            LayerKind::Key => "k",
            LayerKind::Value => "v",
            LayerKind::Attention => "attn",
            LayerKind::MlpHidden => "mlp1",
            LayerKind::MlpOut => "mlp2",
        };
        match block {
            Some(i) => format!("enc{i}.{base}"),
            None => base.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardOptions {
    /// Batch statistics in every batch norm (running statistics otherwise).
    pub training: bool,
    pub spike: SpikeFn,
    /// Apply the model's approximation config. Ignored while training.
    pub approx: bool,
    /// Fail with [`Error::NonBinary`] if any spike tensor is not 0/1.
    pub checked: bool,
    /// Keep intermediates for the backward pass and the op counter.
    pub keep_cache: bool,
}

impl ForwardOptions {
    pub fn train() -> Self {
        Self {
            training: true,
            spike: SpikeFn::Heaviside,
            approx: false,
            checked: false,
            keep_cache: true,
        }
    }

    pub fn eval() -> Self {
        Self {
            training: false,
            spike: SpikeFn::Heaviside,
            approx: true,
            checked: false,
            keep_cache: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpikeCount {
    pub layer: String,
    pub spikes: u64,
    /// Neurons times timesteps.
    pub neuron_steps: u64,
}

impl SpikeCount {
    pub fn rate(&self) -> f64 {
        if self.neuron_steps == 0 {
            0.0
        } else {
            self.spikes as f64 / self.neuron_steps as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSkip {
    pub layer: String,
    pub kind: LayerKind,
    pub stats: SkipStats,
}

/// Per-sample update gates of one approximated layer.
#[derive(Clone, Debug)]
pub struct GateRecord {
    pub layer: String,
    pub kind: LayerKind,
    pub block: Option<usize>,
    pub gates: Vec<UpdateGate>,
}

/// Intermediates of one encoder block. Row layout of token tensors is
/// `[T, B, N]` flattened, features last.
#[derive(Clone, Debug)]
pub struct BlockCache {
    pub input: Tensor,
    pub q: Tensor,
    pub k: Tensor,
    pub v: Tensor,
    pub hq: Vec<f64>,
    pub hk: Vec<f64>,
    pub hv: Vec<f64>,
    pub h_attn: Vec<f64>,
    pub x1: Tensor,
    pub bn_m1: Option<BatchNormCache>,
    pub h_m1: Vec<f64>,
    pub m1: Tensor,
    pub bn_m2: Option<BatchNormCache>,
    pub h_m2: Vec<f64>,
    pub out: Tensor,
}

#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub batch: usize,
    pub spike: SpikeFn,
    /// `[B, 1, channels, L]`
    pub input: Tensor,
    pub bn1: Option<BatchNormCache>,
    /// Normalized temporal-conv output, `[B, k, channels, W1]`; constant over time.
    pub y1: Tensor,
    /// Spikes of the first LIF layer summed over kernels and electrodes,
    /// `[T, B, W1]`.
    pub s1_columns: Vec<u32>,
    pub bn2: Option<BatchNormCache>,
    pub h2: Vec<f64>,
    /// `[T*B, k, 1, W1]`
    pub s2: Tensor,
    /// `[T*B, k, 1, N]`
    pub pooled: Tensor,
    pub bn3: Option<BatchNormCache>,
    pub h3: Vec<f64>,
    /// `[T*B*N, D]`
    pub tokens: Tensor,
    pub blocks: Vec<BlockCache>,
    /// Mean firing rate per sample and feature, `[B, D]`.
    pub rates: Tensor,
    pub hidden_pre: Tensor,
    pub hidden: Tensor,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `[B, 2]`
    pub logits: Tensor,
    pub spikes: Vec<SpikeCount>,
    /// Update counts of every approximation-eligible layer, summed over the batch.
    pub skips: Vec<LayerSkip>,
    pub gates: Vec<GateRecord>,
    /// Running statistics after a training-mode pass, in batch-norm visiting order.
    pub bn_running: Vec<(Vec<f64>, Vec<f64>)>,
    pub cache: Option<ForwardCache>,
}

impl ForwardOutput {
    pub fn total_skips(&self) -> SkipStats {
        self.skips.iter().map(|s| s.stats).fold(SkipStats::default(), |a, b| a + b)
    }
}

struct Engine<'m> {
    cfg: &'m ModelConfig,
    opts: ForwardOptions,
    steps: usize,
    batch: usize,
    n_tok: usize,
    spikes: Vec<SpikeCount>,
    skips: Vec<LayerSkip>,
    gates: Vec<GateRecord>,
    bn_running: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Engine<'_> {
    fn norm(&mut self, input: &Tensor, state: &BatchNormState) -> Result<(Tensor, Option<BatchNormCache>)> {
        if self.opts.training {
            let mut st = state.clone();
            let (y, cache) = batch_norm_train(input, &mut st)?;
            self.bn_running.push((st.running_mean, st.running_var));
            Ok((y, Some(cache)))
        } else {
            Ok((batch_norm_eval(input, state)?, None))
        }
    }

    fn check(&self, kind: LayerKind, block: Option<usize>, s: &[f64]) -> Result<()> {
        if self.opts.checked && s.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::NonBinary {
                layer: kind.name(block),
            });
        }
        Ok(())
    }

    fn record_spikes(&mut self, kind: LayerKind, block: Option<usize>, s: &[f64]) {
        self.spikes.push(SpikeCount {
            layer: kind.name(block),
            spikes: s.iter().filter(|&&v| v != 0.0).count() as u64,
            neuron_steps: s.len() as u64,
        });
    }

    /// Runs a LIF population over `currents` laid out `[T, B, per]`.
    /// Returns `(spikes, H)`; `H` is empty unless the cache is kept.
    fn lif(
        &mut self,
        kind: LayerKind,
        block: Option<usize>,
        currents: &[f64],
        per: usize,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let cfg = self.cfg;
        let p = cfg.lif;
        let n = self.batch * per;
        debug_assert_eq!(currents.len(), self.steps * n);
        let gated = !self.opts.training
            && self.opts.approx
            && cfg.approx.enabled
            && kind.family().is_some_and(|f| cfg.approx_layers.contains(f));
        let mut gates: Option<Vec<UpdateGate>> =
            gated.then(|| (0..self.batch).map(|_| UpdateGate::new(cfg.approx, per)).collect());
        let mut v = vec![p.v_reset; n];
        let mut spikes = vec![0.0; self.steps * n];
        let mut h = if self.opts.keep_cache {
            vec![0.0; self.steps * n]
        } else {
            Vec::new()
        };
        let mut buf = vec![0.0; if gated { n } else { 0 }];
        for t in 0..self.steps {
            let x = &currents[t * n..(t + 1) * n];
            let xt: &[f64] = match gates.as_mut() {
                Some(gs) => {
                    buf.copy_from_slice(x);
                    for (b, g) in gs.iter_mut().enumerate() {
                        g.apply(t, &mut buf[b * per..(b + 1) * per]);
                    }
                    &buf
                }
                None => x,
            };
            let h_out = if h.is_empty() {
                None
            } else {
                Some(&mut h[t * n..(t + 1) * n])
            };
            step_slice(&mut v, xt, &mut spikes[t * n..(t + 1) * n], h_out, &p, self.opts.spike);
        }
        self.check(kind, block, &spikes)?;
        self.record_spikes(kind, block, &spikes);
        if kind.family().is_some() {
            let stats = match &gates {
                Some(gs) => gs.iter().map(|g| g.stats()).fold(SkipStats::default(), |a, b| a + b),
                None => SkipStats {
                    updates_performed: (self.steps * n) as u64,
                    updates_skipped: 0,
                },
            };
            self.skips.push(LayerSkip {
                layer: kind.name(block),
                kind,
                stats,
            });
        }
        if let Some(gates) = gates {
            self.gates.push(GateRecord {
                layer: kind.name(block),
                kind,
                block,
                gates,
            });
        }
        Ok((spikes, h))
    }

    fn block(&mut self, idx: usize, e: &EncoderBlock, x: Tensor) -> Result<BlockCache> {
        let cfg = self.cfg;
        let (d, dh) = (cfg.embed_dim, cfg.mlp_hidden());
        let n_tok = self.n_tok;
        let rows = x.shape()[0];
        let gain = cfg.lif.residual_gain();
        let bi = Some(idx);
        let per = n_tok * d;

        let qc = linear(x.data(), rows, &e.wq, &e.bq);
        let (q, hq) = self.lif(LayerKind::Query, bi, &qc, per)?;
        let kc = linear(x.data(), rows, &e.wk, &e.bk);
        let (k, hk) = self.lif(LayerKind::Key, bi, &kc, per)?;
        let vc = linear(x.data(), rows, &e.wv, &e.bv);
        let (v, hv) = self.lif(LayerKind::Value, bi, &vc, per)?;

        let mut oc = vec![0.0; rows * d];
        for blk in 0..rows / n_tok {
            let r = blk * n_tok * d..(blk + 1) * n_tok * d;
            attention_out_current(
                &q[r.clone()],
                &k[r.clone()],
                &v[r.clone()],
                &e.wo,
                &e.bo,
                cfg.attention_scale,
                Some((&x.data()[r.clone()], gain)),
                &mut oc[r],
                n_tok,
                d,
            );
        }
        let (x1, h_attn) = self.lif(LayerKind::Attention, bi, &oc, per)?;

        let m1c = Tensor::new(&[rows, dh], linear(&x1, rows, &e.mlp_w1, &e.mlp_b1))?;
        let (m1n, bn_m1) = self.norm(&m1c, &e.bn_m1)?;
        let (m1, h_m1) = self.lif(LayerKind::MlpHidden, bi, m1n.data(), n_tok * dh)?;
        let m2c = Tensor::new(&[rows, d], linear(&m1, rows, &e.mlp_w2, &e.mlp_b2))?;
        let (mut m2n, bn_m2) = self.norm(&m2c, &e.bn_m2)?;
        tensor::axpy(m2n.data_mut(), gain, &x1);
        let (out, h_m2) = self.lif(LayerKind::MlpOut, bi, m2n.data(), per)?;

        let t2 = |data: Vec<f64>, cols: usize| Tensor::new(&[rows, cols], data);
        Ok(BlockCache {
            input: x,
            q: t2(q, d)?,
            k: t2(k, d)?,
            v: t2(v, d)?,
            hq,
            hk,
            hv,
            h_attn,
            x1: t2(x1, d)?,
            bn_m1,
            h_m1,
            m1: t2(m1, dh)?,
            bn_m2,
            h_m2,
            out: t2(out, d)?,
        })
    }
}

/// `x * w + b` for `x: [rows, in]`, `w: [in, out]`.
pub(crate) fn linear(x: &[f64], rows: usize, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (din, dout) = (w.shape()[0], w.shape()[1]);
    let mut out = Vec::with_capacity(rows * dout);
    for _ in 0..rows {
        out.extend_from_slice(b.data());
    }
    tensor::matmul_into(&mut out, x, w.data(), rows, din, dout);
    out
}

/// Accepts `[B, channels, L]` or `[B, 1, channels, L]`.
fn normalize_input(model: &SpikingConformer, input: &Tensor) -> Result<Tensor> {
    let cfg = &model.config;
    let s = input.shape();
    let batch = match s {
        [b, c, l] if *c == cfg.channels && *l == cfg.sample_len => *b,
        [b, 1, c, l] if *c == cfg.channels && *l == cfg.sample_len => *b,
        _ => {
            return Err(Error::shape(
                "forward",
                &[s.first().copied().unwrap_or(1), 1, cfg.channels, cfg.sample_len],
                s,
            ))
        }
    };
    input.ensure_finite("forward")?;
    input.clone().reshape(&[batch, 1, cfg.channels, cfg.sample_len])
}

/// Runs the network on a batch of segments with direct coding: the same
/// segment is presented at every timestep.
pub fn forward(model: &SpikingConformer, input: &Tensor, opts: &ForwardOptions) -> Result<ForwardOutput> {
    let cfg = &model.config;
    cfg.validate()?;
    let x = normalize_input(model, input)?;
    let batch = x.shape()[0];
    let steps = cfg.timesteps;
    let (k, d, ch) = (cfg.conv_channels, cfg.embed_dim, cfg.channels);
    let w1 = cfg.temporal_width();
    let n_tok = cfg.n_tokens();
    let mut eng = Engine {
        cfg,
        opts: *opts,
        steps,
        batch,
        n_tok,
        spikes: Vec::new(),
        skips: Vec::new(),
        gates: Vec::new(),
        bn_running: Vec::new(),
    };
    let c = &model.conv;

    // Temporal convolution and its batch norm are time-invariant.
    let z1 = conv2d(&x, &c.temporal_w, Some(&c.temporal_b), &cfg.temporal_spec())?;
    let (y1, bn1) = eng.norm(&z1, &c.bn1)?;
    drop(z1);

    let dims = FrontDims {
        k,
        planes: k * ch,
        width: w1,
        steps,
    };
    let wt = transpose_weights(&c.spatial_w, &dims);
    let per1 = k * ch * w1;
    let plane = k * w1;
    let mut z2 = vec![0.0; steps * batch * plane];
    let mut s1_columns = if opts.keep_cache {
        vec![0u32; steps * batch * w1]
    } else {
        Vec::new()
    };
    let mut cols = vec![0u32; if opts.keep_cache { steps * w1 } else { 0 }];
    let mut zb = vec![0.0; steps * plane];
    let mut s1_spikes = 0u64;
    let mut scratch = FrontScratch::new(&dims, false);
    for b in 0..batch {
        cols.fill(0);
        let ff = front_forward(
            &y1.data()[b * per1..(b + 1) * per1],
            &wt,
            c.spatial_b.data(),
            &dims,
            &cfg.lif,
            opts.spike,
            opts.checked,
            if cols.is_empty() { None } else { Some(&mut cols) },
            &mut scratch,
            &mut zb,
        )?;
        s1_spikes += ff.spikes;
        for t in 0..steps {
            let off = (t * batch + b) * plane;
            z2[off..off + plane].copy_from_slice(&zb[t * plane..(t + 1) * plane]);
            if !cols.is_empty() {
                s1_columns[(t * batch + b) * w1..][..w1].copy_from_slice(&cols[t * w1..(t + 1) * w1]);
            }
        }
    }
    eng.spikes.push(SpikeCount {
        layer: LayerKind::Temporal.name(None),
        spikes: s1_spikes,
        neuron_steps: (steps * batch * per1) as u64,
    });

    let z2 = Tensor::new(&[steps * batch, k, 1, w1], z2)?;
    let (y2, bn2) = eng.norm(&z2, &c.bn2)?;
    drop(z2);
    let (s2, h2) = eng.lif(LayerKind::Spatial, None, y2.data(), k * w1)?;
    drop(y2);
    let s2 = Tensor::new(&[steps * batch, k, 1, w1], s2)?;

    let pooled = avg_pool2d(&s2, &cfg.pool)?;
    let rows = steps * batch * n_tok;
    let mut z3 = vec![0.0; rows * d];
    let wpt: Vec<f64> = (0..k * d)
        .map(|i| c.proj_w.data()[(i % d) * k + i / d])
        .collect();
    for tb in 0..steps * batch {
        for n in 0..n_tok {
            let row = &mut z3[(tb * n_tok + n) * d..][..d];
            row.copy_from_slice(c.proj_b.data());
            for ci in 0..k {
                let pv = pooled.data()[(tb * k + ci) * n_tok + n];
                if pv != 0.0 {
                    tensor::axpy(row, pv, &wpt[ci * d..(ci + 1) * d]);
                }
            }
        }
    }
    let z3 = Tensor::new(&[rows, d], z3)?;
    let (y3, bn3) = eng.norm(&z3, &c.bn3)?;
    drop(z3);
    let (tokens, h3) = eng.lif(LayerKind::Projection, None, y3.data(), n_tok * d)?;
    drop(y3);
    let tokens = Tensor::new(&[rows, d], tokens)?;

    let mut blocks = Vec::with_capacity(model.encoders.len());
    let mut x_tok = tokens.clone();
    for (i, e) in model.encoders.iter().enumerate() {
        let bc = eng.block(i, e, x_tok)?;
        x_tok = bc.out.clone();
        blocks.push(bc);
    }

    let (rates, hidden_pre, hidden, logits) = head_forward(&model.head, x_tok.data(), batch, n_tok, steps, d)?;
    logits.ensure_finite("forward")?;

    let cache = opts.keep_cache.then_some(ForwardCache {
        batch,
        spike: opts.spike,
        input: x,
        bn1,
        y1,
        s1_columns,
        bn2,
        h2,
        s2,
        pooled,
        bn3,
        h3,
        tokens,
        blocks,
        rates,
        hidden_pre,
        hidden,
    });
    Ok(ForwardOutput {
        logits,
        spikes: eng.spikes,
        skips: eng.skips,
        gates: eng.gates,
        bn_running: eng.bn_running,
        cache,
    })
}

/// Firing-rate readout and the two-layer classifier. Token rows are laid out
/// `[T, B, N]`. Returns `(rates, hidden_pre, hidden, logits)`.
fn head_forward(
    head: &Head,
    tokens: &[f64],
    batch: usize,
    n_tok: usize,
    steps: usize,
    d: usize,
) -> Result<(Tensor, Tensor, Tensor, Tensor)> {
    let mut rates = Tensor::zeros(&[batch, d]);
    for (r, row) in tokens.chunks(d).enumerate() {
        let b = (r / n_tok) % batch;
        tensor::axpy(&mut rates.data_mut()[b * d..(b + 1) * d], 1.0, row);
    }
    let count = (steps * n_tok) as f64;
    rates.data_mut().iter_mut().for_each(|v| *v /= count);
    let hsize = head.b1.len();
    let hidden_pre = Tensor::new(&[batch, hsize], linear(rates.data(), batch, &head.w1, &head.b1))?;
    let hidden = hidden_pre.map(|v| v.max(0.0));
    let logits = Tensor::new(&[batch, 2], linear(hidden.data(), batch, &head.w2, &head.b2))?;
    Ok((rates, hidden_pre, hidden, logits))
}

fn token_raster(op: &'static str, tokens: &Tensor, d: usize) -> Result<(usize, usize)> {
    match tokens.shape() {
        [t, n, dd] if *dd == d && *t > 0 && *n > 0 => {
            if !tokens.is_binary() {
                return Err(Error::NonBinary {
                    layer: alloc::format!("{op} input"),
                });
            }
            Ok((*t, *n))
        }
        s => Err(Error::shape(op, &[s.first().copied().unwrap_or(1), s.get(1).copied().unwrap_or(1), d], s)),
    }
}

/// Convolution module alone: `[channels, L]` or `[1, channels, L]` segment to a
/// `[T, N_tok, D]` token raster.
pub fn spiking_conv_forward(model: &SpikingConformer, segment: &Tensor) -> Result<Tensor> {
    let cfg = &model.config;
    let seg = match segment.shape() {
        [c, l] | [1, c, l] if *c == cfg.channels && *l == cfg.sample_len => {
            segment.clone().reshape(&[1, *c, *l])?
        }
        s => return Err(Error::shape("spiking_conv_forward", &[1, cfg.channels, cfg.sample_len], s)),
    };
    let mut opts = ForwardOptions::eval();
    opts.approx = false;
    opts.keep_cache = true;
    opts.checked = true;
    let out = forward(model, &seg, &opts)?;
    let cache = out.cache.ok_or(Error::Empty("forward cache"))?;
    cache
        .tokens
        .reshape(&[cfg.timesteps, cfg.n_tokens(), cfg.embed_dim])
}

/// One encoder block in evaluation mode on a `[T, N_tok, D]` raster.
pub fn encoder_block_forward(tokens: &Tensor, block: &EncoderBlock, cfg: &ModelConfig) -> Result<Tensor> {
    let (steps, n_tok) = token_raster("encoder_block_forward", tokens, cfg.embed_dim)?;
    let mut opts = ForwardOptions::eval();
    opts.approx = false;
    opts.checked = true;
    let mut eng = Engine {
        cfg,
        opts,
        steps,
        batch: 1,
        n_tok,
        spikes: Vec::new(),
        skips: Vec::new(),
        gates: Vec::new(),
        bn_running: Vec::new(),
    };
    let x = tokens.clone().reshape(&[steps * n_tok, cfg.embed_dim])?;
    let bc = eng.block(0, block, x)?;
    bc.out.reshape(&[steps, n_tok, cfg.embed_dim])
}

/// Rate readout and classifier on a `[T, N_tok, D]` raster; returns logits `[2]`.
pub fn classify(tokens: &Tensor, head: &Head) -> Result<Tensor> {
    let d = head.w1.shape()[0];
    let (steps, n_tok) = token_raster("classify", tokens, d)?;
    let (_, _, _, logits) = head_forward(head, tokens.data(), 1, n_tok, steps, d)?;
    logits.reshape(&[2])
}

/// Evaluation-mode forward of a single `[channels, L]` segment using the
/// model's approximation config. Returns `(logits [2], spikes, skips)`.
pub fn model_forward(
    model: &SpikingConformer,
    segment: &Tensor,
) -> Result<(Tensor, Vec<SpikeCount>, Vec<LayerSkip>)> {
    let cfg = &model.config;
    let seg = match segment.shape() {
        [c, l] if *c == cfg.channels && *l == cfg.sample_len => segment.clone().reshape(&[1, *c, *l])?,
        s => return Err(Error::shape("model_forward", &[cfg.channels, cfg.sample_len], s)),
    };
    let mut opts = ForwardOptions::eval();
    opts.checked = true;
    let out = forward(model, &seg, &opts)?;
    let logits = out.logits.reshape(&[2])?;
    Ok((logits, out.spikes, out.skips))
}
