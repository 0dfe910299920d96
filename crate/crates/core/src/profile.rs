//! Operation accounting for the spiking network and its dense counterpart.
//!
//! Counting rules:
//! - one synaptic ADD per (presynaptic spike, computed target neuron);
//! - 2 ADDs and 1 leak MUL per neuron-timestep for the LIF state update,
//!   constant bias and folded batch-norm currents included;
//! - "core" MULs are the real-valued multiplies that cannot be replaced by
//!   gated adds (attention scale, rate normalisation, classifier);
//!   "full" MULs add the leak multiplies;
//! - the first convolution sees the real-valued input once per segment and is
//!   reported separately as `encoding_macs`, outside every total.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::data::{Label, SegmentSource};
use crate::error::{Error, Result};
use crate::model::{forward, ForwardOptions, ForwardOutput, GateRecord, LayerKind, LayerSkip, ModelConfig, SpikingConformer};
use crate::neuron::{ApproxConfig, SkipStats};
use crate::tensor::Tensor;
use crate::train::ConfusionMatrix;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LayerOps {
    pub layer: String,
    pub synaptic_adds: u64,
    pub state_adds: u64,
    pub core_muls: u64,
    pub full_muls: u64,
    /// Input-current computations performed and skipped by update gating.
    pub updates: SkipStats,
}

impl LayerOps {
    fn new(layer: impl Into<String>) -> Self {
        Self {
            layer: layer.into(),
            ..Self::default()
        }
    }

    pub fn adds(&self) -> u64 {
        self.synaptic_adds + self.state_adds
    }

    fn merge(&mut self, o: &LayerOps) {
        self.synaptic_adds += o.synaptic_adds;
        self.state_adds += o.state_adds;
        self.core_muls += o.core_muls;
        self.full_muls += o.full_muls;
        self.updates += o.updates;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OpTally {
    pub adds: u64,
    /// Multiplies used for comparisons with published counts.
    pub core_muls: u64,
    /// `core_muls` plus one leak multiply per neuron-timestep.
    pub full_muls: u64,
    /// Layers in forward order.
    pub per_layer: Vec<LayerOps>,
    pub encoding_macs: u64,
}

impl OpTally {
    pub fn muls(&self) -> u64 {
        self.core_muls
    }

    pub fn layer(&self, name: &str) -> Option<&LayerOps> {
        self.per_layer.iter().find(|l| l.layer == name)
    }

    fn push(&mut self, l: LayerOps) {
        self.adds += l.adds();
        self.core_muls += l.core_muls;
        self.full_muls += l.full_muls;
        self.per_layer.push(l);
    }

    /// Adds another tally layer by layer; layers missing here are appended.
    pub fn merge(&mut self, o: &OpTally) {
        self.adds += o.adds;
        self.core_muls += o.core_muls;
        self.full_muls += o.full_muls;
        self.encoding_macs += o.encoding_macs;
        for l in &o.per_layer {
            match self.per_layer.iter_mut().find(|x| x.layer == l.layer) {
                Some(x) => x.merge(l),
                None => self.per_layer.push(l.clone()),
            }
        }
    }

    pub fn skip_stats(&self) -> SkipStats {
        self.per_layer.iter().fold(SkipStats::default(), |a, l| a + l.updates)
    }
}

/// Which target neurons of one gated layer compute their current.
struct Gate<'a> {
    rec: Option<&'a GateRecord>,
}

impl Gate<'_> {
    fn computes(&self, b: usize, t: usize, i: usize) -> bool {
        self.rec.is_none_or(|r| r.gates[b].computes(t, i))
    }

    /// Computed targets among `i0 + j * step` for `j < count`.
    fn count(&self, b: usize, t: usize, i0: usize, step: usize, count: usize) -> u64 {
        match self.rec {
            None => count as u64,
            Some(r) => {
                let g = &r.gates[b];
                if g.computes_all(t) {
                    count as u64
                } else {
                    (0..count).filter(|&j| g.computes(t, i0 + j * step)).count() as u64
                }
            }
        }
    }
}

fn gate<'a>(out: &'a ForwardOutput, kind: LayerKind, block: Option<usize>) -> Gate<'a> {
    Gate {
        rec: out.gates.iter().find(|g| g.kind == kind && g.block == block),
    }
}

fn updates(out: &ForwardOutput, kind: LayerKind, block: Option<usize>) -> SkipStats {
    let name = kind.name(block);
    out.skips
        .iter()
        .find(|s| s.layer == name)
        .map_or(SkipStats::default(), |s| s.stats)
}

fn state(l: &mut LayerOps, neuron_steps: usize) {
    l.state_adds += 2 * neuron_steps as u64;
    l.full_muls += neuron_steps as u64;
}

/// Tally of a forward pass run with `keep_cache`, summed over its batch.
pub fn tally_forward(model: &SpikingConformer, out: &ForwardOutput) -> Result<OpTally> {
    let cfg = &model.config;
    let c = out.cache.as_ref().ok_or(Error::invalid("tally_forward", "forward pass kept no cache"))?;
    let (steps, batch) = (cfg.timesteps, c.batch);
    let (k, d, ch, dh) = (cfg.conv_channels, cfg.embed_dim, cfg.channels, cfg.mlp_hidden());
    let (w1, n_tok) = (cfg.temporal_width(), cfg.n_tokens());
    let mut tally = OpTally {
        encoding_macs: (batch * k * ch * w1 * cfg.temporal_kernel) as u64,
        ..OpTally::default()
    };

    let mut l1 = LayerOps::new(LayerKind::Temporal.name(None));
    state(&mut l1, steps * batch * k * ch * w1);
    tally.push(l1);

    let mut l2 = LayerOps::new(LayerKind::Spatial.name(None));
    let g = gate(out, LayerKind::Spatial, None);
    for t in 0..steps {
        for b in 0..batch {
            for w in 0..w1 {
                let spikes = c.s1_columns[(t * batch + b) * w1 + w] as u64;
                if spikes > 0 {
                    l2.synaptic_adds += spikes * g.count(b, t, w, w1, k);
                }
            }
        }
    }
    state(&mut l2, steps * batch * k * w1);
    l2.updates = updates(out, LayerKind::Spatial, None);
    tally.push(l2);

    let mut l3 = LayerOps::new(LayerKind::Projection.name(None));
    let g = gate(out, LayerKind::Projection, None);
    let s2 = c.s2.data();
    let (pk, ps) = (cfg.pool.kernel.1, cfg.pool.stride.1);
    for t in 0..steps {
        for b in 0..batch {
            let tb = t * batch + b;
            for n in 0..n_tok {
                let targets = g.count(b, t, n * d, 1, d);
                for ci in 0..k {
                    let row = &s2[(tb * k + ci) * w1..][..w1];
                    let spikes = row[n * ps..n * ps + pk].iter().filter(|&&v| v != 0.0).count() as u64;
                    l3.synaptic_adds += spikes * targets;
                }
            }
        }
    }
    state(&mut l3, steps * batch * n_tok * d);
    l3.updates = updates(out, LayerKind::Projection, None);
    tally.push(l3);

    // Spike-driven fully connected layer on token rows `[T, B, N] x width`.
    let fc = |x: &[f64], width: usize, fan_out: usize, g: &Gate| -> u64 {
        let mut adds = 0;
        for (r, row) in x.chunks(width).enumerate() {
            let (t, b, n) = (r / (batch * n_tok), (r / n_tok) % batch, r % n_tok);
            let spikes = row.iter().filter(|&&v| v != 0.0).count() as u64;
            if spikes > 0 {
                adds += spikes * g.count(b, t, n * fan_out, 1, fan_out);
            }
        }
        adds
    };
    // One add per spike into the same-index target.
    let residual = |x: &[f64], g: &Gate| -> u64 {
        let mut adds = 0;
        for (r, row) in x.chunks(d).enumerate() {
            let (t, b, n) = (r / (batch * n_tok), (r / n_tok) % batch, r % n_tok);
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 && g.computes(b, t, n * d + j) {
                    adds += 1;
                }
            }
        }
        adds
    };
    let count_nz = |x: &[f64]| x.iter().filter(|&&v| v != 0.0).count() as u64;
    let tokens_steps = steps * batch * n_tok;

    for (i, bc) in c.blocks.iter().enumerate() {
        let bi = Some(i);
        for kind in [LayerKind::Query, LayerKind::Key, LayerKind::Value] {
            let mut l = LayerOps::new(kind.name(bi));
            l.synaptic_adds = fc(bc.input.data(), d, d, &gate(out, kind, bi));
            state(&mut l, tokens_steps * d);
            l.updates = updates(out, kind, bi);
            tally.push(l);
        }

        let mut la = LayerOps::new(LayerKind::Attention.name(bi));
        let g = gate(out, LayerKind::Attention, bi);
        // V Wo and K^T (V Wo) feed every target; Q P only the computed ones.
        la.synaptic_adds += (count_nz(bc.v.data()) + count_nz(bc.k.data())) * d as u64;
        la.synaptic_adds += fc(bc.q.data(), d, d, &g);
        for r in 0..tokens_steps {
            let (t, b, n) = (r / (batch * n_tok), (r / n_tok) % batch, r % n_tok);
            la.core_muls += g.count(b, t, n * d, 1, d);
        }
        la.synaptic_adds += residual(bc.input.data(), &g);
        state(&mut la, tokens_steps * d);
        la.full_muls += la.core_muls;
        la.updates = updates(out, LayerKind::Attention, bi);
        tally.push(la);

        let mut lm1 = LayerOps::new(LayerKind::MlpHidden.name(bi));
        lm1.synaptic_adds = fc(bc.x1.data(), d, dh, &gate(out, LayerKind::MlpHidden, bi));
        state(&mut lm1, tokens_steps * dh);
        lm1.updates = updates(out, LayerKind::MlpHidden, bi);
        tally.push(lm1);

        let mut lm2 = LayerOps::new(LayerKind::MlpOut.name(bi));
        let g = gate(out, LayerKind::MlpOut, bi);
        lm2.synaptic_adds = fc(bc.m1.data(), dh, d, &g) + residual(bc.x1.data(), &g);
        state(&mut lm2, tokens_steps * d);
        lm2.updates = updates(out, LayerKind::MlpOut, bi);
        tally.push(lm2);
    }

    let mut head = LayerOps::new("head");
    let last = c.blocks.last().map_or(&c.tokens, |bc| &bc.out);
    let hsize = cfg.head_hidden;
    head.synaptic_adds = count_nz(last.data());
    let dense = (batch * (d * hsize + hsize * 2)) as u64;
    head.synaptic_adds += dense;
    head.core_muls = (batch * d) as u64 + dense;
    head.full_muls = head.core_muls;
    tally.push(head);
    Ok(tally)
}

/// Synaptic ADDs of a spike-driven fully connected layer with `n_out`
/// targets over a `[T, n_in]` raster.
pub fn linear_synaptic_adds(spikes: &Tensor, n_out: usize) -> Result<u64> {
    if !spikes.is_binary() {
        return Err(Error::NonBinary {
            layer: "linear_synaptic_adds input".into(),
        });
    }
    Ok(spikes.count_nonzero() as u64 * n_out as u64)
}

/// Evaluation-mode tally of one `[channels, L]` segment under the model's
/// own approximation config.
pub fn count_snn_ops(model: &SpikingConformer, segment: &Tensor) -> Result<OpTally> {
    let cfg = &model.config;
    if segment.shape() != [cfg.channels, cfg.sample_len] {
        return Err(Error::shape("count_snn_ops", &[cfg.channels, cfg.sample_len], segment.shape()));
    }
    let x = segment.clone().reshape(&[1, cfg.channels, cfg.sample_len])?;
    tally_forward(model, &forward(model, &x, &profile_options())?)
}

fn profile_options() -> ForwardOptions {
    let mut o = ForwardOptions::eval();
    o.checked = true;
    o.keep_cache = true;
    o
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnLayer {
    pub layer: String,
    pub macs: u64,
}

/// Multiply-accumulate counts of the dense model with the same shapes and a
/// single timestep, softmax restored in attention.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnOpModel {
    pub per_layer: Vec<AnnLayer>,
    /// Exponentials and divisions of the softmax at 5 operations each.
    pub softmax_ops: u64,
    pub encoding_macs: u64,
}

impl AnnOpModel {
    pub fn macs(&self) -> u64 {
        self.per_layer.iter().map(|l| l.macs).sum()
    }

    /// One MUL and one ADD per MAC.
    pub fn total_ops(&self) -> u64 {
        2 * self.macs()
    }
}

pub fn count_ann_ops(cfg: &ModelConfig) -> Result<AnnOpModel> {
    cfg.validate()?;
    let (k, d, ch, dh) = (cfg.conv_channels, cfg.embed_dim, cfg.channels, cfg.mlp_hidden());
    let (w1, n) = (cfg.temporal_width(), cfg.n_tokens());
    let mut layers = Vec::new();
    let mut push = |name: String, macs: usize| layers.push(AnnLayer { layer: name, macs: macs as u64 });
    push("conv.spatial".into(), k * w1 * k * ch);
    push("conv.pool".into(), k * n * cfg.pool.kernel.1);
    push("conv.proj".into(), n * d * k);
    for i in 0..cfg.encoders {
        for name in ["q", "k", "v"] {
            push(format!("enc{i}.{name}"), n * d * d);
        }
        push(format!("enc{i}.attn.scores"), n * n * d);
        push(format!("enc{i}.attn.values"), n * n * d);
        push(format!("enc{i}.attn"), n * d * d);
        push(format!("enc{i}.mlp1"), n * d * dh);
        push(format!("enc{i}.mlp2"), n * dh * d);
    }
    push("head.pool".into(), n * d);
    push("head.fc1".into(), d * cfg.head_hidden);
    push("head.fc2".into(), cfg.head_hidden * 2);
    Ok(AnnOpModel {
        per_layer: layers,
        softmax_ops: (cfg.encoders * 10 * n * n) as u64,
        encoding_macs: (k * ch * w1 * cfg.temporal_kernel) as u64,
    })
}

/// Dense operations over spiking ADDs plus core MULs.
pub fn efficiency_ratio(snn: &OpTally, ann: &AnnOpModel) -> Result<f64> {
    ratio_from_totals(ann.total_ops() as f64, snn.adds as f64, snn.core_muls as f64)
}

pub fn ratio_from_totals(ann_ops: f64, snn_adds: f64, snn_muls: f64) -> Result<f64> {
    let den = snn_adds + snn_muls;
    if !(ann_ops > 0.0) || !(den > 0.0) {
        return Err(Error::invalid("efficiency_ratio", "operation totals must be positive"));
    }
    Ok(ann_ops / den)
}

/// Tallies and predictions over a set of segments.
#[derive(Clone, Debug, PartialEq)]
pub struct SnnProfile {
    pub tally: OpTally,
    pub skips: Vec<LayerSkip>,
    pub predictions: Vec<Label>,
    pub labels: Vec<Label>,
    pub segments: usize,
}

impl SnnProfile {
    pub fn confusion(&self) -> ConfusionMatrix {
        let mut cm = ConfusionMatrix::default();
        for (&p, &l) in self.predictions.iter().zip(&self.labels) {
            cm.record(p, l);
        }
        cm
    }

    /// Tally divided by the number of segments, rounded down.
    pub fn mean_tally(&self) -> OpTally {
        let n = self.segments.max(1) as u64;
        let mut t = self.tally.clone();
        t.adds /= n;
        t.core_muls /= n;
        t.full_muls /= n;
        t.encoding_macs /= n;
        for l in &mut t.per_layer {
            l.synaptic_adds /= n;
            l.state_adds /= n;
            l.core_muls /= n;
            l.full_muls /= n;
        }
        t.adds = t.per_layer.iter().map(|l| l.adds()).sum();
        t
    }
}

/// Runs every segment of `indices` one at a time and sums the tallies.
/// `approx = None` computes every current.
pub fn profile_segments<S: SegmentSource + ?Sized>(
    model: &SpikingConformer,
    data: &S,
    indices: &[usize],
    approx: Option<ApproxConfig>,
) -> Result<SnnProfile> {
    if indices.is_empty() {
        return Err(Error::Empty("profile"));
    }
    let mut m = model.clone();
    let mut opts = profile_options();
    match approx {
        Some(ac) => {
            ac.validate()?;
            m.config.approx = ac;
        }
        None => opts.approx = false,
    }
    let mut p = SnnProfile {
        tally: OpTally::default(),
        skips: Vec::new(),
        predictions: Vec::with_capacity(indices.len()),
        labels: Vec::with_capacity(indices.len()),
        segments: indices.len(),
    };
    for &i in indices {
        let out = forward(&m, &data.batch(&[i])?, &opts)?;
        p.tally.merge(&tally_forward(&m, &out)?);
        for s in &out.skips {
            match p.skips.iter_mut().find(|x| x.layer == s.layer) {
                Some(x) => x.stats += s.stats,
                None => p.skips.push(s.clone()),
            }
        }
        let l = out.logits.data();
        p.predictions.push(Label::from_index(usize::from(l[1] > l[0])));
        p.labels.push(data.label(i));
    }
    Ok(p)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkipRow {
    pub layer: String,
    pub adds_exact: u64,
    pub adds_approx: u64,
    pub updates: SkipStats,
    /// `None` when the layer has no updates at all.
    pub reduction_percent: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkipReport {
    pub rows: Vec<SkipRow>,
    pub updates: SkipStats,
    pub reduction_percent: Option<f64>,
    pub adds_exact: u64,
    pub adds_approx: u64,
    /// Segments whose predicted class changed.
    pub changed_predictions: usize,
    pub exact_cm: ConfusionMatrix,
    pub approx_cm: ConfusionMatrix,
    /// Approximate minus exact accuracy, percentage points.
    pub accuracy_delta: f64,
}

pub fn skip_report(exact: &SnnProfile, approx: &SnnProfile) -> Result<SkipReport> {
    if exact.labels != approx.labels || exact.segments != approx.segments {
        return Err(Error::invalid("skip_report", "profiles cover different segments"));
    }
    let names = |p: &SnnProfile| p.tally.per_layer.iter().map(|l| l.layer.clone()).collect::<Vec<_>>();
    if names(exact) != names(approx) {
        return Err(Error::invalid("skip_report", "profiles come from different architectures"));
    }
    let mut rows = Vec::new();
    let mut total = SkipStats::default();
    for (le, la) in exact.tally.per_layer.iter().zip(&approx.tally.per_layer) {
        let upd = la.updates;
        total += upd;
        rows.push(SkipRow {
            layer: la.layer.clone(),
            adds_exact: le.adds(),
            adds_approx: la.adds(),
            updates: upd,
            reduction_percent: upd.reduction_percent().ok(),
        });
    }
    let changed = exact
        .predictions
        .iter()
        .zip(&approx.predictions)
        .filter(|(a, b)| a != b)
        .count();
    let (ce, ca) = (exact.confusion(), approx.confusion());
    let acc = |cm: &ConfusionMatrix| 100.0 * (cm.tp + cm.tn) as f64 / cm.total().max(1) as f64;
    Ok(SkipReport {
        rows,
        updates: total,
        reduction_percent: total.reduction_percent().ok(),
        adds_exact: exact.tally.adds,
        adds_approx: approx.tally.adds,
        changed_predictions: changed,
        exact_cm: ce,
        approx_cm: ca,
        accuracy_delta: acc(&ca) - acc(&ce),
    })
}

/// One row per threshold `0..=T`, each profiled over `indices`.
pub fn tth_sweep<S: SegmentSource + ?Sized>(
    model: &SpikingConformer,
    data: &S,
    indices: &[usize],
) -> Result<Vec<(usize, SnnProfile)>> {
    let steps = model.config.timesteps;
    (0..=steps)
        .map(|tth| Ok((tth, profile_segments(model, data, indices, Some(ApproxConfig::new(steps, tth)))?)))
        .collect()
}

/// Human-readable table with a totals row.
pub fn format_tally(t: &OpTally) -> String {
    let mut s = format!(
        "{:<16} {:>14} {:>12} {:>12} {:>12} {:>10}\n",
        "layer", "adds", "core_muls", "full_muls", "skipped", "reduction"
    );
    for l in &t.per_layer {
        let red = l
            .updates
            .reduction_percent()
            .map_or_else(|_| String::from("-"), |p| format!("{p:.2}%"));
        s += &format!(
            "{:<16} {:>14} {:>12} {:>12} {:>12} {:>10}\n",
            l.layer,
            l.adds(),
            l.core_muls,
            l.full_muls,
            l.updates.updates_skipped,
            red
        );
    }
    let red = t
        .skip_stats()
        .reduction_percent()
        .map_or_else(|_| String::from("-"), |p| format!("{p:.2}%"));
    s += &format!(
        "{:<16} {:>14} {:>12} {:>12} {:>12} {:>10}\n",
        "total",
        t.adds,
        t.core_muls,
        t.full_muls,
        t.skip_stats().updates_skipped,
        red
    );
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn ann_single_layer_arithmetic() {
        let m = AnnOpModel {
            per_layer: vec![AnnLayer {
                layer: "fc".into(),
                macs: 2,
            }],
            softmax_ops: 0,
            encoding_macs: 0,
        };
        assert_eq!(m.total_ops(), 4);
    }
}
