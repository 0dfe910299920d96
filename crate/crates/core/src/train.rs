//! Surrogate-gradient training, evaluation and the confusion-matrix metrics.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Add, AddAssign};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Fold, Label, SegmentSource};
use crate::error::{Error, Result};
use crate::math;
use crate::model::{
    backward, build_model, forward, BackwardOptions, ForwardOptions, LayerSkip, ModelConfig, SpikeCount,
    SpikingConformer,
};
use crate::neuron::ApproxConfig;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    SgdMomentum { momentum: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Stops training once the last `window` training samples were classified
/// with at least `accuracy` (fraction) before their update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EarlyStop {
    pub accuracy: f64,
    pub window: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub surrogate_alpha: f64,
    pub detach_reset: bool,
    pub early_stop: Option<EarlyStop>,
    /// Training samples used after the last update to re-estimate batch-norm
    /// running statistics as a plain average; 0 keeps the momentum estimates.
    pub calibration_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: Optimizer::adam(),
            seed: 0,
            surrogate_alpha: 4.0,
            detach_reset: true,
            early_stop: None,
            calibration_samples: 512,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(self.surrogate_alpha > 0.0 && self.surrogate_alpha.is_finite()) {
            return bad("surrogate_alpha must be positive");
        }
        match self.optimizer {
            Optimizer::Adam { beta1, beta2, eps } => {
                if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
                    return bad("adam needs 0 <= beta < 1 and eps > 0");
                }
            }
            Optimizer::SgdMomentum { momentum } => {
                if !(0.0..1.0).contains(&momentum) {
                    return bad("momentum must lie in [0, 1)");
                }
            }
        }
        if let Some(es) = self.early_stop {
            if es.window == 0 || !(0.0..=1.0).contains(&es.accuracy) {
                return bad("early stop needs a positive window and accuracy in [0, 1]");
            }
        }
        Ok(())
    }
}

/// Deterministic per-fold seed.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    let mut z = seed ^ (fold as u64).wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Softmax cross-entropy of two logits against a class; returns the loss and
/// its gradient with respect to the logits.
pub fn cross_entropy(logits: [f64; 2], target: Label) -> (f64, [f64; 2]) {
    let m = logits[0].max(logits[1]);
    let e = [math::exp(logits[0] - m), math::exp(logits[1] - m)];
    let z = e[0] + e[1];
    let t = target.index();
    let loss = m + math::ln(z) - logits[t];
    let mut grad = [e[0] / z, e[1] / z];
    grad[t] -= 1.0;
    (loss, grad)
}

fn argmax(l: [f64; 2]) -> Label {
    Label::from_index(usize::from(l[1] > l[0]))
}

struct OptState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl OptState {
    fn new(model: &SpikingConformer) -> Self {
        let shapes: Vec<usize> = model.named_parameters().iter().map(|(_, t)| t.len()).collect();
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    fn update(&mut self, model: &mut SpikingConformer, grads: &SpikingConformer, cfg: &TrainConfig) {
        self.step += 1;
        let lr = cfg.learning_rate;
        let gs: Vec<&[f64]> = grads.named_parameters().into_iter().map(|(_, t)| t.data()).collect();
        let params = model.parameters_mut();
        for (((p, g), m), v) in params.into_iter().zip(gs).zip(&mut self.m).zip(&mut self.v) {
            let p = p.data_mut();
            match cfg.optimizer {
                Optimizer::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - math::powi(beta1, self.step);
                    let c2 = 1.0 - math::powi(beta2, self.step);
                    for i in 0..p.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        p[i] -= lr * (m[i] / c1) / (math::sqrt(v[i] / c2) + eps);
                    }
                }
                Optimizer::SgdMomentum { momentum } => {
                    for i in 0..p.len() {
                        m[i] = momentum * m[i] + g[i];
                        p[i] -= lr * m[i];
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub fold: usize,
    pub epoch: usize,
    /// Mean loss over the samples seen this epoch.
    pub loss: f64,
    /// Training accuracy (fraction) measured before each update.
    pub accuracy: f64,
    pub samples: usize,
    pub early_stopped: bool,
}

/// Minibatch training of `model` on `indices` of `data`.
pub fn train_model<S: SegmentSource + ?Sized>(
    model: &mut SpikingConformer,
    data: &S,
    indices: &[usize],
    cfg: &TrainConfig,
    fold: usize,
    on_epoch: &mut dyn FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    if indices.is_empty() {
        return Err(Error::Empty("train"));
    }
    let first = data.label(indices[0]);
    if indices.iter().all(|&i| data.label(i) == first) {
        return Err(Error::SingleClass { fold });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(fold as u64);
    let bopts = BackwardOptions {
        alpha: cfg.surrogate_alpha,
        detach_reset: cfg.detach_reset,
    };
    let fopts = ForwardOptions::train();
    let mut opt = OptState::new(model);
    let mut order = indices.to_vec();
    let mut recent: VecDeque<bool> = VecDeque::new();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        let mut stop = false;
        for chunk in order.chunks(cfg.batch_size) {
            let x = data.batch(chunk)?;
            let out = forward(model, &x, &fopts)?;
            let cache = out.cache.as_ref().ok_or(Error::Empty("forward cache"))?;
            let b = chunk.len();
            let mut grad = vec![0.0; 2 * b];
            for (j, &i) in chunk.iter().enumerate() {
                let l = [out.logits.data()[2 * j], out.logits.data()[2 * j + 1]];
                let target = data.label(i);
                let (loss, g) = cross_entropy(l, target);
                if !loss.is_finite() {
                    return Err(Error::Diverged { fold, epoch, loss });
                }
                loss_sum += loss;
                let ok = argmax(l) == target;
                correct += usize::from(ok);
                if let Some(es) = cfg.early_stop {
                    recent.push_back(ok);
                    if recent.len() > es.window {
                        recent.pop_front();
                    }
                }
                grad[2 * j] = g[0] / b as f64;
                grad[2 * j + 1] = g[1] / b as f64;
            }
            seen += b;
            let grads = backward(model, cache, &crate::Tensor::new(&[b, 2], grad)?, &bopts)?;
            opt.update(model, &grads, cfg);
            model.apply_running_stats(&out.bn_running);
            if let Some(es) = cfg.early_stop {
                let hits = recent.iter().filter(|&&ok| ok).count();
                if recent.len() == es.window && hits as f64 >= es.accuracy * es.window as f64 {
                    stop = true;
                    break;
                }
            }
        }
        let stats = EpochStats {
            fold,
            epoch,
            loss: loss_sum / seen as f64,
            accuracy: correct as f64 / seen as f64,
            samples: seen,
            early_stopped: stop,
        };
        on_epoch(&stats);
        history.push(stats);
        if stop {
            break;
        }
    }
    if cfg.calibration_samples > 0 {
        let n = cfg.calibration_samples.min(order.len());
        calibrate_norm(model, data, &order[..n], cfg.batch_size)?;
    }
    Ok(history)
}

/// Replaces batch-norm running statistics with the average of the batch
/// statistics over `indices`, without touching parameters.
pub fn calibrate_norm<S: SegmentSource + ?Sized>(
    model: &mut SpikingConformer,
    data: &S,
    indices: &[usize],
    batch_size: usize,
) -> Result<()> {
    let momentum = model.bn_states().first().map_or(0.1, |b| b.momentum);
    let mut opts = ForwardOptions::train();
    opts.keep_cache = false;
    for (j, chunk) in indices.chunks(batch_size.max(1)).enumerate() {
        model.set_norm_momentum(1.0 / (j + 1) as f64);
        let out = forward(model, &data.batch(chunk)?, &opts)?;
        model.apply_running_stats(&out.bn_running);
    }
    model.set_norm_momentum(momentum);
    Ok(())
}

/// Confusion counts with ictal/pre-ictal as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn record(&mut self, predicted: Label, actual: Label) {
        match (predicted, actual) {
            (Label::Positive, Label::Positive) => self.tp += 1,
            (Label::Positive, Label::Negative) => self.fp += 1,
            (Label::Negative, Label::Negative) => self.tn += 1,
            (Label::Negative, Label::Positive) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn scaled(&self, k: u64) -> Self {
        Self {
            tp: self.tp * k,
            fp: self.fp * k,
            tn: self.tn * k,
            fn_: self.fn_ * k,
        }
    }
}

impl Add for ConfusionMatrix {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl AddAssign for ConfusionMatrix {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

/// Percentages; a rate whose denominator is zero is `None`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub sens: Option<f64>,
    pub spec: Option<f64>,
    pub acc: f64,
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    if cm.total() == 0 {
        return Err(Error::Empty("metrics"));
    }
    let pct = |num: u64, den: u64| (den > 0).then(|| 100.0 * num as f64 / den as f64);
    Ok(Metrics {
        sens: pct(cm.tp, cm.tp + cm.fn_),
        spec: pct(cm.tn, cm.tn + cm.fp),
        acc: 100.0 * (cm.tp + cm.tn) as f64 / cm.total() as f64,
    })
}

/// Mean of the defined values of each metric across folds.
pub fn mean_metrics(all: &[Metrics]) -> Option<Metrics> {
    if all.is_empty() {
        return None;
    }
    let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Some(Metrics {
        sens: mean(all.iter().filter_map(|m| m.sens).collect()),
        spec: mean(all.iter().filter_map(|m| m.spec).collect()),
        acc: all.iter().map(|m| m.acc).sum::<f64>() / all.len() as f64,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub cm: ConfusionMatrix,
    /// In the order of the evaluated indices.
    pub predictions: Vec<Label>,
    pub logits: Vec<[f64; 2]>,
    /// Update counts per approximation-eligible layer, summed over samples.
    pub skips: Vec<LayerSkip>,
    pub spikes: Vec<SpikeCount>,
}

impl Evaluation {
    pub fn metrics(&self) -> Result<Metrics> {
        metrics(&self.cm)
    }
}

fn merge_by_layer<T: Clone>(acc: &mut Vec<T>, new: &[T], key: impl Fn(&T) -> &str, add: impl Fn(&mut T, &T)) {
    if acc.is_empty() {
        acc.extend_from_slice(new);
        return;
    }
    for n in new {
        match acc.iter_mut().find(|a| key(a) == key(n)) {
            Some(a) => add(a, n),
            None => acc.push(n.clone()),
        }
    }
}

/// Evaluation-mode inference on `indices`. With `approx`, the update gating
/// runs with that configuration; otherwise every current is computed.
pub fn evaluate<S: SegmentSource + ?Sized>(
    model: &SpikingConformer,
    data: &S,
    indices: &[usize],
    approx: Option<ApproxConfig>,
    batch_size: usize,
) -> Result<Evaluation> {
    if indices.is_empty() {
        return Err(Error::Empty("evaluate"));
    }
    let gated;
    let model = match approx {
        Some(ac) => {
            ac.validate()?;
            let mut m = model.clone();
            m.config.approx = ac;
            gated = m;
            &gated
        }
        None => model,
    };
    let mut opts = ForwardOptions::eval();
    opts.approx = approx.is_some();
    let mut ev = Evaluation {
        cm: ConfusionMatrix::default(),
        predictions: Vec::with_capacity(indices.len()),
        logits: Vec::with_capacity(indices.len()),
        skips: Vec::new(),
        spikes: Vec::new(),
    };
    for chunk in indices.chunks(batch_size.max(1)) {
        let out = forward(model, &data.batch(chunk)?, &opts)?;
        for (j, &i) in chunk.iter().enumerate() {
            let l = [out.logits.data()[2 * j], out.logits.data()[2 * j + 1]];
            let p = argmax(l);
            ev.cm.record(p, data.label(i));
            ev.predictions.push(p);
            ev.logits.push(l);
        }
        merge_by_layer(&mut ev.skips, &out.skips, |s| &s.layer, |a, b| a.stats += b.stats);
        merge_by_layer(
            &mut ev.spikes,
            &out.spikes,
            |s| &s.layer,
            |a, b| {
                a.spikes += b.spikes;
                a.neuron_steps += b.neuron_steps;
            },
        );
    }
    Ok(ev)
}

#[derive(Clone, Debug)]
pub struct FoldOutcome {
    pub fold: usize,
    pub model: SpikingConformer,
    pub history: Vec<EpochStats>,
    pub exact: Evaluation,
    pub approx: Option<Evaluation>,
}

/// Trains a fresh model on the fold's training indices and evaluates it on
/// the test indices, exactly and (optionally) with approximate updates.
pub fn train_fold<S: SegmentSource + ?Sized>(
    model_cfg: &ModelConfig,
    data: &S,
    fold: &Fold,
    fold_idx: usize,
    cfg: &TrainConfig,
    approx: Option<ApproxConfig>,
    on_epoch: &mut dyn FnMut(&EpochStats),
) -> Result<FoldOutcome> {
    let mut model = build_model(model_cfg, fold_seed(cfg.seed, fold_idx))?;
    let history = train_model(&mut model, data, &fold.train, cfg, fold_idx, on_epoch)?;
    let batch = cfg.batch_size.max(16);
    let exact = evaluate(&model, data, &fold.test, None, batch)?;
    let approx = approx.map(|ac| evaluate(&model, data, &fold.test, Some(ac), batch)).transpose()?;
    Ok(FoldOutcome {
        fold: fold_idx,
        model,
        history,
        exact,
        approx,
    })
}

/// All folds in order on the calling thread.
pub fn cross_validate<S: SegmentSource + ?Sized>(
    model_cfg: &ModelConfig,
    data: &S,
    folds: &[Fold],
    cfg: &TrainConfig,
    approx: Option<ApproxConfig>,
    on_epoch: &mut dyn FnMut(&EpochStats),
) -> Result<Vec<FoldOutcome>> {
    folds
        .iter()
        .enumerate()
        .map(|(i, f)| train_fold(model_cfg, data, f, i, cfg, approx, on_epoch))
        .collect()
}

/// Accuracy difference in percentage points, `approx - exact`.
pub fn accuracy_delta(exact: &ConfusionMatrix, approx: &ConfusionMatrix) -> Result<f64> {
    if exact.total() != approx.total() {
        return Err(Error::invalid(
            "accuracy_delta",
            format!("{} vs {} evaluated segments", exact.total(), approx.total()),
        ));
    }
    Ok(metrics(approx)?.acc - metrics(exact)?.acc)
}
