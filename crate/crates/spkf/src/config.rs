//! Plain-text `key=value` run configuration.
//!
//! `task` picks a preset; every other key overrides one field of it. Blank
//! lines and text after `#` are ignored. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use spkf_core::data::PhaseConfig;
use spkf_core::model::ApproxLayers;
use spkf_core::tensor::PoolSpec;
use spkf_core::train::{EarlyStop, Optimizer, TrainConfig};
use spkf_core::{ModelConfig, Task};

use crate::error::{Error, Result};

/// How segments are grouped into cross-validation runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CvMode {
    /// Separate folds within every case.
    PerCase,
    /// One set of folds over all cases together.
    Pooled,
}

impl CvMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CvMode::PerCase => "per_case",
            CvMode::Pooled => "pooled",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IngestConfig {
    pub window_s: f64,
    pub stride_ictal_s: f64,
    pub stride_inter_s: f64,
    pub phases: PhaseConfig,
    /// Target `|positive| / |negative|` after majority subsampling.
    pub balance_ratio: f64,
    pub folds: usize,
    pub cv: CvMode,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            window_s: spkf_core::data::WINDOW_S,
            stride_ictal_s: 1.0,
            stride_inter_s: 5.0,
            phases: PhaseConfig::default(),
            balance_ratio: 1.0,
            folds: 10,
            cv: CvMode::PerCase,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ingest: IngestConfig,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_task(Task::Detection)
    }
}

const MODEL_KEYS: &[&str] = &[
    "task",
    "channels",
    "sample_len",
    "T",
    "k",
    "D",
    "n_encoders",
    "mlp_ratio",
    "head_hidden",
    "temporal_kernel",
    "pool_kernel",
    "pool_stride",
    "attention_scale",
    "tau",
    "v_th",
    "v_reset",
    "T_th",
    "approx",
    "approx_layers",
];

const RUN_KEYS: &[&str] = &[
    "seed",
    "epochs",
    "batch_size",
    "learning_rate",
    "optimizer",
    "momentum",
    "surrogate_alpha",
    "calibration_samples",
    "early_stop_accuracy",
    "early_stop_window",
    "window_s",
    "stride_ictal",
    "stride_inter",
    "preictal_s",
    "guard_s",
    "postictal_s",
    "balance_ratio",
    "folds",
    "cv",
];

const LAYER_NAMES: &[(&str, ApproxLayers)] = &[
    ("spatial", ApproxLayers::SPATIAL),
    ("projection", ApproxLayers::PROJECTION),
    ("qkv", ApproxLayers::QKV),
    ("attention", ApproxLayers::ATTENTION),
    ("mlp", ApproxLayers::MLP),
];

impl RunConfig {
    pub fn for_task(task: Task) -> Self {
        let mut model = ModelConfig::for_task(task);
        model.approx.enabled = true;
        Self {
            model,
            train: TrainConfig::default(),
            ingest: IngestConfig::default(),
            seed: 0,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::format(path, m),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        for key in pairs.keys() {
            if !MODEL_KEYS.contains(&key.as_str()) && !RUN_KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!("unknown key `{key}`")));
            }
        }
        let mut cfg = Self::default();
        cfg.apply(&pairs)?;
        Ok(cfg)
    }

    /// Applies `pairs` on top of `self`; a `task` key first resets the model to its preset.
    pub fn apply(&mut self, pairs: &BTreeMap<String, String>) -> Result<()> {
        if let Some(t) = pairs.get("task") {
            let task: Task = t.parse()?;
            let enabled = self.model.approx.enabled;
            self.model = ModelConfig::for_task(task);
            self.model.approx.enabled = enabled;
        }
        apply_model(&mut self.model, pairs)?;
        let tc = &mut self.train;
        let ic = &mut self.ingest;
        for (key, v) in pairs {
            match key.as_str() {
                "seed" => self.seed = num(key, v)?,
                "epochs" => tc.epochs = num(key, v)?,
                "batch_size" => tc.batch_size = num(key, v)?,
                "learning_rate" => tc.learning_rate = num(key, v)?,
                "optimizer" => {
                    tc.optimizer = match v.as_str() {
                        "adam" => Optimizer::adam(),
                        "sgd" => Optimizer::SgdMomentum { momentum: 0.9 },
                        other => return Err(Error::Config(format!("unknown optimizer `{other}`"))),
                    }
                }
                "surrogate_alpha" => tc.surrogate_alpha = num(key, v)?,
                "calibration_samples" => tc.calibration_samples = num(key, v)?,
                "window_s" => ic.window_s = num(key, v)?,
                "stride_ictal" => ic.stride_ictal_s = num(key, v)?,
                "stride_inter" => ic.stride_inter_s = num(key, v)?,
                "preictal_s" => ic.phases.preictal_len_s = num(key, v)?,
                "guard_s" => ic.phases.guard_s = num(key, v)?,
                "postictal_s" => ic.phases.postictal_s = num(key, v)?,
                "balance_ratio" => ic.balance_ratio = num(key, v)?,
                "folds" => ic.folds = num(key, v)?,
                "cv" => {
                    ic.cv = match v.as_str() {
                        "per_case" => CvMode::PerCase,
                        "pooled" => CvMode::Pooled,
                        other => return Err(Error::Config(format!("unknown cv mode `{other}`"))),
                    }
                }
                _ => {}
            }
        }
        if let Some(m) = pairs.get("momentum") {
            match &mut tc.optimizer {
                Optimizer::SgdMomentum { momentum } => *momentum = num("momentum", m)?,
                Optimizer::Adam { .. } => return Err(Error::Config("`momentum` needs optimizer=sgd".into())),
            }
        }
        match (pairs.get("early_stop_accuracy"), pairs.get("early_stop_window")) {
            (None, None) => {}
            (Some(a), Some(w)) => {
                tc.early_stop = Some(EarlyStop {
                    accuracy: num("early_stop_accuracy", a)?,
                    window: num("early_stop_window", w)?,
                })
            }
            _ => return Err(Error::Config("early_stop_accuracy and early_stop_window go together".into())),
        }
        tc.seed = self.seed;
        Ok(())
    }

    /// Every problem with the configuration, checked before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        let ic = &self.ingest;
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !(positive(ic.window_s) && positive(ic.stride_ictal_s) && positive(ic.stride_inter_s)) {
            return Err(Error::Config("window and strides must be positive".into()));
        }
        let p = &ic.phases;
        if !(p.preictal_len_s >= 0.0 && p.guard_s >= 0.0 && p.postictal_s >= 0.0) {
            return Err(Error::Config("phase lengths must be non-negative".into()));
        }
        if !positive(ic.balance_ratio) {
            return Err(Error::Config("balance_ratio must be positive".into()));
        }
        if ic.folds < 2 {
            return Err(Error::Config("folds must be >= 2".into()));
        }
        Ok(())
    }

    /// All keys with their effective values, one per line.
    pub fn to_text(&self) -> String {
        let mut s = model_to_text(&self.model);
        let tc = &self.train;
        let ic = &self.ingest;
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("seed", self.seed.to_string());
        kv("epochs", tc.epochs.to_string());
        kv("batch_size", tc.batch_size.to_string());
        kv("learning_rate", tc.learning_rate.to_string());
        match tc.optimizer {
            Optimizer::Adam { .. } => kv("optimizer", "adam".into()),
            Optimizer::SgdMomentum { momentum } => {
                kv("optimizer", "sgd".into());
                kv("momentum", momentum.to_string());
            }
        }
        kv("surrogate_alpha", tc.surrogate_alpha.to_string());
        kv("calibration_samples", tc.calibration_samples.to_string());
        if let Some(es) = tc.early_stop {
            kv("early_stop_accuracy", es.accuracy.to_string());
            kv("early_stop_window", es.window.to_string());
        }
        kv("window_s", ic.window_s.to_string());
        kv("stride_ictal", ic.stride_ictal_s.to_string());
        kv("stride_inter", ic.stride_inter_s.to_string());
        kv("preictal_s", ic.phases.preictal_len_s.to_string());
        kv("guard_s", ic.phases.guard_s.to_string());
        kv("postictal_s", ic.phases.postictal_s.to_string());
        kv("balance_ratio", ic.balance_ratio.to_string());
        kv("folds", ic.folds.to_string());
        kv("cv", ic.cv.as_str().into());
        s
    }
}

/// `key=value` lines into a map; duplicate keys are an error.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{k}`", n + 1)));
        }
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn on_off(key: &str, v: &str) -> Result<bool> {
    match v {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected on or off, got `{v}`"))),
    }
}

pub fn parse_layers(v: &str) -> Result<ApproxLayers> {
    match v {
        "all" => return Ok(ApproxLayers::ALL),
        "none" => return Ok(ApproxLayers::NONE),
        "default" => return Ok(ApproxLayers::DEFAULT),
        _ => {}
    }
    v.split(',').map(str::trim).try_fold(ApproxLayers::NONE, |acc, name| {
        LAYER_NAMES
            .iter()
            .find(|(n, _)| *n == name)
            .map(|&(_, l)| acc | l)
            .ok_or_else(|| Error::Config(format!("unknown layer family `{name}`")))
    })
}

pub fn layers_to_text(l: ApproxLayers) -> String {
    if l == ApproxLayers::NONE {
        return "none".into();
    }
    LAYER_NAMES
        .iter()
        .filter(|(_, f)| l.contains(*f))
        .map(|(n, _)| *n)
        .collect::<Vec<_>>()
        .join(",")
}

fn pair(key: &str, v: &str) -> Result<(usize, usize)> {
    let (a, b) = v
        .split_once('x')
        .ok_or_else(|| Error::Config(format!("`{key}`: expected AxB, got `{v}`")))?;
    Ok((num(key, a)?, num(key, b)?))
}

/// Applies the model keys of `pairs` (other than `task`) to `m`, keeping
/// the gating horizon in step with `T`.
pub fn apply_model(m: &mut ModelConfig, pairs: &BTreeMap<String, String>) -> Result<()> {
    for (key, v) in pairs {
        match key.as_str() {
            "channels" => m.channels = num(key, v)?,
            "sample_len" => m.sample_len = num(key, v)?,
            "T" => m.timesteps = num(key, v)?,
            "k" => m.conv_channels = num(key, v)?,
            "D" => m.embed_dim = num(key, v)?,
            "n_encoders" => m.encoders = num(key, v)?,
            "mlp_ratio" => m.mlp_ratio = num(key, v)?,
            "head_hidden" => m.head_hidden = num(key, v)?,
            "temporal_kernel" => m.temporal_kernel = num(key, v)?,
            "pool_kernel" => m.pool.kernel = pair(key, v)?,
            "pool_stride" => m.pool.stride = pair(key, v)?,
            "attention_scale" => m.attention_scale = num(key, v)?,
            "tau" => m.lif.tau = num(key, v)?,
            "v_th" => m.lif.v_th = num(key, v)?,
            "v_reset" => m.lif.v_reset = num(key, v)?,
            "T_th" => m.approx.threshold = num(key, v)?,
            "approx" => m.approx.enabled = on_off(key, v)?,
            "approx_layers" => m.approx_layers = parse_layers(v)?,
            _ => {}
        }
    }
    m.approx.timesteps = m.timesteps;
    if !pairs.contains_key("T_th") {
        m.approx.threshold = m.approx.threshold.min(m.timesteps);
    }
    Ok(())
}

/// Every model key, enough to rebuild `m` exactly with [`model_from_pairs`].
pub fn model_to_text(m: &ModelConfig) -> String {
    let PoolSpec { kernel, stride } = m.pool;
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k}={v}");
    };
    kv("task", m.task.to_string());
    kv("channels", m.channels.to_string());
    kv("sample_len", m.sample_len.to_string());
    kv("T", m.timesteps.to_string());
    kv("k", m.conv_channels.to_string());
    kv("D", m.embed_dim.to_string());
    kv("n_encoders", m.encoders.to_string());
    kv("mlp_ratio", m.mlp_ratio.to_string());
    kv("head_hidden", m.head_hidden.to_string());
    kv("temporal_kernel", m.temporal_kernel.to_string());
    kv("pool_kernel", format!("{}x{}", kernel.0, kernel.1));
    kv("pool_stride", format!("{}x{}", stride.0, stride.1));
    kv("attention_scale", m.attention_scale.to_string());
    kv("tau", m.lif.tau.to_string());
    kv("v_th", m.lif.v_th.to_string());
    kv("v_reset", m.lif.v_reset.to_string());
    kv("T_th", m.approx.threshold.to_string());
    kv("approx", if m.approx.enabled { "on" } else { "off" }.into());
    kv("approx_layers", layers_to_text(m.approx_layers));
    s
}

pub fn model_from_pairs(pairs: &BTreeMap<String, String>) -> Result<ModelConfig> {
    let task: Task = pairs
        .get("task")
        .ok_or_else(|| Error::Config("missing `task`".into()))?
        .parse()?;
    let mut m = ModelConfig::for_task(task);
    apply_model(&mut m, pairs)?;
    m.validate()?;
    Ok(m)
}
