//! Recordings, seizure phases, segmentation, class balancing and folds.
//!
//! Times are seconds at the interface and samples internally; a segment is
//! identified by its recording and start sample so payloads can be loaded
//! lazily.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math;
use crate::model::Task;
use crate::tensor::Tensor;

/// Channels kept after selection.
pub const CHANNELS: usize = 22;
pub const SAMPLE_RATE: f64 = 256.0;
pub const WINDOW_S: f64 = 5.0;
/// Samples per segment at the nominal rate.
pub const SEGMENT_LEN: usize = 1280;

#[derive(Clone, Debug, PartialEq)]
pub struct EegRecording {
    pub case_id: String,
    pub file_id: String,
    pub channels: Vec<String>,
    pub fs: f64,
    /// `[n_channels, n_samples]` in physical units.
    pub samples: Tensor,
    pub bit_depth: u8,
}

impl EegRecording {
    pub fn n_channels(&self) -> usize {
        self.samples.shape()[0]
    }

    pub fn n_samples(&self) -> usize {
        self.samples.shape()[1]
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.fs
    }

    /// Keeps the first `n` channels in header order.
    pub fn select_channels(&mut self, n: usize) -> Result<()> {
        let have = self.n_channels();
        if have < n {
            return Err(Error::invalid(
                "select_channels",
                format!("{}: {have} channels, need at least {n}", self.file_id),
            ));
        }
        let len = self.n_samples();
        let data = self.samples.data()[..n * len].to_vec();
        self.samples = Tensor::new(&[n, len], data)?;
        self.channels.truncate(n);
        Ok(())
    }

    /// Per-channel zero mean and unit variance. Constant channels become zero.
    pub fn standardize(&mut self) {
        let len = self.n_samples();
        if len == 0 {
            return;
        }
        for row in self.samples.data_mut().chunks_mut(len) {
            let mean = row.iter().sum::<f64>() / len as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len as f64;
            let inv = if var > 0.0 { 1.0 / math::sqrt(var) } else { 0.0 };
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
        }
    }

    /// Copies `[n_channels, len]` samples starting at `start` into `out`.
    pub fn window(&self, start: usize, len: usize, out: &mut [f64]) -> Result<()> {
        let (ch, n) = (self.n_channels(), self.n_samples());
        if start + len > n || out.len() != ch * len {
            return Err(Error::invalid(
                "window",
                format!("{}: window {start}+{len} of {n} samples", self.file_id),
            ));
        }
        for (c, dst) in out.chunks_mut(len).enumerate() {
            dst.copy_from_slice(&self.samples.data()[c * n + start..c * n + start + len]);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeizureAnnotation {
    pub file_id: String,
    pub onset_s: f64,
    pub offset_s: f64,
}

impl SeizureAnnotation {
    pub fn validate(&self, duration_s: f64) -> Result<()> {
        let ok = self.onset_s.is_finite()
            && self.offset_s.is_finite()
            && 0.0 <= self.onset_s
            && self.onset_s < self.offset_s
            && self.offset_s <= duration_s;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(
                "annotation",
                format!(
                    "{}: seizure [{}, {}] outside recording of {duration_s} s",
                    self.file_id, self.onset_s, self.offset_s
                ),
            ))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Ictal,
    PreIctal,
    InterIctal,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Ictal => "ictal",
            Phase::PreIctal => "pre_ictal",
            Phase::InterIctal => "inter_ictal",
        }
    }

    pub fn label(self) -> Label {
        match self {
            Phase::InterIctal => Label::Negative,
            _ => Label::Positive,
        }
    }

    /// Whether segments of this phase take part in `task`.
    pub fn used_by(self, task: Task) -> bool {
        match (self, task) {
            (Phase::InterIctal, _) => true,
            (Phase::Ictal, Task::Detection) => true,
            (Phase::PreIctal, Task::Prediction) => true,
            _ => false,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ictal" => Ok(Phase::Ictal),
            "pre_ictal" => Ok(Phase::PreIctal),
            "inter_ictal" => Ok(Phase::InterIctal),
            other => Err(Error::InvalidConfig(format!("unknown phase `{other}`"))),
        }
    }
}

/// Class of a segment. The index is the logit position: the one-hot target
/// of a positive (ictal or pre-ictal) segment is `(1, 0)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Positive = 0,
    Negative = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Positive => "positive",
            Label::Negative => "negative",
        }
    }
}

impl FromStr for Label {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive" => Ok(Label::Positive),
            "negative" => Ok(Label::Negative),
            other => Err(Error::InvalidConfig(format!("unknown label `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseInterval {
    pub phase: Phase,
    pub start_s: f64,
    pub end_s: f64,
    pub file_id: String,
}

impl PhaseInterval {
    pub fn len_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseConfig {
    pub preictal_len_s: f64,
    /// Minimum distance between inter-ictal data and any seizure or pre-ictal span.
    pub guard_s: f64,
    /// Time after a seizure offset excluded from inter-ictal data.
    pub postictal_s: f64,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            preictal_len_s: 900.0,
            guard_s: 1800.0,
            postictal_s: 1800.0,
        }
    }
}

/// Splits one recording into ictal, pre-ictal and inter-ictal intervals.
/// Annotations of other files are ignored; the rest may come in any order
/// but must not overlap.
pub fn extract_phases(
    recording: &EegRecording,
    annotations: &[SeizureAnnotation],
    cfg: &PhaseConfig,
) -> Result<Vec<PhaseInterval>> {
    extract_phases_for(&recording.file_id, recording.duration_s(), annotations, cfg)
}

/// [`extract_phases`] from a file id and duration alone.
pub fn extract_phases_for(
    file_id: &str,
    duration_s: f64,
    annotations: &[SeizureAnnotation],
    cfg: &PhaseConfig,
) -> Result<Vec<PhaseInterval>> {
    if !(cfg.preictal_len_s >= 0.0 && cfg.guard_s >= 0.0 && cfg.postictal_s >= 0.0) {
        return Err(Error::InvalidConfig("phase lengths must be non-negative".into()));
    }
    let mut seizures: Vec<&SeizureAnnotation> = annotations.iter().filter(|a| a.file_id == file_id).collect();
    for a in &seizures {
        a.validate(duration_s)?;
    }
    seizures.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));
    for w in seizures.windows(2) {
        if w[1].onset_s < w[0].offset_s {
            return Err(Error::invalid(
                "extract_phases",
                format!(
                    "{file_id}: seizures [{}, {}] and [{}, {}] overlap",
                    w[0].onset_s, w[0].offset_s, w[1].onset_s, w[1].offset_s
                ),
            ));
        }
    }
    let interval = |phase, start_s, end_s| PhaseInterval {
        phase,
        start_s,
        end_s,
        file_id: file_id.into(),
    };
    let mut out = Vec::new();
    let mut prev_offset = 0.0f64;
    // Spans that inter-ictal data must stay clear of.
    let mut excluded: Vec<(f64, f64)> = Vec::new();
    for s in &seizures {
        let pre_start = (s.onset_s - cfg.preictal_len_s).max(prev_offset);
        if pre_start < s.onset_s {
            out.push(interval(Phase::PreIctal, pre_start, s.onset_s));
        }
        out.push(interval(Phase::Ictal, s.onset_s, s.offset_s));
        excluded.push((
            s.onset_s - cfg.preictal_len_s - cfg.guard_s,
            s.offset_s + cfg.guard_s.max(cfg.postictal_s),
        ));
        prev_offset = s.offset_s;
    }
    let mut cursor = 0.0f64;
    for (lo, hi) in excluded {
        if lo > cursor {
            out.push(interval(Phase::InterIctal, cursor, lo.min(duration_s)));
        }
        cursor = cursor.max(hi);
    }
    if cursor < duration_s {
        out.push(interval(Phase::InterIctal, cursor, duration_s));
    }
    out.retain(|p| p.end_s > p.start_s);
    out.sort_by(|a, b| a.start_s.total_cmp(&b.start_s).then(a.phase.cmp(&b.phase)));
    Ok(out)
}

/// Number of windows of `window` samples at stride `stride` inside `len` samples.
pub fn segment_count(len: usize, window: usize, stride: usize) -> usize {
    if stride == 0 || window == 0 || len < window {
        0
    } else {
        (len - window) / stride + 1
    }
}

/// First and one-past-last sample of an interval; partial samples are dropped.
pub fn interval_samples(interval: &PhaseInterval, fs: f64) -> (usize, usize) {
    let start = math::ceil(interval.start_s * fs - 1e-9).max(0.0) as usize;
    let end = math::floor(interval.end_s * fs + 1e-9).max(0.0) as usize;
    (start, end.max(start))
}

/// Location of a segment inside a recording.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SegmentRef {
    pub file_id: String,
    pub start_sample: usize,
    pub label: Label,
}

/// Start samples of every window of `window_s` seconds at stride `stride_s`.
pub fn segment_starts(interval: &PhaseInterval, fs: f64, window_s: f64, stride_s: f64) -> Result<Vec<usize>> {
    if !(stride_s > 0.0 && window_s > 0.0 && fs > 0.0) {
        return Err(Error::invalid("segment_interval", "window, stride and rate must be positive"));
    }
    let window = math::round(window_s * fs) as usize;
    let stride = (math::round(stride_s * fs) as usize).max(1);
    let (start, end) = interval_samples(interval, fs);
    let n = segment_count(end - start, window, stride);
    Ok((0..n).map(|i| start + i * stride).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    /// `[channels, window]`
    pub data: Tensor,
    pub label: Label,
    pub file_id: String,
    pub start_sample: usize,
}

/// Cuts an interval of `recording` into overlapping windows.
pub fn segment_interval(
    interval: &PhaseInterval,
    recording: &EegRecording,
    window_s: f64,
    stride_s: f64,
) -> Result<Vec<Segment>> {
    if interval.file_id != recording.file_id {
        return Err(Error::invalid(
            "segment_interval",
            format!("interval of `{}` applied to `{}`", interval.file_id, recording.file_id),
        ));
    }
    let window = math::round(window_s * recording.fs) as usize;
    let ch = recording.n_channels();
    segment_starts(interval, recording.fs, window_s, stride_s)?
        .into_iter()
        .filter(|&s| s + window <= recording.n_samples())
        .map(|s| {
            let mut buf = vec![0.0; ch * window];
            recording.window(s, window, &mut buf)?;
            Ok(Segment {
                data: Tensor::new(&[ch, window], buf)?,
                label: interval.phase.label(),
                file_id: recording.file_id.clone(),
                start_sample: s,
            })
        })
        .collect()
}

/// Indices to keep from each class so that `|pos| / |neg|` is within 5% of
/// `target_ratio`; the majority class is subsampled uniformly. Kept indices
/// are returned in ascending order.
pub fn balance_indices(n_pos: usize, n_neg: usize, target_ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Empty("balance"));
    }
    if !(target_ratio > 0.0 && target_ratio.is_finite()) {
        return Err(Error::InvalidConfig(format!("balance ratio {target_ratio} must be positive")));
    }
    let ratio = n_pos as f64 / n_neg as f64;
    let all = |n: usize| (0..n).collect::<Vec<_>>();
    if (ratio / target_ratio - 1.0).abs() <= 0.05 {
        return Ok((all(n_pos), all(n_neg)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |n: usize, keep: usize| {
        let mut idx = all(n);
        idx.shuffle(&mut rng);
        idx.truncate(keep.clamp(1, n));
        idx.sort_unstable();
        idx
    };
    if ratio > target_ratio {
        let keep = math::round(n_neg as f64 * target_ratio) as usize;
        Ok((pick(n_pos, keep), all(n_neg)))
    } else {
        let keep = math::round(n_pos as f64 / target_ratio) as usize;
        Ok((all(n_pos), pick(n_neg, keep)))
    }
}

/// Segments of both classes after balancing, positives first.
pub fn balance(pos: Vec<Segment>, neg: Vec<Segment>, target_ratio: f64, seed: u64) -> Result<Vec<Segment>> {
    let (kp, kn) = balance_indices(pos.len(), neg.len(), target_ratio, seed)?;
    let take = |v: Vec<Segment>, keep: &[usize]| {
        let mut it = keep.iter().peekable();
        v.into_iter()
            .enumerate()
            .filter(|(i, _)| {
                if it.peek() == Some(&i) {
                    it.next();
                    true
                } else {
                    false
                }
            })
            .map(|(_, s)| s)
            .collect::<Vec<_>>()
    };
    let mut out = take(pos, &kp);
    out.extend(take(neg, &kn));
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded `k`-fold partition of `0..n`. Test sets cover every index once and
/// their sizes differ by at most one; both lists are sorted.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k <= 1 {
        return Err(Error::InvalidConfig(format!("k-fold needs k >= 2, got {k}")));
    }
    if n < k {
        return Err(Error::invalid("kfold_split", format!("{n} items cannot form {k} folds")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut test = idx[start..start + size].to_vec();
        test.sort_unstable();
        let mut train: Vec<usize> = idx[..start].iter().chain(&idx[start + size..]).copied().collect();
        train.sort_unstable();
        folds.push(Fold { train, test });
        start += size;
    }
    Ok(folds)
}

/// Random access to labelled segments, each `[channels, len]`.
pub trait SegmentSource: Sync {
    fn len(&self) -> usize;
    fn channels(&self) -> usize;
    fn segment_len(&self) -> usize;
    fn label(&self, i: usize) -> Label;
    /// Writes segment `i` into `out` (`channels * segment_len` values).
    fn load(&self, i: usize, out: &mut [f64]) -> Result<()>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `[indices.len(), channels, segment_len]`
    fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let per = self.channels() * self.segment_len();
        let mut data = vec![0.0; indices.len() * per];
        for (dst, &i) in data.chunks_mut(per).zip(indices) {
            self.load(i, dst)?;
        }
        Tensor::new(&[indices.len(), self.channels(), self.segment_len()], data)
    }
}

/// Materialized segments.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub segments: Vec<Segment>,
}

impl SegmentSource for Dataset {
    fn len(&self) -> usize {
        self.segments.len()
    }

    fn channels(&self) -> usize {
        self.segments.first().map_or(CHANNELS, |s| s.data.shape()[0])
    }

    fn segment_len(&self) -> usize {
        self.segments.first().map_or(SEGMENT_LEN, |s| s.data.shape()[1])
    }

    fn label(&self, i: usize) -> Label {
        self.segments[i].label
    }

    fn load(&self, i: usize, out: &mut [f64]) -> Result<()> {
        let s = self.segments.get(i).ok_or_else(|| Error::invalid("load", format!("segment {i} out of range")))?;
        if s.data.len() != out.len() {
            return Err(Error::shape("load", &[out.len()], &[s.data.len()]));
        }
        out.copy_from_slice(s.data.data());
        Ok(())
    }
}

/// A view restricted to `indices` of an underlying source.
pub struct Subset<'a, S: SegmentSource + ?Sized> {
    pub source: &'a S,
    pub indices: Vec<usize>,
}

impl<S: SegmentSource + ?Sized> SegmentSource for Subset<'_, S> {
    fn len(&self) -> usize {
        self.indices.len()
    }

    fn channels(&self) -> usize {
        self.source.channels()
    }

    fn segment_len(&self) -> usize {
        self.source.segment_len()
    }

    fn label(&self, i: usize) -> Label {
        self.source.label(self.indices[i])
    }

    fn load(&self, i: usize, out: &mut [f64]) -> Result<()> {
        self.source.load(self.indices[i], out)
    }
}
