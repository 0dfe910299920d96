//! CSV inputs and reports.

use std::path::Path;

use spkf_core::data::{Label, SeizureAnnotation};
use spkf_core::profile::{AnnOpModel, OpTally};
use spkf_core::train::Metrics;

use crate::error::{Error, Result};

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))
}

/// Column positions of `wanted` in the header; every one must be present.
fn columns(path: &Path, headers: &csv::StringRecord, wanted: &[&str]) -> Result<Vec<usize>> {
    wanted
        .iter()
        .map(|w| {
            headers
                .iter()
                .position(|h| h == *w)
                .ok_or_else(|| Error::format(path, format!("missing column `{w}`")))
        })
        .collect()
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, col: usize, name: &str) -> Result<T> {
    let line = rec.position().map_or(0, |p| p.line());
    rec.get(col)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::format(path, format!("line {line}: bad `{name}` value")))
}

/// Strips a trailing `.edf` so annotation ids match file stems either way.
pub fn file_stem(id: &str) -> &str {
    id.strip_suffix(".edf").or_else(|| id.strip_suffix(".EDF")).unwrap_or(id)
}

/// Case of a CHB-MIT style file id: the part before the first `_`.
pub fn case_of(file_id: &str) -> &str {
    file_id.split('_').next().unwrap_or(file_id)
}

/// `file_id,onset_s,offset_s`
pub fn read_annotations(path: &Path) -> Result<Vec<SeizureAnnotation>> {
    let mut r = reader(path)?;
    let headers = r.headers().map_err(|e| Error::csv(path, e))?.clone();
    let cols = columns(path, &headers, &["file_id", "onset_s", "offset_s"])?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let ann = SeizureAnnotation {
            file_id: file_stem(&field::<String>(path, &rec, cols[0], "file_id")?).to_string(),
            onset_s: field(path, &rec, cols[1], "onset_s")?,
            offset_s: field(path, &rec, cols[2], "offset_s")?,
        };
        if !(ann.onset_s >= 0.0 && ann.onset_s < ann.offset_s) {
            let line = rec.position().map_or(0, |p| p.line());
            return Err(Error::format(path, format!("line {line}: onset must precede offset")));
        }
        out.push(ann);
    }
    Ok(out)
}

pub fn write_annotations(path: &Path, anns: &[SeizureAnnotation]) -> Result<()> {
    let mut w = writer(path)?;
    let err = |e| Error::csv(path, e);
    w.write_record(["file_id", "onset_s", "offset_s"]).map_err(err)?;
    for a in anns {
        w.write_record([a.file_id.clone(), a.onset_s.to_string(), a.offset_s.to_string()])
            .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub segment_id: usize,
    pub file_id: String,
    pub start_sample: usize,
    pub label: Label,
    /// Cross-validation fold whose test set holds this segment.
    pub fold: usize,
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = writer(path)?;
    let err = |e| Error::csv(path, e);
    w.write_record(["segment_id", "file_id", "start_sample", "label", "fold"])
        .map_err(err)?;
    for r in rows {
        w.write_record([
            r.segment_id.to_string(),
            r.file_id.clone(),
            r.start_sample.to_string(),
            r.label.as_str().to_string(),
            r.fold.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut r = reader(path)?;
    let headers = r.headers().map_err(|e| Error::csv(path, e))?.clone();
    let cols = columns(path, &headers, &["segment_id", "file_id", "start_sample", "label", "fold"])?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        out.push(ManifestRow {
            segment_id: field(path, &rec, cols[0], "segment_id")?,
            file_id: field(path, &rec, cols[1], "file_id")?,
            start_sample: field(path, &rec, cols[2], "start_sample")?,
            label: field(path, &rec, cols[3], "label")?,
            fold: field(path, &rec, cols[4], "fold")?,
        });
    }
    Ok(out)
}

/// A percentage with two decimals, or `NA` when undefined.
pub fn percent(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |p| format!("{p:.2}"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub case: String,
    pub fold: usize,
    pub metrics: Metrics,
    pub skip_reduction_percent: Option<f64>,
    /// Mean per segment over the test set.
    pub add_ops: u64,
    /// Mean core MULs per segment over the test set.
    pub mul_ops: u64,
}

pub const METRICS_HEADER: [&str; 8] = [
    "case",
    "fold",
    "sens",
    "spec",
    "acc",
    "skip_reduction_percent",
    "add_ops",
    "mul_ops",
];

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = writer(path)?;
    let err = |e| Error::csv(path, e);
    w.write_record(METRICS_HEADER).map_err(err)?;
    for r in rows {
        w.write_record([
            r.case.clone(),
            r.fold.to_string(),
            percent(r.metrics.sens),
            percent(r.metrics.spec),
            percent(Some(r.metrics.acc)),
            percent(r.skip_reduction_percent),
            r.add_ops.to_string(),
            r.mul_ops.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn optional(path: &Path, rec: &csv::StringRecord, col: usize, name: &str) -> Result<Option<f64>> {
    match rec.get(col) {
        Some("NA") => Ok(None),
        _ => field(path, rec, col, name).map(Some),
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = reader(path)?;
    let headers = r.headers().map_err(|e| Error::csv(path, e))?.clone();
    let cols = columns(path, &headers, &METRICS_HEADER)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        out.push(MetricsRow {
            case: field(path, &rec, cols[0], "case")?,
            fold: field(path, &rec, cols[1], "fold")?,
            metrics: Metrics {
                sens: optional(path, &rec, cols[2], "sens")?,
                spec: optional(path, &rec, cols[3], "spec")?,
                acc: field(path, &rec, cols[4], "acc")?,
            },
            skip_reduction_percent: optional(path, &rec, cols[5], "skip_reduction_percent")?,
            add_ops: field(path, &rec, cols[6], "add_ops")?,
            mul_ops: field(path, &rec, cols[7], "mul_ops")?,
        });
    }
    Ok(out)
}

/// Per-layer operation report: one row per layer, a totals row and a ratio row.
pub fn write_profile(path: &Path, tally: &OpTally, ann: &AnnOpModel, ratio: f64) -> Result<()> {
    let mut w = writer(path)?;
    let err = |e| Error::csv(path, e);
    w.write_record(["layer", "adds", "core_muls", "full_muls", "skipped", "reduction_percent"])
        .map_err(err)?;
    for l in &tally.per_layer {
        w.write_record([
            l.layer.clone(),
            l.adds().to_string(),
            l.core_muls.to_string(),
            l.full_muls.to_string(),
            l.updates.updates_skipped.to_string(),
            percent(l.updates.reduction_percent().ok()),
        ])
        .map_err(err)?;
    }
    let total = tally.skip_stats();
    w.write_record([
        "total".to_string(),
        tally.adds.to_string(),
        tally.core_muls.to_string(),
        tally.full_muls.to_string(),
        total.updates_skipped.to_string(),
        percent(total.reduction_percent().ok()),
    ])
    .map_err(err)?;
    w.write_record([
        "ratio".to_string(),
        format!("{ratio:.4}"),
        format!("ann_ops={}", ann.total_ops()),
        format!("softmax_ops={}", ann.softmax_ops),
        String::new(),
        String::new(),
    ])
    .map_err(err)?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub t_th: usize,
    pub adds: u64,
    pub core_muls: u64,
    pub full_muls: u64,
    pub reduction_percent: Option<f64>,
    pub acc: f64,
    pub changed_predictions: usize,
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = writer(path)?;
    let err = |e| Error::csv(path, e);
    w.write_record([
        "t_th",
        "adds",
        "core_muls",
        "full_muls",
        "reduction_percent",
        "acc",
        "changed_predictions",
    ])
    .map_err(err)?;
    for r in rows {
        w.write_record([
            r.t_th.to_string(),
            r.adds.to_string(),
            r.core_muls.to_string(),
            r.full_muls.to_string(),
            percent(r.reduction_percent),
            percent(Some(r.acc)),
            r.changed_predictions.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
