//! European Data Format (EDF and continuous EDF+) reading and writing.
//!
//! The header is 256 ASCII bytes plus 256 per signal, followed by data
//! records that hold `samples_per_record` little-endian `i16` values for
//! each signal in turn.

use std::path::Path;

use spkf_core::data::{EegRecording, CHANNELS};
use spkf_core::Tensor;

use crate::error::{Error, Result};

/// Label EDF+ uses for its annotation channel, which carries no samples.
pub const ANNOTATIONS_LABEL: &str = "EDF Annotations";

#[derive(Clone, Debug, PartialEq)]
pub struct EdfSignal {
    pub label: String,
    pub transducer: String,
    pub physical_dimension: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub prefiltering: String,
    pub samples_per_record: usize,
    pub reserved: String,
}

impl EdfSignal {
    /// `(gain, offset)` with `physical = gain * digital + offset`.
    pub fn calibration(&self) -> (f64, f64) {
        let gain = (self.physical_max - self.physical_min) / f64::from(self.digital_max - self.digital_min);
        (gain, self.physical_min - gain * f64::from(self.digital_min))
    }

    pub fn is_annotation(&self) -> bool {
        self.label == ANNOTATIONS_LABEL
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdfHeader {
    pub version: String,
    pub patient: String,
    pub recording: String,
    pub start_date: String,
    pub start_time: String,
    /// `EDF+C`, `EDF+D` or blank for plain EDF.
    pub reserved: String,
    pub n_records: usize,
    pub record_duration_s: f64,
    pub signals: Vec<EdfSignal>,
}

impl EdfHeader {
    pub fn header_bytes(&self) -> usize {
        256 * (self.signals.len() + 1)
    }

    pub fn record_samples(&self) -> usize {
        self.signals.iter().map(|s| s.samples_per_record).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdfFile {
    pub header: EdfHeader,
    /// Digital samples per signal, all records concatenated.
    pub digital: Vec<Vec<i16>>,
}

struct Fields<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Fields<'a> {
    fn take(&mut self, width: usize) -> std::result::Result<&'a str, String> {
        let raw = &self.bytes[self.pos..self.pos + width];
        self.pos += width;
        std::str::from_utf8(raw)
            .map(str::trim_end)
            .map_err(|_| format!("non-ASCII header field at byte {}", self.pos - width))
    }

    fn number<T: std::str::FromStr>(&mut self, width: usize, what: &str) -> std::result::Result<T, String> {
        let s = self.take(width)?;
        s.trim().parse().map_err(|_| format!("header field `{what}` is not a number: `{s}`"))
    }
}

/// Parses a complete continuous EDF file.
pub fn parse_edf(bytes: &[u8]) -> std::result::Result<EdfFile, String> {
    if bytes.len() < 256 {
        return Err(format!("truncated file: {} bytes, header needs 256", bytes.len()));
    }
    if bytes[0] == 0xff {
        return Err("24-bit BDF samples are not supported; only 16-bit EDF".into());
    }
    let mut f = Fields { bytes, pos: 0 };
    let version = f.take(8)?.to_string();
    if version.trim() != "0" {
        return Err(format!("unknown EDF version `{version}`"));
    }
    let patient = f.take(80)?.to_string();
    let recording = f.take(80)?.to_string();
    let start_date = f.take(8)?.to_string();
    let start_time = f.take(8)?.to_string();
    let header_bytes: usize = f.number(8, "header bytes")?;
    let reserved = f.take(44)?.to_string();
    if reserved.starts_with("EDF+D") {
        return Err("discontinuous EDF+D recordings are not supported".into());
    }
    let n_records: i64 = f.number(8, "number of data records")?;
    let record_duration_s: f64 = f.number(8, "record duration")?;
    let ns: usize = f.number(4, "number of signals")?;
    if ns == 0 {
        return Err("file declares no signals".into());
    }
    if header_bytes != 256 * (ns + 1) {
        return Err(format!("header size {header_bytes} does not match {ns} signals"));
    }
    if bytes.len() < header_bytes {
        return Err(format!("truncated file: {} bytes, header needs {header_bytes}", bytes.len()));
    }
    if !(record_duration_s > 0.0 && record_duration_s.is_finite()) {
        return Err(format!("record duration {record_duration_s} must be positive"));
    }

    let mut signals: Vec<EdfSignal> = (0..ns)
        .map(|_| EdfSignal {
            label: String::new(),
            transducer: String::new(),
            physical_dimension: String::new(),
            physical_min: 0.0,
            physical_max: 0.0,
            digital_min: 0,
            digital_max: 0,
            prefiltering: String::new(),
            samples_per_record: 0,
            reserved: String::new(),
        })
        .collect();
    for s in &mut signals {
        s.label = f.take(16)?.to_string();
    }
    for s in &mut signals {
        s.transducer = f.take(80)?.to_string();
    }
    for s in &mut signals {
        s.physical_dimension = f.take(8)?.to_string();
    }
    for s in &mut signals {
        s.physical_min = f.number(8, "physical minimum")?;
    }
    for s in &mut signals {
        s.physical_max = f.number(8, "physical maximum")?;
    }
    for s in &mut signals {
        s.digital_min = f.number(8, "digital minimum")?;
    }
    for s in &mut signals {
        s.digital_max = f.number(8, "digital maximum")?;
    }
    for s in &mut signals {
        s.prefiltering = f.take(80)?.to_string();
    }
    for s in &mut signals {
        s.samples_per_record = f.number(8, "samples per record")?;
    }
    for s in &mut signals {
        s.reserved = f.take(32)?.to_string();
    }
    for s in &signals {
        if s.digital_min < i32::from(i16::MIN) || s.digital_max > i32::from(i16::MAX) {
            return Err(format!(
                "signal `{}`: digital range [{}, {}] exceeds 16-bit samples",
                s.label, s.digital_min, s.digital_max
            ));
        }
        if s.digital_max <= s.digital_min {
            return Err(format!("signal `{}`: empty digital range", s.label));
        }
        if s.physical_max == s.physical_min {
            return Err(format!("signal `{}`: empty physical range", s.label));
        }
    }

    let record_samples: usize = signals.iter().map(|s| s.samples_per_record).sum();
    if record_samples == 0 {
        return Err("data records hold no samples".into());
    }
    let record_bytes = 2 * record_samples;
    let payload = &bytes[header_bytes..];
    let n_records = if n_records < 0 {
        if !payload.len().is_multiple_of(record_bytes) {
            return Err(format!(
                "data size {} is not a whole number of {record_bytes}-byte records",
                payload.len()
            ));
        }
        payload.len() / record_bytes
    } else {
        n_records as usize
    };
    let expected = n_records * record_bytes;
    if payload.len() < expected {
        return Err(format!("truncated file: {} data bytes, header implies {expected}", payload.len()));
    }
    if payload.len() > expected {
        return Err(format!("record size mismatch: {} data bytes, header implies {expected}", payload.len()));
    }

    let mut digital: Vec<Vec<i16>> = signals
        .iter()
        .map(|s| Vec::with_capacity(s.samples_per_record * n_records))
        .collect();
    for record in payload.chunks_exact(record_bytes) {
        let mut off = 0;
        for (s, out) in signals.iter().zip(&mut digital) {
            let chunk = &record[off..off + 2 * s.samples_per_record];
            out.extend(chunk.chunks_exact(2).map(|b| i16::from_le_bytes([b[0], b[1]])));
            off += chunk.len();
        }
    }
    Ok(EdfFile {
        header: EdfHeader {
            version,
            patient,
            recording,
            start_date,
            start_time,
            reserved,
            n_records,
            record_duration_s,
            signals,
        },
        digital,
    })
}

/// Left-justified, space-padded ASCII field of exactly `width` bytes.
fn field(out: &mut Vec<u8>, s: &str, width: usize) {
    let bytes: Vec<u8> = s.bytes().map(|b| if b.is_ascii() { b } else { b'?' }).take(width).collect();
    out.extend_from_slice(&bytes);
    out.resize(out.len() + width - bytes.len(), b' ');
}

/// Shortest decimal form of `v` that fits in `width` characters.
fn number(v: f64, width: usize) -> String {
    let plain = format!("{v}");
    if plain.len() <= width {
        return plain;
    }
    (0..width)
        .rev()
        .map(|p| format!("{v:.p$}"))
        .find(|s| s.len() <= width)
        .unwrap_or_else(|| format!("{v:.0}"))
}

impl EdfFile {
    /// Builds a single-record-size file from per-signal digital samples.
    /// Every signal gets `samples_per_record` samples per record.
    pub fn from_digital(
        labels: &[String],
        samples_per_record: usize,
        record_duration_s: f64,
        physical: (f64, f64),
        digital: Vec<Vec<i16>>,
    ) -> std::result::Result<Self, String> {
        if labels.len() != digital.len() || labels.is_empty() {
            return Err("one label per signal is required".into());
        }
        let n = digital[0].len();
        if samples_per_record == 0 || !n.is_multiple_of(samples_per_record) || digital.iter().any(|d| d.len() != n) {
            return Err("signals must hold the same whole number of records".into());
        }
        let signals = labels
            .iter()
            .map(|l| EdfSignal {
                label: l.clone(),
                transducer: "AgAgCl electrode".into(),
                physical_dimension: "uV".into(),
                physical_min: physical.0,
                physical_max: physical.1,
                digital_min: i32::from(i16::MIN),
                digital_max: i32::from(i16::MAX),
                prefiltering: String::new(),
                samples_per_record,
                reserved: String::new(),
            })
            .collect();
        Ok(Self {
            header: EdfHeader {
                version: "0".into(),
                patient: "X X X X".into(),
                recording: "Startdate X X X X".into(),
                start_date: "01.01.00".into(),
                start_time: "00.00.00".into(),
                reserved: String::new(),
                n_records: n / samples_per_record,
                record_duration_s,
                signals,
            },
            digital,
        })
    }

    /// Serializes the data records only.
    pub fn payload_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(2 * h.n_records * h.record_samples());
        for r in 0..h.n_records {
            for (s, d) in h.signals.iter().zip(&self.digital) {
                let spr = s.samples_per_record;
                for v in &d[r * spr..(r + 1) * spr] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(h.header_bytes());
        field(&mut out, &h.version, 8);
        field(&mut out, &h.patient, 80);
        field(&mut out, &h.recording, 80);
        field(&mut out, &h.start_date, 8);
        field(&mut out, &h.start_time, 8);
        field(&mut out, &h.header_bytes().to_string(), 8);
        field(&mut out, &h.reserved, 44);
        field(&mut out, &h.n_records.to_string(), 8);
        field(&mut out, &number(h.record_duration_s, 8), 8);
        field(&mut out, &h.signals.len().to_string(), 4);
        let sig = &h.signals;
        sig.iter().for_each(|s| field(&mut out, &s.label, 16));
        sig.iter().for_each(|s| field(&mut out, &s.transducer, 80));
        sig.iter().for_each(|s| field(&mut out, &s.physical_dimension, 8));
        sig.iter().for_each(|s| field(&mut out, &number(s.physical_min, 8), 8));
        sig.iter().for_each(|s| field(&mut out, &number(s.physical_max, 8), 8));
        sig.iter().for_each(|s| field(&mut out, &s.digital_min.to_string(), 8));
        sig.iter().for_each(|s| field(&mut out, &s.digital_max.to_string(), 8));
        sig.iter().for_each(|s| field(&mut out, &s.prefiltering, 80));
        sig.iter().for_each(|s| field(&mut out, &s.samples_per_record.to_string(), 8));
        sig.iter().for_each(|s| field(&mut out, &s.reserved, 32));
        debug_assert_eq!(out.len(), h.header_bytes());
        out.extend(self.payload_bytes());
        out
    }

    /// Calibrated samples of every non-annotation signal, which must share
    /// one sampling rate.
    pub fn to_recording(&self, case_id: &str, file_id: &str) -> std::result::Result<EegRecording, String> {
        let h = &self.header;
        let picked: Vec<usize> = (0..h.signals.len()).filter(|&i| !h.signals[i].is_annotation()).collect();
        let Some(&first) = picked.first() else {
            return Err("file holds no signal channels".into());
        };
        let spr = h.signals[first].samples_per_record;
        if let Some(&odd) = picked.iter().find(|&&i| h.signals[i].samples_per_record != spr) {
            return Err(format!(
                "signal `{}` has {} samples per record, `{}` has {spr}",
                h.signals[odd].label, h.signals[odd].samples_per_record, h.signals[first].label
            ));
        }
        let n = spr * h.n_records;
        let mut data = Vec::with_capacity(picked.len() * n);
        for &i in &picked {
            let (gain, offset) = h.signals[i].calibration();
            data.extend(self.digital[i].iter().map(|&d| gain * f64::from(d) + offset));
        }
        let samples = Tensor::new(&[picked.len(), n], data).map_err(|e| e.to_string())?;
        Ok(EegRecording {
            case_id: case_id.into(),
            file_id: file_id.into(),
            channels: picked.iter().map(|&i| h.signals[i].label.clone()).collect(),
            fs: spr as f64 / h.record_duration_s,
            samples,
            bit_depth: 16,
        })
    }
}

/// Parses `bytes` and keeps the first 22 signal channels.
pub fn parse_recording(bytes: &[u8], case_id: &str, file_id: &str) -> std::result::Result<EegRecording, String> {
    let mut rec = parse_edf(bytes)?.to_recording(case_id, file_id)?;
    rec.select_channels(CHANNELS).map_err(|e| e.to_string())?;
    Ok(rec)
}

pub fn read_edf(path: &Path) -> Result<EdfFile> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_edf(&bytes).map_err(|d| Error::format(path, d))
}

pub fn write_edf(path: &Path, file: &EdfFile) -> Result<()> {
    std::fs::write(path, file.to_bytes()).map_err(|e| Error::io(path, e))
}
