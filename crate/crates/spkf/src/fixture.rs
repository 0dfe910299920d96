//! Synthetic recordings in the CHB-MIT layout: 256 Hz EDF files whose
//! seizures are a 10 Hz rhythm over background noise.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spkf_core::data::{SeizureAnnotation, SAMPLE_RATE};

use crate::edf::{write_edf, EdfFile};
use crate::error::Result;
use crate::tables::write_annotations;

/// Physical range in microvolts; one digital step is 0.1 uV.
pub const PHYSICAL_RANGE: (f64, f64) = (-3276.8, 3276.7);

#[derive(Clone, Debug, PartialEq)]
pub struct RecordingSpec {
    pub file_id: String,
    pub channels: usize,
    pub duration_s: usize,
    /// `(onset_s, offset_s)` pairs.
    pub seizures: Vec<(f64, f64)>,
    pub seed: u64,
}

const NOISE_UV: f64 = 20.0;
const RHYTHM_UV: f64 = 80.0;
const RHYTHM_HZ: f64 = 10.0;

/// Standard 10-20 bipolar labels in CHB-MIT order, padded with numbered extras.
pub fn channel_labels(n: usize) -> Vec<String> {
    const MONTAGE: [&str; 23] = [
        "FP1-F7", "F7-T7", "T7-P7", "P7-O1", "FP1-F3", "F3-C3", "C3-P3", "P3-O1", "FP2-F4", "F4-C4", "C4-P4", "P4-O2",
        "FP2-F8", "F8-T8", "T8-P8", "P8-O2", "FZ-CZ", "CZ-PZ", "P7-T7", "T7-FT9", "FT9-FT10", "FT10-T8", "T8-P8-1",
    ];
    (0..n)
        .map(|i| MONTAGE.get(i).map_or_else(|| format!("EXTRA-{i}"), |s| (*s).to_string()))
        .collect()
}

fn quantize(uv: f64) -> i16 {
    (uv * 10.0).round().clamp(f64::from(i16::MIN), f64::from(i16::MAX)) as i16
}

pub fn synthetic_edf(spec: &RecordingSpec) -> EdfFile {
    let fs = SAMPLE_RATE as usize;
    let n = spec.duration_s * fs;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let digital = (0..spec.channels)
        .map(|c| {
            let phase = c as f64 * 0.3;
            (0..n)
                .map(|i| {
                    let t = i as f64 / SAMPLE_RATE;
                    let mut v = NOISE_UV * (rng.random::<f64>() * 2.0 - 1.0) * 3f64.sqrt();
                    if spec.seizures.iter().any(|&(on, off)| t >= on && t < off) {
                        v += RHYTHM_UV * (std::f64::consts::TAU * RHYTHM_HZ * t + phase).sin();
                    }
                    quantize(v)
                })
                .collect()
        })
        .collect();
    EdfFile::from_digital(&channel_labels(spec.channels), fs, 1.0, PHYSICAL_RANGE, digital)
        .expect("fixture signals are consistent")
}

/// Writes one EDF file per spec plus `annotations.csv` into `dir`.
pub fn write_corpus(dir: &Path, specs: &[RecordingSpec]) -> Result<Vec<SeizureAnnotation>> {
    std::fs::create_dir_all(dir).map_err(|e| crate::error::Error::io(dir, e))?;
    let mut anns = Vec::new();
    for s in specs {
        write_edf(&dir.join(format!("{}.edf", s.file_id)), &synthetic_edf(s))?;
        anns.extend(s.seizures.iter().map(|&(onset_s, offset_s)| SeizureAnnotation {
            file_id: s.file_id.clone(),
            onset_s,
            offset_s,
        }));
    }
    write_annotations(&dir.join("annotations.csv"), &anns)?;
    Ok(anns)
}

/// A small corpus: each case has one recording of `duration_s` seconds with
/// one seizure in its middle third.
pub fn small_corpus(cases: usize, duration_s: usize, seed: u64) -> Vec<RecordingSpec> {
    (0..cases)
        .map(|c| {
            let third = duration_s as f64 / 3.0;
            RecordingSpec {
                file_id: format!("chb{:02}_01", c + 1),
                channels: 23,
                duration_s,
                seizures: vec![(third.round(), (third + third / 2.0).round())],
                seed: seed.wrapping_add(c as u64),
            }
        })
        .collect()
}
