//! Ingested datasets on disk.
//!
//! ```text
//! <dir>/manifest.csv            segment_id,file_id,start_sample,label,fold
//! <dir>/dataset.conf            effective run configuration of the ingest
//! <dir>/recordings/<id>.spkt    standardized [22, n_samples] recording
//! ```
//!
//! Segments are windows into the stored recordings, read on demand.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};

use spkf_core::data::{Fold, Label, SegmentSource};

use crate::config::RunConfig;
use crate::container::{MAGIC, VERSION};
use crate::error::{Error, Result};
use crate::tables::{case_of, read_manifest, ManifestRow};

pub const MANIFEST: &str = "manifest.csv";
pub const CONFIG: &str = "dataset.conf";
pub const RECORDINGS: &str = "recordings";

pub fn recording_path(dir: &Path, file_id: &str) -> PathBuf {
    dir.join(RECORDINGS).join(format!("{file_id}.spkt"))
}

#[derive(Clone, Debug)]
struct StoredRecording {
    path: PathBuf,
    channels: usize,
    samples: usize,
    /// Byte offset of the first value.
    data_offset: u64,
}

fn probe(path: &Path) -> Result<StoredRecording> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = [0u8; 24];
    f.read_exact(&mut head).map_err(|_| Error::format(path, "truncated recording"))?;
    let rank = u16::from_le_bytes([head[6], head[7]]);
    if &head[..4] != MAGIC || u16::from_le_bytes([head[4], head[5]]) != VERSION || rank != 2 {
        return Err(Error::format(path, "expected a rank-2 SPKT recording"));
    }
    let dim = |i: usize| u64::from_le_bytes(head[8 + 8 * i..16 + 8 * i].try_into().expect("8 bytes")) as usize;
    let (channels, samples) = (dim(0), dim(1));
    let len = f.metadata().map_err(|e| Error::io(path, e))?.len();
    if len != 24 + 8 * (channels * samples) as u64 {
        return Err(Error::format(path, "recording size does not match its shape"));
    }
    Ok(StoredRecording {
        path: path.to_path_buf(),
        channels,
        samples,
        data_offset: 24,
    })
}

pub struct DiskDataset {
    pub dir: PathBuf,
    pub rows: Vec<ManifestRow>,
    pub config: RunConfig,
    window: usize,
    channels: usize,
    recordings: BTreeMap<String, StoredRecording>,
}

impl DiskDataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let config = RunConfig::load(&dir.join(CONFIG))?;
        let rows = read_manifest(&dir.join(MANIFEST))?;
        if rows.is_empty() {
            return Err(Error::format(dir.join(MANIFEST), "manifest lists no segments"));
        }
        let window = config.model.sample_len;
        let mut recordings = BTreeMap::new();
        for r in &rows {
            if !recordings.contains_key(&r.file_id) {
                recordings.insert(r.file_id.clone(), probe(&recording_path(dir, &r.file_id))?);
            }
            let rec = &recordings[&r.file_id];
            if r.start_sample + window > rec.samples {
                return Err(Error::format(
                    dir.join(MANIFEST),
                    format!("segment {} runs past the end of `{}`", r.segment_id, r.file_id),
                ));
            }
        }
        let channels = recordings.values().next().map_or(0, |r| r.channels);
        if recordings.values().any(|r| r.channels != channels) {
            return Err(Error::format(dir, "recordings differ in channel count"));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            rows,
            config,
            window,
            channels,
            recordings,
        })
    }

    /// Folds by manifest `fold` column within each group, in group order
    /// (cases sorted by name; one group `all` when pooled).
    pub fn folds(&self, pooled: bool) -> Vec<(String, usize, Fold)> {
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, r) in self.rows.iter().enumerate() {
            let g = if pooled { "all" } else { case_of(&r.file_id) };
            groups.entry(g.to_string()).or_default().push(i);
        }
        let mut out = Vec::new();
        for (group, idx) in groups {
            let max_fold = idx.iter().map(|&i| self.rows[i].fold).max().unwrap_or(0);
            for f in 0..=max_fold {
                let (test, train): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.rows[i].fold == f);
                if !test.is_empty() {
                    out.push((group.clone(), f, Fold { train, test }));
                }
            }
        }
        out
    }
}

impl SegmentSource for DiskDataset {
    fn len(&self) -> usize {
        self.rows.len()
    }

    fn channels(&self) -> usize {
        self.channels
    }

    fn segment_len(&self) -> usize {
        self.window
    }

    fn label(&self, i: usize) -> Label {
        self.rows[i].label
    }

    fn load(&self, i: usize, out: &mut [f64]) -> spkf_core::Result<()> {
        let fail = |detail: String| spkf_core::Error::InvalidArgument { op: "load", detail };
        let row = self.rows.get(i).ok_or_else(|| fail(format!("segment {i} out of range")))?;
        let rec = &self.recordings[&row.file_id];
        if out.len() != rec.channels * self.window {
            return Err(fail(format!("buffer of {} values for a {}x{} segment", out.len(), rec.channels, self.window)));
        }
        let io = |e: std::io::Error| fail(format!("{}: {e}", rec.path.display()));
        let mut f = File::open(&rec.path).map_err(io)?;
        let mut bytes = vec![0u8; 8 * self.window];
        for (c, dst) in out.chunks_mut(self.window).enumerate() {
            let at = rec.data_offset + 8 * (c * rec.samples + row.start_sample) as u64;
            f.seek(SeekFrom::Start(at)).map_err(io)?;
            f.read_exact(&mut bytes).map_err(io)?;
            for (v, b) in dst.iter_mut().zip(bytes.chunks_exact(8)) {
                *v = f64::from_le_bytes(b.try_into().expect("8 bytes"));
            }
        }
        Ok(())
    }
}
