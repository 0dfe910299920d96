//! Model checkpoints: a text header followed by named tensors.
//!
//! ```text
//! SPKF-CHECKPOINT 1
//! key=value            (model configuration, then run metadata)
//! ...
//! entries=N
//!                      (blank line)
//! N × { u16 LE name length, UTF-8 name, SPKT tensor }
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use spkf_core::{ModelConfig, SpikingConformer, Tensor};

use crate::config::{model_from_pairs, model_to_text, parse_pairs};
use crate::container::{read_tensor, write_tensor};
use crate::error::{Error, Result};

const FIRST_LINE: &str = "SPKF-CHECKPOINT 1";

/// Run metadata stored next to the weights.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub case: String,
    pub fold: usize,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: SpikingConformer,
    pub meta: CheckpointMeta,
}

pub fn encode(model: &SpikingConformer, meta: &CheckpointMeta) -> Vec<u8> {
    let entries = model.state_dict();
    let mut header = format!("{FIRST_LINE}\n");
    header += &model_to_text(&model.config);
    let _ = writeln!(header, "case={}", meta.case);
    let _ = writeln!(header, "fold={}", meta.fold);
    let _ = writeln!(header, "seed={}", meta.seed);
    let _ = writeln!(header, "entries={}\n", entries.len());
    let mut out = header.into_bytes();
    for (name, t) in &entries {
        let len = u16::try_from(name.len()).expect("parameter names are short");
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        write_tensor(&mut out, t).expect("writing to a Vec cannot fail");
    }
    out
}

pub fn decode(bytes: &[u8], what: &Path) -> Result<Checkpoint> {
    let split = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| Error::format(what, "checkpoint header is not terminated"))?;
    let header =
        std::str::from_utf8(&bytes[..split]).map_err(|_| Error::format(what, "checkpoint header is not UTF-8"))?;
    let (first, rest) = header.split_once('\n').unwrap_or((header, ""));
    if first != FIRST_LINE {
        return Err(Error::format(what, "not an SPKF checkpoint"));
    }
    let mut pairs = parse_pairs(rest).map_err(|e| Error::format(what, e.to_string()))?;
    let mut take = |k: &str| pairs.remove(k).ok_or_else(|| Error::format(what, format!("header lacks `{k}`")));
    let bad = |k: &str| Error::format(what, format!("header field `{k}` is malformed"));
    let count: usize = take("entries")?.parse().map_err(|_| bad("entries"))?;
    let meta = CheckpointMeta {
        case: take("case")?,
        fold: take("fold")?.parse().map_err(|_| bad("fold"))?,
        seed: take("seed")?.parse().map_err(|_| bad("seed"))?,
    };
    let config = model_from_pairs(&pairs).map_err(|e| Error::format(what, e.to_string()))?;

    let mut body = &bytes[split + 2..];
    let mut entries: Vec<(String, Tensor)> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut len = [0u8; 2];
        body.read_exact(&mut len).map_err(|_| Error::format(what, "truncated checkpoint"))?;
        let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
        body.read_exact(&mut name).map_err(|_| Error::format(what, "truncated checkpoint"))?;
        let name = String::from_utf8(name).map_err(|_| Error::format(what, "entry name is not UTF-8"))?;
        entries.push((name, read_tensor(&mut body, what)?));
    }
    if !body.is_empty() {
        return Err(Error::format(what, "trailing bytes after the last entry"));
    }
    let model = SpikingConformer::from_state_dict(&config, &entries).map_err(|e| Error::format(what, e.to_string()))?;
    Ok(Checkpoint { model, meta })
}

pub fn save(path: &Path, model: &SpikingConformer, meta: &CheckpointMeta) -> Result<()> {
    std::fs::write(path, encode(model, meta)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// The model configuration a checkpoint header describes, without reading the weights.
pub fn peek_config(path: &Path) -> Result<ModelConfig> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let end = bytes.windows(2).position(|w| w == b"\n\n").unwrap_or(bytes.len());
    let text = String::from_utf8_lossy(&bytes[..end]);
    let mut pairs: BTreeMap<String, String> = parse_pairs(text.split_once('\n').map_or("", |(_, r)| r))
        .map_err(|e| Error::format(path, e.to_string()))?;
    for k in ["case", "fold", "seed", "entries"] {
        pairs.remove(k);
    }
    model_from_pairs(&pairs).map_err(|e| Error::format(path, e.to_string()))
}
