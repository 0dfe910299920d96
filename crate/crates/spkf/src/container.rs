//! The `SPKT` tensor container.
//!
//! Layout, all integers little-endian:
//!
//! | bytes      | field                      |
//! |------------|----------------------------|
//! | 4          | magic `SPKT`               |
//! | 2          | version (`u16`, currently 1) |
//! | 2          | rank (`u16`)               |
//! | 8 × rank   | shape (`u64` each)         |
//! | 8 × numel  | data (`f64` each, row-major) |

use std::io::{Read, Write};
use std::path::Path;

use spkf_core::Tensor;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SPKT";
pub const VERSION: u16 = 1;

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let rank = u16::try_from(t.shape().len()).map_err(|_| std::io::Error::other("tensor rank exceeds u16"))?;
    w.write_all(&rank.to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.len() * 8);
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * t.shape().len() + 8 * t.len());
    write_tensor(&mut out, t).expect("writing to a Vec cannot fail");
    out
}

/// Reads one tensor; `what` names the source in errors.
pub fn read_tensor<R: Read>(r: &mut R, what: &Path) -> Result<Tensor> {
    let truncated = |e: std::io::Error| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format(what, "truncated tensor container")
        } else {
            Error::io(what, e)
        }
    };
    let mut head = [0u8; 8];
    r.read_exact(&mut head).map_err(truncated)?;
    if &head[..4] != MAGIC {
        return Err(Error::format(what, "not an SPKT tensor container"));
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != VERSION {
        return Err(Error::format(what, format!("unsupported SPKT version {version}")));
    }
    let rank = u16::from_le_bytes([head[6], head[7]]) as usize;
    let mut shape = Vec::with_capacity(rank);
    let mut word = [0u8; 8];
    for _ in 0..rank {
        r.read_exact(&mut word).map_err(truncated)?;
        let d = usize::try_from(u64::from_le_bytes(word)).map_err(|_| Error::format(what, "dimension overflows usize"))?;
        shape.push(d);
    }
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(8).map(|_| n))
        .ok_or_else(|| Error::format(what, "tensor size overflows"))?;
    let mut bytes = Vec::new();
    r.take(numel as u64 * 8).read_to_end(&mut bytes).map_err(|e| Error::io(what, e))?;
    if bytes.len() != numel * 8 {
        return Err(Error::format(what, "truncated tensor container"));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(Tensor::new(&shape, data)?)
}

/// Decodes a buffer holding exactly one tensor.
pub fn decode(bytes: &[u8], what: &Path) -> Result<Tensor> {
    let mut cursor = bytes;
    let t = read_tensor(&mut cursor, what)?;
    if !cursor.is_empty() {
        return Err(Error::format(what, format!("{} trailing bytes after tensor", cursor.len())));
    }
    Ok(t)
}

pub fn save(path: &Path, t: &Tensor) -> Result<()> {
    std::fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
