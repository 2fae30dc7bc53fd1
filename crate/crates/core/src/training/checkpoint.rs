//! Binary checkpoint format.
//!
//! ```text
//! magic "ADJSCCCK" | u32 version
//! u32 len | ArchSpec TOML | 32-byte ArchSpec fingerprint
//! u32 len | metadata TOML
//! u32 tensor count, then per tensor:
//!     u16 name len | name | u8 ndim | u32 dims... | f32 LE values
//! 32-byte SHA-256 of everything above
//! ```
//!
//! All integers are little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::SnrDistribution;
use crate::codec::{ArchSpec, Model, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

const MAGIC: &[u8; 8] = b"ADJSCCCK";
pub const FORMAT_VERSION: u32 = 1;

/// Training provenance stored next to the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub epochs_completed: u64,
    pub steps_completed: u64,
    pub snr_dist: SnrDistribution,
    pub seed: u64,
}

/// A loaded checkpoint. Parameters are stored as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchSpec,
    pub params: ModelParams<f32>,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn into_model(self) -> Result<Model<f32>> {
        Model::new(self.arch, self.params)
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_block(buf: &mut Vec<u8>, bytes: &[u8]) {
    put_u32(buf, bytes.len() as u32);
    buf.extend_from_slice(bytes);
}

/// Serializes a model to checkpoint bytes.
pub fn encode_checkpoint<T: Scalar>(model: &Model<T>, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, FORMAT_VERSION);
    put_block(&mut buf, model.arch().to_text().as_bytes());
    buf.extend_from_slice(&model.arch().fingerprint());
    let meta_text =
        toml::to_string(meta).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
    put_block(&mut buf, meta_text.as_bytes());
    let tensors = model.params().tensors();
    put_u32(&mut buf, tensors.len() as u32);
    for (name, p) in tensors {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(p.shape.len() as u8);
        for &d in &p.shape {
            put_u32(&mut buf, d as u32);
        }
        for &v in &p.data {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("unexpected end of data at {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn text(&mut self) -> Result<&'a str> {
        let n = self.u32()? as usize;
        std::str::from_utf8(self.take(n)?).map_err(|_| Error::Checkpoint("text block is not UTF-8".into()))
    }
}

/// Parses checkpoint bytes, verifying the checksum, format version, the
/// architecture fingerprint and every tensor shape.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint("checksum mismatch (truncated or corrupt file)".into()));
    }
    let mut r = Reader { bytes: body, pos: MAGIC.len() };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let arch = ArchSpec::from_text(r.text()?)?;
    if r.take(32)? != arch.fingerprint() {
        return Err(Error::Checkpoint("architecture fingerprint mismatch".into()));
    }
    let meta: CheckpointMeta = toml::from_str(r.text()?)
        .map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
    let mut params = ModelParams::<f32>::zeros(&arch);
    let count = r.u32()? as usize;
    let mut slots = params.tensors_mut();
    if count != slots.len() {
        return Err(Error::Checkpoint(format!(
            "{count} tensors stored, architecture has {}",
            slots.len()
        )));
    }
    for (name, p) in slots.iter_mut() {
        let len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
        let stored = std::str::from_utf8(r.take(len)?).unwrap_or("");
        if stored != name {
            return Err(Error::Checkpoint(format!("expected tensor {name}, found {stored}")));
        }
        let ndim = r.take(1)?[0] as usize;
        let dims = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if dims != p.shape {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has shape {dims:?}, expected {:?}",
                p.shape
            )));
        }
        let raw = r.take(4 * p.data.len())?;
        for (v, b) in p.data.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes(b.try_into().expect("4 bytes"));
        }
    }
    drop(slots);
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after tensors".into()));
    }
    Ok(Checkpoint { arch, params, meta })
}

/// Writes a checkpoint atomically (temporary file, then rename).
pub fn save_checkpoint<T: Scalar>(path: &Path, model: &Model<T>, meta: &CheckpointMeta) -> Result<()> {
    let bytes = encode_checkpoint(model, meta)?;
    let tmp = path.with_extension("partial");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Loads a checkpoint and requires it to match `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &ArchSpec) -> Result<Checkpoint> {
    let ck = load_checkpoint(path)?;
    if ck.arch.fingerprint() != expected.fingerprint() {
        return Err(Error::Checkpoint(format!(
            "{}: stored architecture '{}' does not match expected '{}'",
            path.display(),
            ck.arch.name,
            expected.name
        )));
    }
    Ok(ck)
}
