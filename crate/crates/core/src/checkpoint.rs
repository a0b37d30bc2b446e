//! Versioned binary checkpoints.
//!
//! Layout (little-endian): magic `CURLCKPT`, `u32` version, `u32` length of
//! a JSON metadata block followed by the block, `u32` record count, then per
//! record `u32` name length, UTF-8 name, `u32` rank, `u32` dims and a
//! row-major `f32` payload.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::io::{from_json_str, write_atomic};
use crate::sampling::SamplerConfig;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CURLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub encoder: EncoderConfig,
    /// Sampler the parameters were trained with; inference reuses it.
    pub sampler: SamplerConfig,
    /// Last training phase applied (`init`, `pretrain`, `finetune_linear`, …).
    pub phase: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: EncoderParams,
}

impl Checkpoint {
    pub fn new(params: EncoderParams, sampler: SamplerConfig, phase: impl Into<String>) -> Self {
        Self {
            meta: CheckpointMeta { encoder: params.config.clone(), sampler, phase: phase.into() },
            params,
        }
    }
}

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let meta = serde_json::to_vec(&ck.meta).expect("metadata serializes");
    let tensors = ck.params.tensors();
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut buf, CHECKPOINT_VERSION as usize);
    put_u32(&mut buf, meta.len());
    buf.extend_from_slice(&meta);
    put_u32(&mut buf, tensors.len());
    for (name, t) in tensors {
        put_u32(&mut buf, name.len());
        buf.extend_from_slice(name.as_bytes());
        put_u32(&mut buf, t.shape.len());
        for &d in &t.shape {
            put_u32(&mut buf, d);
        }
        for &x in &t.data {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: Option<&'a Path>,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.path,
                self.pos as u64,
                format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn err(&self, at: usize, msg: impl Into<String>) -> Error {
        Error::format(self.path, at as u64, msg)
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: Option<&Path>) -> Result<Checkpoint> {
    let mut c = Cursor { bytes, pos: 0, path };
    if c.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(c.err(0, "bad magic, expected \"CURLCKPT\""));
    }
    let version = c.u32("version")? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version { expected: CHECKPOINT_VERSION, found: version });
    }
    let meta_len = c.u32("metadata length")?;
    let meta_at = c.pos;
    let meta_bytes = c.take(meta_len, "metadata")?;
    let meta_str = std::str::from_utf8(meta_bytes).map_err(|e| c.err(meta_at, e.to_string()))?;
    let meta: CheckpointMeta = from_json_str(meta_str)?;
    let mut params = EncoderParams::zeros(&meta.encoder)?;
    let n = c.u32("record count")?;
    let mut slots = params.tensors_mut();
    if n != slots.len() {
        return Err(c.err(c.pos - 4, format!("expected {} records, found {n}", slots.len())));
    }
    let mut seen = vec![false; slots.len()];
    for _ in 0..n {
        let at = c.pos;
        let len = c.u32("name length")?;
        let name = std::str::from_utf8(c.take(len, "name")?).map_err(|e| c.err(at, e.to_string()))?.to_string();
        let idx = slots
            .iter()
            .position(|(s, _)| *s == name)
            .ok_or_else(|| c.err(at, format!("unexpected record `{name}`")))?;
        if std::mem::replace(&mut seen[idx], true) {
            return Err(c.err(at, format!("duplicate record `{name}`")));
        }
        let rank = c.u32("rank")?;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("dims")?);
        }
        let t = &mut slots[idx].1;
        if shape != t.shape {
            return Err(c.err(at, format!("record `{name}` has shape {shape:?}, expected {:?}", t.shape)));
        }
        let payload = c.take(4 * t.data.len(), "payload")?;
        for (x, b) in t.data.iter_mut().zip(payload.chunks_exact(4)) {
            *x = f32::from_le_bytes(b.try_into().unwrap()) as f64;
        }
    }
    if c.pos != bytes.len() {
        return Err(c.err(c.pos, format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    drop(slots);
    Ok(Checkpoint { meta, params })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ck))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes, Some(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::VideoClip;

    fn ck() -> Checkpoint {
        let p = EncoderParams::init(&EncoderConfig { depth: 1, ..EncoderConfig::tiny() }, 3).unwrap();
        Checkpoint::new(p, SamplerConfig::default(), "init")
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = ck();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &c).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, c);
        let clip = VideoClip::zeros((8, 32, 32), 10.0).with_frames((0..8 * 32 * 32).map(|i| (i % 7) as f32 / 7.0).collect());
        let h0 = c.params.encode(&clip).unwrap();
        let h1 = back.params.encode(&clip).unwrap();
        assert_eq!(h0, h1);
    }

    #[test]
    fn version_and_magic_errors() {
        let mut b = encode_checkpoint(&ck());
        b[8..12].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(decode_checkpoint(&b, None), Err(Error::Version { expected: 1, found: 7 })));
        let mut b = encode_checkpoint(&ck());
        b[0] = b'X';
        assert!(matches!(decode_checkpoint(&b, None), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn truncation_and_trailing_bytes_are_located() {
        let b = encode_checkpoint(&ck());
        match decode_checkpoint(&b[..b.len() - 3], None) {
            Err(Error::Format { message, .. }) => assert!(message.contains("truncated payload"), "{message}"),
            other => panic!("{other:?}"),
        }
        let mut long = b.clone();
        long.push(0);
        assert!(matches!(decode_checkpoint(&long, None), Err(Error::Format { .. })));
    }
}
