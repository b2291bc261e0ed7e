//! Segmenter checkpoint file:
//!
//! ```text
//! b"PXCK" | version: u32 LE | header_len: u64 LE | header: JSON | tensor data: f32 LE
//! ```
//!
//! The header records the network configuration, free-form metadata and, per
//! parameter tensor, its name, shape and offset (in `f32` elements) into the
//! data section.

use std::path::Path;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Segmenter, SegmenterConfig};
use crate::nn::Module;

const MAGIC: &[u8; 4] = b"PXCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    model: String,
    config: SegmenterConfig,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

pub fn encode_segmenter(seg: &Segmenter, meta: &serde_json::Value) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut data: Vec<u8> = Vec::new();
    let mut offset = 0;
    seg.visit(&mut |p| {
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: p.shape.clone(),
            offset,
            len: p.value.len(),
        });
        offset += p.value.len();
        for v in &p.value {
            data.extend_from_slice(&v.to_le_bytes());
        }
    });
    let header = serde_json::to_vec(&Header {
        model: "segmenter".into(),
        config: seg.config().clone(),
        meta: meta.clone(),
        tensors,
    })?;
    let mut out = Vec::with_capacity(16 + header.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&data);
    Ok(out)
}

pub fn decode_segmenter(bytes: &[u8]) -> Result<(Segmenter, serde_json::Value)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let header_end = 16usize
        .checked_add(header_len)
        .filter(|e| *e <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[16..header_end])?;
    if header.model != "segmenter" {
        return Err(Error::Checkpoint(format!(
            "unexpected model kind `{}`",
            header.model
        )));
    }
    let data = &bytes[header_end..];
    let mut seg = Segmenter::new(
        header.config,
        &mut rand_chacha::ChaCha8Rng::seed_from_u64(0),
    )?;
    let mut expected = Vec::new();
    seg.visit(&mut |p| expected.push((p.name.clone(), p.shape.clone())));
    let stored: Vec<_> = header
        .tensors
        .iter()
        .map(|t| (t.name.clone(), t.shape.clone()))
        .collect();
    if stored != expected {
        return Err(bad(
            "parameter names or shapes do not match the configuration",
        ));
    }
    let mut result = Ok(());
    let mut i = 0;
    seg.visit_mut(&mut |p| {
        let t = &header.tensors[i];
        i += 1;
        let (start, end) = (t.offset * 4, (t.offset + t.len) * 4);
        if t.len != p.value.len() || end > data.len() {
            result = Err(Error::Checkpoint(format!(
                "tensor `{}` is truncated",
                t.name
            )));
            return;
        }
        for (v, chunk) in p.value.iter_mut().zip(data[start..end].chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
    });
    result?;
    Ok((seg, header.meta))
}

pub fn save_segmenter(path: &Path, seg: &Segmenter, meta: &serde_json::Value) -> Result<()> {
    std::fs::write(path, encode_segmenter(seg, meta)?).map_err(|e| Error::io(path, e))
}

pub fn load_segmenter(path: &Path) -> Result<(Segmenter, serde_json::Value)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_segmenter(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn round_trip_is_bit_exact() {
        let seg = Segmenter::new(
            SegmenterConfig::default(),
            &mut stream(4, Stream::SegmenterInit),
        )
        .unwrap();
        let meta = serde_json::json!({"phase": "pretrain", "iteration": 12});
        let bytes = encode_segmenter(&seg, &meta).unwrap();
        let (back, m) = decode_segmenter(&bytes).unwrap();
        assert_eq!(back.param_hash(), seg.param_hash());
        assert_eq!(m, meta);
        assert!(decode_segmenter(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode_segmenter(b"nope").is_err());
    }
}
