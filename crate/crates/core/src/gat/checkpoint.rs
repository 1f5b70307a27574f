//! Binary checkpoint: `SACNCKPT` magic, little-endian `u64` header length,
//! JSON header, then every parameter value as little-endian `f64` in
//! row-major order.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{GatLayerParams, ModelParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SACNCKPT";
pub const CHECKPOINT_FORMAT: &str = "sacn-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub layer1_heads: usize,
    pub layer2_heads: usize,
    /// `(rows, cols)` per tensor in [`ModelParams::tensors`] order.
    pub shapes: Vec<(usize, usize)>,
    pub config_hash: String,
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &ModelParams, config_hash: &str) -> Result<()> {
    let path = path.as_ref();
    let tensors = params.tensors();
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.to_string(),
        layer1_heads: params.layer1.heads(),
        layer2_heads: params.layer2.heads(),
        shapes: tensors.iter().map(|t| t.dim()).collect(),
        config_hash: config_hash.to_string(),
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");
    let mut bytes = Vec::with_capacity(16 + header_json.len() + 8 * params.parameter_count());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for t in tensors {
        for v in t.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelParams, CheckpointHeader)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body_start = 16 + header_len;
    if bytes.len() < body_start {
        return Err(bad("truncated header"));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[16..body_start]).map_err(|e| bad(&e.to_string()))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(bad(&format!("unsupported format {}", header.format)));
    }
    let expected = 2 * (header.layer1_heads + header.layer2_heads);
    if header.shapes.len() != expected || header.layer1_heads == 0 || header.layer2_heads == 0 {
        return Err(bad("shape list does not match head counts"));
    }
    let total: usize = header.shapes.iter().map(|(r, c)| r * c).sum();
    if bytes.len() != body_start + 8 * total {
        return Err(bad("value count does not match shapes"));
    }
    let mut values = bytes[body_start..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut tensors: Vec<Array2<f64>> = header
        .shapes
        .iter()
        .map(|&(r, c)| Array2::from_shape_fn((r, c), |_| 0.0))
        .collect();
    for t in tensors.iter_mut() {
        for v in t.iter_mut() {
            *v = values.next().expect("length checked");
        }
    }
    let mut it = tensors.into_iter();
    let mut take = |n: usize| (&mut it).take(n).collect::<Vec<_>>();
    let (h1, h2) = (header.layer1_heads, header.layer2_heads);
    let layer1 = GatLayerParams {
        weights: take(h1),
        attention: take(h1),
    };
    let layer2 = GatLayerParams {
        weights: take(h2),
        attention: take(h2),
    };
    Ok((ModelParams { layer1, layer2 }, header))
}
