//! Weight files: `REMU` magic, u32 version, u32 header length, JSON header,
//! then every tensor as raw little-endian f64 in declared order. All integers
//! are little-endian.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;
use crate::nn::unet::{UNetConfig, UNetParams};

pub const MAGIC: &[u8; 4] = b"REMU";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: UNetConfig,
    seed: u64,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    metadata: serde_json::Value,
}

pub fn encode_params(params: &UNetParams, metadata: &serde_json::Value) -> Result<Vec<u8>> {
    let header = Header {
        config: params.config,
        seed: params.seed,
        tensors: params.config.layout().into_iter().map(|(name, shape)| TensorEntry { name, shape }).collect(),
        metadata: metadata.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + json.len() + 8 * params.num_parameters());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in &params.tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_params(bytes: &[u8]) -> std::result::Result<(UNetParams, serde_json::Value), String> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err("missing REMU magic".into());
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(format!("unsupported weight file version {version}"));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = bytes.get(12..12 + hlen).ok_or("truncated header")?;
    let header: Header = serde_json::from_slice(body).map_err(|e| format!("bad header: {e}"))?;
    let layout = header.config.layout();
    if layout.len() != header.tensors.len()
        || layout.iter().zip(&header.tensors).any(|((n, s), e)| *n != e.name || *s != e.shape)
    {
        return Err("tensor table does not match the declared config".into());
    }
    let mut pos = 12 + hlen;
    let mut tensors = Vec::with_capacity(layout.len());
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        let raw = bytes.get(pos..pos + 8 * n).ok_or_else(|| format!("truncated tensor {}", entry.name))?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push(Tensor::from_vec(&entry.shape, data).map_err(|e| e.to_string())?);
        pos += 8 * n;
    }
    if pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - pos));
    }
    let params = UNetParams::from_tensors(header.config, header.seed, tensors).map_err(|e| e.to_string())?;
    Ok((params, header.metadata))
}

pub fn save_params(path: &Path, params: &UNetParams, metadata: &serde_json::Value) -> Result<()> {
    fs::write(path, encode_params(params, metadata)?).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path) -> Result<(UNetParams, serde_json::Value)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_params(&bytes).map_err(|reason| Error::malformed(path, reason))
}
