//! Binary checkpoint: `BFFC`, version, JSON header, little-endian f64
//! tensors in declaration order, CRC32 of everything before it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::param_specs;
use super::{ModelConfig, ModelError, ModelParams};
use crate::numerics::Matrix;

const MAGIC: &[u8; 4] = b"BFFC";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    frozen: Vec<String>,
}

fn err(m: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(m.into())
}

pub fn write_checkpoint(params: &ModelParams) -> Vec<u8> {
    let header = Header {
        config: params.config().clone(),
        frozen: params.frozen_names(),
    };
    let json = serde_json::to_vec(&header).expect("config serializes");
    let mut out = Vec::with_capacity(16 + json.len() + 8 * params.scalar_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let store = params.store();
    for id in store.ids() {
        for x in store.get(id).as_slice() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn read_checkpoint(buf: &[u8]) -> Result<ModelParams, ModelError> {
    if buf.len() < 20 || &buf[..4] != MAGIC {
        return Err(err("bad magic"));
    }
    let (body, tail) = buf.split_at(buf.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().expect("4 bytes")) {
        return Err(err("checksum mismatch"));
    }
    let version = u32::from_le_bytes(body[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(err(format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(body[8..16].try_into().expect("8 bytes")) as usize;
    let json = body.get(16..16usize.saturating_add(hlen)).ok_or_else(|| err("truncated header"))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| err(format!("header: {e}")))?;
    header.config.validate()?;
    let mut data = &body[16 + hlen..];
    let specs = param_specs(&header.config);
    let expected: usize = specs.iter().map(|s| s.rows * s.cols).sum();
    if data.len() != 8 * expected {
        return Err(err(format!(
            "payload holds {} bytes, config needs {}",
            data.len(),
            8 * expected
        )));
    }
    let mut values = Vec::with_capacity(specs.len());
    for s in &specs {
        let n = s.rows * s.cols;
        let (chunk, rest) = data.split_at(8 * n);
        data = rest;
        let v = chunk
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        values.push(Matrix::from_vec(s.rows, s.cols, v)?);
    }
    ModelParams::from_values(header.config, values, &header.frozen)
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<(), ModelError> {
    fs::write(path, write_checkpoint(params)).map_err(|e| err(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams, ModelError> {
    let buf = fs::read(path).map_err(|e| err(format!("{}: {e}", path.display())))?;
    read_checkpoint(&buf)
}
