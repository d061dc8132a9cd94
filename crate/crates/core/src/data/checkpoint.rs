//! Checkpoint layout: one line of JSON header terminated by `\n`, then
//! every parameter as little-endian `f64` values in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{EgatError, Result};
use crate::matrix::Matrix;
use crate::model::{Model, ModelConfig, NodeClassifier};

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT: &str = "egat-checkpoint";

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: (usize, usize),
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    config: ModelConfig,
    node_in: usize,
    edge_in: usize,
    params: Vec<Entry>,
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let header = Header {
        format: FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config: model.config().clone(),
        node_in: model.node_in(),
        edge_in: model.edge_in(),
        params: model
            .manifest()
            .into_iter()
            .map(|(name, shape)| Entry { name, shape })
            .collect(),
    };
    let mut bytes = serde_json::to_vec(&header).map_err(|e| EgatError::json(path, e))?;
    bytes.push(b'\n');
    for p in model.parameters() {
        for v in p.value().as_slice() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| EgatError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| EgatError::io(path, e))?;
    let corrupt = |msg: String| EgatError::CorruptCheckpoint(format!("{}: {msg}", path.display()));
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| corrupt("missing header terminator".into()))?;
    let raw: serde_json::Value =
        serde_json::from_slice(&bytes[..split]).map_err(|e| corrupt(format!("unreadable header: {e}")))?;
    if raw.get("format").and_then(|f| f.as_str()) != Some(FORMAT) {
        return Err(corrupt("not an egat checkpoint".into()));
    }
    let version = raw
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| corrupt("header has no version".into()))?;
    if version != u64::from(CHECKPOINT_VERSION) {
        return Err(EgatError::CheckpointVersion {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            expected: CHECKPOINT_VERSION,
        });
    }
    let header: Header = serde_json::from_value(raw).map_err(|e| corrupt(format!("bad header: {e}")))?;
    let mut model = Model::init(header.config, header.node_in, header.edge_in)
        .map_err(|e| corrupt(format!("header describes no valid model: {e}")))?;
    let manifest = model.manifest();
    if manifest.len() != header.params.len()
        || manifest
            .iter()
            .zip(&header.params)
            .any(|((name, shape), e)| *name != e.name || *shape != e.shape)
    {
        return Err(corrupt("parameter manifest does not match the configuration".into()));
    }
    let payload = &bytes[split + 1..];
    let expected: usize = manifest.iter().map(|(_, (r, c))| r * c * 8).sum();
    if payload.len() != expected {
        return Err(corrupt(format!("payload has {} bytes, expected {expected}", payload.len())));
    }
    let mut values = Vec::with_capacity(manifest.len());
    let mut chunks = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    for (_, (r, c)) in &manifest {
        let data: Vec<f64> = chunks.by_ref().take(r * c).collect();
        values.push(Matrix::from_vec(*r, *c, data)?);
    }
    model.load_values(values)?;
    Ok(model)
}
