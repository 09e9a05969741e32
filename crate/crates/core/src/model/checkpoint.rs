//! Flat binary checkpoints.
//!
//! Layout: the magic bytes `ADK1`, a little-endian `u32` header length, a
//! UTF-8 JSON header, then every parameter block as little-endian `f64`
//! values in the order listed in the header.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Model, ModelConfig, Params, Vocab};

pub const MAGIC: &[u8; 4] = b"ADK1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("malformed header: {0}")]
    Header(String),
    #[error("block `{name}` has {found} values, expected {expected}")]
    BlockSize { name: String, expected: usize, found: usize },
    #[error("checkpoint truncated")]
    Truncated,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
struct BlockInfo {
    name: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vec<String>,
    blocks: Vec<BlockInfo>,
}

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let header = Header {
        config: model.config.clone(),
        vocab: model.vocab.tokens().to_vec(),
        blocks: model
            .params
            .blocks()
            .iter()
            .map(|(name, _, v)| BlockInfo {
                name: name.to_string(),
                len: v.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serialises");
    let mut out = Vec::with_capacity(8 + json.len() + 8 * model.params.count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, v) in model.params.blocks() {
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model, CheckpointError> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let json = bytes.get(8..8 + hlen).ok_or(CheckpointError::Truncated)?;
    let header: Header = serde_json::from_slice(json).map_err(|e| CheckpointError::Header(e.to_string()))?;
    header.config.validate().map_err(|e| CheckpointError::Header(e.to_string()))?;
    let vocab = Vocab::from_tokens(header.vocab).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let mut params = Params::init(&header.config, vocab.len(), 0);
    let mut body = &bytes[8 + hlen..];
    let blocks = params.blocks_mut();
    if blocks.len() != header.blocks.len() {
        return Err(CheckpointError::Header(format!(
            "expected {} blocks, found {}",
            blocks.len(),
            header.blocks.len()
        )));
    }
    for ((name, _, dst), info) in blocks.into_iter().zip(&header.blocks) {
        if info.name != name {
            return Err(CheckpointError::Header(format!("expected block `{name}`, found `{}`", info.name)));
        }
        if info.len != dst.len() {
            return Err(CheckpointError::BlockSize {
                name: name.to_string(),
                expected: dst.len(),
                found: info.len,
            });
        }
        for x in dst.iter_mut() {
            let (head, rest) = body.split_first_chunk::<8>().ok_or(CheckpointError::Truncated)?;
            *x = f64::from_le_bytes(*head);
            body = rest;
        }
    }
    if !body.is_empty() {
        return Err(CheckpointError::Header("trailing bytes after the last block".into()));
    }
    Ok(Model {
        config: header.config,
        vocab,
        params,
    })
}

pub fn write_checkpoint(path: &Path, model: &Model) -> Result<(), CheckpointError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&to_bytes(model))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Model, CheckpointError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}
