//! Versioned JSON checkpoint: config, vocabulary (with content hash), slot
//! dictionary, and all parameter tensors as base64 little-endian f32.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::params::{CvaeParams, BLOCK_NAMES};
use super::scalar::Scalar;
use super::CvaeConfig;
use crate::corpus::{SlotDictionary, Vocabulary};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorJson {
    rows: usize,
    cols: usize,
    data: String,
}

#[derive(Serialize, Deserialize)]
struct CheckpointJson {
    version: u32,
    config: CvaeConfig,
    vocab_sha256: String,
    vocab: Vocabulary,
    slots: SlotDictionary,
    tensors: BTreeMap<String, TensorJson>,
}

/// A loaded model ready for generation.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: CvaeConfig,
    pub params: CvaeParams<f32>,
    pub vocab: Vocabulary,
    pub slots: SlotDictionary,
}

pub fn save_checkpoint<S: Scalar>(
    path: &Path,
    cfg: &CvaeConfig,
    params: &CvaeParams<S>,
    vocab: &Vocabulary,
    slots: &SlotDictionary,
) -> Result<()> {
    let mut tensors = BTreeMap::new();
    for (name, block) in BLOCK_NAMES.iter().zip(params.blocks()) {
        let mut bytes = Vec::with_capacity(block.len() * 4);
        for &v in block.iter() {
            bytes.extend_from_slice(&(Scalar::to_double(v) as f32).to_le_bytes());
        }
        tensors.insert(
            (*name).to_string(),
            TensorJson {
                rows: block.nrows(),
                cols: block.ncols(),
                data: B64.encode(&bytes),
            },
        );
    }
    let doc = CheckpointJson {
        version: CHECKPOINT_VERSION,
        config: cfg.clone(),
        vocab_sha256: vocab.content_hash(),
        vocab: vocab.clone(),
        slots: slots.clone(),
        tensors,
    };
    let json = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::Checkpoint(format!("serialize: {e}")))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: CheckpointJson =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("parse: {e}")))?;
    if doc.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            doc.version
        )));
    }
    let mut vocab = doc.vocab;
    vocab.reindex();
    if vocab.content_hash() != doc.vocab_sha256 {
        return Err(Error::Checkpoint(
            "vocabulary content hash does not match the stored hash".into(),
        ));
    }
    doc.config.validate()?;
    let mut params = CvaeParams::<f32>::zeros(&doc.config, vocab.len());
    let mut blocks = params.blocks_mut();
    for (name, block) in BLOCK_NAMES.iter().zip(blocks.iter_mut()) {
        let tensor = doc
            .tensors
            .get(*name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if (tensor.rows, tensor.cols) != block.dim() {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has shape ({}, {}), expected {:?}",
                tensor.rows,
                tensor.cols,
                block.dim()
            )));
        }
        let bytes = B64
            .decode(&tensor.data)
            .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
        if bytes.len() != block.len() * 4 {
            return Err(Error::Checkpoint(format!(
                "tensor {name} holds {} bytes, expected {}",
                bytes.len(),
                block.len() * 4
            )));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        for (slot, v) in block.iter_mut().zip(values) {
            *slot = v;
        }
    }
    if !params.all_finite() {
        return Err(Error::Checkpoint("checkpoint contains non-finite values".into()));
    }
    Ok(Checkpoint {
        config: doc.config,
        params,
        vocab,
        slots: doc.slots,
    })
}
