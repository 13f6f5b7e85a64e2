//! Single-file model checkpoints.
//!
//! Layout: the 8-byte magic `NPVPCKPT`, a little-endian `u64` header length,
//! the JSON header, then raw little-endian `f32` blocks. Optimizer moments are
//! stored as blocks named `opt.m/<param>` and `opt.v/<param>`. The header
//! carries a SHA-256 of the payload; nothing is built until it checks out.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ModelConfig, Stage, TrainConfig};
use crate::error::{Error, Result};
use crate::model::Npvp;
use crate::optim::{AdamW, SlotState};
use crate::training::RngState;

pub const MAGIC: &[u8; 8] = b"NPVPCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const MOMENT1: &str = "opt.m/";
const MOMENT2: &str = "opt.v/";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: u64,
    /// Length in bytes.
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSlot {
    pub name: String,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub stage: Stage,
    pub model: ModelConfig,
    pub train: Option<TrainConfig>,
    pub step: u64,
    pub rng: RngState,
    pub payload_sha256: String,
    pub blocks: Vec<BlockInfo>,
    pub optimizer: Vec<OptimizerSlot>,
}

/// What a checkpoint records besides tensors.
#[derive(Debug, Clone)]
pub struct CheckpointMeta {
    pub stage: Stage,
    pub train: Option<TrainConfig>,
    pub step: u64,
    pub rng: RngState,
}

pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: Npvp,
    pub optimizer: Vec<SlotState>,
}

fn tensor_bytes(t: &Tensor) -> Result<Vec<u8>> {
    let v: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    Ok(v.iter().flat_map(|x| x.to_le_bytes()).collect())
}

/// Write `model` (and optionally its optimizer) to `path` atomically.
pub fn save_checkpoint(
    path: &Path,
    model: &Npvp,
    optimizer: Option<&AdamW>,
    meta: &CheckpointMeta,
) -> Result<()> {
    let mut payload = Vec::new();
    let mut blocks = Vec::new();
    let mut push = |name: String, t: &Tensor| -> Result<()> {
        let bytes = tensor_bytes(t)?;
        blocks.push(BlockInfo {
            name,
            shape: t.dims().to_vec(),
            offset: payload.len() as u64,
            len: bytes.len() as u64,
        });
        payload.extend_from_slice(&bytes);
        Ok(())
    };
    for (name, var) in model.var_store().vars() {
        push(name.clone(), var.as_tensor())?;
    }
    let mut slots = Vec::new();
    if let Some(opt) = optimizer {
        for s in opt.export_state() {
            push(format!("{MOMENT1}{}", s.name), &s.m)?;
            push(format!("{MOMENT2}{}", s.name), &s.v)?;
            slots.push(OptimizerSlot {
                name: s.name,
                steps: s.steps,
            });
        }
    }
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        stage: meta.stage,
        model: model.config().clone(),
        train: meta.train.clone(),
        step: meta.step,
        rng: meta.rng,
        payload_sha256: hex::encode(Sha256::digest(&payload)),
        blocks,
        optimizer: slots,
    };
    let header_bytes = serde_json::to_vec(&header)?;

    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(MAGIC)?;
        f.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        f.write_all(&header_bytes)?;
        f.write_all(&payload)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Parse and verify the header and payload without building a model.
pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, Vec<u8>)> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::CorruptCheckpoint(format!(
            "{} is not a checkpoint file",
            path.display()
        )));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if header_len > body.len() {
        return Err(Error::Checksum(format!(
            "file truncated inside the header ({} of {header_len} bytes)",
            body.len()
        )));
    }
    let header: CheckpointHeader = serde_json::from_slice(&body[..header_len])
        .map_err(|e| Error::CorruptCheckpoint(format!("unreadable header: {e}")))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: header.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let payload = body[header_len..].to_vec();
    let digest = hex::encode(Sha256::digest(&payload));
    if digest != header.payload_sha256 {
        return Err(Error::Checksum(format!(
            "payload of {} bytes hashes to {digest}, header records {}",
            payload.len(),
            header.payload_sha256
        )));
    }
    for b in &header.blocks {
        let elems: usize = b.shape.iter().product();
        if b.offset + b.len > payload.len() as u64 || b.len != 4 * elems as u64 {
            return Err(Error::CorruptCheckpoint(format!(
                "block {} is out of range",
                b.name
            )));
        }
    }
    Ok((header, payload))
}

fn block_tensor(payload: &[u8], b: &BlockInfo, dtype: DType) -> Result<Tensor> {
    let raw = &payload[b.offset as usize..(b.offset + b.len) as usize];
    let v: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(Tensor::from_vec(v, b.shape.as_slice(), &candle_core::Device::Cpu)?.to_dtype(dtype)?)
}

/// Load a checkpoint and rebuild its model.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let (header, payload) = read_checkpoint(path)?;
    let model = Npvp::new(header.model.clone(), DType::F32, 0)?;
    let blocks: BTreeMap<&str, &BlockInfo> =
        header.blocks.iter().map(|b| (b.name.as_str(), b)).collect();
    let vars = model.var_store().vars();
    for (name, var) in vars {
        let b = blocks
            .get(name.as_str())
            .ok_or_else(|| Error::CorruptCheckpoint(format!("missing parameter {name}")))?;
        if b.shape != var.dims() {
            return Err(Error::CorruptCheckpoint(format!(
                "{name} has shape {:?}, model expects {:?}",
                b.shape,
                var.dims()
            )));
        }
    }
    for b in &header.blocks {
        if !b.name.starts_with("opt.") && !vars.contains_key(&b.name) {
            return Err(Error::CorruptCheckpoint(format!(
                "unexpected block {}",
                b.name
            )));
        }
    }
    for (name, var) in vars {
        var.set(&block_tensor(&payload, blocks[name.as_str()], DType::F32)?)?;
    }
    let mut optimizer = Vec::with_capacity(header.optimizer.len());
    for slot in &header.optimizer {
        let get = |prefix: &str| -> Result<Tensor> {
            let key = format!("{prefix}{}", slot.name);
            let b = blocks
                .get(key.as_str())
                .ok_or_else(|| Error::CorruptCheckpoint(format!("missing block {key}")))?;
            block_tensor(&payload, b, DType::F32)
        };
        optimizer.push(SlotState {
            name: slot.name.clone(),
            m: get(MOMENT1)?,
            v: get(MOMENT2)?,
            steps: slot.steps,
        });
    }
    Ok(Checkpoint {
        header,
        model,
        optimizer,
    })
}

/// Load a checkpoint whose geometry must match `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &ModelConfig) -> Result<Checkpoint> {
    let (header, _) = read_checkpoint(path)?;
    expected.check_compatible(&header.model)?;
    load_checkpoint(path)
}
