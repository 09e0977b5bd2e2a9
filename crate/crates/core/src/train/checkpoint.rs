//! Binary checkpoint layout:
//!
//! ```text
//! b"VINCECKP" | u32 LE version | u64 LE header length | JSON header | f32 LE blobs
//! ```
//!
//! The header lists every blob's name and shape in file order. Random
//! streams are addressed by `(seed, iteration)`, so the seed and iteration
//! in the header are the whole generator state.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{TrainConfig, TrainState};
use crate::encoder::EncoderParams;
use crate::error::{Result, VinceError};
use crate::moco::{MemoryBank, MocoState};
use crate::tensor::{Sgd, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VINCECKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct BlobInfo {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct RngInfo {
    master_seed: u64,
    next_iteration: u64,
}

#[derive(Serialize, Deserialize)]
struct BankInfo {
    capacity: usize,
    dim: usize,
    total_enqueued: u64,
    tags: Vec<Option<u32>>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    iteration: u64,
    rng: RngInfo,
    bank: BankInfo,
    blobs: Vec<BlobInfo>,
}

fn encode(state: &TrainState) -> Result<Vec<u8>> {
    let mut blobs = Vec::new();
    let mut payload: Vec<&[f32]> = Vec::new();
    for (prefix, params) in [("f", &state.moco.f), ("g", &state.moco.g)] {
        for (name, t) in params.iter() {
            blobs.push(BlobInfo {
                name: format!("{prefix}.{name}"),
                shape: t.shape().to_vec(),
            });
            payload.push(t.data());
        }
    }
    for ((name, t), vel) in state.moco.f.iter().zip(state.optimizer.velocity()) {
        blobs.push(BlobInfo {
            name: format!("sgd.{name}"),
            shape: t.shape().to_vec(),
        });
        payload.push(vel);
    }
    blobs.push(BlobInfo {
        name: "bank.buffer".into(),
        shape: vec![state.bank.capacity(), state.bank.dim()],
    });
    payload.push(state.bank.raw_buffer());

    let header = Header {
        config: state.config.clone(),
        iteration: state.iteration,
        rng: RngInfo {
            master_seed: state.config.seed,
            next_iteration: state.iteration,
        },
        bank: BankInfo {
            capacity: state.bank.capacity(),
            dim: state.bank.dim(),
            total_enqueued: state.bank.total_enqueued(),
            tags: state.bank.raw_tags().to_vec(),
        },
        blobs,
    };
    let json = serde_json::to_vec(&header)?;
    let floats: usize = payload.iter().map(|p| p.len()).sum();
    let mut out = Vec::with_capacity(20 + json.len() + 4 * floats);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in payload {
        for v in p {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn decode(bytes: &[u8], path: &Path) -> Result<TrainState> {
    let bad = |why: String| VinceError::format(path, why);
    if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("missing VINCECKP magic".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let body = &bytes[20..];
    if header_len > body.len() as u64 {
        return Err(bad("truncated header".into()));
    }
    let (json, mut blob_bytes) = body.split_at(header_len as usize);
    let header: Header =
        serde_json::from_slice(json).map_err(|e| bad(format!("bad header: {e}")))?;

    let expected: usize = header.blobs.iter().map(|b| b.shape.iter().product::<usize>()).sum();
    if blob_bytes.len() != expected * 4 {
        return Err(bad(format!(
            "payload is {} bytes, header describes {}",
            blob_bytes.len(),
            expected * 4
        )));
    }
    let mut blobs = header.blobs.iter().map(|info| {
        let len: usize = info.shape.iter().product();
        let (head, rest) = blob_bytes.split_at(len * 4);
        blob_bytes = rest;
        let data = head
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect::<Vec<_>>();
        (info, data)
    });

    let cfg = header.config;
    cfg.validate().map_err(|e| bad(format!("invalid config: {e}")))?;
    let layout = cfg.encoder.param_layout();
    let mut take = |prefix: &str, name: &str, shape: &[usize]| -> Result<Vec<f32>> {
        let (info, data) = blobs.next().ok_or_else(|| bad("missing blob".into()))?;
        let want = format!("{prefix}.{name}");
        if info.name != want || info.shape != shape {
            return Err(bad(format!(
                "expected blob {want} {shape:?}, found {} {:?}",
                info.name, info.shape
            )));
        }
        Ok(data)
    };
    let mut params = |prefix: &str| -> Result<EncoderParams> {
        let tensors = layout
            .iter()
            .map(|(name, shape)| Tensor::new(shape.clone(), take(prefix, name, shape)?))
            .collect::<Result<Vec<_>>>()?;
        EncoderParams::from_tensors(&cfg.encoder, tensors)
    };
    let f = params("f")?;
    let g = params("g")?;
    let velocity = layout
        .iter()
        .map(|(name, shape)| take("sgd", name, shape))
        .collect::<Result<Vec<_>>>()?;
    let buffer = take("bank", "buffer", &[header.bank.capacity, header.bank.dim])?;
    if header.bank.capacity != cfg.bank_size || header.bank.dim != cfg.encoder.embed_dim {
        return Err(bad("bank shape disagrees with config".into()));
    }
    let bank = MemoryBank::from_parts(
        header.bank.capacity,
        header.bank.dim,
        buffer,
        header.bank.tags,
        header.bank.total_enqueued,
    )?;
    Ok(TrainState {
        moco: MocoState::from_parts(f, g, cfg.alpha)?,
        bank,
        optimizer: Sgd::with_velocity(cfg.sgd(), velocity),
        iteration: header.iteration,
        config: cfg,
    })
}

/// Writes `state` to `path` via a temporary file, so an interrupted save
/// never clobbers the previous checkpoint.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let bytes = encode(state)?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = fs::read(path)?;
    decode(&bytes, path)
}

/// SHA-256 of the checkpoint file, hex encoded.
pub fn checkpoint_hash(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}
