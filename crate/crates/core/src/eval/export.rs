//! Per-frame embeddings as CSV: `video_id,frame_index,e0,…,e{d-1}`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{frame_features, FeatureKind};
use crate::data::FrameStore;
use crate::encoder::EncoderParams;
use crate::error::{Result, VinceError};
use crate::tensor::Tensor;

/// Unit-norm embeddings keyed by `(video_id, frame_index)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub video_ids: Vec<String>,
    pub frame_indices: Vec<usize>,
    /// `rows × d`.
    pub embeddings: Tensor,
}

impl EmbeddingTable {
    pub fn from_store(params: &EncoderParams, store: &FrameStore) -> Result<Self> {
        let d = params.config().embed_dim;
        let embeddings = if store.total_frames() == 0 {
            Tensor::zeros([0, d])
        } else {
            frame_features(params, store, FeatureKind::Embedding)?
        };
        let mut video_ids = Vec::new();
        let mut frame_indices = Vec::new();
        for (id, frames) in store.video_ids.iter().zip(&store.frames) {
            for t in 0..frames.len() {
                video_ids.push(id.clone());
                frame_indices.push(t);
            }
        }
        Ok(Self {
            video_ids,
            frame_indices,
            embeddings,
        })
    }

    pub fn len(&self) -> usize {
        self.video_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.video_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.shape()[1]
    }

    pub fn find(&self, video_id: &str, frame: usize) -> Option<usize> {
        (0..self.len()).find(|&i| self.video_ids[i] == video_id && self.frame_indices[i] == frame)
    }

    pub fn to_csv(&self) -> String {
        let d = self.dim();
        let mut out = String::from("video_id,frame_index");
        for j in 0..d {
            let _ = write!(out, ",e{j}");
        }
        out.push('\n');
        for i in 0..self.len() {
            let _ = write!(out, "{},{}", self.video_ids[i], self.frame_indices[i]);
            for v in self.embeddings.row(i) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Embeds every frame of `store` and writes the CSV to `path`.
pub fn export_embeddings(params: &EncoderParams, store: &FrameStore, path: &Path) -> Result<EmbeddingTable> {
    let table = EmbeddingTable::from_store(params, store)?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, table.to_csv())?;
    Ok(table)
}

pub fn read_embeddings_csv(path: &Path) -> Result<EmbeddingTable> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| VinceError::format(path, "empty embeddings file"))?;
    let d = header.split(',').count().saturating_sub(2);
    let (mut ids, mut frames, mut data) = (Vec::new(), Vec::new(), Vec::new());
    for (n, line) in lines.enumerate() {
        let bad = || VinceError::format(path, format!("row {}", n + 1));
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 2 {
            return Err(bad());
        }
        ids.push(fields[0].to_string());
        frames.push(fields[1].parse().map_err(|_| bad())?);
        for f in &fields[2..] {
            data.push(f.parse::<f32>().map_err(|_| bad())?);
        }
    }
    Ok(EmbeddingTable {
        embeddings: Tensor::new([ids.len(), d], data)?,
        video_ids: ids,
        frame_indices: frames,
    })
}
