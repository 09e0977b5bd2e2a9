//! Nearest-neighbour retrieval with at most one hit per video.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::Serialize;

use super::export::EmbeddingTable;
use crate::error::{Result, VinceError};
use crate::nce::NORM_TOLERANCE;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KnnHit {
    pub video_id: String,
    pub frame: usize,
    pub similarity: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KnnResult {
    pub hits: Vec<KnnHit>,
    /// Fewer than `k` distinct videos were available.
    pub truncated: bool,
}

fn check_unit(row: &[f32], what: &str) -> Result<()> {
    let norm = row.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > NORM_TOLERANCE as f64 {
        return Err(VinceError::Precondition(format!("{what} has norm {norm:.6}")));
    }
    Ok(())
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum::<f64>() as f32
}

/// Top-`k` frames by cosine similarity to `query`, keeping only the best
/// frame of each video. Ties go to the lower video id, then the lower frame.
pub fn knn_retrieve(query: &[f32], corpus: &EmbeddingTable, k: usize) -> Result<KnnResult> {
    knn_retrieve_filtered(query, corpus, k, |_| true)
}

/// As [`knn_retrieve`] but ignoring frames of `video_id`.
pub fn knn_retrieve_excluding(query: &[f32], corpus: &EmbeddingTable, k: usize, video_id: &str) -> Result<KnnResult> {
    knn_retrieve_filtered(query, corpus, k, |v| v != video_id)
}

fn knn_retrieve_filtered(
    query: &[f32],
    corpus: &EmbeddingTable,
    k: usize,
    keep: impl Fn(&str) -> bool,
) -> Result<KnnResult> {
    if !corpus.is_empty() && query.len() != corpus.dim() {
        return Err(VinceError::dim(format!(
            "query has {} dims, corpus {}",
            query.len(),
            corpus.dim()
        )));
    }
    check_unit(query, "query")?;
    let mut scored = Vec::with_capacity(corpus.len());
    for i in 0..corpus.len() {
        if !keep(&corpus.video_ids[i]) {
            continue;
        }
        let row = corpus.embeddings.row(i);
        check_unit(row, "corpus row")?;
        scored.push((dot(query, row), i));
    }
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(Ordering::Equal)
            .then_with(|| corpus.video_ids[a.1].cmp(&corpus.video_ids[b.1]))
            .then_with(|| corpus.frame_indices[a.1].cmp(&corpus.frame_indices[b.1]))
    });
    let mut seen = HashSet::new();
    let mut hits = Vec::new();
    for (sim, i) in scored {
        if hits.len() == k {
            break;
        }
        if seen.insert(corpus.video_ids[i].as_str()) {
            hits.push(KnnHit {
                video_id: corpus.video_ids[i].clone(),
                frame: corpus.frame_indices[i],
                similarity: sim,
            });
        }
    }
    Ok(KnnResult {
        truncated: hits.len() < k,
        hits,
    })
}
