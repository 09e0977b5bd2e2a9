//! Batch sampling for the three training regimes.
//!
//! Rows come out video-major: row `i` belongs to the `i / k`-th chosen
//! video, which is the ordering `build_pair_mask` assumes.

use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::augment::{augment, AugmentConfig};
use super::image::{images_to_tensor, Image, RgbImage};
use super::manifest::VideoManifest;
use crate::error::{Result, VinceError};
use crate::nce::BatchLayout;
use crate::rng;
use crate::tensor::Tensor;

/// Every frame of a manifest decoded into memory.
#[derive(Clone, Debug)]
pub struct FrameStore {
    pub video_ids: Vec<String>,
    pub labels: Vec<Option<i64>>,
    pub frames: Vec<Vec<Image>>,
}

impl FrameStore {
    pub fn load(manifest: &VideoManifest) -> Result<Self> {
        let frames = manifest
            .records
            .par_iter()
            .map(|r| {
                (0..r.frames.len())
                    .map(|i| Ok(RgbImage::read_ppm(&manifest.frame_path(r, i))?.to_image()))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            video_ids: manifest.records.iter().map(|r| r.video_id.clone()).collect(),
            labels: manifest.records.iter().map(|r| r.label).collect(),
            frames,
        })
    }

    pub fn from_frames(video_ids: Vec<String>, labels: Vec<Option<i64>>, frames: Vec<Vec<Image>>) -> Result<Self> {
        if video_ids.len() != frames.len() || labels.len() != frames.len() {
            return Err(VinceError::dim("ids, labels and frames must have one entry per video"));
        }
        if frames.iter().any(Vec::is_empty) {
            return Err(VinceError::InsufficientData("a video has no frames".into()));
        }
        Ok(Self {
            video_ids,
            labels,
            frames,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn total_frames(&self) -> usize {
        self.frames.iter().map(Vec::len).sum()
    }

    /// Restricts the store to the given video indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            video_ids: indices.iter().map(|&i| self.video_ids[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            frames: indices.iter().map(|&i| self.frames[i].clone()).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingRegime {
    /// Each anchor is paired with another augmentation of itself.
    SameFrame,
    /// Anchor and positive frames drawn independently, with replacement.
    MultiFrame,
}

impl FromStr for SamplingRegime {
    type Err = VinceError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "same_frame" => Ok(Self::SameFrame),
            "multi_frame" => Ok(Self::MultiFrame),
            other => Err(VinceError::Config(format!("unknown sampling regime {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Batch {
    /// `n × 3 × s × s`, encoder input range.
    pub anchors: Tensor,
    pub positives: Tensor,
    /// Store index of each row's video.
    pub video_indices: Vec<usize>,
    pub anchor_frames: Vec<usize>,
    pub positive_frames: Vec<usize>,
}

impl Batch {
    pub fn rows(&self) -> usize {
        self.video_indices.len()
    }
}

/// Which videos and frames a batch uses, before any pixels are touched.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub video_indices: Vec<usize>,
    pub anchor_frames: Vec<usize>,
    pub positive_frames: Vec<usize>,
}

/// Draws the batch plan. Both regimes consume the `data` and `frames`
/// streams identically, so for a fixed seed they pick the same videos and
/// the same anchor frames.
pub fn plan_batch(
    frames_per_video: &[usize],
    layout: BatchLayout,
    regime: SamplingRegime,
    seed: u64,
) -> Result<BatchPlan> {
    let (v, k) = (layout.videos, layout.frames_per_video);
    if frames_per_video.len() < v {
        return Err(VinceError::InsufficientData(format!(
            "batch needs {v} videos, corpus has {}",
            frames_per_video.len()
        )));
    }
    let mut data_rng = rng::stream(seed, "data", 0);
    let chosen = index::sample(&mut data_rng, frames_per_video.len(), v).into_vec();
    let mut frame_rng = rng::stream(seed, "frames", 0);
    let mut plan = BatchPlan {
        video_indices: Vec::with_capacity(v * k),
        anchor_frames: Vec::with_capacity(v * k),
        positive_frames: Vec::with_capacity(v * k),
    };
    for &vid in &chosen {
        let t = frames_per_video[vid];
        if t == 0 {
            return Err(VinceError::InsufficientData("a video has no frames".into()));
        }
        for _ in 0..k {
            let a = frame_rng.gen_range(0..t);
            let p = frame_rng.gen_range(0..t);
            plan.video_indices.push(vid);
            plan.anchor_frames.push(a);
            plan.positive_frames.push(match regime {
                SamplingRegime::SameFrame => a,
                SamplingRegime::MultiFrame => p,
            });
        }
    }
    Ok(plan)
}

/// Samples and augments one batch. Each side of each pair gets its own
/// augmentation seed.
pub fn sample_batch(
    store: &FrameStore,
    layout: BatchLayout,
    regime: SamplingRegime,
    aug: &AugmentConfig,
    seed: u64,
) -> Result<Batch> {
    aug.validate()?;
    let lengths: Vec<usize> = store.frames.iter().map(Vec::len).collect();
    let plan = plan_batch(&lengths, layout, regime, seed)?;
    let render = |side: &str, frames: &[usize]| -> Result<Vec<Image>> {
        (0..frames.len())
            .into_par_iter()
            .map(|row| {
                let img = &store.frames[plan.video_indices[row]][frames[row]];
                augment(img, aug, rng::child_seed(seed, side, row as u64))
            })
            .collect()
    };
    let anchors = render("aug-anchor", &plan.anchor_frames)?;
    let positives = render("aug-positive", &plan.positive_frames)?;
    Ok(Batch {
        anchors: images_to_tensor(&anchors)?,
        positives: images_to_tensor(&positives)?,
        video_indices: plan.video_indices,
        anchor_frames: plan.anchor_frames,
        positive_frames: plan.positive_frames,
    })
}
