//! Turning raw local videos (directories of numbered frames) into a curated
//! corpus of `T` frames per video: gap sampling from a random start point,
//! then dropping videos whose content barely changes.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::RgbImage;
use super::manifest::{VideoManifest, VideoRecord, MANIFEST_FILE};
use crate::error::{Result, VinceError};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurationConfig {
    /// Frames kept per video.
    pub frames_per_video: usize,
    /// Gap between kept frames, in source frames.
    pub gap: usize,
    /// Minimum fraction of changed pixels for a video to be kept.
    pub static_threshold: f32,
    /// Per-pixel absolute difference (0–255) above which a pixel counts as changed.
    pub change_epsilon: u8,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            frames_per_video: 4,
            gap: 5,
            static_threshold: 0.05,
            change_epsilon: 10,
        }
    }
}

impl CurationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames_per_video == 0 {
            return Err(VinceError::Config("frames_per_video must be ≥ 1".into()));
        }
        if self.frames_per_video > 1 && self.gap == 0 {
            return Err(VinceError::Config("gap must be ≥ 1".into()));
        }
        if !(0.0..=1.0).contains(&self.static_threshold) {
            return Err(VinceError::Config(format!(
                "static_threshold {} outside [0, 1]",
                self.static_threshold
            )));
        }
        Ok(())
    }

    /// Shortest source video that admits `T` frames spaced `G` apart.
    pub fn min_length(&self) -> usize {
        (self.frames_per_video - 1) * self.gap + 1
    }
}

/// Fraction of pixels whose largest per-channel absolute difference exceeds
/// `epsilon`.
pub fn changed_fraction(a: &RgbImage, b: &RgbImage, epsilon: u8) -> Result<f32> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(VinceError::dim(format!(
            "frames differ in size: {}×{} vs {}×{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let total = a.width * a.height;
    if total == 0 {
        return Err(VinceError::Degenerate("empty frame".into()));
    }
    let changed = a
        .pixels
        .chunks_exact(3)
        .zip(b.pixels.chunks_exact(3))
        .filter(|(p, q)| {
            let diff = p.iter().zip(q.iter()).map(|(x, y)| x.abs_diff(*y)).max().unwrap_or(0);
            diff > epsilon
        })
        .count();
    Ok(changed as f32 / total as f32)
}

/// `true` keeps the video: the first and last frames differ in at least
/// `static_threshold` of their pixels.
pub fn filter_static(frames: &[RgbImage], cfg: &CurationConfig) -> Result<bool> {
    let (Some(first), Some(last)) = (frames.first(), frames.last()) else {
        return Err(VinceError::Degenerate("static filter needs frames".into()));
    };
    if frames.len() < 2 {
        return Err(VinceError::Degenerate(
            "static filter needs at least two frames".into(),
        ));
    }
    Ok(changed_fraction(first, last, cfg.change_epsilon)? >= cfg.static_threshold)
}

/// Indices `start, start + G, …` of `T` frames from a video of `len` frames,
/// with `start` uniform over every valid position.
pub fn gap_frame_indices(len: usize, cfg: &CurationConfig, seed: u64) -> Result<Vec<usize>> {
    cfg.validate()?;
    let need = cfg.min_length();
    if len < need {
        return Err(VinceError::InsufficientLength {
            available: len,
            required: need,
        });
    }
    let start = rng::stream(seed, "gap-start", 0).gen_range(0..=len - need);
    Ok((0..cfg.frames_per_video).map(|t| start + t * cfg.gap).collect())
}

/// Picks `T` gap-spaced frames out of `video`.
pub fn extract_gap_frames<T: Clone>(video: &[T], cfg: &CurationConfig, seed: u64) -> Result<Vec<T>> {
    Ok(gap_frame_indices(video.len(), cfg, seed)?
        .into_iter()
        .map(|i| video[i].clone())
        .collect())
}

/// A raw source video: ordered frame files plus an optional label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourceVideo {
    pub video_id: String,
    pub frames: Vec<PathBuf>,
    pub label: Option<i64>,
}

fn frame_number(path: &Path) -> Option<u64> {
    let stem = path.file_stem()?.to_str()?;
    let digits: String = stem
        .chars()
        .rev()
        .take_while(char::is_ascii_digit)
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    digits.parse().ok()
}

/// Lists source videos under `input`. A directory holding a
/// `manifest.jsonl` is read through it (labels included); otherwise every
/// sub-directory is one video whose `.ppm` files are ordered by the number
/// at the end of their names.
pub fn ingest(input: &Path) -> Result<Vec<SourceVideo>> {
    if input.join(MANIFEST_FILE).is_file() {
        let m = VideoManifest::load(input)?;
        return Ok(m
            .records
            .iter()
            .map(|r| SourceVideo {
                video_id: r.video_id.clone(),
                frames: (0..r.frames.len()).map(|i| m.frame_path(r, i)).collect(),
                label: r.label,
            })
            .collect());
    }
    let mut videos = Vec::new();
    for entry in fs::read_dir(input)? {
        let entry = entry?;
        if !entry.file_type()?.is_dir() {
            continue;
        }
        let mut frames: Vec<PathBuf> = fs::read_dir(entry.path())?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")))
            .collect();
        frames.sort_by(|a, b| frame_number(a).cmp(&frame_number(b)).then(a.cmp(b)));
        videos.push(SourceVideo {
            video_id: entry.file_name().to_string_lossy().into_owned(),
            frames,
            label: None,
        });
    }
    videos.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    Ok(videos)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DropReason {
    TooShort { frames: usize },
    Static,
}

#[derive(Clone, Debug)]
pub struct CurationReport {
    pub manifest: VideoManifest,
    pub input_count: usize,
    pub dropped: Vec<(String, DropReason)>,
}

impl CurationReport {
    pub fn kept(&self) -> usize {
        self.manifest.len()
    }
}

/// Curates `input` into `output`: `output/frames/<video_id>/frame_NNNN.ppm`
/// plus `output/manifest.jsonl`. Kept frames are copied byte for byte.
pub fn curate(input: &Path, output: &Path, cfg: &CurationConfig, seed: u64) -> Result<CurationReport> {
    cfg.validate()?;
    let videos = ingest(input)?;
    if videos.is_empty() {
        return Err(VinceError::InsufficientData(format!(
            "no videos found under {}",
            input.display()
        )));
    }
    let mut records = Vec::new();
    let mut dropped = Vec::new();
    let labels: HashMap<&str, Option<i64>> =
        videos.iter().map(|v| (v.video_id.as_str(), v.label)).collect();

    for video in &videos {
        let video_seed = rng::child_seed(seed, &format!("curate/{}", video.video_id), 0);
        let picked = match extract_gap_frames(&video.frames, cfg, video_seed) {
            Ok(p) => p,
            Err(VinceError::InsufficientLength { available, .. }) => {
                dropped.push((video.video_id.clone(), DropReason::TooShort { frames: available }));
                continue;
            }
            Err(e) => return Err(e),
        };
        let keep = if picked.len() >= 2 {
            let first = RgbImage::read_ppm(&picked[0])?;
            let last = RgbImage::read_ppm(&picked[picked.len() - 1])?;
            filter_static(&[first, last], cfg)?
        } else if video.frames.len() >= 2 {
            // single-frame output: judge the source clip end to end
            let first = RgbImage::read_ppm(&video.frames[0])?;
            let last = RgbImage::read_ppm(&video.frames[video.frames.len() - 1])?;
            filter_static(&[first, last], cfg)?
        } else {
            false
        };
        if !keep {
            dropped.push((video.video_id.clone(), DropReason::Static));
            continue;
        }
        let mut rel = Vec::with_capacity(picked.len());
        for (t, src) in picked.iter().enumerate() {
            let name = format!("frames/{}/frame_{t:04}.ppm", video.video_id);
            let dst = output.join(&name);
            fs::create_dir_all(dst.parent().expect("frame path has a parent"))?;
            fs::copy(src, &dst)?;
            rel.push(name);
        }
        records.push(VideoRecord {
            video_id: video.video_id.clone(),
            frames: rel,
            label: labels[video.video_id.as_str()],
        });
    }
    let manifest = VideoManifest::new(output, records)?;
    manifest.save(output)?;
    Ok(CurationReport {
        manifest,
        input_count: videos.len(),
        dropped,
    })
}
