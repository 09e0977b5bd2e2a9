//! Curation fixtures and statistics shared by the data tests and the
//! acceptance report.

use std::path::Path;

use statrs::distribution::{ChiSquared, ContinuousCDF};
use vince::data::{curate, gap_frame_indices, CurationConfig, CurationReport, RgbImage};

/// A 16×16 frame: flat grey, or with a bright square at `offset`.
pub fn frame(offset: Option<usize>) -> RgbImage {
    let mut img = RgbImage::filled(16, 16, [90, 90, 90]);
    if let Some(o) = offset {
        for y in 2..10 {
            for x in o..o + 6 {
                img.set(x % 16, y, [250, 40, 40]);
            }
        }
    }
    img
}

/// Writes `frames` as `dir/<id>/frame_NNNN.ppm`.
pub fn write_video(dir: &Path, id: &str, frames: &[RgbImage]) {
    for (i, f) in frames.iter().enumerate() {
        f.write_ppm(&dir.join(id).join(format!("frame_{i:04}.ppm"))).unwrap();
    }
}

pub fn static_video(len: usize) -> Vec<RgbImage> {
    vec![frame(Some(3)); len]
}

pub fn moving_video(len: usize) -> Vec<RgbImage> {
    (0..len).map(|t| frame(Some(t))).collect()
}

/// Curates a corpus of static videos only.
pub fn curate_static_corpus(root: &Path, videos: usize) -> CurationReport {
    let input = root.join("in");
    for i in 0..videos {
        write_video(&input, &format!("still{i:02}"), &static_video(16 + i));
    }
    curate(&input, &root.join("out"), &CurationConfig::default(), 3).unwrap()
}

/// Curates a mix of moving, static and too-short videos. Returns the report
/// and the number of input videos.
pub fn curate_mixed_corpus(root: &Path) -> (CurationReport, usize) {
    let input = root.join("in");
    let cfg = CurationConfig::default();
    let mut count = 0;
    for i in 0..5 {
        write_video(&input, &format!("move{i}"), &moving_video(cfg.min_length() + i));
        count += 1;
    }
    for i in 0..3 {
        write_video(&input, &format!("still{i}"), &static_video(cfg.min_length() + 2));
        count += 1;
    }
    for i in 0..2 {
        write_video(&input, &format!("short{i}"), &moving_video(cfg.min_length() - 1 - i));
        count += 1;
    }
    (curate(&input, &root.join("out"), &cfg, 5).unwrap(), count)
}

/// χ² goodness-of-fit p-value for the start index of `draws` seeded gap
/// extractions from a length-100 video with T = 4, G = 10.
pub fn gap_start_uniformity_p(draws: u64) -> f64 {
    let cfg = CurationConfig {
        frames_per_video: 4,
        gap: 10,
        ..CurationConfig::default()
    };
    let starts = 100 - cfg.min_length() + 1;
    let mut counts = vec![0u64; starts];
    for seed in 0..draws {
        counts[gap_frame_indices(100, &cfg, seed).unwrap()[0]] += 1;
    }
    let expected = draws as f64 / starts as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    1.0 - ChiSquared::new((starts - 1) as f64).unwrap().cdf(stat)
}
