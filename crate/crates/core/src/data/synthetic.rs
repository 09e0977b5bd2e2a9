//! Procedural "videos" with a known class per video.
//!
//! Each class fixes an object shape and a base hue. Each video adds its own
//! nuisances: a panning plane-wave background whose hue drifts over time, an
//! object trajectory, rotation and scale drift. Frames of one video therefore
//! share the object's identity while almost everything else moves.

use std::f32::consts::PI;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::RgbImage;
use super::manifest::{VideoManifest, VideoRecord};
use crate::error::{Result, VinceError};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticWorldConfig {
    pub num_classes: usize,
    pub videos_per_class: usize,
    pub frames_per_video: usize,
    pub image_size: usize,
    /// Largest object displacement between consecutive frames, pixels.
    pub motion_step: f32,
    /// Largest relative object size change between consecutive frames.
    pub scale_drift: f32,
    /// Background pan speed, pixels per frame.
    pub background_pan: f32,
    /// Background hue rotation per frame, degrees.
    pub background_hue_drift: f32,
    /// Per-video deviation from the class hue, degrees.
    pub class_hue_jitter: f32,
    /// Amplitude of per-pixel uniform noise, on a 0–1 scale.
    pub noise: f32,
}

impl Default for SyntheticWorldConfig {
    fn default() -> Self {
        Self {
            num_classes: 8,
            videos_per_class: 50,
            frames_per_video: 4,
            image_size: 64,
            motion_step: 5.0,
            scale_drift: 0.06,
            background_pan: 6.0,
            background_hue_drift: 35.0,
            class_hue_jitter: 10.0,
            noise: 0.02,
        }
    }
}

impl SyntheticWorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.videos_per_class == 0 || self.frames_per_video == 0 {
            return Err(VinceError::Config(
                "classes, videos per class and frames per video must all be ≥ 1".into(),
            ));
        }
        if self.image_size < 8 {
            return Err(VinceError::Config(format!(
                "image_size {} is too small (minimum 8)",
                self.image_size
            )));
        }
        Ok(())
    }

    pub fn total_videos(&self) -> usize {
        self.num_classes * self.videos_per_class
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShapeFamily {
    Disk,
    Square,
    Triangle,
    Cross,
    Ring,
    Diamond,
    Bars,
    Crescent,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; 8] = [
        ShapeFamily::Disk,
        ShapeFamily::Square,
        ShapeFamily::Triangle,
        ShapeFamily::Cross,
        ShapeFamily::Ring,
        ShapeFamily::Diamond,
        ShapeFamily::Bars,
        ShapeFamily::Crescent,
    ];

    /// Membership test in object coordinates scaled so the shape fits the
    /// unit disk (`v` points down).
    pub fn contains(self, u: f32, v: f32) -> bool {
        let r2 = u * u + v * v;
        match self {
            ShapeFamily::Disk => r2 <= 0.85 * 0.85,
            ShapeFamily::Square => u.abs() <= 0.62 && v.abs() <= 0.62,
            ShapeFamily::Triangle => v <= 0.55 && u.abs() <= (v + 0.85) * 0.8 / 1.4,
            ShapeFamily::Cross => {
                (u.abs() <= 0.25 && v.abs() <= 0.85) || (v.abs() <= 0.25 && u.abs() <= 0.85)
            }
            ShapeFamily::Ring => (0.5 * 0.5..=0.85 * 0.85).contains(&r2),
            ShapeFamily::Diamond => u.abs() + v.abs() <= 0.85,
            ShapeFamily::Bars => (0.2..=0.6).contains(&v.abs()) && u.abs() <= 0.8,
            ShapeFamily::Crescent => r2 <= 0.85 * 0.85 && (u - 0.35).powi(2) + v * v > 0.6 * 0.6,
        }
    }
}

/// Generative parameters shared by every video of one class. Classes come in
/// pairs that share a hue, so colour alone does not identify a class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassStyle {
    pub shape: ShapeFamily,
    pub hue: f32,
}

pub fn class_style(class: usize, num_classes: usize) -> ClassStyle {
    let hue_groups = num_classes.div_ceil(2).max(1);
    ClassStyle {
        shape: ShapeFamily::ALL[class % ShapeFamily::ALL.len()],
        hue: 15.0 + (class / 2) as f32 * 360.0 / hue_groups as f32,
    }
}

pub fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

struct Wave {
    kx: f32,
    ky: f32,
    phase: f32,
    amp: f32,
}

/// Renders every frame of one video.
pub fn render_video(
    cfg: &SyntheticWorldConfig,
    class: usize,
    video_index: usize,
    seed: u64,
) -> Vec<RgbImage> {
    let size = cfg.image_size as f32;
    let style = class_style(class, cfg.num_classes);
    let mut rng = rng::stream(seed, "synthetic-video", video_index as u64);

    // background
    let waves: Vec<Wave> = (0..3)
        .map(|_| {
            let freq = rng.gen_range(1.0..3.5) * 2.0 * PI / size;
            let angle = rng.gen_range(0.0..2.0 * PI);
            Wave {
                kx: freq * angle.cos(),
                ky: freq * angle.sin(),
                phase: rng.gen_range(0.0..2.0 * PI),
                amp: rng.gen_range(0.5..1.0),
            }
        })
        .collect();
    let amp_total: f32 = waves.iter().map(|w| w.amp).sum();
    let bg_hue_a = rng.gen_range(0.0..360.0f32);
    let bg_hue_b = bg_hue_a + rng.gen_range(60.0..180.0f32);
    let (bg_sat_a, bg_sat_b) = (rng.gen_range(0.2..0.7f32), rng.gen_range(0.2..0.7f32));
    let (bg_val_a, bg_val_b) = (rng.gen_range(0.25..0.6f32), rng.gen_range(0.5..0.95f32));
    let hue_dir = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let pan_angle = rng.gen_range(0.0..2.0 * PI);
    let pan_speed = cfg.background_pan * rng.gen_range(0.5..1.0f32);
    let pan = (pan_speed * pan_angle.cos(), pan_speed * pan_angle.sin());

    // object
    let hue = style.hue + rng.gen_range(-1.0..=1.0f32) * cfg.class_hue_jitter;
    let obj_sat = rng.gen_range(0.7..0.95f32);
    let obj_val = rng.gen_range(0.75..1.0f32);
    let mut center = (
        rng.gen_range(0.3..0.7f32) * size,
        rng.gen_range(0.3..0.7f32) * size,
    );
    let move_angle = rng.gen_range(0.0..2.0 * PI);
    let move_speed = cfg.motion_step * rng.gen_range(0.5..1.0f32);
    let mut velocity = (move_speed * move_angle.cos(), move_speed * move_angle.sin());
    let mut radius = rng.gen_range(0.17..0.25f32) * size;
    let mut rotation = rng.gen_range(0.0..2.0 * PI);
    let spin = rng.gen_range(-0.25..0.25f32);

    let (lo, hi) = (0.2 * size, 0.8 * size);
    let n = cfg.image_size;
    let mut frames = Vec::with_capacity(cfg.frames_per_video);
    for t in 0..cfg.frames_per_video {
        if t > 0 {
            center.0 += velocity.0;
            center.1 += velocity.1;
            if center.0 < lo || center.0 > hi {
                velocity.0 = -velocity.0;
                center.0 = center.0.clamp(lo, hi);
            }
            if center.1 < lo || center.1 > hi {
                velocity.1 = -velocity.1;
                center.1 = center.1.clamp(lo, hi);
            }
            radius = (radius * (1.0 + rng.gen_range(-1.0..=1.0f32) * cfg.scale_drift))
                .clamp(0.12 * size, 0.3 * size);
            rotation += spin;
        }
        let tf = t as f32;
        let hue_shift = hue_dir * cfg.background_hue_drift * tf;
        let color_a = hsv_to_rgb(bg_hue_a + hue_shift, bg_sat_a, bg_val_a);
        let color_b = hsv_to_rgb(bg_hue_b + hue_shift, bg_sat_b, bg_val_b);
        let obj_color = hsv_to_rgb(hue, obj_sat, obj_val);
        let brightness = 1.0 + rng.gen_range(-0.1..0.1f32);
        let (ox, oy) = (pan.0 * tf, pan.1 * tf);
        let (cos_r, sin_r) = (rotation.cos(), rotation.sin());

        let mut img = RgbImage::filled(n, n, [0, 0, 0]);
        for y in 0..n {
            for x in 0..n {
                let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
                let dx = (px - center.0) / radius;
                let dy = (py - center.1) / radius;
                let u = cos_r * dx + sin_r * dy;
                let v = -sin_r * dx + cos_r * dy;
                let rgb = if style.shape.contains(u, v) {
                    obj_color
                } else {
                    let s: f32 = waves
                        .iter()
                        .map(|w| w.amp * (w.kx * (px + ox) + w.ky * (py + oy) + w.phase).sin())
                        .sum();
                    let mix = 0.5 * (s / amp_total + 1.0);
                    [0, 1, 2].map(|c| color_a[c] * (1.0 - mix) + color_b[c] * mix)
                };
                let px_rgb = rgb.map(|c| {
                    let noisy = c * brightness + rng.gen_range(-1.0..=1.0f32) * cfg.noise;
                    (noisy.clamp(0.0, 1.0) * 255.0).round() as u8
                });
                img.set(x, y, px_rgb);
            }
        }
        frames.push(img);
    }
    frames
}

pub fn video_id(index: usize) -> String {
    format!("v{index:05}")
}

/// Writes `out/frames/<id>/frame_NNNN.ppm` for every video and returns the
/// manifest (also saved to `out/manifest.jsonl`). Videos are ordered
/// class-major.
pub fn generate_synthetic(cfg: &SyntheticWorldConfig, seed: u64, out: &Path) -> Result<VideoManifest> {
    cfg.validate()?;
    let mut records = Vec::with_capacity(cfg.total_videos());
    for class in 0..cfg.num_classes {
        for i in 0..cfg.videos_per_class {
            let index = class * cfg.videos_per_class + i;
            let id = video_id(index);
            let mut rel = Vec::with_capacity(cfg.frames_per_video);
            for (t, frame) in render_video(cfg, class, index, seed).into_iter().enumerate() {
                let name = format!("frames/{id}/frame_{t:04}.ppm");
                frame.write_ppm(&out.join(&name))?;
                rel.push(name);
            }
            records.push(VideoRecord {
                video_id: id,
                frames: rel,
                label: Some(class as i64),
            });
        }
    }
    let manifest = VideoManifest::new(out, records)?;
    manifest.save(out)?;
    Ok(manifest)
}
