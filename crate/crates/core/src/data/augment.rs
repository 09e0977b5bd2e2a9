//! Random resized crop → horizontal flip → colour jitter.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::Image;
use crate::error::{Result, VinceError};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Crop area as a fraction of the frame area, `(min, max]`. Crops keep
    /// the frame's aspect ratio and are resized to a square output.
    pub crop_scale_range: (f32, f32),
    pub horizontal_flip_prob: f32,
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub output_size: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            crop_scale_range: (0.35, 1.0),
            horizontal_flip_prob: 0.5,
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.4,
            output_size: 64,
        }
    }
}

impl AugmentConfig {
    /// Resize only: full-frame crop, no flip, no jitter.
    pub fn identity(output_size: usize) -> Self {
        Self {
            crop_scale_range: (1.0, 1.0),
            horizontal_flip_prob: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            output_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.crop_scale_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(VinceError::Config(format!(
                "crop scales must satisfy 0 < min ≤ max ≤ 1, got ({lo}, {hi})"
            )));
        }
        if !(0.0..=1.0).contains(&self.horizontal_flip_prob) {
            return Err(VinceError::Config("flip probability outside [0, 1]".into()));
        }
        if [self.brightness, self.contrast, self.saturation]
            .iter()
            .any(|j| !(0.0..=1.0).contains(j))
        {
            return Err(VinceError::Config("jitter ranges must lie in [0, 1]".into()));
        }
        if self.output_size == 0 {
            return Err(VinceError::Config("output_size must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Parameters drawn for one augmentation, exposed so callers can replay or
/// inspect them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentDraw {
    pub crop_x: f32,
    pub crop_y: f32,
    pub crop_w: f32,
    pub crop_h: f32,
    pub flip: bool,
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
}

pub fn draw_params(image: &Image, cfg: &AugmentConfig, seed: u64) -> Result<AugmentDraw> {
    cfg.validate()?;
    let (w, h) = (image.width as f32, image.height as f32);
    let (lo, hi) = cfg.crop_scale_range;
    if w.min(h) * lo.sqrt() < 1.0 {
        return Err(VinceError::dim(format!(
            "{}×{} image cannot hold a crop at scale {lo}",
            image.width, image.height
        )));
    }
    let mut rng = rng::stream(seed, "augment", 0);
    let scale = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    let (crop_w, crop_h) = (w * scale.sqrt(), h * scale.sqrt());
    let crop_x = rng.gen_range(0.0..=(w - crop_w).max(0.0));
    let crop_y = rng.gen_range(0.0..=(h - crop_h).max(0.0));
    let flip = rng.gen::<f32>() < cfg.horizontal_flip_prob;
    let mut factor = |range: f32| {
        if range > 0.0 {
            rng.gen_range(1.0 - range..=1.0 + range)
        } else {
            1.0
        }
    };
    Ok(AugmentDraw {
        crop_x,
        crop_y,
        crop_w,
        crop_h,
        flip,
        brightness: factor(cfg.brightness),
        contrast: factor(cfg.contrast),
        saturation: factor(cfg.saturation),
    })
}

pub fn hflip(image: &Image) -> Image {
    let mut out = image.clone();
    let w = image.width;
    for c in 0..3 {
        for y in 0..image.height {
            let row = c * image.plane() + y * w;
            out.data[row..row + w].reverse();
        }
    }
    out
}

fn luma(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Brightness scale, contrast about the mean luma, saturation about each
/// pixel's luma; result clamped to `[0, 1]`. Identity when all factors are 1.
pub fn color_jitter(image: &Image, brightness: f32, contrast: f32, saturation: f32) -> Image {
    if brightness == 1.0 && contrast == 1.0 && saturation == 1.0 {
        return image.clone();
    }
    let plane = image.plane();
    let mut d = image.data.clone();
    d.iter_mut().for_each(|v| *v *= brightness);
    let mean_luma = (0..plane)
        .map(|i| luma(d[i], d[plane + i], d[2 * plane + i]) as f64)
        .sum::<f64>() as f32
        / plane as f32;
    d.iter_mut()
        .for_each(|v| *v = (*v - mean_luma) * contrast + mean_luma);
    for i in 0..plane {
        let l = luma(d[i], d[plane + i], d[2 * plane + i]);
        for c in 0..3 {
            let v = &mut d[c * plane + i];
            *v = (l + (*v - l) * saturation).clamp(0.0, 1.0);
        }
    }
    Image {
        width: image.width,
        height: image.height,
        data: d,
    }
}

pub fn apply(image: &Image, draw: &AugmentDraw, output_size: usize) -> Image {
    let cropped = image.crop_resize(
        draw.crop_x,
        draw.crop_y,
        draw.crop_w,
        draw.crop_h,
        output_size,
        output_size,
    );
    let flipped = if draw.flip { hflip(&cropped) } else { cropped };
    color_jitter(&flipped, draw.brightness, draw.contrast, draw.saturation)
}

/// One seeded augmentation of `image`, exactly `output_size` square.
pub fn augment(image: &Image, cfg: &AugmentConfig, seed: u64) -> Result<Image> {
    let draw = draw_params(image, cfg, seed)?;
    Ok(apply(image, &draw, cfg.output_size))
}
