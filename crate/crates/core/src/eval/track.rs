//! Siamese cross-correlation tracker on frozen trunk features, plus
//! scripted sequences with exact ground truth.
//!
//! Coordinates are continuous pixels: pixel `i` covers `[i, i + 1)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{images_to_tensor, Image};
use crate::encoder::{self, EncoderParams};
use crate::error::{Result, VinceError};
use crate::rng;
use crate::tensor::Tensor;

/// Axis-aligned box given by its center and size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0) || ![cx, cy, w, h].iter().all(|v| v.is_finite()) {
            return Err(VinceError::dim(format!("degenerate box {w}×{h} at ({cx}, {cy})")));
        }
        Ok(Self { cx, cy, w, h })
    }

    /// From OTB-style `x, y, w, h` with `(x, y)` the top-left corner.
    pub fn from_corner(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(x + w / 2.0, y + h / 2.0, w, h)
    }

    pub fn corner(&self) -> (f64, f64) {
        (self.cx - self.w / 2.0, self.cy - self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn diagonal(&self) -> f64 {
        self.w.hypot(self.h)
    }

    pub fn center_distance(&self, other: &BBox) -> f64 {
        (self.cx - other.cx).hypot(self.cy - other.cy)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let overlap = |c1: f64, s1: f64, c2: f64, s2: f64| {
            let lo = (c1 - s1 / 2.0).max(c2 - s2 / 2.0);
            let hi = (c1 + s1 / 2.0).min(c2 + s2 / 2.0);
            (hi - lo).max(0.0)
        };
        let inter = overlap(self.cx, self.w, other.cx, other.w) * overlap(self.cy, self.h, other.cy, other.h);
        if inter == 0.0 {
            return 0.0;
        }
        if self == other {
            return 1.0;
        }
        inter / (self.area() + other.area() - inter)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            cx: self.cx + dx,
            cy: self.cy + dy,
            ..*self
        }
    }

    /// Shrinks the box to fit a `width × height` frame and keeps its center inside.
    pub fn clamp_to(&self, width: usize, height: usize) -> Self {
        let (fw, fh) = (width as f64, height as f64);
        let w = self.w.min(fw).max(1.0);
        let h = self.h.min(fh).max(1.0);
        Self {
            cx: self.cx.clamp(w / 2.0, fw - w / 2.0),
            cy: self.cy.clamp(h / 2.0, fh - h / 2.0),
            w,
            h,
        }
    }

    pub fn inside(&self, width: usize, height: usize) -> bool {
        let (x, y) = self.corner();
        x >= 0.0 && y >= 0.0 && x + self.w <= width as f64 && y + self.h <= height as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Template crop side, in encoder input pixels.
    pub template_size: usize,
    /// Search crop side, in encoder input pixels.
    pub search_size: usize,
    /// Template crop = box scaled by this factor.
    pub template_context: f64,
    /// Search crop = previous box scaled by this factor.
    pub search_context: f64,
    pub scales: Vec<f64>,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            template_size: 32,
            search_size: 64,
            template_context: 2.0,
            search_context: 4.0,
            scales: vec![0.96, 1.0, 1.04],
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let t = self.template_size as f64 / self.template_context;
        let s = self.search_size as f64 / self.search_context;
        if (t - s).abs() > 1e-9 {
            return Err(VinceError::Config(
                "template and search crops must sample the frame at the same scale".into(),
            ));
        }
        if self.search_size < self.template_size || self.scales.is_empty() {
            return Err(VinceError::Config("search must be at least the template size, with ≥ 1 scale".into()));
        }
        Ok(())
    }
}

fn crop(frame: &Image, b: &BBox, context: f64, out: usize) -> Image {
    let (w, h) = (b.w * context, b.h * context);
    frame.crop_resize(
        (b.cx - w / 2.0) as f32,
        (b.cy - h / 2.0) as f32,
        w as f32,
        h as f32,
        out,
        out,
    )
}

/// `c × h × w` features of one crop.
struct FeatureMap {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    fn split(t: &Tensor) -> Result<Vec<FeatureMap>> {
        let (n, c, h, w) = t.dims4()?;
        Ok((0..n)
            .map(|i| FeatureMap {
                c,
                h,
                w,
                data: t.data()[i * c * h * w..(i + 1) * c * h * w].to_vec(),
            })
            .collect())
    }
}

/// Cosine-normalized cross-correlation of `template` slid over `search`.
/// Returns `(rows, cols, values)`.
pub fn response_map(template: &Tensor, search: &Tensor) -> Result<(usize, usize, Vec<f64>)> {
    let t = FeatureMap::split(template)?.remove(0);
    let s = FeatureMap::split(search)?.remove(0);
    correlate(&t, &s)
}

fn correlate(t: &FeatureMap, s: &FeatureMap) -> Result<(usize, usize, Vec<f64>)> {
    if t.c != s.c || t.h > s.h || t.w > s.w {
        return Err(VinceError::dim("template features do not fit inside search features"));
    }
    let (rh, rw) = (s.h - t.h + 1, s.w - t.w + 1);
    let t_norm = t.data.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
    let mut out = Vec::with_capacity(rh * rw);
    for u in 0..rh {
        for v in 0..rw {
            let (mut dot, mut ss) = (0.0f64, 0.0f64);
            for c in 0..t.c {
                for y in 0..t.h {
                    let trow = &t.data[(c * t.h + y) * t.w..][..t.w];
                    let srow = &s.data[(c * s.h + y + u) * s.w + v..][..t.w];
                    for (a, b) in trow.iter().zip(srow) {
                        dot += *a as f64 * *b as f64;
                        ss += (*b as f64).powi(2);
                    }
                }
            }
            let denom = t_norm * ss.sqrt();
            out.push(if denom > 0.0 { dot / denom } else { 0.0 });
        }
    }
    Ok((rh, rw, out))
}

fn cubic(x: f64) -> f64 {
    // Keys kernel, a = -0.5
    let x = x.abs();
    if x <= 1.0 {
        1.5 * x.powi(3) - 2.5 * x.powi(2) + 1.0
    } else if x < 2.0 {
        -0.5 * x.powi(3) + 2.5 * x.powi(2) - 4.0 * x + 2.0
    } else {
        0.0
    }
}

fn bicubic(rows: usize, cols: usize, values: &[f64], y: f64, x: f64) -> f64 {
    let (y0, x0) = (y.floor() as isize, x.floor() as isize);
    let mut acc = 0.0;
    for dy in -1..=2 {
        let yi = (y0 + dy).clamp(0, rows as isize - 1) as usize;
        let wy = cubic(y - (y0 + dy) as f64);
        for dx in -1..=2 {
            let xi = (x0 + dx).clamp(0, cols as isize - 1) as usize;
            acc += wy * cubic(x - (x0 + dx) as f64) * values[yi * cols + xi];
        }
    }
    acc
}

/// Peak of the response after bicubic upsampling by `factor`, in
/// fractional response-grid units, with its value. Ties go to the first
/// position in row-major order.
fn upsampled_peak(rows: usize, cols: usize, values: &[f64], factor: usize) -> (f64, f64, f64) {
    let (uh, uw) = ((rows - 1) * factor + 1, (cols - 1) * factor + 1);
    let mut best = (0.0, 0.0, f64::NEG_INFINITY);
    for qy in 0..uh {
        for qx in 0..uw {
            let (y, x) = (qy as f64 / factor as f64, qx as f64 / factor as f64);
            let v = bicubic(rows, cols, values, y, x);
            if v > best.2 {
                best = (y, x, v);
            }
        }
    }
    best
}

/// Tracks the object in `init` through `frames`; the first returned box is
/// `init` itself.
pub fn siamfc_track(params: &EncoderParams, frames: &[Image], init: BBox, cfg: &TrackerConfig) -> Result<Vec<BBox>> {
    cfg.validate()?;
    let init = BBox::new(init.cx, init.cy, init.w, init.h)?;
    let Some(first) = frames.first() else {
        return Ok(Vec::new());
    };
    if !init.inside(first.width, first.height) {
        return Err(VinceError::dim("initial box must lie inside frame 0"));
    }
    let stride = params.config().total_stride();
    let template = crop(first, &init, cfg.template_context, cfg.template_size);
    let tfeat = FeatureMap::split(&encoder::spatial_features(params, &images_to_tensor(&[template])?)?)?.remove(0);
    let px_per_unit = cfg.search_size as f64 / cfg.search_context;

    let mut boxes = vec![init];
    let mut current = init;
    for frame in &frames[1..] {
        let crops: Vec<Image> = cfg
            .scales
            .iter()
            .map(|&s| {
                let scaled = BBox { w: current.w * s, h: current.h * s, ..current };
                crop(frame, &scaled, cfg.search_context, cfg.search_size)
            })
            .collect();
        let sfeats = FeatureMap::split(&encoder::spatial_features(params, &images_to_tensor(&crops)?)?)?;
        let mut best: Option<(f64, f64, f64, f64)> = None;
        for (&scale, s) in cfg.scales.iter().zip(&sfeats) {
            let (rh, rw, resp) = correlate(&tfeat, s)?;
            let (u, v, peak) = upsampled_peak(rh, rw, &resp, stride);
            let better = match best {
                None => true,
                Some((_, _, bs, bp)) => peak > bp || (peak == bp && (scale - 1.0).abs() < (bs - 1.0).abs()),
            };
            if better {
                best = Some((u, v, scale, peak));
            }
        }
        let (u, v, scale, _) = best.expect("at least one scale");
        // template pixel p sits on search pixel p + stride·offset
        let centre_offset = (cfg.template_size as f64 - cfg.search_size as f64) / 2.0;
        let dy_search = stride as f64 * u + centre_offset;
        let dx_search = stride as f64 * v + centre_offset;
        let next = BBox {
            cx: current.cx + dx_search * current.w * scale / px_per_unit,
            cy: current.cy + dy_search * current.h * scale / px_per_unit,
            w: current.w * scale,
            h: current.h * scale,
        };
        current = next.clamp_to(frame.width, frame.height);
        boxes.push(current);
    }
    Ok(boxes)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Motion {
    Static,
    Linear { dx: f64, dy: f64 },
}

#[derive(Clone, Debug)]
pub struct ScriptedSequence {
    pub frames: Vec<Image>,
    pub boxes: Vec<BBox>,
}

/// A textured square target moving over a flat grey background.
pub fn scripted_sequence(
    motion: Motion,
    num_frames: usize,
    frame_size: usize,
    target_size: usize,
    seed: u64,
) -> Result<ScriptedSequence> {
    if target_size == 0 || target_size * 2 > frame_size || num_frames == 0 {
        return Err(VinceError::Config("target must fit comfortably inside the frame".into()));
    }
    let mut r = rng::stream(seed, "scripted-target", 0);
    let cells = 2;
    let palette: Vec<[f32; 3]> = (0..cells * cells)
        .map(|_| [r.gen_range(0.0..1.0), r.gen_range(0.0..1.0), r.gen_range(0.0..1.0)])
        .collect();
    let (vx, vy) = match motion {
        Motion::Static => (0.0, 0.0),
        Motion::Linear { dx, dy } => (dx, dy),
    };
    let half = target_size as f64 / 2.0;
    let travel_x = vx * (num_frames - 1) as f64;
    let travel_y = vy * (num_frames - 1) as f64;
    let start_x = frame_size as f64 / 2.0 - travel_x / 2.0;
    let start_y = frame_size as f64 / 2.0 - travel_y / 2.0;
    let mut frames = Vec::with_capacity(num_frames);
    let mut boxes = Vec::with_capacity(num_frames);
    for t in 0..num_frames {
        let b = BBox::new(start_x + vx * t as f64, start_y + vy * t as f64, target_size as f64, target_size as f64)?;
        if !b.inside(frame_size, frame_size) {
            return Err(VinceError::Config("trajectory leaves the frame".into()));
        }
        let plane = frame_size * frame_size;
        let mut data = vec![0.5f32; plane * 3];
        let (x0, y0) = b.corner();
        for y in 0..frame_size {
            for x in 0..frame_size {
                // pixel centres inside the box take the target texture
                let (u, v) = (x as f64 + 0.5 - x0, y as f64 + 0.5 - y0);
                if (0.0..2.0 * half).contains(&u) && (0.0..2.0 * half).contains(&v) {
                    let cell = (v / target_size as f64 * cells as f64) as usize * cells
                        + (u / target_size as f64 * cells as f64) as usize;
                    for c in 0..3 {
                        data[c * plane + y * frame_size + x] = palette[cell][c];
                    }
                }
            }
        }
        frames.push(Image::new(frame_size, frame_size, data)?);
        boxes.push(b);
    }
    Ok(ScriptedSequence { frames, boxes })
}
