//! 8-bit RGB frames on disk (binary PPM) and float CHW images in memory.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Result, VinceError};
use crate::tensor::Tensor;

/// Interleaved 8-bit RGB, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height * 3 {
            return Err(VinceError::dim(format!(
                "{width}×{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Self {
            width,
            height,
            pixels: rgb.iter().copied().cycle().take(width * height * 3).collect(),
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn to_ppm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_ppm_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |why: &str| VinceError::format(path, why.to_string());
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            // skip whitespace and comments
            while pos < bytes.len() {
                match bytes[pos] {
                    b'#' => {
                        while pos < bytes.len() && bytes[pos] != b'\n' {
                            pos += 1;
                        }
                    }
                    c if c.is_ascii_whitespace() => pos += 1,
                    _ => break,
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?);
        }
        if fields[0] != "P6" {
            return Err(bad("not a binary PPM (P6)"));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
        let (width, height, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
        if maxval != 255 {
            return Err(bad("only 8-bit PPM (maxval 255) is supported"));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let need = width * height * 3;
        if bytes.len() < pos + need {
            return Err(bad("truncated raster"));
        }
        Self::new(width, height, bytes[pos..pos + need].to_vec())
    }

    pub fn read_ppm(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_ppm_bytes(&bytes, path)
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_ppm_bytes())?;
        Ok(())
    }

    pub fn to_image(&self) -> Image {
        let plane = self.width * self.height;
        let mut data = vec![0.0f32; plane * 3];
        for (i, px) in self.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + i] = px[c] as f32 / 255.0;
            }
        }
        Image {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// Three-channel float image in CHW layout, nominal range `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(VinceError::dim(format!(
                "{width}×{height} image needs {} floats, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn plane(&self) -> usize {
        self.width * self.height
    }

    pub fn at(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[c * self.plane() + y * self.width + x]
    }

    /// Bilinear sample of channel `c` at continuous pixel coordinates, with
    /// edge clamping.
    pub fn sample(&self, c: usize, x: f32, y: f32) -> f32 {
        let max_x = (self.width - 1) as f32;
        let max_y = (self.height - 1) as f32;
        let x = x.clamp(0.0, max_x);
        let y = y.clamp(0.0, max_y);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = (x - x0 as f32, y - y0 as f32);
        let top = self.at(c, x0, y0) * (1.0 - fx) + self.at(c, x1, y0) * fx;
        let bottom = self.at(c, x0, y1) * (1.0 - fx) + self.at(c, x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Resamples the axis-aligned region `(x, y, w, h)` (pixel units, may
    /// extend past the border) to `out_w × out_h`.
    pub fn crop_resize(&self, x: f32, y: f32, w: f32, h: f32, out_w: usize, out_h: usize) -> Image {
        let sx = w / out_w as f32;
        let sy = h / out_h as f32;
        let plane = out_w * out_h;
        let mut data = vec![0.0f32; plane * 3];
        for c in 0..3 {
            for oy in 0..out_h {
                let src_y = y + (oy as f32 + 0.5) * sy - 0.5;
                for ox in 0..out_w {
                    let src_x = x + (ox as f32 + 0.5) * sx - 0.5;
                    data[c * plane + oy * out_w + ox] = self.sample(c, src_x, src_y);
                }
            }
        }
        Image {
            width: out_w,
            height: out_h,
            data,
        }
    }

    pub fn to_rgb(&self) -> RgbImage {
        let plane = self.plane();
        let mut pixels = Vec::with_capacity(plane * 3);
        for i in 0..plane {
            for c in 0..3 {
                pixels.push((self.data[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        RgbImage {
            width: self.width,
            height: self.height,
            pixels,
        }
    }

    /// Maps `[0, 1]` to the encoder's `[-1, 1]` input range.
    pub fn to_input(&self) -> Vec<f32> {
        self.data.iter().map(|v| v * 2.0 - 1.0).collect()
    }
}

/// Stacks images into an `n × 3 × h × w` encoder input tensor.
pub fn images_to_tensor(images: &[Image]) -> Result<Tensor> {
    let Some(first) = images.first() else {
        return Err(VinceError::Degenerate("no images to stack".into()));
    };
    let mut data = Vec::with_capacity(images.len() * first.data.len());
    for img in images {
        if (img.width, img.height) != (first.width, first.height) {
            return Err(VinceError::dim("images in a batch must share a size"));
        }
        data.extend(img.to_input());
    }
    Tensor::new([images.len(), 3, first.height, first.width], data)
}
