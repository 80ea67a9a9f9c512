//! Frame preprocessing: optional bilinear resize, CLAHE, then per-image z-score.

use image::imageops::{self, FilterType};
use image::GrayImage;

use crate::error::{Error, Result};

/// Floor applied to the standard deviation before dividing.
pub const STD_FLOOR: f64 = 1e-8;

/// A preprocessed grayscale image, row-major, z-score normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
    pub source_index: usize,
    pub original_size: (u32, u32),
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>, source_index: usize) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::Shape(format!("frame {width}x{height} with {} pixels", pixels.len())));
        }
        Ok(Self { width, height, pixels, source_index, original_size: (width as u32, height as u32) })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, pixels: vec![0.0; width * height], source_index: 0, original_size: (width as u32, height as u32) }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    pub fn mean_std(&self) -> (f64, f64) {
        mean_std(&self.pixels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClaheConfig {
    /// Tile side in pixels.
    pub tile: usize,
    pub clip_limit: f64,
}

impl Default for ClaheConfig {
    fn default() -> Self {
        Self { tile: 8, clip_limit: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessConfig {
    /// Output `(width, height)`; `None` keeps the input size.
    pub resize: Option<(u32, u32)>,
    pub clahe: Option<ClaheConfig>,
}

impl PreprocessConfig {
    /// 1200x360 bilinear resize, CLAHE on 8 px tiles with clip 2.0.
    pub fn kitti() -> Self {
        Self { resize: Some((1200, 360)), clahe: Some(ClaheConfig::default()) }
    }

    /// z-score only.
    pub fn synthetic() -> Self {
        Self { resize: None, clahe: None }
    }
}

pub fn preprocess(raw: &GrayImage, cfg: &PreprocessConfig, source_index: usize) -> Result<Frame> {
    let (w0, h0) = raw.dimensions();
    if w0 == 0 || h0 == 0 {
        return Err(Error::InvalidArgument("empty image".into()));
    }
    let resized;
    let img = match cfg.resize {
        Some((w, h)) if (w, h) != (w0, h0) => {
            resized = imageops::resize(raw, w, h, FilterType::Triangle);
            &resized
        }
        _ => raw,
    };
    let equalized;
    let img = match cfg.clahe {
        Some(c) => {
            equalized = clahe(img, c)?;
            &equalized
        }
        None => img,
    };
    let pixels = zscore(&img.as_raw().iter().map(|&v| v as f32).collect::<Vec<_>>());
    Ok(Frame {
        width: img.width() as usize,
        height: img.height() as usize,
        pixels,
        source_index,
        original_size: (w0, h0),
    })
}

pub fn mean_std(v: &[f32]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `(v - mean) / max(std, 1e-8)` with population statistics.
pub fn zscore(v: &[f32]) -> Vec<f32> {
    let (mean, std) = mean_std(v);
    let s = std.max(STD_FLOOR);
    v.iter().map(|&x| ((x as f64 - mean) / s) as f32).collect()
}

/// Contrast limited adaptive histogram equalization.
///
/// Each tile gets a clipped-histogram equalization lookup table; the clip
/// level is `clip_limit * tile_area / 256` counts (at least one), the excess
/// is spread evenly over all bins. Pixels blend the tables of the four
/// nearest tile centers bilinearly.
pub fn clahe(img: &GrayImage, cfg: ClaheConfig) -> Result<GrayImage> {
    if cfg.tile == 0 || cfg.clip_limit <= 0.0 {
        return Err(Error::InvalidArgument(format!("CLAHE tile {} clip {}", cfg.tile, cfg.clip_limit)));
    }
    let (w, h) = (img.width() as usize, img.height() as usize);
    let t = cfg.tile;
    let (tx, ty) = (w.div_ceil(t), h.div_ceil(t));
    let src = img.as_raw();

    let mut luts = vec![[0u8; 256]; tx * ty];
    for j in 0..ty {
        for i in 0..tx {
            let (x0, x1) = (i * t, ((i + 1) * t).min(w));
            let (y0, y1) = (j * t, ((j + 1) * t).min(h));
            let mut hist = [0f64; 256];
            for y in y0..y1 {
                for &v in &src[y * w + x0..y * w + x1] {
                    hist[v as usize] += 1.0;
                }
            }
            let area = ((x1 - x0) * (y1 - y0)) as f64;
            let limit = (cfg.clip_limit * area / 256.0).max(1.0);
            let mut excess = 0.0;
            for c in hist.iter_mut() {
                if *c > limit {
                    excess += *c - limit;
                    *c = limit;
                }
            }
            let share = excess / 256.0;
            let mut cdf = 0.0;
            let lut = &mut luts[j * tx + i];
            for (b, c) in hist.iter().enumerate() {
                cdf += c + share;
                lut[b] = (cdf / area * 255.0).round().clamp(0.0, 255.0) as u8;
            }
        }
    }

    let coord = |p: usize, tiles: usize| -> (usize, usize, f64) {
        let c = ((p as f64 + 0.5) / t as f64 - 0.5).clamp(0.0, (tiles - 1) as f64);
        let c0 = c.floor() as usize;
        let c1 = (c0 + 1).min(tiles - 1);
        (c0, c1, c - c0 as f64)
    };
    let mut out = GrayImage::new(w as u32, h as u32);
    let dst: &mut [u8] = &mut out;
    for y in 0..h {
        let (j0, j1, fy) = coord(y, ty);
        for x in 0..w {
            let (i0, i1, fx) = coord(x, tx);
            let v = src[y * w + x] as usize;
            let a = luts[j0 * tx + i0][v] as f64;
            let b = luts[j0 * tx + i1][v] as f64;
            let c = luts[j1 * tx + i0][v] as f64;
            let d = luts[j1 * tx + i1][v] as f64;
            let top = a + (b - a) * fx;
            let bottom = c + (d - c) * fx;
            dst[y * w + x] = (top + (bottom - top) * fy).round() as u8;
        }
    }
    Ok(out)
}
