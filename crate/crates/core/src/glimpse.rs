//! Glimpse sensor and encoder.
//!
//! A glimpse takes three square crops (32, 64 and 128 px) of both frames of a
//! pair around one location, average-pools the two larger ones down to 32x32,
//! runs each scale through its own strided convolution stack and gates the
//! fused features with an encoding of the location.

use std::path::Path;

use rand::Rng;
use serde::Serialize;

use crate::dataio::Frame;
use crate::error::{Error, Result};
use crate::nn::{conv_out_size, Conv2d, Linear, ParameterSet, Real, Tape, Tensor, Var};

/// Side of every stored patch.
pub const PATCH: usize = 32;
/// Crop sides before pooling.
pub const SCALES: [usize; 3] = [32, 64, 128];
/// Raw values consumed per glimpse: three 32x32 patches.
pub const PIXELS_PER_GLIMPSE: usize = 3 * PATCH * PATCH;

/// Normalized image coordinates; `(-1, -1)` is the top-left pixel centre,
/// `(1, 1)` the bottom-right one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Location {
    pub x: f64,
    pub y: f64,
}

impl Location {
    pub const CENTER: Location = Location { x: 0.0, y: 0.0 };

    /// Clamps both components into `[-1, 1]`.
    pub fn new(x: f64, y: f64) -> Self {
        Self { x: x.clamp(-1.0, 1.0), y: y.clamp(-1.0, 1.0) }
    }

    pub fn uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self { x: rng.gen_range(-1.0..=1.0), y: rng.gen_range(-1.0..=1.0) }
    }

    pub fn to_pixel(&self, width: usize, height: usize) -> (f64, f64) {
        ((self.x + 1.0) / 2.0 * (width as f64 - 1.0), (self.y + 1.0) / 2.0 * (height as f64 - 1.0))
    }

    pub fn from_pixel(px: f64, py: f64, width: usize, height: usize) -> Self {
        Self::new(2.0 * px / (width as f64 - 1.0) - 1.0, 2.0 * py / (height as f64 - 1.0) - 1.0)
    }
}

/// Three `2 x 32 x 32` patches (channel 0 from the first frame).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatchPyramid {
    pub levels: [Vec<f32>; 3],
}

impl PatchPyramid {
    pub fn level(&self, k: usize) -> &[f32] {
        &self.levels[k]
    }
}

/// Crops of side 32, 64, 128 centred on `loc`, zero-filled outside the
/// image, with the larger two average-pooled by 2 and 4.
pub fn extract_pyramid(first: &Frame, second: &Frame, loc: Location) -> Result<PatchPyramid> {
    if (first.width, first.height) != (second.width, second.height) {
        return Err(Error::Shape(format!(
            "pair frames differ: {}x{} vs {}x{}",
            first.width, first.height, second.width, second.height
        )));
    }
    let loc = Location::new(loc.x, loc.y);
    let (px, py) = loc.to_pixel(first.width, first.height);
    let (cx, cy) = (px.round() as i64, py.round() as i64);
    let levels = SCALES.map(|side| {
        let mut out = vec![0f32; 2 * PATCH * PATCH];
        let factor = side / PATCH;
        let (x0, y0) = (cx - side as i64 / 2, cy - side as i64 / 2);
        let inv = 1.0 / (factor * factor) as f32;
        for (c, frame) in [first, second].into_iter().enumerate() {
            let plane = &mut out[c * PATCH * PATCH..(c + 1) * PATCH * PATCH];
            for oy in 0..PATCH {
                for ox in 0..PATCH {
                    let mut acc = 0f32;
                    for dy in 0..factor {
                        let y = y0 + (oy * factor + dy) as i64;
                        if y < 0 || y >= frame.height as i64 {
                            continue;
                        }
                        let row = &frame.pixels[y as usize * frame.width..(y as usize + 1) * frame.width];
                        for dx in 0..factor {
                            let x = x0 + (ox * factor + dx) as i64;
                            if x >= 0 && x < frame.width as i64 {
                                acc += row[x as usize];
                            }
                        }
                    }
                    plane[oy * PATCH + ox] = if factor == 1 { acc } else { acc * inv };
                }
            }
        }
        out
    });
    Ok(PatchPyramid { levels })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlimpseConfig {
    /// Output channels of the 3x3 stack applied to the finest patch.
    pub fine_channels: Vec<usize>,
    pub fine_strides: Vec<usize>,
    /// Output channels of each 5x5 stack applied to the pooled patches.
    pub coarse_channels: Vec<usize>,
    pub coarse_strides: Vec<usize>,
    /// Width of the glimpse vector.
    pub width: usize,
}

impl GlimpseConfig {
    pub fn full() -> Self {
        Self {
            fine_channels: vec![32, 32, 64, 64, 128, 128],
            fine_strides: vec![1, 2, 1, 2, 1, 2],
            coarse_channels: vec![32, 32, 64, 64],
            coarse_strides: vec![1, 2, 1, 2],
            width: 512,
        }
    }

    /// Same topology with narrower channels.
    pub fn desk() -> Self {
        Self {
            fine_channels: vec![8, 8, 16, 16, 32, 32],
            fine_strides: vec![1, 2, 1, 2, 1, 2],
            coarse_channels: vec![8, 8, 16, 16],
            coarse_strides: vec![1, 2, 1, 2],
            width: 128,
        }
    }

    pub fn tiny(width: usize) -> Self {
        Self {
            fine_channels: vec![2, 2, 2, 2, 2, 2],
            fine_strides: vec![1, 2, 1, 2, 1, 2],
            coarse_channels: vec![2, 2, 2, 2],
            coarse_strides: vec![1, 2, 1, 2],
            width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |c: &[usize], s: &[usize]| !c.is_empty() && c.len() == s.len() && c.iter().all(|&v| v > 0) && s.iter().all(|&v| v == 1 || v == 2);
        if !ok(&self.fine_channels, &self.fine_strides) || !ok(&self.coarse_channels, &self.coarse_strides) || self.width == 0 {
            return Err(Error::Config("glimpse stacks need matching nonempty channel/stride lists with strides in {1, 2}".into()));
        }
        Ok(())
    }

    fn flat_size(channels: &[usize], strides: &[usize], k: usize) -> usize {
        let side = strides.iter().fold(PATCH, |s, &st| conv_out_size(s, k, st, k / 2));
        channels.last().copied().unwrap_or(0) * side * side
    }

    /// Length of the concatenated flattened features.
    pub fn feature_size(&self) -> usize {
        Self::flat_size(&self.fine_channels, &self.fine_strides, 3)
            + 2 * Self::flat_size(&self.coarse_channels, &self.coarse_strides, 5)
    }
}

#[derive(Debug, Clone)]
pub struct GlimpseNet {
    pub config: GlimpseConfig,
    pub stacks: [Vec<Conv2d>; 3],
    pub fuse: Linear,
    pub location: Linear,
}

impl GlimpseNet {
    pub fn new<T: Real, R: Rng + ?Sized>(ps: &mut ParameterSet<T>, path: &str, config: GlimpseConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let stack = |ps: &mut ParameterSet<T>, name: &str, ch: &[usize], st: &[usize], k: usize, rng: &mut R| -> Result<Vec<Conv2d>> {
            let mut inp = 2;
            ch.iter()
                .zip(st)
                .enumerate()
                .map(|(i, (&c, &s))| {
                    let layer = Conv2d::new(ps, &format!("{path}.{name}.{i}"), inp, c, k, s, k / 2, rng);
                    inp = c;
                    layer
                })
                .collect()
        };
        let p1 = stack(ps, "p1", &config.fine_channels, &config.fine_strides, 3, rng)?;
        let p2 = stack(ps, "p2", &config.coarse_channels, &config.coarse_strides, 5, rng)?;
        let p3 = stack(ps, "p3", &config.coarse_channels, &config.coarse_strides, 5, rng)?;
        let fuse = Linear::relu_input(ps, &format!("{path}.fuse"), config.feature_size(), config.width, rng)?;
        let location = Linear::new(ps, &format!("{path}.location"), 2, config.width, rng)?;
        Ok(Self { config, stacks: [p1, p2, p3], fuse, location })
    }

    pub fn num_params(&self) -> usize {
        self.stacks.iter().flatten().map(Conv2d::num_params).sum::<usize>() + self.fuse.num_params() + self.location.num_params()
    }

    /// `g = relu(W_f [f1, f2, f3] + b_f) * sigmoid(W_l loc + b_l)` for a batch.
    /// Locations enter as constants: no gradient reaches them.
    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, pyramids: &[PatchPyramid], locs: &[Location]) -> Result<Var> {
        if pyramids.len() != locs.len() || pyramids.is_empty() {
            return Err(Error::Shape(format!("{} pyramids for {} locations", pyramids.len(), locs.len())));
        }
        let n = pyramids.len();
        let mut feats = Vec::with_capacity(3);
        for (k, stack) in self.stacks.iter().enumerate() {
            let data: Vec<T> = pyramids.iter().flat_map(|p| p.levels[k].iter().map(|&v| T::from_f64_lossy(v as f64))).collect();
            let mut x = tape.constant(Tensor::new(&[n, 2, PATCH, PATCH], data)?);
            for conv in stack {
                let z = conv.forward(tape, x)?;
                x = tape.relu(z);
            }
            feats.push(tape.flatten(x)?);
        }
        let f = tape.concat_cols(&feats)?;
        let z = self.fuse.forward(tape, f)?;
        let what = tape.relu(z);
        let l: Vec<T> = locs.iter().flat_map(|l| [T::from_f64_lossy(l.x), T::from_f64_lossy(l.y)]).collect();
        let l = tape.constant(Tensor::new(&[n, 2], l)?);
        let lz = self.location.forward(tape, l)?;
        let gate = tape.sigmoid(lz);
        let g = tape.mul(what, gate)?;
        tape.ensure_finite(g, "glimpse encoder")
    }
}

/// One observation step, for inspection dumps.
#[derive(Debug, Clone, Serialize)]
pub struct GlimpseRecord {
    pub sample: usize,
    pub step: usize,
    pub location: Location,
    pub pyramid: PatchPyramid,
}

pub fn write_debug_dump(path: &Path, records: &[GlimpseRecord]) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(f, records).map_err(|e| Error::Format(e.to_string()))
}
