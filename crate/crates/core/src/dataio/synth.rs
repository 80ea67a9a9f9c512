//! Procedural stand-in for KITTI: a camera translating and rotating above a
//! textured ground plane, rendered exactly by ray-plane intersection.
//!
//! Camera axes follow the usual optical convention (x right, y down, z along
//! the viewing direction). The plane is `z = depth` in the world frame, so at
//! the start pose the camera looks straight at it and a translation `t` along
//! x shifts the image by `focal * t / depth` pixels. Intensity outside the
//! configured aperture window is flat grey, so only part of the frame carries
//! motion information.

use image::GrayImage;
use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::pose::{Pose6DoF, PoseSE3};
use crate::error::{Error, Result};

pub const MIN_OVERLAP: f64 = 0.6;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    /// Focal length in pixels.
    pub focal: f64,
    /// Distance from the start pose to the textured plane, metres.
    pub depth: f64,
    pub texture_seed: u64,
    pub motion_seed: u64,
    /// Number of frames; yields `frames - 1` pairs.
    pub frames: usize,
    /// Per-step motion bounds `[roll, pitch, yaw, x, y, z]`, each drawn uniformly.
    pub motion_lo: [f64; 6],
    pub motion_hi: [f64; 6],
    /// Coarsest texture wavelength in pixels at the start depth.
    pub wavelength_px: f64,
    pub octaves: usize,
    /// Textured region `[x0, y0, x1, y1]` in fractions of the frame; `None` textures everything.
    pub window: Option<[f64; 4]>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 256,
            height: 128,
            focal: 192.0,
            depth: 48.0,
            texture_seed: 1,
            motion_seed: 1,
            frames: 201,
            motion_lo: [0.0, 0.0, 0.0, 0.5, -0.3, 0.0],
            motion_hi: [0.0, 0.0, 0.0, 1.5, 0.3, 0.0],
            wavelength_px: 12.0,
            octaves: 3,
            window: Some([0.6, 0.15, 0.85, 0.6]),
        }
    }
}

impl SynthConfig {
    pub fn pixels_per_metre(&self) -> f64 {
        self.focal / self.depth
    }

    pub fn principal_point(&self) -> (f64, f64) {
        ((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.width < 2 || self.height < 2 {
            return bad(format!("synthetic image {}x{} too small", self.width, self.height));
        }
        if self.frames < 2 {
            return bad("synthetic sequence needs at least 2 frames".into());
        }
        if !(self.focal > 0.0 && self.depth > 0.0 && self.wavelength_px > 0.0 && self.octaves > 0) {
            return bad("focal, depth, wavelength and octaves must be positive".into());
        }
        for i in 0..6 {
            if !(self.motion_lo[i].is_finite() && self.motion_hi[i].is_finite() && self.motion_lo[i] <= self.motion_hi[i]) {
                return bad(format!("motion bounds for component {i} are invalid"));
            }
        }
        if let Some([x0, y0, x1, y1]) = self.window {
            if !(0.0 <= x0 && x0 < x1 && x1 <= 1.0 && 0.0 <= y0 && y0 < y1 && y1 <= 1.0) {
                return bad(format!("aperture window {:?} outside the unit square", self.window));
            }
        }
        let worst = self.worst_case_overlap();
        if worst < MIN_OVERLAP {
            return bad(format!(
                "motion bounds allow consecutive-frame overlap of {:.1}% (< {:.0}%)",
                worst * 100.0,
                MIN_OVERLAP * 100.0
            ));
        }
        Ok(())
    }

    /// Smallest overlap over every corner of the motion box, with the
    /// camera at the start pose.
    pub fn worst_case_overlap(&self) -> f64 {
        let mut worst = f64::INFINITY;
        for mask in 0..64u32 {
            let mut m = [0.0; 6];
            for (i, v) in m.iter_mut().enumerate() {
                *v = if mask & (1 << i) != 0 { self.motion_hi[i] } else { self.motion_lo[i] };
            }
            worst = worst.min(self.overlap(&PoseSE3::identity(), &Pose6DoF::from_array(m).to_se3()));
        }
        worst
    }

    /// Fraction of frame `a`'s area that is also seen by frame `b`.
    pub fn overlap(&self, a: &PoseSE3, b: &PoseSE3) -> f64 {
        let (w, h) = (self.width as f64 - 1.0, self.height as f64 - 1.0);
        let corners = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)];
        let mut poly = Vec::with_capacity(4);
        for (u, v) in corners {
            match self.ray_hit(b, u, v).and_then(|p| self.project(a, &p)) {
                Some(q) => poly.push(q),
                None => return 0.0,
            }
        }
        let clipped = clip_to_rect(&poly, w, h);
        polygon_area(&clipped) / (w * h)
    }

    /// World point on the plane seen through pixel `(u, v)` from `pose`.
    fn ray_hit(&self, pose: &PoseSE3, u: f64, v: f64) -> Option<Vector3<f64>> {
        let (cx, cy) = self.principal_point();
        let d = pose.rotation * Vector3::new((u - cx) / self.focal, (v - cy) / self.focal, 1.0);
        if d.z <= 1e-9 {
            return None;
        }
        let s = (self.depth - pose.translation.z) / d.z;
        (s > 0.0).then(|| pose.translation + d * s)
    }

    fn project(&self, pose: &PoseSE3, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        let q = pose.inverse().transform_point(p);
        if q.z <= 1e-9 {
            return None;
        }
        let (cx, cy) = self.principal_point();
        Some(Vector2::new(self.focal * q.x / q.z + cx, self.focal * q.y / q.z + cy))
    }

    fn in_window(&self, u: usize, v: usize) -> bool {
        match self.window {
            None => true,
            Some([x0, y0, x1, y1]) => {
                let fx = (u as f64 + 0.5) / self.width as f64;
                let fy = (v as f64 + 0.5) / self.height as f64;
                fx >= x0 && fx < x1 && fy >= y0 && fy < y1
            }
        }
    }

    /// Renders the view from `pose` as 8-bit intensities.
    pub fn render(&self, pose: &PoseSE3) -> GrayImage {
        let texture = ValueNoise::new(self.texture_seed, self.octaves, self.wavelength_px / self.pixels_per_metre());
        let mut img = GrayImage::new(self.width as u32, self.height as u32);
        for v in 0..self.height {
            for u in 0..self.width {
                let value = if self.in_window(u, v) {
                    self.ray_hit(pose, u as f64, v as f64).map_or(0.5, |p| texture.sample(p.x, p.y))
                } else {
                    0.5
                };
                img.put_pixel(u as u32, v as u32, image::Luma([(value * 255.0).round().clamp(0.0, 255.0) as u8]));
            }
        }
        img
    }
}

/// Multi-octave value noise in `[0, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct ValueNoise {
    seed: u64,
    octaves: usize,
    wavelength: f64,
}

impl ValueNoise {
    pub fn new(seed: u64, octaves: usize, wavelength: f64) -> Self {
        Self { seed, octaves, wavelength }
    }

    fn lattice(&self, octave: usize, i: i64, j: i64) -> f64 {
        let mut z = self.seed ^ (octave as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z ^= (i as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = z.rotate_left(31) ^ (j as u64).wrapping_mul(0x94D0_49BB_1331_11EB);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let mut total = 0.0;
        let mut norm = 0.0;
        let mut amp = 1.0;
        let mut wl = self.wavelength;
        for o in 0..self.octaves {
            let (fx, fy) = (x / wl, y / wl);
            let (i, j) = (fx.floor(), fy.floor());
            let (tx, ty) = (smooth(fx - i), smooth(fy - j));
            let (i, j) = (i as i64, j as i64);
            let a = self.lattice(o, i, j);
            let b = self.lattice(o, i + 1, j);
            let c = self.lattice(o, i, j + 1);
            let d = self.lattice(o, i + 1, j + 1);
            let top = a + (b - a) * tx;
            let bottom = c + (d - c) * tx;
            total += amp * (top + (bottom - top) * ty);
            norm += amp;
            amp *= 0.6;
            wl *= 0.5;
        }
        total / norm
    }
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn clip_to_rect(poly: &[Vector2<f64>], w: f64, h: f64) -> Vec<Vector2<f64>> {
    // Sutherland-Hodgman against the four half-planes of [0, w] x [0, h].
    let edges: [(usize, f64, bool); 4] = [(0, 0.0, true), (0, w, false), (1, 0.0, true), (1, h, false)];
    let mut out = poly.to_vec();
    for (axis, bound, keep_greater) in edges {
        let inside = |p: &Vector2<f64>| if keep_greater { p[axis] >= bound } else { p[axis] <= bound };
        let input = std::mem::take(&mut out);
        for (k, cur) in input.iter().enumerate() {
            let prev = &input[(k + input.len() - 1) % input.len()];
            let cross = |a: &Vector2<f64>, b: &Vector2<f64>| {
                let t = (bound - a[axis]) / (b[axis] - a[axis]);
                a + (b - a) * t
            };
            match (inside(prev), inside(cur)) {
                (true, true) => out.push(*cur),
                (true, false) => out.push(cross(prev, cur)),
                (false, true) => {
                    out.push(cross(prev, cur));
                    out.push(*cur);
                }
                (false, false) => {}
            }
        }
        if out.is_empty() {
            break;
        }
    }
    out
}

fn polygon_area(p: &[Vector2<f64>]) -> f64 {
    if p.len() < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for k in 0..p.len() {
        let (a, b) = (p[k], p[(k + 1) % p.len()]);
        s += a.x * b.y - b.x * a.y;
    }
    s.abs() / 2.0
}

/// A rendered sequence with its generating motion.
#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub config: SynthConfig,
    pub images: Vec<GrayImage>,
    /// Absolute camera poses, first is identity.
    pub poses: Vec<PoseSE3>,
    /// `relatives[i]` moves frame `i` onto frame `i + 1`.
    pub relatives: Vec<Pose6DoF>,
}

/// Draws the per-step motions of `cfg` without rendering.
pub fn sample_motion(cfg: &SynthConfig) -> Vec<Pose6DoF> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.motion_seed);
    (0..cfg.frames - 1)
        .map(|_| {
            let mut m = [0.0; 6];
            for (i, v) in m.iter_mut().enumerate() {
                let (lo, hi) = (cfg.motion_lo[i], cfg.motion_hi[i]);
                *v = if hi > lo { rng.gen_range(lo..hi) } else { lo };
            }
            Pose6DoF::from_array(m)
        })
        .collect()
}

impl SyntheticSequence {
    pub fn generate(cfg: &SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let relatives = sample_motion(cfg);
        let poses = crate::metrics::accumulate(&relatives);
        for (k, p) in poses.iter().enumerate() {
            if cfg.ray_hit(p, 0.0, 0.0).is_none() || p.translation.z >= cfg.depth {
                return Err(Error::Config(format!("camera leaves the plane's view at frame {k}")));
            }
        }
        let images = poses.iter().map(|p| cfg.render(p)).collect();
        Ok(Self { config: cfg.clone(), images, poses, relatives })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Writes `sequences/NN/image_0/*.png` and `poses/NN.txt` under `root`.
    pub fn save_kitti(&self, root: &std::path::Path, id: usize) -> Result<()> {
        let dir = super::kitti::image_dir(root, id);
        std::fs::create_dir_all(&dir)?;
        for (i, img) in self.images.iter().enumerate() {
            img.save(dir.join(format!("{i:06}.png")))?;
        }
        super::kitti::write_pose_file(&super::kitti::pose_path(root, id), &self.poses)
    }
}
