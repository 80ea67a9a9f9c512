//! Top-down trajectory rasters.

use std::str::FromStr;

use image::{Rgb, RgbImage};

use crate::dataio::PoseSE3;
use crate::error::{Error, Result};

pub const GROUND_TRUTH: Rgb<u8> = Rgb([20, 20, 20]);
pub const ESTIMATE: Rgb<u8> = Rgb([200, 30, 30]);
const PALETTE: [Rgb<u8>; 4] = [Rgb([30, 90, 200]), Rgb([20, 150, 60]), Rgb([200, 120, 0]), Rgb([140, 40, 160])];

/// Horizontal and vertical position components.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axes {
    /// KITTI ground plane.
    Xz,
    Xy,
    /// `Xz` unless every path is flat in z.
    Auto,
}

impl FromStr for Axes {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xz" => Ok(Self::Xz),
            "xy" => Ok(Self::Xy),
            "auto" => Ok(Self::Auto),
            _ => Err(Error::Config(format!("unknown axes `{s}` (xz, xy, auto)"))),
        }
    }
}

impl Axes {
    fn resolve(self, paths: &[&[PoseSE3]]) -> Axes {
        if self != Axes::Auto {
            return self;
        }
        let flat = paths.iter().flat_map(|p| p.iter()).all(|p| p.translation.z.abs() < 1e-9);
        if flat {
            Axes::Xy
        } else {
            Axes::Xz
        }
    }

    fn project(self, p: &PoseSE3) -> (f64, f64) {
        match self {
            Axes::Xy => (p.translation.x, p.translation.y),
            _ => (p.translation.x, p.translation.z),
        }
    }
}

/// Colour for the `i`-th extra path.
pub fn palette(i: usize) -> Rgb<u8> {
    PALETTE[i % PALETTE.len()]
}

/// Draws each path as a polyline on a white square, with equal scale on
/// both axes and a 5% margin. The vertical axis points up.
pub fn plot_paths(paths: &[(&[PoseSE3], Rgb<u8>)], axes: Axes, size: u32) -> Result<RgbImage> {
    if size < 16 {
        return Err(Error::InvalidArgument(format!("plot size {size} too small")));
    }
    let axes = axes.resolve(&paths.iter().map(|(p, _)| *p).collect::<Vec<_>>());
    let pts: Vec<(f64, f64)> = paths.iter().flat_map(|(p, _)| p.iter().map(|q| axes.project(q))).collect();
    if pts.is_empty() {
        return Err(Error::InvalidArgument("nothing to plot".into()));
    }
    if pts.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(Error::NonFinite("trajectory position".into()));
    }
    let (mut lo_u, mut hi_u, mut lo_v, mut hi_v) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(u, v) in &pts {
        lo_u = lo_u.min(u);
        hi_u = hi_u.max(u);
        lo_v = lo_v.min(v);
        hi_v = hi_v.max(v);
    }
    let span = (hi_u - lo_u).max(hi_v - lo_v).max(1e-9);
    let margin = 0.05 * size as f64;
    let scale = (size as f64 - 2.0 * margin) / span;
    let (cu, cv) = ((lo_u + hi_u) / 2.0, (lo_v + hi_v) / 2.0);
    let half = size as f64 / 2.0;
    let to_px = |(u, v): (f64, f64)| -> (i64, i64) {
        (((u - cu) * scale + half).round() as i64, (half - (v - cv) * scale).round() as i64)
    };
    let mut img = RgbImage::from_pixel(size, size, Rgb([255, 255, 255]));
    for (path, colour) in paths {
        let px: Vec<(i64, i64)> = path.iter().map(|p| to_px(axes.project(p))).collect();
        for w in px.windows(2) {
            draw_line(&mut img, w[0], w[1], *colour);
        }
        if let [only] = px[..] {
            draw_line(&mut img, only, only, *colour);
        }
    }
    Ok(img)
}

/// Bresenham segment; pixels outside the image are skipped.
pub fn draw_line(img: &mut RgbImage, (mut x0, mut y0): (i64, i64), (x1, y1): (i64, i64), colour: Rgb<u8>) {
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        if x0 >= 0 && y0 >= 0 && (x0 as u32) < img.width() && (y0 as u32) < img.height() {
            img.put_pixel(x0 as u32, y0 as u32, colour);
        }
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count(img: &RgbImage, c: Rgb<u8>) -> usize {
        img.pixels().filter(|&&p| p == c).count()
    }

    #[test]
    fn bresenham_covers_endpoints_and_length() {
        let mut img = RgbImage::new(20, 20);
        let red = Rgb([255, 0, 0]);
        draw_line(&mut img, (2, 3), (15, 9), red);
        assert_eq!(*img.get_pixel(2, 3), red);
        assert_eq!(*img.get_pixel(15, 9), red);
        assert_eq!(count(&img, red), 14);
        draw_line(&mut img, (-5, -5), (30, 30), red);
        assert_eq!(*img.get_pixel(19, 19), red);
    }

    #[test]
    fn straight_path_is_a_horizontal_line() {
        let path: Vec<PoseSE3> = (0..11).map(|i| PoseSE3::from_translation(i as f64, 0.0, 0.0)).collect();
        let img = plot_paths(&[(&path, ESTIMATE)], Axes::Xz, 100).unwrap();
        assert_eq!(count(&img, ESTIMATE), 91);
        assert!((5..96).all(|x| *img.get_pixel(x, 50) == ESTIMATE));
    }

    #[test]
    fn auto_axes_pick_plane_of_motion() {
        let path: Vec<PoseSE3> = (0..11).map(|i| PoseSE3::from_translation(0.0, i as f64, 0.0)).collect();
        let img = plot_paths(&[(&path, GROUND_TRUTH)], Axes::Auto, 64).unwrap();
        let col: Vec<u32> = (0..64).filter(|&y| *img.get_pixel(32, y) == GROUND_TRUTH).collect();
        assert!(col.len() > 50);
        assert!(plot_paths(&[], Axes::Xz, 64).is_err());
    }
}
