use std::fmt::Write as _;
use std::path::Path;

use image::{GrayImage, Luma};

use crate::error::{Error, Result};

/// 2-D histogram of visited glimpse locations over `[-1, 1]^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationHistogram {
    pub bins: usize,
    pub counts: Vec<u64>,
}

impl LocationHistogram {
    pub fn new(bins: usize) -> Self {
        Self { bins: bins.max(1), counts: vec![0; bins.max(1) * bins.max(1)] }
    }

    fn bin(&self, v: f64) -> usize {
        let b = ((v.clamp(-1.0, 1.0) + 1.0) / 2.0 * self.bins as f64).floor() as usize;
        b.min(self.bins - 1)
    }

    pub fn add(&mut self, x: f64, y: f64) {
        let (i, j) = (self.bin(x), self.bin(y));
        self.counts[j * self.bins + i] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Rows top to bottom (`y = -1` first), counts separated by spaces.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for row in self.counts.chunks(self.bins) {
            let line: Vec<String> = row.iter().map(u64::to_string).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }

    /// Grayscale heat map, `cell` pixels per bin, brightest at the max count.
    pub fn to_image(&self, cell: u32) -> GrayImage {
        let max = self.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
        let side = self.bins as u32 * cell;
        GrayImage::from_fn(side, side, |x, y| {
            let (i, j) = ((x / cell) as usize, (y / cell) as usize);
            Luma([(self.counts[j * self.bins + i] as f64 / max * 255.0).round() as u8])
        })
    }
}

/// Per-epoch policy log line plus the visited-location histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDiagnostics {
    pub epoch: usize,
    pub mean_sigma: f64,
    pub mean_reward: f64,
    pub advantage_variance: f64,
    pub histogram: LocationHistogram,
}

impl PolicyDiagnostics {
    pub fn new(epoch: usize, bins: usize) -> Self {
        Self { epoch, mean_sigma: 0.0, mean_reward: 0.0, advantage_variance: 0.0, histogram: LocationHistogram::new(bins) }
    }

    pub fn to_text(&self) -> String {
        format!(
            "epoch {}\nmean_sigma {:.6}\nmean_reward {:.6}\nadvantage_variance {:.6}\nvisits {}\n{}",
            self.epoch,
            self.mean_sigma,
            self.mean_reward,
            self.advantage_variance,
            self.histogram.total(),
            self.histogram.to_text()
        )
    }

    /// Writes `policy_epoch_NNN.txt` and `policy_epoch_NNN.png` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let stem = format!("policy_epoch_{:03}", self.epoch);
        std::fs::write(dir.join(format!("{stem}.txt")), self.to_text())?;
        self.histogram
            .to_image(16)
            .save(dir.join(format!("{stem}.png")))
            .map_err(|e| Error::Format(format!("writing heat map: {e}")))
    }
}

/// Population variance.
pub fn variance(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_bins_corners() {
        let mut h = LocationHistogram::new(4);
        h.add(-1.0, -1.0);
        h.add(1.0, 1.0);
        h.add(0.1, -0.9);
        h.add(5.0, -5.0);
        assert_eq!(h.counts[0], 1);
        assert_eq!(h.counts[15], 1);
        assert_eq!(h.counts[2], 1);
        assert_eq!(h.counts[3], 1);
        assert_eq!(h.total(), 4);
        assert_eq!(h.to_text().lines().count(), 4);
    }

    #[test]
    fn writes_text_and_image() {
        let dir = tempfile::tempdir().unwrap();
        let mut d = PolicyDiagnostics::new(3, 8);
        d.histogram.add(0.0, 0.0);
        d.write(dir.path()).unwrap();
        let txt = std::fs::read_to_string(dir.path().join("policy_epoch_003.txt")).unwrap();
        assert!(txt.contains("mean_sigma"));
        let img = image::open(dir.path().join("policy_epoch_003.png")).unwrap().to_luma8();
        assert_eq!(img.dimensions(), (128, 128));
        assert_eq!(img.get_pixel(64, 64)[0], 255);
    }
}
