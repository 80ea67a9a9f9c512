use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const REPORT_NOTE: &str =
    "drift over 100..800 m sub-sequences; segments weighted equally within a length, lengths averaged equally";

const HEADER: &str = "sequence,frames,path_m,t_rpe_pct,r_rpe_deg_per_100m,ate_m,rpe_trans_m,rpe_rot_rad";

/// Per-sequence evaluation summary.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftReport {
    pub sequence: String,
    pub frames: usize,
    pub path_length: f64,
    /// Percent.
    pub t_rpe: f64,
    /// Degrees per 100 m.
    pub r_rpe: f64,
    /// Metres.
    pub ate: f64,
    /// Mean `k = 1` relative translation error, metres.
    pub rpe_trans: f64,
    /// Mean `k = 1` relative rotation error, radians.
    pub rpe_rot: f64,
}

impl DriftReport {
    /// Unweighted mean of the metric columns.
    pub fn average(reports: &[DriftReport]) -> Option<DriftReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let mean = |f: fn(&DriftReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Some(DriftReport {
            sequence: "mean".into(),
            frames: reports.iter().map(|r| r.frames).sum(),
            path_length: reports.iter().map(|r| r.path_length).sum(),
            t_rpe: mean(|r| r.t_rpe),
            r_rpe: mean(|r| r.r_rpe),
            ate: mean(|r| r.ate),
            rpe_trans: mean(|r| r.rpe_trans),
            rpe_rot: mean(|r| r.rpe_rot),
        })
    }
}

/// Comma-separated report with a `#` comment line describing the averaging.
pub fn write_csv(path: &Path, reports: &[DriftReport]) -> Result<()> {
    let mut s = format!("# {REPORT_NOTE}\n{HEADER}\n");
    for r in reports {
        let _ = writeln!(
            s,
            "{},{},{:e},{:e},{:e},{:e},{:e},{:e}",
            r.sequence, r.frames, r.path_length, r.t_rpe, r.r_rpe, r.ate, r.rpe_trans, r.rpe_rot
        );
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<DriftReport>> {
    let text = std::fs::read_to_string(path)?;
    let bad = |line: usize, m: &str| Error::Parse { path: path.to_path_buf(), message: format!("line {line}: {m}") };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line == HEADER || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(bad(i + 1, &format!("expected 8 fields, found {}", f.len())));
        }
        let num = |k: usize| f[k].parse::<f64>().map_err(|e| bad(i + 1, &e.to_string()));
        out.push(DriftReport {
            sequence: f[0].to_string(),
            frames: f[1].parse().map_err(|e: std::num::ParseIntError| bad(i + 1, &e.to_string()))?,
            path_length: num(2)?,
            t_rpe: num(3)?,
            r_rpe: num(4)?,
            ate: num(5)?,
            rpe_trans: num(6)?,
            rpe_rot: num(7)?,
        });
    }
    Ok(out)
}

/// Human-readable table: one row per sequence plus the mean.
pub fn format_table(title: &str, reports: &[DriftReport]) -> String {
    let mut s = format!("{title}\n({REPORT_NOTE})\n");
    let _ = writeln!(s, "{:<10} {:>7} {:>10} {:>10} {:>16} {:>10}", "sequence", "frames", "path (m)", "t_rpe (%)", "r_rpe (deg/100m)", "ATE (m)");
    let mean = DriftReport::average(reports);
    for r in reports.iter().chain(mean.as_ref()) {
        let _ = writeln!(
            s,
            "{:<10} {:>7} {:>10.1} {:>10.3} {:>16.3} {:>10.3}",
            r.sequence, r.frames, r.path_length, r.t_rpe, r.r_rpe, r.ate
        );
    }
    s
}
