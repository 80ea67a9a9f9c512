use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

const HEADER: &str = "epoch,supervised_loss,mean_reward,val_t_rpe,val_r_rpe,val_ate,policy_sigma,skipped_episodes,wall_clock_s";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches (normalized targets).
    pub supervised_loss: f64,
    pub mean_reward: f64,
    pub val_t_rpe: f64,
    pub val_r_rpe: f64,
    pub val_ate: f64,
    /// Mean policy standard deviation over sampled decisions; zero when nothing was sampled.
    pub policy_sigma: f64,
    pub skipped_episodes: usize,
    pub wall_clock_s: f64,
}

/// Append-only per-epoch log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingRecord {
    rows: Vec<EpochRecord>,
}

impl TrainingRecord {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rows(&self) -> &[EpochRecord] {
        &self.rows
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.rows.last()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rejects rows whose epoch does not exceed the last one.
    pub fn push(&mut self, row: EpochRecord) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.epoch <= last.epoch {
                return Err(Error::InvalidArgument(format!("epoch {} after epoch {}", row.epoch, last.epoch)));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    fn line(r: &EpochRecord, wall: bool) -> String {
        let mut s = format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{}",
            r.epoch, r.supervised_loss, r.mean_reward, r.val_t_rpe, r.val_r_rpe, r.val_ate, r.policy_sigma, r.skipped_episodes
        );
        if wall {
            let _ = write!(s, ",{:e}", r.wall_clock_s);
        }
        s
    }

    /// Every field except wall-clock time, exactly.
    pub fn fingerprint(&self) -> String {
        self.rows.iter().map(|r| Self::line(r, false) + "\n").collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{HEADER}\n");
        for r in &self.rows {
            s += &Self::line(r, true);
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_csv())?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let bad = |i: usize, m: String| Error::Parse { path: path.to_path_buf(), message: format!("line {}: {m}", i + 1) };
        let mut rec = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line == HEADER || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(bad(i, format!("expected 9 fields, found {}", f.len())));
            }
            let num = |k: usize| f[k].parse::<f64>().map_err(|e| bad(i, e.to_string()));
            let int = |k: usize| f[k].parse::<usize>().map_err(|e| bad(i, e.to_string()));
            rec.push(EpochRecord {
                epoch: int(0)?,
                supervised_loss: num(1)?,
                mean_reward: num(2)?,
                val_t_rpe: num(3)?,
                val_r_rpe: num(4)?,
                val_ate: num(5)?,
                policy_sigma: num(6)?,
                skipped_episodes: int(7)?,
                wall_clock_s: num(8)?,
            })
            .map_err(|e| bad(i, e.to_string()))?;
        }
        Ok(rec)
    }
}
