//! Train / validation / test datasets for a run.

use std::path::Path;

use super::config::{DatasetKind, RunConfig};
use crate::dataio::kitti::KittiSequence;
use crate::dataio::split::available_ids;
use crate::dataio::{split_sequences, Dataset, PreprocessConfig, Sequence, Split, SynthConfig, SyntheticSequence};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct DataSplits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

impl DataSplits {
    pub fn get(&self, name: SplitName) -> &Dataset {
        match name {
            SplitName::Train => &self.train,
            SplitName::Validation => &self.validation,
            SplitName::Test => &self.test,
        }
    }

    /// Finds a sequence by id in any split.
    pub fn sequence(&self, id: usize) -> Option<&Sequence> {
        [&self.train, &self.validation, &self.test].into_iter().flat_map(|d| &d.sequences).find(|s| s.id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "val" | "validation" => Ok(Self::Validation),
            "test" => Ok(Self::Test),
            _ => Err(Error::Config(format!("unknown split `{s}` (train, val, test)"))),
        }
    }
}

/// Generator settings for synthetic sequence `id`; texture and motion are
/// drawn from seeds derived from `data_seed` and `id`.
pub fn synthetic_config(data_seed: u64, id: usize, frames: usize) -> SynthConfig {
    let base = data_seed.wrapping_mul(1_000_003);
    SynthConfig {
        frames,
        texture_seed: base.wrapping_add(2 * id as u64),
        motion_seed: base.wrapping_add(2 * id as u64 + 1),
        ..SynthConfig::default()
    }
}

/// `train` training sequences followed by one validation and two test
/// sequences, numbered consecutively from zero.
pub fn synthetic_splits(data_seed: u64, train: usize, frames: usize) -> Result<DataSplits> {
    let make = |id: usize| -> Result<Sequence> {
        let s = SyntheticSequence::generate(&synthetic_config(data_seed, id, frames))?;
        Sequence::from_synthetic(id, &s)
    };
    Ok(DataSplits {
        train: Dataset::new((0..train).map(make).collect::<Result<_>>()?),
        validation: Dataset::new(vec![make(train)?]),
        test: Dataset::new((train + 1..train + 3).map(make).collect::<Result<_>>()?),
    })
}

/// Writes the synthetic splits in KITTI layout; returns the sequence ids.
pub fn write_synthetic(root: &Path, data_seed: u64, count: usize, frames: usize) -> Result<Vec<usize>> {
    for id in 0..count {
        SyntheticSequence::generate(&synthetic_config(data_seed, id, frames))?.save_kitti(root, id)?;
    }
    Ok((0..count).collect())
}

/// KITTI-layout sequences under `root`, partitioned by the standard split.
pub fn kitti_splits(root: &Path, preprocess: PreprocessConfig, in_memory: bool) -> Result<DataSplits> {
    let ids = available_ids(root);
    if ids.is_empty() {
        return Err(Error::Config(format!("no pose files under {}", root.join("poses").display())));
    }
    let mut seqs = Vec::new();
    for id in ids {
        let seq = Sequence::from_kitti(KittiSequence::open_in_root(root, id)?, preprocess.clone());
        seqs.push(if in_memory { seq.into_memory()? } else { seq });
    }
    let Split { train, validation, test } = split_sequences(seqs, |s| s.id);
    if train.is_empty() {
        return Err(Error::Config(format!("no training sequences under {}", root.display())));
    }
    Ok(DataSplits { train: Dataset::new(train), validation: Dataset::new(validation), test: Dataset::new(test) })
}

pub fn load_splits(cfg: &RunConfig) -> Result<DataSplits> {
    let root = || cfg.data_root.as_deref().ok_or_else(|| Error::Config(format!("dataset {} needs data_root", cfg.dataset)));
    match cfg.dataset {
        DatasetKind::Synthetic => synthetic_splits(cfg.data_seed, cfg.synth_sequences, cfg.synth_frames),
        DatasetKind::Kitti => kitti_splits(root()?, PreprocessConfig::kitti(), false),
        DatasetKind::SyntheticDir => kitti_splits(root()?, PreprocessConfig::synthetic(), true),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_split_sizes_and_distinct_sequences() {
        let s = synthetic_splits(7, 3, 6).unwrap();
        assert_eq!((s.train.sequences.len(), s.validation.sequences.len(), s.test.sequences.len()), (3, 1, 2));
        assert_eq!(s.train.num_pairs(), 15);
        assert_eq!(s.test.sequences.iter().map(|q| q.id).collect::<Vec<_>>(), vec![4, 5]);
        let a = s.train.sequences[0].frame(0).unwrap();
        let b = s.train.sequences[1].frame(0).unwrap();
        assert_ne!(a.pixels, b.pixels);
        assert_ne!(s.train.sequences[0].relatives(), s.train.sequences[1].relatives());
        assert!(s.sequence(5).is_some() && s.sequence(6).is_none());
    }

    #[test]
    fn written_synthetic_data_loads_with_standard_split() {
        let dir = tempfile::tempdir().unwrap();
        write_synthetic(dir.path(), 3, 11, 4).unwrap();
        let s = kitti_splits(dir.path(), PreprocessConfig::synthetic(), true).unwrap();
        assert_eq!(s.train.sequences.iter().map(|q| q.id).collect::<Vec<_>>(), vec![0, 2, 4, 5, 6, 8, 9]);
        assert_eq!(s.validation.sequences[0].id, 10);
        assert_eq!(s.test.sequences.iter().map(|q| q.id).collect::<Vec<_>>(), vec![3, 7]);
        let mem = synthetic_splits(3, 10, 4).unwrap();
        let disk = s.sequence(4).unwrap();
        let orig = mem.sequence(4).unwrap();
        assert_eq!(disk.frame(2).unwrap().pixels, orig.frame(2).unwrap().pixels);
        for (a, b) in disk.poses.iter().zip(&orig.poses) {
            assert!((a.to_matrix() - b.to_matrix()).abs().max() < 1e-9);
        }
    }
}
