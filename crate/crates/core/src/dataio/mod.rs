//! Data ingestion: poses, frame preprocessing, KITTI files, synthetic sequences.

pub mod dataset;
pub mod kitti;
pub mod pose;
pub mod preprocess;
pub mod split;
pub mod synth;

pub use dataset::{Dataset, FrameStore, PairRef, SamplePair, Sequence, TargetNormalizer};
pub use kitti::{load_kitti_sequence, read_pose_file, write_pose_file, KittiSequence};
pub use pose::{relative_pose, Pose6DoF, PoseSE3};
pub use preprocess::{clahe, preprocess, zscore, ClaheConfig, Frame, PreprocessConfig};
pub use split::{split_sequences, Split};
pub use synth::{SynthConfig, SyntheticSequence};

use crate::error::Result;

/// Renders `cfg` and returns its consecutive pairs.
pub fn generate_synthetic_sequence(cfg: &SynthConfig) -> Result<Vec<SamplePair>> {
    let seq = Sequence::from_synthetic(0, &SyntheticSequence::generate(cfg)?)?;
    (0..seq.num_pairs()).map(|i| seq.pair(i)).collect()
}
