//! Sequences of frames with poses, their consecutive pairs, and target normalization.

use std::sync::Arc;

use super::kitti::KittiSequence;
use super::pose::{relative_pose, Pose6DoF, PoseSE3};
use super::preprocess::{preprocess, Frame, PreprocessConfig};
use super::synth::SyntheticSequence;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub enum FrameStore {
    Memory(Vec<Arc<Frame>>),
    /// Decoded and preprocessed on every access.
    Disk { source: KittiSequence, preprocess: PreprocessConfig },
}

/// One sequence: frames and absolute poses of equal length.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub id: usize,
    pub frames: FrameStore,
    pub poses: Vec<PoseSE3>,
}

impl Sequence {
    pub fn in_memory(id: usize, frames: Vec<Frame>, poses: Vec<PoseSE3>) -> Result<Self> {
        if frames.len() != poses.len() {
            return Err(Error::Format(format!("sequence {id}: {} frames but {} poses", frames.len(), poses.len())));
        }
        Ok(Self { id, frames: FrameStore::Memory(frames.into_iter().map(Arc::new).collect()), poses })
    }

    pub fn from_synthetic(id: usize, s: &SyntheticSequence) -> Result<Self> {
        let cfg = PreprocessConfig::synthetic();
        let frames = s.images.iter().enumerate().map(|(i, img)| preprocess(img, &cfg, i)).collect::<Result<_>>()?;
        Self::in_memory(id, frames, s.poses.clone())
    }

    pub fn from_kitti(source: KittiSequence, preprocess: PreprocessConfig) -> Self {
        Self { id: source.id, poses: source.poses.clone(), frames: FrameStore::Disk { source, preprocess } }
    }

    /// Loads every frame into memory.
    pub fn into_memory(self) -> Result<Self> {
        match self.frames {
            FrameStore::Memory(_) => Ok(self),
            FrameStore::Disk { ref source, ref preprocess } => {
                let frames = (0..source.len()).map(|i| source.load_frame(i, preprocess).map(Arc::new)).collect::<Result<_>>()?;
                Ok(Self { id: self.id, frames: FrameStore::Memory(frames), poses: self.poses })
            }
        }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn num_pairs(&self) -> usize {
        self.len().saturating_sub(1)
    }

    pub fn frame(&self, i: usize) -> Result<Arc<Frame>> {
        match &self.frames {
            FrameStore::Memory(v) => Ok(v[i].clone()),
            FrameStore::Disk { source, preprocess } => Ok(Arc::new(source.load_frame(i, preprocess)?)),
        }
    }

    /// Ground-truth motion from frame `i` to `i + 1`.
    pub fn relative(&self, i: usize) -> Pose6DoF {
        relative_pose(&self.poses[i], &self.poses[i + 1])
    }

    pub fn relatives(&self) -> Vec<Pose6DoF> {
        (0..self.num_pairs()).map(|i| self.relative(i)).collect()
    }

    pub fn pair(&self, i: usize) -> Result<SamplePair> {
        Ok(SamplePair { first: self.frame(i)?, second: self.frame(i + 1)?, target: self.relative(i), sequence: self.id, index: i })
    }
}

/// Two consecutive frames and the motion between them.
#[derive(Debug, Clone)]
pub struct SamplePair {
    pub first: Arc<Frame>,
    pub second: Arc<Frame>,
    pub target: Pose6DoF,
    pub sequence: usize,
    pub index: usize,
}

/// Location of a pair inside a [`Dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairRef {
    pub sequence: usize,
    pub index: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub sequences: Vec<Sequence>,
}

impl Dataset {
    pub fn new(sequences: Vec<Sequence>) -> Self {
        Self { sequences }
    }

    pub fn num_pairs(&self) -> usize {
        self.sequences.iter().map(Sequence::num_pairs).sum()
    }

    /// Every pair; none crosses a sequence boundary.
    pub fn pair_refs(&self) -> Vec<PairRef> {
        self.sequences
            .iter()
            .enumerate()
            .flat_map(|(s, seq)| (0..seq.num_pairs()).map(move |index| PairRef { sequence: s, index }))
            .collect()
    }

    pub fn pair(&self, r: PairRef) -> Result<SamplePair> {
        self.sequences[r.sequence].pair(r.index)
    }

    pub fn targets(&self) -> Vec<Pose6DoF> {
        self.sequences.iter().flat_map(Sequence::relatives).collect()
    }

    /// Width and height shared by every frame.
    pub fn frame_size(&self) -> Result<(usize, usize)> {
        let seq = self.sequences.first().ok_or_else(|| Error::InvalidArgument("empty dataset".into()))?;
        let f = seq.frame(0)?;
        Ok((f.width, f.height))
    }
}

/// Per-component z-score of 6-DoF targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetNormalizer {
    pub mean: [f64; 6],
    pub std: [f64; 6],
}

impl Default for TargetNormalizer {
    fn default() -> Self {
        Self { mean: [0.0; 6], std: [1.0; 6] }
    }
}

impl TargetNormalizer {
    /// Statistics of `targets`; components with zero variance keep unit scale.
    pub fn fit(targets: &[Pose6DoF]) -> Self {
        if targets.is_empty() {
            return Self::default();
        }
        let n = targets.len() as f64;
        let mut mean = [0.0; 6];
        for t in targets {
            for (m, v) in mean.iter_mut().zip(t.to_array()) {
                *m += v / n;
            }
        }
        let mut std = [0.0; 6];
        for t in targets {
            for ((s, v), m) in std.iter_mut().zip(t.to_array()).zip(mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        for s in std.iter_mut() {
            *s = if *s > 1e-18 { s.sqrt() } else { 1.0 };
        }
        Self { mean, std }
    }

    pub fn normalize(&self, p: &Pose6DoF) -> [f64; 6] {
        let a = p.to_array();
        std::array::from_fn(|i| (a[i] - self.mean[i]) / self.std[i])
    }

    pub fn denormalize(&self, v: &[f64; 6]) -> Pose6DoF {
        Pose6DoF::from_array(std::array::from_fn(|i| v[i] * self.std[i] + self.mean[i]))
    }

    /// `mean=a,b,c,d,e,f;std=...` for checkpoint metadata.
    pub fn to_meta(&self) -> String {
        let join = |v: &[f64; 6]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",");
        format!("target_mean={}\ntarget_std={}\n", join(&self.mean), join(&self.std))
    }

    pub fn from_meta(meta: &str) -> Result<Self> {
        let field = |key: &str| -> Result<[f64; 6]> {
            let line = meta
                .lines()
                .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .ok_or_else(|| Error::Format(format!("metadata lacks `{key}`")))?;
            let v: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Format(format!("{key}: {e}"))))
                .collect::<Result<_>>()?;
            v.try_into().map_err(|_| Error::Format(format!("{key} needs 6 values")))
        };
        Ok(Self { mean: field("target_mean")?, std: field("target_std")? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pair_count_is_sum_of_lengths_minus_one() {
        let lens = [5usize, 2, 9, 1];
        let seqs = lens
            .iter()
            .enumerate()
            .map(|(id, &n)| {
                let frames = (0..n).map(|_| Frame::zeros(4, 3)).collect();
                let poses = (0..n).map(|i| PoseSE3::from_translation(i as f64, 0.0, 0.0)).collect();
                Sequence::in_memory(id, frames, poses).unwrap()
            })
            .collect();
        let ds = Dataset::new(seqs);
        assert_eq!(ds.num_pairs(), lens.iter().map(|n| n - 1).sum::<usize>());
        let refs = ds.pair_refs();
        assert_eq!(refs.len(), ds.num_pairs());
        for r in refs {
            assert!(r.index + 1 < ds.sequences[r.sequence].len());
        }
    }

    #[test]
    fn constant_component_keeps_unit_scale() {
        let t: Vec<Pose6DoF> = (0..4).map(|i| Pose6DoF::from_array([0.0, 0.0, 0.0, i as f64, 2.0, 0.0])).collect();
        let n = TargetNormalizer::fit(&t);
        assert_eq!(n.std[4], 1.0);
        assert_eq!(n.mean[4], 2.0);
        assert!((n.mean[3] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn meta_round_trip() {
        let n = TargetNormalizer { mean: [0.1, -0.2, 0.3, 1.0, 2.0, 3.5], std: [1.0, 0.5, 0.25, 0.125, 3.0, 1e-3] };
        assert_eq!(TargetNormalizer::from_meta(&format!("x=1\n{}", n.to_meta())).unwrap(), n);
    }

    proptest! {
        #[test]
        fn normalization_is_invertible(v in proptest::array::uniform6(-10.0..10.0f64),
                                       m in proptest::array::uniform6(-2.0..2.0f64),
                                       s in proptest::array::uniform6(0.01..5.0f64)) {
            let n = TargetNormalizer { mean: m, std: s };
            let back = n.denormalize(&n.normalize(&Pose6DoF::from_array(v)));
            for (a, b) in back.to_array().iter().zip(v) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
