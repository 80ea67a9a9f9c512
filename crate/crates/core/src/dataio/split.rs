//! The standard KITTI odometry train / validation / test partition.

pub const TRAIN: [usize; 7] = [0, 2, 4, 5, 6, 8, 9];
pub const VALIDATION: [usize; 1] = [10];
pub const TEST: [usize; 2] = [3, 7];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
}

/// Partitions `available` items, keyed by sequence id, into the standard
/// split. Missing sequences are skipped with a warning; ids outside every
/// split (such as 1) are ignored.
pub fn split_sequences<T>(available: Vec<T>, id_of: impl Fn(&T) -> usize) -> Split<T> {
    let mut split = Split { train: Vec::new(), validation: Vec::new(), test: Vec::new() };
    let mut seen = Vec::new();
    for item in available {
        let id = id_of(&item);
        seen.push(id);
        if TRAIN.contains(&id) {
            split.train.push(item);
        } else if VALIDATION.contains(&id) {
            split.validation.push(item);
        } else if TEST.contains(&id) {
            split.test.push(item);
        }
    }
    for id in TRAIN.iter().chain(&VALIDATION).chain(&TEST) {
        if !seen.contains(id) {
            log::warn!("sequence {id:02} not available; skipped");
        }
    }
    split
}

/// Sequence ids present under `root/poses`.
pub fn available_ids(root: &std::path::Path) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..=21).filter(|&id| super::kitti::pose_path(root, id).exists()).collect();
    ids.sort_unstable();
    ids
}
