//! KITTI odometry layout: `sequences/NN/image_0/*.png` and `poses/NN.txt`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::pose::{sanitize_pose, PoseSE3};
use super::preprocess::{preprocess, Frame, PreprocessConfig};
use crate::error::{Error, Result};

pub fn parse_poses(text: &str, path: &Path) -> Result<Vec<PoseSE3>> {
    let mut poses = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse { path: path.to_path_buf(), message: format!("line {}: {e}", ln + 1) })?;
        let arr: [f64; 12] = vals.try_into().map_err(|v: Vec<f64>| Error::Parse {
            path: path.to_path_buf(),
            message: format!("line {}: expected 12 values, found {}", ln + 1, v.len()),
        })?;
        poses.push(sanitize_pose(PoseSE3::from_row_major_3x4(&arr), ln + 1)?);
    }
    Ok(poses)
}

pub fn read_pose_file(path: &Path) -> Result<Vec<PoseSE3>> {
    parse_poses(&std::fs::read_to_string(path)?, path)
}

pub fn format_poses(poses: &[PoseSE3]) -> String {
    let mut s = String::new();
    for p in poses {
        let row = p.to_row_major_3x4();
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    s
}

pub fn write_pose_file(path: &Path, poses: &[PoseSE3]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, format_poses(poses))?;
    Ok(())
}

pub fn sequence_name(id: usize) -> String {
    format!("{id:02}")
}

pub fn image_dir(root: &Path, id: usize) -> PathBuf {
    root.join("sequences").join(sequence_name(id)).join("image_0")
}

pub fn pose_path(root: &Path, id: usize) -> PathBuf {
    root.join("poses").join(format!("{}.txt", sequence_name(id)))
}

/// Sorted `*.png` files of a directory.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

/// A sequence on disk whose frames are decoded on demand.
#[derive(Debug, Clone)]
pub struct KittiSequence {
    pub id: usize,
    pub image_paths: Vec<PathBuf>,
    pub poses: Vec<PoseSE3>,
}

impl KittiSequence {
    pub fn open(image_dir: &Path, pose_file: &Path, id: usize) -> Result<Self> {
        let image_paths = list_images(image_dir)?;
        let poses = read_pose_file(pose_file)?;
        if image_paths.len() != poses.len() {
            return Err(Error::Format(format!(
                "{}: {} images but {} poses in {}",
                image_dir.display(),
                image_paths.len(),
                poses.len(),
                pose_file.display()
            )));
        }
        Ok(Self { id, image_paths, poses })
    }

    pub fn open_in_root(root: &Path, id: usize) -> Result<Self> {
        Self::open(&image_dir(root, id), &pose_path(root, id), id)
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn load_frame(&self, index: usize, cfg: &PreprocessConfig) -> Result<Frame> {
        let img = image::open(&self.image_paths[index])?.to_luma8();
        preprocess(&img, cfg, index)
    }
}

/// Loads and preprocesses every frame of a sequence.
pub fn load_kitti_sequence(image_dir: &Path, pose_file: &Path, cfg: &PreprocessConfig) -> Result<Vec<(Frame, PoseSE3)>> {
    let seq = KittiSequence::open(image_dir, pose_file, 0)?;
    (0..seq.len()).map(|i| Ok((seq.load_frame(i, cfg)?, seq.poses[i]))).collect()
}
