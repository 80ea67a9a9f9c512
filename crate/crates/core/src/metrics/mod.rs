//! Trajectory reconstruction and odometry error metrics.

mod report;

use nalgebra::{Matrix3, Vector3};

use crate::dataio::{Pose6DoF, PoseSE3};
use crate::error::{Error, Result};
use crate::glimpse::PIXELS_PER_GLIMPSE;

pub use report::{format_table, read_csv, write_csv, DriftReport, REPORT_NOTE};

/// Absolute poses in a common world frame, one per frame.
pub type Trajectory = Vec<PoseSE3>;

/// Sub-sequence lengths (metres) for drift averaging.
pub const DRIFT_LENGTHS: [f64; 8] = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0];

/// `T_0 = I`, `T_{i+1} = T_i * SE3(relative_i)`.
pub fn accumulate(relatives: &[Pose6DoF]) -> Trajectory {
    let mut poses = Vec::with_capacity(relatives.len() + 1);
    poses.push(PoseSE3::identity());
    for r in relatives {
        let last = *poses.last().expect("nonempty");
        poses.push(last * r.to_se3());
    }
    poses
}

/// Rigid transform `p -> R p + t` mapping estimate positions onto ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    /// Too few or collinear points: only the centroids were matched.
    pub degenerate: bool,
}

impl Alignment {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn as_pose(&self) -> PoseSE3 {
        PoseSE3::new(self.rotation, self.translation)
    }
}

fn centroid(points: &[Vector3<f64>]) -> Vector3<f64> {
    points.iter().sum::<Vector3<f64>>() / points.len() as f64
}

/// Least-squares rigid alignment (Umeyama with unit scale) of `source` onto `target`.
pub fn align_rigid(target: &[Vector3<f64>], source: &[Vector3<f64>]) -> Result<Alignment> {
    if target.len() != source.len() || target.is_empty() {
        return Err(Error::InvalidArgument(format!("alignment of {} onto {} points", source.len(), target.len())));
    }
    let (mt, ms) = (centroid(target), centroid(source));
    let centroid_only = Alignment { rotation: Matrix3::identity(), translation: mt - ms, degenerate: true };
    if target.len() < 3 {
        return Ok(centroid_only);
    }
    let mut cov = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for (t, s) in target.iter().zip(source) {
        let (dt, ds) = (t - mt, s - ms);
        cov += dt * ds.transpose();
        spread += ds * ds.transpose();
    }
    let sv = spread.symmetric_eigenvalues();
    let mut sv: Vec<f64> = sv.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if sv[0] <= 0.0 || sv[1] <= 1e-12 * sv[0] {
        return Ok(centroid_only);
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * v_t;
    Ok(Alignment { rotation, translation: mt - rotation * ms, degenerate: false })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AteResult {
    /// Root mean square of the translation residuals, metres.
    pub rmse: f64,
    pub alignment: Alignment,
}

/// Absolute trajectory error after rigid alignment of the estimate.
pub fn ate(gt: &[PoseSE3], est: &[PoseSE3]) -> Result<AteResult> {
    if gt.len() != est.len() {
        return Err(Error::InvalidArgument(format!("ATE: {} ground-truth vs {} estimated poses", gt.len(), est.len())));
    }
    let g: Vec<Vector3<f64>> = gt.iter().map(|p| p.translation).collect();
    let h: Vec<Vector3<f64>> = est.iter().map(|p| p.translation).collect();
    let alignment = align_rigid(&g, &h)?;
    if alignment.degenerate {
        log::warn!("ATE alignment degenerate ({} poses); centroid translation only", gt.len());
    }
    let a = alignment.as_pose();
    let sq: f64 = gt.iter().zip(est).map(|(g, h)| (g.inverse() * a * *h).translation.norm_squared()).sum();
    Ok(AteResult { rmse: (sq / gt.len() as f64).sqrt(), alignment })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RpeError {
    /// Metres.
    pub trans: f64,
    /// Radians.
    pub rot: f64,
}

/// `F_i = (G_i^-1 G_{i+k})^-1 (H_i^-1 H_{i+k})` for every valid `i`.
pub fn rpe(gt: &[PoseSE3], est: &[PoseSE3], k: usize) -> Result<Vec<RpeError>> {
    if gt.len() != est.len() || k == 0 || gt.len() <= k {
        return Err(Error::InvalidArgument(format!("RPE: lengths {}/{} with k = {k}", gt.len(), est.len())));
    }
    Ok((0..gt.len() - k)
        .map(|i| {
            let dg = gt[i].inverse() * gt[i + k];
            let dh = est[i].inverse() * est[i + k];
            let f = dg.inverse() * dh;
            RpeError { trans: f.translation.norm(), rot: f.rotation_angle() }
        })
        .collect())
}

/// Cumulative ground-truth path length at every frame.
pub fn path_distances(poses: &[PoseSE3]) -> Vec<f64> {
    let mut d = Vec::with_capacity(poses.len());
    let mut acc = 0.0;
    for (i, p) in poses.iter().enumerate() {
        if i > 0 {
            acc += (p.translation - poses[i - 1].translation).norm();
        }
        d.push(acc);
    }
    d
}

/// Drift averaged over sub-sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct Drift {
    /// Percent.
    pub t_rpe: f64,
    /// Degrees per 100 m.
    pub r_rpe: f64,
    pub segments: usize,
    pub lengths_used: Vec<f64>,
}

/// For every length and start frame, the segment ends at the first frame
/// whose path distance exceeds the start's by more than the length.
/// Segments count equally within a length; lengths count equally overall.
pub fn drift_over_lengths(gt: &[PoseSE3], est: &[PoseSE3]) -> Result<Drift> {
    if gt.len() != est.len() {
        return Err(Error::InvalidArgument(format!("drift: {} ground-truth vs {} estimated poses", gt.len(), est.len())));
    }
    let dist = path_distances(gt);
    let (mut t_sum, mut r_sum, mut segments) = (0.0, 0.0, 0);
    let mut lengths_used = Vec::new();
    for &len in &DRIFT_LENGTHS {
        let (mut t_len, mut r_len, mut n) = (0.0, 0.0, 0usize);
        for i in 0..gt.len() {
            let goal = dist[i] + len;
            let j = dist.partition_point(|&d| d <= goal);
            if j >= gt.len() {
                break;
            }
            let dg = gt[i].inverse() * gt[j];
            let dh = est[i].inverse() * est[j];
            let e = dh.inverse() * dg;
            t_len += e.translation.norm() / len;
            r_len += e.rotation_angle() / len;
            n += 1;
        }
        if n == 0 {
            continue;
        }
        t_sum += t_len / n as f64;
        r_sum += r_len / n as f64;
        segments += n;
        lengths_used.push(len);
    }
    if lengths_used.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "drift: ground-truth path of {:.1} m is shorter than {} m",
            dist.last().copied().unwrap_or(0.0),
            DRIFT_LENGTHS[0]
        )));
    }
    let m = lengths_used.len() as f64;
    Ok(Drift {
        t_rpe: 100.0 * t_sum / m,
        r_rpe: (r_sum / m).to_degrees() * 100.0,
        segments,
        lengths_used,
    })
}

/// Share of the image consumed by `num_glimpses` glimpses of three 32x32 patches.
pub fn info_fraction(num_glimpses: usize, image_w: usize, image_h: usize) -> Result<f64> {
    if num_glimpses == 0 || image_w == 0 || image_h == 0 {
        return Err(Error::InvalidArgument(format!("info_fraction({num_glimpses}, {image_w}, {image_h})")));
    }
    Ok((num_glimpses * PIXELS_PER_GLIMPSE) as f64 / (image_w * image_h) as f64)
}

/// ATE, drift and mean RPE (`k = 1`) of one sequence.
pub fn evaluate_trajectory(sequence: &str, gt: &[PoseSE3], est: &[PoseSE3]) -> Result<DriftReport> {
    let a = ate(gt, est)?;
    let d = drift_over_lengths(gt, est)?;
    let r = rpe(gt, est, 1)?;
    let n = r.len() as f64;
    Ok(DriftReport {
        sequence: sequence.to_string(),
        frames: gt.len(),
        path_length: path_distances(gt).last().copied().unwrap_or(0.0),
        t_rpe: d.t_rpe,
        r_rpe: d.r_rpe,
        ate: a.rmse,
        rpe_trans: r.iter().map(|e| e.trans).sum::<f64>() / n,
        rpe_rot: r.iter().map(|e| e.rot).sum::<f64>() / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::pose::euler_to_rotation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_trajectory(n: usize, seed: u64) -> Trajectory {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rel: Vec<Pose6DoF> = (0..n - 1)
            .map(|_| {
                Pose6DoF::from_array([
                    rng.gen_range(-0.05..0.05),
                    rng.gen_range(-0.05..0.05),
                    rng.gen_range(-0.1..0.1),
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.1..0.1),
                    rng.gen_range(0.5..1.5),
                ])
            })
            .collect();
        accumulate(&rel)
    }

    #[test]
    fn zero_relatives_stay_at_identity() {
        let t = accumulate(&[Pose6DoF::ZERO; 5]);
        assert_eq!(t.len(), 6);
        assert!(t.iter().all(|p| *p == PoseSE3::identity()));
    }

    #[test]
    fn constant_forward_motion() {
        let step = Pose6DoF { z: 1.0, ..Pose6DoF::ZERO };
        let t = accumulate(&[step; 10]);
        assert!((t[10].translation - Vector3::new(0.0, 0.0, 10.0)).norm() < 1e-12);
    }

    #[test]
    fn ate_zero_for_identical() {
        let g = random_trajectory(50, 1);
        let r = ate(&g, &g).unwrap();
        assert!(r.rmse < 1e-9);
        assert!(!r.alignment.degenerate);
    }

    #[test]
    fn ate_absorbs_rotation_and_shift() {
        let g = random_trajectory(100, 2);
        let rigid = PoseSE3::new(euler_to_rotation(0.0, 0.0, std::f64::consts::FRAC_PI_2), Vector3::new(5.0, 0.0, 0.0));
        let h: Trajectory = g.iter().map(|p| rigid * *p).collect();
        assert!(ate(&g, &h).unwrap().rmse < 1e-9);
    }

    #[test]
    fn collinear_points_fall_back() {
        let g: Trajectory = (0..10).map(|i| PoseSE3::from_translation(0.0, 0.0, i as f64)).collect();
        let h: Trajectory = g.iter().map(|p| PoseSE3::from_translation(1.0, 0.0, p.translation.z)).collect();
        let r = ate(&g, &h).unwrap();
        assert!(r.alignment.degenerate);
        assert!(r.rmse < 1e-12);
        assert!(ate(&g[..2], &h[..2]).unwrap().alignment.degenerate);
    }

    #[test]
    fn rpe_static_gt_moving_estimate() {
        let g = vec![PoseSE3::identity(); 6];
        let h: Trajectory = (0..6).map(|i| PoseSE3::from_translation(0.1 * i as f64, 0.0, 0.0)).collect();
        for e in rpe(&g, &h, 1).unwrap() {
            assert!((e.trans - 0.1).abs() < 1e-12);
            assert!(e.rot.abs() < 1e-12);
        }
        assert!(rpe(&g, &h, 6).is_err());
    }

    #[test]
    fn rpe_zero_on_own_reconstruction() {
        let g = random_trajectory(40, 3);
        let rel: Vec<Pose6DoF> = g.windows(2).map(|w| crate::dataio::relative_pose(&w[0], &w[1])).collect();
        let h = accumulate(&rel);
        assert!(rpe(&g, &h, 1).unwrap().iter().all(|e| e.trans < 1e-9 && e.rot < 1e-6));
    }

    #[test]
    fn drift_zero_for_identical_and_scaled_line() {
        let g: Trajectory = (0..=1000).map(|i| PoseSE3::from_translation(0.0, 0.0, i as f64)).collect();
        let d = drift_over_lengths(&g, &g).unwrap();
        assert_eq!((d.t_rpe, d.r_rpe), (0.0, 0.0));
        assert_eq!(d.lengths_used.len(), 8);
        let h: Trajectory = g.iter().map(|p| PoseSE3::from_translation(0.0, 0.0, 1.01 * p.translation.z)).collect();
        let d = drift_over_lengths(&g, &h).unwrap();
        assert!((d.t_rpe - 1.0).abs() < 0.02, "{}", d.t_rpe);
    }

    #[test]
    fn drift_skips_long_lengths_and_rejects_short_paths() {
        let g: Trajectory = (0..=250).map(|i| PoseSE3::from_translation(i as f64, 0.0, 0.0)).collect();
        let d = drift_over_lengths(&g, &g).unwrap();
        assert_eq!(d.lengths_used, vec![100.0, 200.0]);
        assert!(drift_over_lengths(&g[..50], &g[..50]).is_err());
    }

    #[test]
    fn info_fraction_values() {
        let f8 = info_fraction(8, 1200, 360).unwrap();
        assert!((f8 - 24576.0 / 432000.0).abs() < 1e-15);
        assert!((info_fraction(1, 1200, 360).unwrap() - 0.00711).abs() < 1e-5);
        assert!((info_fraction(12, 1200, 360).unwrap() - 0.0853).abs() < 1e-4);
        assert!(info_fraction(0, 1200, 360).is_err());
    }
}
