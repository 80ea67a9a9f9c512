//! Rigid poses and their 6-DoF Euler parameterization.
//!
//! Euler angles use the intrinsic Z-Y-X convention: `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};

/// Rigid transform: rotation followed by translation (metres).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSE3 {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for PoseSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl PoseSE3 {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::new(x, y, z) }
    }

    /// Parses a row-major 3x4 `[R | t]` matrix.
    pub fn from_row_major_3x4(v: &[f64; 12]) -> Self {
        let rotation = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        Self { rotation, translation: Vector3::new(v[3], v[7], v[11]) }
    }

    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x, r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y, r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z]
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_matrix(m: &Matrix4<f64>) -> Self {
        Self { rotation: m.fixed_view::<3, 3>(0, 0).into_owned(), translation: m.fixed_view::<3, 1>(0, 3).into_owned() }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Largest deviation of `RᵀR` from identity and of `det R` from one.
    pub fn orthonormality_error(&self) -> f64 {
        let e = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        e.max((self.rotation.determinant() - 1.0).abs())
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.orthonormality_error() <= tol && self.translation.iter().all(|v| v.is_finite())
    }

    /// Replaces the rotation with its nearest rotation matrix (SVD projection).
    pub fn orthonormalized(&self) -> Self {
        Self { rotation: nearest_rotation(&self.rotation), translation: self.translation }
    }

    /// Rotation angle in radians, `acos((tr R - 1) / 2)` with the argument clamped.
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }
}

impl Mul for PoseSE3 {
    type Output = PoseSE3;

    fn mul(self, rhs: PoseSE3) -> PoseSE3 {
        PoseSE3 {
            rotation: self.rotation * rhs.rotation,
            translation: self.rotation * rhs.translation + self.translation,
        }
    }
}

impl Mul for &PoseSE3 {
    type Output = PoseSE3;

    fn mul(self, rhs: &PoseSE3) -> PoseSE3 {
        *self * *rhs
    }
}

pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * vt
}

/// Relative motion as Euler angles (radians) plus translation (metres).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose6DoF {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Pose6DoF {
    pub const ZERO: Pose6DoF = Pose6DoF { roll: 0.0, pitch: 0.0, yaw: 0.0, x: 0.0, y: 0.0, z: 0.0 };

    /// `[roll, pitch, yaw, x, y, z]`.
    pub fn to_array(&self) -> [f64; 6] {
        [self.roll, self.pitch, self.yaw, self.x, self.y, self.z]
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self { roll: v[0], pitch: v[1], yaw: v[2], x: v[3], y: v[4], z: v[5] }
    }

    pub fn orientation(&self) -> [f64; 3] {
        [self.roll, self.pitch, self.yaw]
    }

    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn to_se3(&self) -> PoseSE3 {
        PoseSE3 {
            rotation: euler_to_rotation(self.roll, self.pitch, self.yaw),
            translation: Vector3::new(self.x, self.y, self.z),
        }
    }

    pub fn from_se3(p: &PoseSE3) -> Self {
        let (roll, pitch, yaw) = rotation_to_euler(&p.rotation);
        Self { roll, pitch, yaw, x: p.translation.x, y: p.translation.y, z: p.translation.z }
    }
}

/// `Rz(yaw) * Ry(pitch) * Rx(roll)`.
pub fn euler_to_rotation(roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    let rz = Matrix3::new(cy, -sy, 0.0, sy, cy, 0.0, 0.0, 0.0, 1.0);
    let ry = Matrix3::new(cp, 0.0, sp, 0.0, 1.0, 0.0, -sp, 0.0, cp);
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cr, -sr, 0.0, sr, cr);
    rz * ry * rx
}

/// Inverse of [`euler_to_rotation`]; angles wrapped to `(-pi, pi]`.
pub fn rotation_to_euler(r: &Matrix3<f64>) -> (f64, f64, f64) {
    let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    (wrap_angle(roll), wrap_angle(pitch), wrap_angle(yaw))
}

/// Wraps into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

/// Motion from `a` to `b` expressed in `a`'s frame: the 6-DoF form of `a⁻¹ b`.
pub fn relative_pose(a: &PoseSE3, b: &PoseSE3) -> Pose6DoF {
    Pose6DoF::from_se3(&(a.inverse() * *b))
}

/// Validates a parsed pose, re-projecting slightly non-orthonormal rotations.
pub fn sanitize_pose(p: PoseSE3, line: usize) -> Result<PoseSE3> {
    if !p.rotation.iter().chain(p.translation.iter()).all(|v| v.is_finite()) {
        return Err(Error::Format(format!("pose line {line}: non-finite entry")));
    }
    if p.orthonormality_error() > 1e-6 {
        log::warn!("pose line {line}: rotation not orthonormal (error {:.2e}), re-orthonormalized", p.orthonormality_error());
        return Ok(p.orthonormalized());
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frob(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
        (a - b).norm()
    }

    #[test]
    fn identical_poses_have_zero_relative_motion() {
        let a = Pose6DoF { roll: 0.1, pitch: -0.2, yaw: 1.0, x: 3.0, y: 1.0, z: -2.0 }.to_se3();
        let r = relative_pose(&a, &a);
        assert!(r.to_array().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn pure_translation_from_identity() {
        let r = relative_pose(&PoseSE3::identity(), &PoseSE3::from_translation(0.0, 0.0, 2.0));
        assert_eq!(r.to_array(), [0.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn yaw_then_forward_matches_matrix_oracle() {
        // 4x4 oracle: a = Rz(30°); b = a * [I | (1,0,0)] i.e. one metre along a's x heading.
        let yaw = 30f64.to_radians();
        let mut a4 = Matrix4::identity();
        a4[(0, 0)] = yaw.cos();
        a4[(0, 1)] = -yaw.sin();
        a4[(1, 0)] = yaw.sin();
        a4[(1, 1)] = yaw.cos();
        let mut step = Matrix4::identity();
        step[(0, 3)] = 1.0;
        let b4 = a4 * step;
        let rel4 = a4.try_inverse().unwrap() * b4;

        let a = PoseSE3::from_matrix(&a4);
        let b = PoseSE3::from_matrix(&b4);
        let r = relative_pose(&a, &b);
        assert!((r.x - rel4[(0, 3)]).abs() < 1e-12);
        assert!((r.y - rel4[(1, 3)]).abs() < 1e-12);
        assert!((r.z - rel4[(2, 3)]).abs() < 1e-12);
        assert!(r.roll.abs() < 1e-12 && r.pitch.abs() < 1e-12 && r.yaw.abs() < 1e-12);
        assert!((r.x - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kitti_row_round_trip() {
        let p = PoseSE3::from_row_major_3x4(&[1.0, 0.0, 0.0, 1.5, 0.0, 1.0, 0.0, -0.2, 0.0, 0.0, 1.0, 30.0]);
        assert_eq!(p.translation, Vector3::new(1.5, -0.2, 30.0));
        assert_eq!(p.rotation, Matrix3::identity());
        assert_eq!(PoseSE3::from_row_major_3x4(&p.to_row_major_3x4()), p);
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn nearest_rotation_repairs_noise() {
        let mut r = euler_to_rotation(0.3, 0.2, -0.4);
        r[(0, 1)] += 1e-3;
        let p = sanitize_pose(PoseSE3::new(r, Vector3::zeros()), 0).unwrap();
        assert!(p.orthonormality_error() < 1e-12);
    }

    fn angle() -> impl Strategy<Value = f64> {
        -PI + 1e-3..PI
    }

    proptest! {
        #[test]
        fn euler_round_trip(roll in angle(), pitch in -(PI / 2.0 - 0.1)..(PI / 2.0 - 0.1), yaw in angle(),
                            x in -50.0..50.0f64, y in -50.0..50.0f64, z in -50.0..50.0f64) {
            let p = Pose6DoF { roll, pitch, yaw, x, y, z };
            let se3 = p.to_se3();
            prop_assert!(se3.orthonormality_error() < 1e-6);
            let back = Pose6DoF::from_se3(&se3);
            for (a, b) in back.to_array().iter().zip(p.to_array()) {
                prop_assert!(wrap_angle(a - b).abs() < 1e-6);
            }
        }

        #[test]
        fn relative_pose_recomposes(a in proptest::array::uniform6(-3.0..3.0f64), b in proptest::array::uniform6(-3.0..3.0f64)) {
            let clamp_pitch = |mut v: [f64; 6]| { v[1] = v[1].clamp(-1.4, 1.4); v };
            let pa = Pose6DoF::from_array(clamp_pitch(a)).to_se3();
            let pb = Pose6DoF::from_array(clamp_pitch(b)).to_se3();
            let rel = relative_pose(&pa, &pb).to_se3();
            let back = pa * rel;
            prop_assert!(frob(&back.rotation, &pb.rotation) < 1e-6);
            prop_assert!((back.translation - pb.translation).norm() < 1e-6);
        }
    }
}
