//! Rigid-body transforms for the robot kinematic chain.
//!
//! Frames used throughout the crate:
//!
//! * base (`B`): the robot base, also used as the world frame;
//! * end-effector (`E`): pose reported by the arm controller;
//! * camera (`C`): optical frame, x right, y down, z along the viewing ray.
//!
//! A [`RigidTransform`] named `a_from_b` maps coordinates expressed in frame
//! `b` into frame `a`, so the base-to-camera chain reads
//! `base_from_camera = base_from_ee.compose(&ee_from_camera)`.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Largest rotation angle accepted by [`RigidTransform::to_pose_vector`].
pub const MAX_POSE_ANGLE: f64 = std::f64::consts::PI - 1e-6;

/// An element of SE(3) stored as a rotation matrix and a translation in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform, rejecting rotations that are not orthonormal with
    /// determinant +1 (within 1e-9 per entry).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_rotation(&rotation)?;
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidRotation("non-finite translation".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Caller guarantees `rotation` is a proper rotation.
    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::new(x, y, z),
        }
    }

    /// Rotation about the x axis by `theta` radians.
    pub fn rotation_x(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self::from_parts_unchecked(
            Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c),
            Vector3::zeros(),
        )
    }

    /// Parses the top three rows of a homogeneous matrix; the bottom row must be `0 0 0 1`.
    pub fn from_matrix4(m: &Matrix4<f64>) -> Result<Self> {
        let bottom = m.fixed_view::<1, 4>(3, 0);
        if (bottom[0].abs() + bottom[1].abs() + bottom[2].abs() + (bottom[3] - 1.0).abs())
            > ORTHONORMAL_TOL
        {
            return Err(Error::InvalidRotation(
                "bottom row of homogeneous matrix is not [0 0 0 1]".into(),
            ));
        }
        Self::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    pub fn to_matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Homogeneous product `self * other`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Rotation-vector pose (UR controller convention).
    pub fn to_pose_vector(&self) -> Result<PoseVector> {
        let w = rotation_log(&self.rotation)?;
        Ok(PoseVector {
            x: self.translation.x,
            y: self.translation.y,
            z: self.translation.z,
            rx: w.x,
            ry: w.y,
            rz: w.z,
        })
    }

    pub fn from_pose_vector(p: &PoseVector) -> RigidTransform {
        Self {
            rotation: rotation_exp(&Vector3::new(p.rx, p.ry, p.rz)),
            translation: Vector3::new(p.x, p.y, p.z),
        }
    }

    /// Largest absolute entry difference between the two homogeneous matrices.
    pub fn max_abs_diff(&self, other: &RigidTransform) -> f64 {
        (self.to_matrix4() - other.to_matrix4()).amax()
    }
}

fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    if !r.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidRotation("non-finite entries".into()));
    }
    let err = (r.transpose() * r - Matrix3::identity()).amax();
    if err > ORTHONORMAL_TOL {
        return Err(Error::InvalidRotation(format!(
            "R^T R deviates from identity by {err:e}"
        )));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > ORTHONORMAL_TOL {
        return Err(Error::InvalidRotation(format!("determinant is {det}")));
    }
    Ok(())
}

/// Rodrigues' formula: rotation vector to matrix.
pub fn rotation_exp(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let k = w.cross_matrix();
    let (a, b) = if theta2 < 1e-10 {
        // Taylor expansion of sin(t)/t and (1 - cos t)/t^2.
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Inverse of [`rotation_exp`] for angles below [`MAX_POSE_ANGLE`].
pub fn rotation_log(r: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let skew = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]) * 0.5;
    let sin_theta = skew.norm();
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = sin_theta.atan2(cos_theta);
    if theta > MAX_POSE_ANGLE {
        return Err(Error::DegenerateOrientation { angle: theta });
    }
    if sin_theta < 1e-12 {
        return Ok(skew);
    }
    Ok(skew * (theta / sin_theta))
}

/// `(x, y, z)` in meters and a rotation vector `(rx, ry, rz)` in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
}

impl PoseVector {
    pub fn new(x: f64, y: f64, z: f64, rx: f64, ry: f64, rz: f64) -> Self {
        Self {
            x,
            y,
            z,
            rx,
            ry,
            rz,
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.x, self.y, self.z, self.rx, self.ry, self.rz]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }
}

/// Componentwise pose difference. Informational only: rotation vectors do not
/// subtract as group elements.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseDelta(pub [f64; 6]);

impl PoseDelta {
    pub fn translation(&self) -> [f64; 3] {
        [self.0[0], self.0[1], self.0[2]]
    }

    pub fn rotation(&self) -> [f64; 3] {
        [self.0[3], self.0[4], self.0[5]]
    }
}

pub fn pose_delta(current: &PoseVector, initial: &PoseVector) -> PoseDelta {
    let c = current.to_array();
    let i = initial.to_array();
    PoseDelta(std::array::from_fn(|k| c[k] - i[k]))
}

/// Deviation of `reported` from `reference` as a translation difference plus
/// the rotation vector of `R_reported * R_reference^T`.
pub fn group_delta(reported: &RigidTransform, reference: &RigidTransform) -> Result<PoseDelta> {
    let dt = reported.translation - reference.translation;
    let dw = rotation_log(&(reported.rotation * reference.rotation.transpose()))?;
    Ok(PoseDelta([dt.x, dt.y, dt.z, dw.x, dw.y, dw.z]))
}

/// Fixed end-effector to camera mount: a rotation about x plus an offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraMount {
    pub theta: f64,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
}

impl Default for CameraMount {
    /// `theta = pi/2`; the offsets are placeholder simulation values.
    fn default() -> Self {
        Self {
            theta: std::f64::consts::FRAC_PI_2,
            dx: 0.0,
            dy: 0.05,
            dz: 0.03,
        }
    }
}

impl CameraMount {
    /// `ee_from_camera`.
    pub fn transform(&self) -> RigidTransform {
        let mut t = RigidTransform::rotation_x(self.theta);
        t.translation = Vector3::new(self.dx, self.dy, self.dz);
        t
    }
}

pub fn mount_transform(mount: &CameraMount) -> RigidTransform {
    mount.transform()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn mount_matches_explicit_matrix() {
        let t = mount_transform(&CameraMount {
            theta: FRAC_PI_2,
            dx: 0.0,
            dy: 0.0,
            dz: 0.0,
        });
        let expected = Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        assert!((t.rotation() - expected).amax() < 1e-15);
        assert_eq!(*t.translation(), Vector3::zeros());

        let id = mount_transform(&CameraMount {
            theta: 0.0,
            dx: 0.0,
            dy: 0.0,
            dz: 0.0,
        });
        assert_eq!(id, RigidTransform::identity());
    }

    #[test]
    fn mount_translation_decouples() {
        let t = mount_transform(&CameraMount {
            theta: FRAC_PI_2,
            dx: 0.01,
            dy: 0.02,
            dz: 0.03,
        });
        let expected = Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        assert!((t.rotation() - expected).amax() < 1e-15);
        assert_eq!(*t.translation(), Vector3::new(0.01, 0.02, 0.03));
        // y axis of the camera maps onto z of the end-effector
        let v = t.transform_vector(&Vector3::y());
        assert!((v - Vector3::z()).norm() < 1e-15);
    }

    #[test]
    fn rejects_non_orthonormal() {
        let mut r = Matrix3::identity();
        r[(0, 1)] = 1e-6;
        assert!(RigidTransform::new(r, Vector3::zeros()).is_err());
        let flip = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(RigidTransform::new(flip, Vector3::zeros()).is_err());
    }

    #[test]
    fn inverse_of_translation() {
        let t = RigidTransform::from_translation(1.0, 2.0, 3.0).inverse();
        assert_eq!(*t.translation(), Vector3::new(-1.0, -2.0, -3.0));
        assert_eq!(RigidTransform::identity().inverse(), RigidTransform::identity());
    }

    #[test]
    fn pose_vector_simple_cases() {
        let p = RigidTransform::identity().to_pose_vector().unwrap();
        assert_eq!(p.to_array(), [0.0; 6]);

        let rz = RigidTransform::from_pose_vector(&PoseVector::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.1));
        let c = 0.1f64.cos();
        let s = 0.1f64.sin();
        let expected = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        assert!((rz.rotation() - expected).amax() < 1e-15);
        let back = rz.to_pose_vector().unwrap();
        assert!((back.rz - 0.1).abs() < 1e-15);
        assert!(back.rx.abs() < 1e-15 && back.ry.abs() < 1e-15);
    }

    #[test]
    fn angle_pi_is_degenerate() {
        let r = RigidTransform::from_pose_vector(&PoseVector::new(
            0.0,
            0.0,
            0.0,
            std::f64::consts::PI,
            0.0,
            0.0,
        ));
        assert!(matches!(
            r.to_pose_vector(),
            Err(Error::DegenerateOrientation { .. })
        ));
    }

    #[test]
    fn pose_delta_cases() {
        let p = PoseVector::new(0.3, -0.2, 0.1, 0.4, 0.5, -0.6);
        assert_eq!(pose_delta(&p, &p).0, [0.0; 6]);
        let d = pose_delta(
            &PoseVector::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0),
            &PoseVector::default(),
        );
        assert_eq!(d.0, [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn from_matrix4_rejects_bad_bottom_row() {
        let mut m = Matrix4::identity();
        m[(3, 0)] = 0.5;
        assert!(RigidTransform::from_matrix4(&m).is_err());
        let t = RigidTransform::from_translation(1.0, 2.0, 3.0);
        assert_eq!(RigidTransform::from_matrix4(&t.to_matrix4()).unwrap(), t);
    }
}
