//! Pinhole camera with Brown-Conrady lens distortion.

use nalgebra::{Matrix2, Matrix3, Matrix3x4, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RigidTransform;

/// Minimum camera-frame depth for a point to be considered visible.
pub const MIN_DEPTH: f64 = 1e-6;

const UNDISTORT_MAX_ITERS: usize = 20;
const UNDISTORT_TOL: f64 = 1e-15;

/// Radial `(k1, k2)` and tangential `(p1, p2)` coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Distortion {
    pub k1: f64,
    pub k2: f64,
    pub p1: f64,
    pub p2: f64,
}

impl Distortion {
    pub fn is_zero(&self) -> bool {
        self.k1 == 0.0 && self.k2 == 0.0 && self.p1 == 0.0 && self.p2 == 0.0
    }

    /// Maps undistorted normalized coordinates to distorted ones.
    pub fn distort(&self, p: &Vector2<f64>) -> Vector2<f64> {
        if self.is_zero() {
            return *p;
        }
        let (x, y) = (p.x, p.y);
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (self.k1 + self.k2 * r2);
        Vector2::new(
            x * radial + 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x),
            y * radial + self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y,
        )
    }

    fn jacobian(&self, p: &Vector2<f64>) -> Matrix2<f64> {
        let (x, y) = (p.x, p.y);
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (self.k1 + self.k2 * r2);
        let dr = 2.0 * (self.k1 + 2.0 * self.k2 * r2);
        Matrix2::new(
            radial + x * x * dr + 2.0 * self.p1 * y + 6.0 * self.p2 * x,
            x * y * dr + 2.0 * self.p1 * x + 2.0 * self.p2 * y,
            x * y * dr + 2.0 * self.p1 * x + 2.0 * self.p2 * y,
            radial + y * y * dr + 6.0 * self.p1 * y + 2.0 * self.p2 * x,
        )
    }

    /// Inverts [`Distortion::distort`] by Newton iteration from the distorted point.
    pub fn undistort(&self, d: &Vector2<f64>) -> Vector2<f64> {
        if self.is_zero() {
            return *d;
        }
        let mut p = *d;
        for _ in 0..UNDISTORT_MAX_ITERS {
            let residual = self.distort(&p) - d;
            let Some(inv) = self.jacobian(&p).try_inverse() else {
                break;
            };
            let step = inv * residual;
            p -= step;
            if step.amax() < UNDISTORT_TOL {
                break;
            }
        }
        p
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CameraFile {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    #[serde(default)]
    dist: [f64; 4],
}

/// Intrinsics and distortion; loads from `{fx, fy, cx, cy, width, height, dist: [k1, k2, p1, p2]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraFile", into = "CameraFile")]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub dist: Distortion,
}

impl TryFrom<CameraFile> for CameraModel {
    type Error = Error;

    fn try_from(f: CameraFile) -> Result<Self> {
        let [k1, k2, p1, p2] = f.dist;
        CameraModel::new(
            f.fx,
            f.fy,
            f.cx,
            f.cy,
            f.width,
            f.height,
            Distortion { k1, k2, p1, p2 },
        )
    }
}

impl From<CameraModel> for CameraFile {
    fn from(c: CameraModel) -> Self {
        CameraFile {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            dist: [c.dist.k1, c.dist.k2, c.dist.p1, c.dist.p2],
        }
    }
}

impl Default for CameraModel {
    /// An IMX219-class sensor in its full-field-of-view 640x480 mode, no distortion.
    fn default() -> Self {
        Self {
            fx: 530.0,
            fy: 530.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
            dist: Distortion::default(),
        }
    }
}

impl CameraModel {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        dist: Distortion,
    ) -> Result<Self> {
        let finite = [fx, fy, cx, cy, dist.k1, dist.k2, dist.p1, dist.p2]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidCamera("non-finite parameter".into()));
        }
        if fx <= 0.0 || fy <= 0.0 {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive (fx={fx}, fy={fy})"
            )));
        }
        if !(cx > 0.0 && cx < width as f64 && cy > 0.0 && cy < height as f64) {
            return Err(Error::InvalidCamera(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            dist,
        })
    }

    pub fn with_distortion(mut self, dist: Distortion) -> Self {
        self.dist = dist;
        self
    }

    pub fn intrinsic_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidCamera(e.to_string()))
    }

    /// Camera-frame point to pixel, applying distortion.
    pub fn project_camera_point(&self, pc: &Vector3<f64>) -> Result<Vector2<f64>> {
        if !(pc.z > MIN_DEPTH) {
            return Err(Error::NotVisible { depth: pc.z });
        }
        let n = self.dist.distort(&Vector2::new(pc.x / pc.z, pc.y / pc.z));
        Ok(self.normalized_to_pixel(&n))
    }

    pub fn normalized_to_pixel(&self, n: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * n.x + self.cx, self.fy * n.y + self.cy)
    }

    pub fn pixel_to_normalized(&self, px: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy)
    }

    /// Removes lens distortion, returning the ideal pinhole pixel.
    pub fn undistort_pixel(&self, px: &Vector2<f64>) -> Vector2<f64> {
        if self.dist.is_zero() {
            return *px;
        }
        self.normalized_to_pixel(&self.dist.undistort(&self.pixel_to_normalized(px)))
    }

    /// Camera-frame viewing ray `(x, y, 1)` through `px`.
    pub fn pixel_to_ray(&self, px: &Vector2<f64>) -> Vector3<f64> {
        let n = self.dist.undistort(&self.pixel_to_normalized(px));
        Vector3::new(n.x, n.y, 1.0)
    }

    pub fn contains(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x < self.width as f64 && px.y < self.height as f64
    }
}

/// `[R | t]` mapping world points into the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionMatrix(pub Matrix3x4<f64>);

impl ProjectionMatrix {
    /// `camera_pose` is the camera-in-world pose; the result is its inverse.
    pub fn from_camera_pose(camera_pose: &RigidTransform) -> Self {
        let inv = camera_pose.inverse();
        let mut m = Matrix3x4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(inv.rotation());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(inv.translation());
        Self(m)
    }

    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.0 * Vector4::new(world.x, world.y, world.z, 1.0)
    }

    pub fn project(&self, world: &Vector3<f64>, cam: &CameraModel) -> Result<Vector2<f64>> {
        cam.project_camera_point(&self.to_camera(world))
    }
}

pub fn projection_matrix(camera_pose: &RigidTransform) -> ProjectionMatrix {
    ProjectionMatrix::from_camera_pose(camera_pose)
}

/// Projects a world point seen from the camera-in-world `pose`.
pub fn project(world: &Vector3<f64>, pose: &RigidTransform, cam: &CameraModel) -> Result<Vector2<f64>> {
    let pc = pose.inverse().transform_point(world);
    cam.project_camera_point(&pc)
}

/// Plane `{x : normal . x = offset}` with a unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    normal: Vector3<f64>,
    offset: f64,
}

impl Plane {
    pub fn from_point_normal(point: &Vector3<f64>, normal: &Vector3<f64>) -> Result<Self> {
        let len = normal.norm();
        if !(len > 1e-12) || !len.is_finite() {
            return Err(Error::DegenerateGeometry("plane normal has zero length".into()));
        }
        let n = normal / len;
        Ok(Self {
            normal: n,
            offset: n.dot(point),
        })
    }

    pub fn normal(&self) -> &Vector3<f64> {
        &self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn residual(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) - self.offset
    }

    /// The same plane expressed in the frame `t` maps from, i.e. `t^-1(plane)`.
    pub fn transformed(&self, frame_from_world: &RigidTransform) -> Plane {
        let n = frame_from_world.transform_vector(&self.normal);
        let p = frame_from_world.transform_point(&(self.normal * self.offset));
        Plane {
            normal: n,
            offset: n.dot(&p),
        }
    }
}

/// Intersects the viewing ray of `pixel` with `plane` (world frame).
pub fn back_project_to_plane(
    pixel: &Vector2<f64>,
    pose: &RigidTransform,
    cam: &CameraModel,
    plane: &Plane,
) -> Result<Vector3<f64>> {
    let dir = pose.transform_vector(&cam.pixel_to_ray(pixel));
    let origin = pose.translation();
    let denom = plane.normal.dot(&dir);
    if denom.abs() <= 1e-9 * dir.norm() {
        return Err(Error::DegenerateGeometry(format!(
            "viewing ray of pixel ({}, {}) is parallel to the plane",
            pixel.x, pixel.y
        )));
    }
    let s = (plane.offset - plane.normal.dot(origin)) / denom;
    if !(s > 0.0) {
        return Err(Error::DegenerateGeometry(format!(
            "plane lies behind the camera for pixel ({}, {})",
            pixel.x, pixel.y
        )));
    }
    Ok(origin + dir * s)
}

/// Averaged rangefinder reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeEstimate {
    pub mean: f64,
    pub sigma: f64,
    pub sample_count: usize,
}

impl RangeEstimate {
    /// Meters per pixel at the measured distance (`D / fx`).
    pub fn scale(&self, cam: &CameraModel) -> f64 {
        self.mean / cam.fx
    }
}

/// Arithmetic mean and population standard deviation.
pub fn average_range(samples: &[f64]) -> Result<RangeEstimate> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    Ok(RangeEstimate {
        mean,
        sigma: var.sqrt(),
        sample_count: samples.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam600() -> CameraModel {
        CameraModel::new(600.0, 600.0, 320.0, 240.0, 640, 480, Distortion::default()).unwrap()
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let cam = cam600();
        for z in [0.1, 1.0, 37.0] {
            let px = project(&Vector3::new(0.0, 0.0, z), &RigidTransform::identity(), &cam).unwrap();
            assert_eq!(px, Vector2::new(320.0, 240.0));
        }
    }

    #[test]
    fn simple_projection() {
        let px = project(
            &Vector3::new(0.1, 0.0, 1.0),
            &RigidTransform::identity(),
            &cam600(),
        )
        .unwrap();
        assert!((px - Vector2::new(380.0, 240.0)).norm() < 1e-12);
    }

    #[test]
    fn behind_camera_is_an_error() {
        let r = project(
            &Vector3::new(0.1, 0.0, -1.0),
            &RigidTransform::identity(),
            &cam600(),
        );
        assert!(matches!(r, Err(Error::NotVisible { .. })));
        let r = project(&Vector3::zeros(), &RigidTransform::identity(), &cam600());
        assert!(matches!(r, Err(Error::NotVisible { .. })));
    }

    #[test]
    fn projection_matrix_simple_cases() {
        let m = projection_matrix(&RigidTransform::identity());
        assert_eq!(m.0.fixed_view::<3, 3>(0, 0).into_owned(), Matrix3::identity());
        assert_eq!(m.0.column(3).into_owned(), Vector3::zeros());

        let m = projection_matrix(&RigidTransform::from_translation(1.0, 0.0, 0.0));
        assert_eq!(m.0.column(3).into_owned(), Vector3::new(-1.0, 0.0, 0.0));
    }

    #[test]
    fn camera_validation() {
        let d = Distortion::default();
        assert!(CameraModel::new(0.0, 600.0, 320.0, 240.0, 640, 480, d).is_err());
        assert!(CameraModel::new(600.0, 600.0, 640.0, 240.0, 640, 480, d).is_err());
        assert!(CameraModel::new(600.0, 600.0, 320.0, 0.0, 640, 480, d).is_err());
    }

    #[test]
    fn camera_json_keys() {
        let cam = CameraModel::from_json_str(
            r#"{"fx": 600, "fy": 601, "cx": 320, "cy": 240, "width": 640, "height": 480,
                "dist": [0.1, -0.02, 0.001, 0.002]}"#,
        )
        .unwrap();
        assert_eq!(cam.fy, 601.0);
        assert_eq!(cam.dist.p2, 0.002);
        let bad = CameraModel::from_json_str(
            r#"{"fx": -1, "fy": 601, "cx": 320, "cy": 240, "width": 640, "height": 480}"#,
        );
        assert!(bad.is_err());
        let round: CameraModel =
            serde_json::from_str(&serde_json::to_string(&cam).unwrap()).unwrap();
        assert_eq!(round, cam);
    }

    #[test]
    fn zero_distortion_is_identity() {
        let d = Distortion::default();
        let p = Vector2::new(0.3, -0.2);
        assert_eq!(d.distort(&p), p);
        assert_eq!(d.undistort(&p), p);
    }

    #[test]
    fn frontal_back_projection_of_center() {
        let cam = cam600();
        let plane = Plane::from_point_normal(&Vector3::new(0.0, 0.0, 1.2), &-Vector3::z()).unwrap();
        let p = back_project_to_plane(
            &Vector2::new(cam.cx, cam.cy),
            &RigidTransform::identity(),
            &cam,
            &plane,
        )
        .unwrap();
        assert!((p - Vector3::new(0.0, 0.0, 1.2)).norm() < 1e-15);
    }

    #[test]
    fn parallel_ray_rejected() {
        let cam = cam600();
        let plane = Plane::from_point_normal(&Vector3::new(1.0, 0.0, 0.0), &Vector3::x()).unwrap();
        let r = back_project_to_plane(
            &Vector2::new(cam.cx, cam.cy),
            &RigidTransform::identity(),
            &cam,
            &plane,
        );
        assert!(matches!(r, Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn plane_behind_camera_rejected() {
        let cam = cam600();
        let plane = Plane::from_point_normal(&Vector3::new(0.0, 0.0, -1.0), &Vector3::z()).unwrap();
        assert!(back_project_to_plane(
            &Vector2::new(cam.cx, cam.cy),
            &RigidTransform::identity(),
            &cam,
            &plane
        )
        .is_err());
    }

    #[test]
    fn range_average_cases() {
        let r = average_range(&[1.2, 1.2, 1.2]).unwrap();
        assert!((r.mean - 1.2).abs() < 1e-15);
        assert!(r.sigma < 1e-15);
        let r = average_range(&[1.0]).unwrap();
        assert_eq!((r.mean, r.sigma, r.sample_count), (1.0, 0.0, 1));
        assert!(matches!(average_range(&[]), Err(Error::EmptySamples)));
        assert!((r.scale(&cam600()) - 1.0 / 600.0).abs() < 1e-18);
    }

    #[test]
    fn plane_transform_preserves_points() {
        let plane = Plane::from_point_normal(&Vector3::new(0.2, 0.1, 1.5), &Vector3::new(0.1, -0.2, 1.0)).unwrap();
        let t = RigidTransform::from_pose_vector(&crate::geometry::PoseVector::new(0.3, -0.1, 0.2, 0.1, 0.2, -0.3));
        let moved = plane.transformed(&t);
        let p = Vector3::new(0.2, 0.1, 1.5);
        assert!(moved.residual(&t.transform_point(&p)).abs() < 1e-14);
    }
}
