//! Label propagation from a single annotated frame.
//!
//! The operator's polygons are lifted once onto the board plane
//! ([`anchor_initial_frame`]) and then re-projected into every later camera
//! pose ([`propagate`]). [`homography_oracle`] maps pixels between the two
//! views through the plane-induced homography and is kept as an independent
//! check of the anchor/re-project path.

use std::hint::black_box;
use std::time::{Duration, Instant};

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::camera::{back_project_to_plane, CameraModel, Plane, ProjectionMatrix, RangeEstimate};
use crate::error::{Error, Result};
use crate::geometry::RigidTransform;

/// One labeled object in pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PolygonAnnotation {
    pub class_id: u32,
    pub vertices: Vec<Vector2<f64>>,
}

impl PolygonAnnotation {
    /// Requires at least three vertices and no repeated consecutive vertex
    /// (including the closing edge).
    pub fn new(class_id: u32, vertices: Vec<Vector2<f64>>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidPolygon(format!(
                "class {class_id}: {} vertices, need at least 3",
                vertices.len()
            )));
        }
        if !vertices.iter().all(|v| v.x.is_finite() && v.y.is_finite()) {
            return Err(Error::InvalidPolygon(format!(
                "class {class_id}: non-finite vertex"
            )));
        }
        let n = vertices.len();
        if let Some(i) = (0..n).find(|&i| vertices[i] == vertices[(i + 1) % n]) {
            return Err(Error::InvalidPolygon(format!(
                "class {class_id}: vertex {i} repeats its successor"
            )));
        }
        Ok(Self { class_id, vertices })
    }
}

/// An initial annotation lifted onto the board plane.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchoredPolygon {
    pub class_id: u32,
    pub world_vertices: Vec<Vector3<f64>>,
}

/// The labels of one frame together with the pose used to produce them.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameAnnotation {
    pub frame_id: u64,
    pub polygons: Vec<PolygonAnnotation>,
    pub camera_pose: RigidTransform,
    pub timestamp: Option<f64>,
    /// Indices (into the anchored set) of polygons dropped because a vertex
    /// fell behind the camera.
    pub hidden: Vec<usize>,
}

/// Plane at distance `range.mean` along the optical axis of `camera_pose`,
/// facing the camera.
pub fn frontal_plane(camera_pose: &RigidTransform, range: &RangeEstimate) -> Result<Plane> {
    let axis = camera_pose.transform_vector(&Vector3::z());
    let point = camera_pose.translation() + axis * range.mean;
    Plane::from_point_normal(&point, &-axis)
}

/// Lifts `cm0` onto the frontal plane defined by the initial pose and the
/// averaged range.
pub fn anchor_initial_frame(
    cm0: &[PolygonAnnotation],
    initial_pose: &RigidTransform,
    cam: &CameraModel,
    range: &RangeEstimate,
) -> Result<Vec<AnchoredPolygon>> {
    if !(range.mean > 0.0) {
        return Err(Error::DegenerateGeometry(format!(
            "range {} m must be positive",
            range.mean
        )));
    }
    anchor_to_plane(cm0, initial_pose, cam, &frontal_plane(initial_pose, range)?)
}

/// Lifts `cm0` onto an explicitly given world plane.
pub fn anchor_to_plane(
    cm0: &[PolygonAnnotation],
    initial_pose: &RigidTransform,
    cam: &CameraModel,
    plane: &Plane,
) -> Result<Vec<AnchoredPolygon>> {
    cm0.iter()
        .map(|poly| {
            let world_vertices = poly
                .vertices
                .iter()
                .map(|px| back_project_to_plane(px, initial_pose, cam, plane))
                .collect::<Result<Vec<_>>>()?;
            Ok(AnchoredPolygon {
                class_id: poly.class_id,
                world_vertices,
            })
        })
        .collect()
}

/// Re-projects anchored polygons into the camera at `pose`. Pixel
/// coordinates are not clipped to the image.
pub fn propagate(
    anchored: &[AnchoredPolygon],
    pose: &RigidTransform,
    cam: &CameraModel,
    frame_id: u64,
) -> FrameAnnotation {
    let m = ProjectionMatrix::from_camera_pose(pose);
    let mut polygons = Vec::with_capacity(anchored.len());
    let mut hidden = Vec::new();
    for (idx, a) in anchored.iter().enumerate() {
        let projected: Result<Vec<_>> = a.world_vertices.iter().map(|w| m.project(w, cam)).collect();
        match projected {
            Ok(vertices) => polygons.push(PolygonAnnotation {
                class_id: a.class_id,
                vertices,
            }),
            Err(_) => hidden.push(idx),
        }
    }
    FrameAnnotation {
        frame_id,
        polygons,
        camera_pose: *pose,
        timestamp: None,
        hidden,
    }
}

/// Plane-induced homography taking undistorted pixels of the view at
/// `initial_pose` to the view at `pose`: `A (R + t n^T / d) A^-1`, where
/// `(R, t)` is the relative motion and `n . X = d` the plane, both in the
/// initial camera frame.
pub fn homography_oracle(
    initial_pose: &RigidTransform,
    pose: &RigidTransform,
    cam: &CameraModel,
    plane: &Plane,
) -> Result<Matrix3<f64>> {
    let cam0_plane = plane.transformed(&initial_pose.inverse());
    let d = cam0_plane.offset();
    if d.abs() < 1e-9 {
        return Err(Error::DegenerateGeometry(
            "camera center lies on the plane".into(),
        ));
    }
    let rel = pose.inverse().compose(initial_pose);
    let euclidean = rel.rotation() + rel.translation() * cam0_plane.normal().transpose() / d;
    let a = cam.intrinsic_matrix();
    let a_inv = a
        .try_inverse()
        .ok_or_else(|| Error::InvalidCamera("singular intrinsic matrix".into()))?;
    Ok(a * euclidean * a_inv)
}

pub fn apply_homography(h: &Matrix3<f64>, px: &Vector2<f64>) -> Vector2<f64> {
    let p = h * Vector3::new(px.x, px.y, 1.0);
    Vector2::new(p.x / p.z, p.y / p.z)
}

#[derive(Debug, Clone, Copy)]
pub struct LatencyStats {
    pub mean: Duration,
    pub max: Duration,
    pub count: usize,
}

/// Times single-vertex propagation over `count` vertices (cycled from
/// `anchored`), after a short warm-up.
pub fn per_point_latency(
    anchored: &[AnchoredPolygon],
    pose: &RigidTransform,
    cam: &CameraModel,
    count: usize,
) -> LatencyStats {
    let points: Vec<Vector3<f64>> = anchored
        .iter()
        .flat_map(|a| a.world_vertices.iter().copied())
        .collect();
    if points.is_empty() || count == 0 {
        return LatencyStats {
            mean: Duration::ZERO,
            max: Duration::ZERO,
            count: 0,
        };
    }
    let m = ProjectionMatrix::from_camera_pose(pose);
    for p in points.iter().cycle().take(1000) {
        let _ = black_box(m.project(black_box(p), cam));
    }
    let mut total = Duration::ZERO;
    let mut max = Duration::ZERO;
    for p in points.iter().cycle().take(count) {
        let start = Instant::now();
        let _ = black_box(m.project(black_box(p), cam));
        let dt = start.elapsed();
        total += dt;
        max = max.max(dt);
    }
    LatencyStats {
        mean: total / count as u32,
        max,
        count,
    }
}
