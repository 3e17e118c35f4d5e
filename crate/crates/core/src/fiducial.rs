//! Camera localization from planar fiducial tag corners.
//!
//! All visible tag corners are pooled into one board-to-image homography
//! (normalized DLT), which is decomposed with the intrinsics into a
//! camera-from-board pose and optionally polished by Gauss-Newton on the
//! reprojection error.

use nalgebra::{DMatrix, Matrix2, Matrix3, Matrix6, Vector2, Vector3, Vector6, SVD};

use crate::camera::{project, CameraModel};
use crate::error::{Error, Result};
use crate::geometry::{rotation_exp, RigidTransform};
use crate::simulator::{BoardModel, TagObservation};

/// Board-plane point (meters) and its undistorted pixel.
pub type Correspondence = (Vector2<f64>, Vector2<f64>);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseEstimate {
    /// Camera-in-world pose.
    pub pose: RigidTransform,
    pub reprojection_rmse: f64,
    pub correspondence_count: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LocalizeOptions {
    /// Gauss-Newton polishing after the closed-form decomposition.
    pub refine: bool,
    pub max_iterations: usize,
}

impl Default for LocalizeOptions {
    fn default() -> Self {
        Self {
            refine: true,
            max_iterations: 10,
        }
    }
}

impl TagObservation {
    /// Rejects corner sets where any three corners are collinear (within 1e-6).
    pub fn validate(&self) -> Result<()> {
        let c = &self.image_corners;
        for skip in 0..4 {
            let p: Vec<_> = (0..4).filter(|&k| k != skip).map(|k| c[k]).collect();
            let area2 = (p[1] - p[0]).perp(&(p[2] - p[0]));
            if !(area2.abs() > 1e-6) {
                return Err(Error::DegenerateConfiguration(format!(
                    "tag {} has collinear corners",
                    self.tag_id
                )));
            }
        }
        Ok(())
    }
}

/// Similarity taking `points` to zero mean and mean distance sqrt(2).
fn normalizing_transform(points: impl Iterator<Item = Vector2<f64>> + Clone) -> Result<Matrix3<f64>> {
    let n = points.clone().count() as f64;
    let mean = points.clone().fold(Vector2::zeros(), |a, p| a + p) / n;
    let spread = points.map(|p| (p - mean).norm()).sum::<f64>() / n;
    if !(spread > 1e-12) {
        return Err(Error::DegenerateConfiguration("coincident points".into()));
    }
    let s = std::f64::consts::SQRT_2 / spread;
    Ok(Matrix3::new(s, 0.0, -s * mean.x, 0.0, s, -s * mean.y, 0.0, 0.0, 1.0))
}

fn apply(h: &Matrix3<f64>, p: &Vector2<f64>) -> Vector2<f64> {
    let q = h * Vector3::new(p.x, p.y, 1.0);
    Vector2::new(q.x / q.z, q.y / q.z)
}

/// Normalized DLT homography mapping board points to pixels. The result is
/// scaled so that `H[(2, 2)] = 1` whenever that entry is nonzero.
pub fn estimate_homography(correspondences: &[Correspondence]) -> Result<Matrix3<f64>> {
    let n = correspondences.len();
    if n < 4 {
        return Err(Error::DegenerateConfiguration(format!(
            "{n} correspondences, need at least 4"
        )));
    }
    let src_t = normalizing_transform(correspondences.iter().map(|c| c.0))?;
    let dst_t = normalizing_transform(correspondences.iter().map(|c| c.1))?;

    // Scatter of the normalized source points must span the plane.
    let scatter = correspondences.iter().fold(Matrix2::zeros(), |acc, c| {
        let p = apply(&src_t, &c.0);
        acc + p * p.transpose()
    });
    if scatter.symmetric_eigenvalues().min() < 1e-9 * n as f64 {
        return Err(Error::DegenerateConfiguration("board points are collinear".into()));
    }

    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (src, dst)) in correspondences.iter().enumerate() {
        let s = apply(&src_t, src);
        let d = apply(&dst_t, dst);
        let (x, y, u, v) = (s.x, s.y, d.x, d.y);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for k in 0..9 {
            a[(2 * i, k)] = r0[k];
            a[(2 * i + 1, k)] = r1[k];
        }
    }
    let svd = SVD::new(a, false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::DegenerateConfiguration("SVD failed".into()))?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[i].total_cmp(&sv[j]));
    let (smallest, second) = (order[0], order[1]);
    if sv[second] < 1e-10 * sv.max() {
        return Err(Error::DegenerateConfiguration(
            "rank-deficient homography system".into(),
        ));
    }
    let h = v_t.row(smallest);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let dst_inv = dst_t
        .try_inverse()
        .ok_or_else(|| Error::DegenerateConfiguration("singular normalization".into()))?;
    let mut out = dst_inv * hn * src_t;
    let scale = out.amax();
    if out[(2, 2)].abs() > 1e-12 * scale {
        out /= out[(2, 2)];
    } else {
        out /= scale;
    }
    Ok(out)
}

/// Closed-form camera-from-board pose from a board-to-pixel homography.
pub fn decompose_homography(h: &Matrix3<f64>, cam: &CameraModel) -> Result<RigidTransform> {
    let a_inv = cam
        .intrinsic_matrix()
        .try_inverse()
        .ok_or_else(|| Error::InvalidCamera("singular intrinsic matrix".into()))?;
    let b = a_inv * h;
    let b1 = b.column(0).into_owned();
    let b2 = b.column(1).into_owned();
    let b3 = b.column(2).into_owned();
    let norm = b1.norm();
    if !(norm > 1e-15) {
        return Err(Error::DegenerateConfiguration("homography has a null column".into()));
    }
    let mut scale = 1.0 / norm;
    if b3.z * scale < 0.0 {
        scale = -scale;
    }
    let t = b3 * scale;
    if !(t.z > 0.0) {
        return Err(Error::InconsistentData(
            "board lies behind the camera for both homography signs".into(),
        ));
    }
    let r1 = b1 * scale;
    let r2 = b2 * scale;
    let r3 = r1.cross(&r2);
    let rotation = nearest_rotation(&Matrix3::from_columns(&[r1, r2, r3]))?;
    RigidTransform::new(rotation, t)
}

/// Closest proper rotation in the Frobenius sense.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let svd = m.svd(true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Err(Error::DegenerateConfiguration("SVD failed".into()));
    };
    let mut u = u;
    if (u * v_t).determinant() < 0.0 {
        // Flip the direction of least singular value.
        let sv = svd.singular_values;
        let k = (0..3).min_by(|&i, &j| sv[i].total_cmp(&sv[j])).unwrap_or(2);
        u.column_mut(k).neg_mut();
    }
    Ok(u * v_t)
}

/// Gauss-Newton on the pinhole reprojection error of undistorted pixels.
pub fn refine_pose(
    camera_from_board: &RigidTransform,
    correspondences: &[Correspondence],
    cam: &CameraModel,
    max_iterations: usize,
) -> RigidTransform {
    let mut pose = *camera_from_board;
    let mut cost = pinhole_cost(&pose, correspondences, cam);
    for _ in 0..max_iterations {
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for (b, px) in correspondences {
            let pc = pose.transform_point(&Vector3::new(b.x, b.y, 0.0));
            if pc.z <= 0.0 {
                return pose;
            }
            let iz = 1.0 / pc.z;
            let u = cam.fx * pc.x * iz + cam.cx;
            let v = cam.fy * pc.y * iz + cam.cy;
            let r = Vector2::new(u - px.x, v - px.y);
            // d(pixel)/d(camera point)
            let dp = nalgebra::Matrix2x3::new(
                cam.fx * iz,
                0.0,
                -cam.fx * pc.x * iz * iz,
                0.0,
                cam.fy * iz,
                -cam.fy * pc.y * iz * iz,
            );
            // Left perturbation: pc' = exp(w) (pc - t) + t + dt
            let rotated = pc - pose.translation();
            let mut dx = nalgebra::Matrix3x6::<f64>::zeros();
            dx.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-rotated.cross_matrix()));
            dx.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
            let j = dp * dx;
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        let Some(step) = jtj.cholesky().map(|c| c.solve(&(-jtr))) else {
            break;
        };
        let w = Vector3::new(step[0], step[1], step[2]);
        let dt = Vector3::new(step[3], step[4], step[5]);
        let candidate = RigidTransform::from_parts_unchecked(
            rotation_exp(&w) * pose.rotation(),
            pose.translation() + dt,
        );
        let new_cost = pinhole_cost(&candidate, correspondences, cam);
        if !(new_cost < cost) {
            break;
        }
        let converged = step.amax() < 1e-12;
        pose = candidate;
        cost = new_cost;
        if converged {
            break;
        }
    }
    // Re-project onto SO(3) to remove accumulated drift.
    let r = nearest_rotation(pose.rotation()).unwrap_or(*pose.rotation());
    RigidTransform::from_parts_unchecked(r, *pose.translation())
}

fn pinhole_cost(pose: &RigidTransform, correspondences: &[Correspondence], cam: &CameraModel) -> f64 {
    correspondences
        .iter()
        .map(|(b, px)| {
            let pc = pose.transform_point(&Vector3::new(b.x, b.y, 0.0));
            if pc.z <= 0.0 {
                return f64::INFINITY;
            }
            let u = cam.fx * pc.x / pc.z + cam.cx;
            let v = cam.fy * pc.y / pc.z + cam.cy;
            (u - px.x).powi(2) + (v - px.y).powi(2)
        })
        .sum()
}

/// Homography, decomposition and optional refinement from undistorted correspondences.
pub fn estimate_camera_from_board(
    correspondences: &[Correspondence],
    cam: &CameraModel,
    options: &LocalizeOptions,
) -> Result<RigidTransform> {
    let h = estimate_homography(correspondences)?;
    let pose = decompose_homography(&h, cam)?;
    Ok(if options.refine {
        refine_pose(&pose, correspondences, cam, options.max_iterations)
    } else {
        pose
    })
}

/// Camera-in-world pose from every observed tag on `board`.
pub fn localize_from_tags(
    observations: &[TagObservation],
    board: &BoardModel,
    cam: &CameraModel,
    options: &LocalizeOptions,
) -> Result<PoseEstimate> {
    if observations.is_empty() {
        return Err(Error::NoTags);
    }
    let mut correspondences = Vec::with_capacity(observations.len() * 4);
    let mut world_and_observed = Vec::with_capacity(observations.len() * 4);
    for obs in observations {
        obs.validate()?;
        let tag = board
            .tags
            .iter()
            .find(|t| t.id == obs.tag_id)
            .ok_or_else(|| Error::InconsistentData(format!("unknown tag id {}", obs.tag_id)))?;
        for (corner, px) in tag.corners.iter().zip(&obs.image_corners) {
            correspondences.push((Vector2::new(corner[0], corner[1]), cam.undistort_pixel(px)));
            world_and_observed.push((board.to_world(corner), *px));
        }
    }
    let camera_from_board = estimate_camera_from_board(&correspondences, cam, options)?;
    let pose = board.pose.compose(&camera_from_board.inverse());
    let reprojection_rmse = reprojection_rmse(&pose, cam, &world_and_observed)?;
    Ok(PoseEstimate {
        pose,
        reprojection_rmse,
        correspondence_count: correspondences.len(),
    })
}

/// Root mean squared pixel distance between projected world points and observations.
pub fn reprojection_rmse(
    pose: &RigidTransform,
    cam: &CameraModel,
    points: &[(Vector3<f64>, Vector2<f64>)],
) -> Result<f64> {
    if points.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (w, px) in points {
        sum += (project(w, pose, cam)? - px).norm_squared();
    }
    Ok((sum / points.len() as f64).sqrt())
}
