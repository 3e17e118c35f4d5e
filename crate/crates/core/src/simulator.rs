//! Virtual scanning rig: a planar board with barcode objects and corner
//! tags, a camera on a noisy arm, a noisy single-beam rangefinder and a
//! schematic renderer.
//!
//! Board coordinates are meters with the origin at the top-left board
//! corner, `x` to the right, `y` down and `z` pointing away from the camera
//! side, so a camera whose axes coincide with the board axes views it
//! frontally.
//!
//! All randomness is drawn from ChaCha streams derived from one seed, see
//! [`rng_for`].

use image::{Rgb, RgbImage};
use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{average_range, CameraModel, Plane, ProjectionMatrix, RangeEstimate};
use crate::error::{Error, Result};
use crate::geometry::{rotation_exp, CameraMount, PoseVector, RigidTransform};
use crate::propagation::{FrameAnnotation, PolygonAnnotation};
use crate::raster::{rasterize_polygons, Mask};

/// Stream identifiers for [`rng_for`].
pub mod stream {
    pub const TRAJECTORY: u64 = 1;
    pub const INITIAL: u64 = 2;
    pub const RANGE: u64 = 3;
    pub const TAGS: u64 = 4;
    pub const TINT: u64 = 5;
    pub const REPEATABILITY: u64 = 6;
    pub const SWEEP: u64 = 7;

    /// Per-frame sub-stream of `purpose`.
    pub fn frame(purpose: u64, frame_id: u64) -> u64 {
        (purpose << 40) | frame_id
    }
}

pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A labeled object on the board.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardObject {
    pub class_id: u32,
    /// Board-plane vertices in meters.
    pub polygon: Vec<[f64; 2]>,
}

/// A square fiducial tag, corners in fixed winding order
/// `(x0, y0), (x1, y0), (x1, y1), (x0, y1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tag {
    pub id: u32,
    pub corners: [[f64; 2]; 4],
}

impl Tag {
    pub fn square(id: u32, origin: [f64; 2], size: f64) -> Self {
        let [x, y] = origin;
        Self {
            id,
            corners: [[x, y], [x + size, y], [x + size, y + size], [x, y + size]],
        }
    }

    fn is_square(&self) -> bool {
        let c: Vec<Vector2<f64>> = self.corners.iter().map(|p| Vector2::new(p[0], p[1])).collect();
        let sides: Vec<f64> = (0..4).map(|k| (c[(k + 1) % 4] - c[k]).norm()).collect();
        let d0 = (c[2] - c[0]).norm();
        let d1 = (c[3] - c[1]).norm();
        sides[0] > 0.0
            && sides.iter().all(|s| (s - sides[0]).abs() < 1e-9)
            && (d0 - d1).abs() < 1e-9
            && (d0 - sides[0] * std::f64::consts::SQRT_2).abs() < 1e-9
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoardModel {
    /// `world_from_board`.
    pub pose: RigidTransform,
    pub width: f64,
    pub height: f64,
    pub objects: Vec<BoardObject>,
    pub tags: Vec<Tag>,
}

#[derive(Serialize, Deserialize)]
struct BoardFile {
    pose: [f64; 6],
    width_m: f64,
    height_m: f64,
    objects: Vec<BoardObject>,
    tags: Vec<Tag>,
}

impl Serialize for BoardModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let pose = self
            .pose
            .to_pose_vector()
            .map_err(serde::ser::Error::custom)?
            .to_array();
        BoardFile {
            pose,
            width_m: self.width,
            height_m: self.height,
            objects: self.objects.clone(),
            tags: self.tags.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for BoardModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let f = BoardFile::deserialize(d)?;
        BoardModel::new(
            RigidTransform::from_pose_vector(&PoseVector::from_array(f.pose)),
            f.width_m,
            f.height_m,
            f.objects,
            f.tags,
        )
        .map_err(serde::de::Error::custom)
    }
}

impl BoardModel {
    pub fn new(
        pose: RigidTransform,
        width: f64,
        height: f64,
        objects: Vec<BoardObject>,
        tags: Vec<Tag>,
    ) -> Result<Self> {
        if !(width > 0.0 && height > 0.0) {
            return Err(Error::Config(format!("board size {width} x {height} m")));
        }
        let inside = |p: &[f64; 2]| p[0] >= 0.0 && p[0] <= width && p[1] >= 0.0 && p[1] <= height;
        for (i, o) in objects.iter().enumerate() {
            if o.polygon.len() < 3 {
                return Err(Error::Config(format!("object {i} has fewer than 3 vertices")));
            }
            if !o.polygon.iter().all(inside) {
                return Err(Error::Config(format!("object {i} extends outside the board")));
            }
        }
        for t in &tags {
            if !t.corners.iter().all(inside) {
                return Err(Error::Config(format!("tag {} extends outside the board", t.id)));
            }
            if !t.is_square() {
                return Err(Error::Config(format!("tag {} corners are not a square", t.id)));
            }
        }
        Ok(Self {
            pose,
            width,
            height,
            objects,
            tags,
        })
    }

    /// A 1.0 x 0.6 m board facing the robot, 20 barcode labels in a 5 x 4
    /// grid and four 8 cm corner tags.
    pub fn default_board() -> Self {
        let (width, height) = (1.0, 0.6);
        let mut objects = Vec::with_capacity(20);
        for row in 0..4 {
            for col in 0..5 {
                let k = row * 5 + col;
                // Sizes vary over a small fixed pattern of label formats.
                let w = [0.036, 0.044, 0.030, 0.040][k % 4];
                let h = [0.018, 0.022, 0.016, 0.020, 0.024][k % 5];
                let cx = 0.18 + 0.16 * col as f64;
                let cy = 0.12 + 0.12 * row as f64;
                objects.push(BoardObject {
                    class_id: 0,
                    polygon: vec![
                        [cx - w / 2.0, cy - h / 2.0],
                        [cx + w / 2.0, cy - h / 2.0],
                        [cx + w / 2.0, cy + h / 2.0],
                        [cx - w / 2.0, cy + h / 2.0],
                    ],
                });
            }
        }
        let s = 0.08;
        let m = 0.02;
        let tags = vec![
            Tag::square(0, [m, m], s),
            Tag::square(1, [width - m - s, m], s),
            Tag::square(2, [width - m - s, height - m - s], s),
            Tag::square(3, [m, height - m - s], s),
        ];
        // Board x along world x, board y along world -z, normal along world +y.
        let rotation = Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, -1.0, 0.0);
        let pose = RigidTransform::new(rotation, Vector3::new(-0.5, 1.0, 1.0))
            .expect("constant rotation is proper");
        Self::new(pose, width, height, objects, tags).expect("default board is valid")
    }

    pub fn center(&self) -> Vector3<f64> {
        self.to_world(&[self.width / 2.0, self.height / 2.0])
    }

    pub fn to_world(&self, p: &[f64; 2]) -> Vector3<f64> {
        self.pose.transform_point(&Vector3::new(p[0], p[1], 0.0))
    }

    pub fn plane(&self) -> Plane {
        Plane::from_point_normal(
            self.pose.translation(),
            &self.pose.transform_vector(&Vector3::z()),
        )
        .expect("rotation columns are unit length")
    }

    /// Camera-in-world pose looking straight at the board center from `distance`.
    pub fn frontal_camera(&self, distance: f64) -> RigidTransform {
        let in_board = RigidTransform::from_translation(
            self.width / 2.0,
            self.height / 2.0,
            -distance,
        );
        self.pose.compose(&in_board)
    }
}

/// Per-axis repeatability bounds and sensor noise levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Per-axis translation bound, meters.
    pub trans_bound: Vector3<f64>,
    /// Per-axis rotation bound, degrees.
    pub rot_bound_deg: f64,
    /// Rangefinder standard deviation, meters.
    pub range_sigma: f64,
    /// Tag corner noise, pixels.
    pub tag_pixel_sigma: f64,
}

impl NoiseModel {
    pub fn zero() -> Self {
        Self {
            trans_bound: Vector3::zeros(),
            rot_bound_deg: 0.0,
            range_sigma: 0.0,
            tag_pixel_sigma: 0.0,
        }
    }

    /// Measured UR3 repeatability, LIDAR-Lite v3 deviation and 0.5 px tag corners.
    pub fn measured() -> Self {
        Self {
            trans_bound: Vector3::new(0.045e-3, 0.032e-3, 0.05e-3),
            rot_bound_deg: 0.08,
            range_sigma: 0.0063,
            tag_pixel_sigma: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.trans_bound.x,
            self.trans_bound.y,
            self.trans_bound.z,
            self.rot_bound_deg,
            self.range_sigma,
            self.tag_pixel_sigma,
        ];
        if all.iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(())
        } else {
            Err(Error::Config("noise parameters must be finite and >= 0".into()))
        }
    }

    /// Perturbs an end-effector pose: `R' = exp(w) R`, `t' = t + dt`, each
    /// component drawn from a Gaussian with sigma = bound / 3 truncated at the bound.
    pub fn perturb<R: Rng + ?Sized>(&self, pose: &RigidTransform, rng: &mut R) -> RigidTransform {
        let dt = Vector3::new(
            truncated_normal(rng, self.trans_bound.x),
            truncated_normal(rng, self.trans_bound.y),
            truncated_normal(rng, self.trans_bound.z),
        );
        let rb = self.rot_bound_deg.to_radians();
        let w = Vector3::new(
            truncated_normal(rng, rb),
            truncated_normal(rng, rb),
            truncated_normal(rng, rb),
        );
        RigidTransform::from_parts_unchecked(
            rotation_exp(&w) * pose.rotation(),
            pose.translation() + dt,
        )
    }
}

#[derive(Serialize, Deserialize)]
struct NoiseFile {
    trans_bound_mm: [f64; 3],
    rot_bound_deg: f64,
    range_sigma_mm: f64,
    tag_pixel_sigma: f64,
}

impl Serialize for NoiseModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        NoiseFile {
            trans_bound_mm: [
                self.trans_bound.x * 1e3,
                self.trans_bound.y * 1e3,
                self.trans_bound.z * 1e3,
            ],
            rot_bound_deg: self.rot_bound_deg,
            range_sigma_mm: self.range_sigma * 1e3,
            tag_pixel_sigma: self.tag_pixel_sigma,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for NoiseModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let f = NoiseFile::deserialize(d)?;
        let n = NoiseModel {
            trans_bound: Vector3::from(f.trans_bound_mm) * 1e-3,
            rot_bound_deg: f.rot_bound_deg,
            range_sigma: f.range_sigma_mm * 1e-3,
            tag_pixel_sigma: f.tag_pixel_sigma,
        };
        n.validate().map_err(serde::de::Error::custom)?;
        Ok(n)
    }
}

/// Gaussian with sigma = `bound / 3`, rejected outside `[-bound, bound]`.
pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, bound: f64) -> f64 {
    if bound <= 0.0 {
        return 0.0;
    }
    let sigma = bound / 3.0;
    loop {
        let z: f64 = StandardNormal.sample(rng);
        let v = z * sigma;
        if v.abs() <= bound {
            return v;
        }
    }
}

/// Region of camera positions relative to the frontal pose over the board center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    /// Offset along board x, meters.
    pub x: [f64; 2],
    /// Offset along board y, meters.
    pub y: [f64; 2],
    /// Distance from the board plane, meters.
    pub distance: [f64; 2],
    /// Look-at point jitter around the board center, meters.
    pub look_jitter: f64,
    /// Roll about the optical axis, degrees.
    pub roll_deg: f64,
}

impl Default for Workspace {
    fn default() -> Self {
        Self {
            x: [-0.15, 0.15],
            y: [-0.10, 0.10],
            distance: [0.8, 1.2],
            look_jitter: 0.08,
            roll_deg: 10.0,
        }
    }
}

impl Workspace {
    pub fn validate(&self) -> Result<()> {
        let ok = self.x[0] <= self.x[1]
            && self.y[0] <= self.y[1]
            && self.distance[0] <= self.distance[1]
            && self.distance[0] > 0.0
            && self.look_jitter >= 0.0
            && self.roll_deg >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("invalid workspace bounds".into()))
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..range[1])
    } else {
        range[0]
    }
}

/// Poses of one capture: the true and controller-reported end-effector poses
/// and the corresponding camera poses.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFrame {
    pub frame_id: u64,
    pub true_ee: RigidTransform,
    pub reported_ee: RigidTransform,
    pub true_pose: RigidTransform,
    pub reported_pose: RigidTransform,
}

impl TrajectoryFrame {
    fn from_ee(
        frame_id: u64,
        true_ee: RigidTransform,
        reported_ee: RigidTransform,
        mount: &RigidTransform,
    ) -> Self {
        Self {
            frame_id,
            true_ee,
            reported_ee,
            true_pose: true_ee.compose(mount),
            reported_pose: reported_ee.compose(mount),
        }
    }
}

pub type Trajectory = Vec<TrajectoryFrame>;

fn look_at_in_board(position: &Vector3<f64>, target: &Vector3<f64>, roll: f64) -> Option<RigidTransform> {
    let z = (target - position).try_normalize(1e-12)?;
    let x = (Vector3::x() - z * z.x).try_normalize(1e-9)?;
    let y = z.cross(&x);
    let base = Matrix3::from_columns(&[x, y, z]);
    let rotation = base * rotation_exp(&Vector3::new(0.0, 0.0, roll));
    Some(RigidTransform::from_parts_unchecked(rotation, *position))
}

fn board_center_visible(board: &BoardModel, pose: &RigidTransform, cam: &CameraModel) -> bool {
    ProjectionMatrix::from_camera_pose(pose)
        .project(&board.center(), cam)
        .map(|px| cam.contains(&px))
        .unwrap_or(false)
}

/// Initial capture: the camera sits frontally over the board center.
pub fn initial_frame(
    seed: u64,
    board: &BoardModel,
    mount: &CameraMount,
    distance: f64,
    noise: &NoiseModel,
) -> TrajectoryFrame {
    let mount = mount.transform();
    let true_ee = board.frontal_camera(distance).compose(&mount.inverse());
    let mut rng = rng_for(seed, stream::INITIAL);
    let reported_ee = noise.perturb(&true_ee, &mut rng);
    TrajectoryFrame::from_ee(0, true_ee, reported_ee, &mount)
}

/// Samples `frame_count` camera poses in `workspace`, each looking at a point
/// near the board center, with the arm noise applied to the reported pose.
pub fn generate_trajectory(
    seed: u64,
    frame_count: usize,
    workspace: &Workspace,
    board: &BoardModel,
    mount: &CameraMount,
    cam: &CameraModel,
    noise: &NoiseModel,
) -> Result<Trajectory> {
    const MAX_RETRIES: usize = 1000;
    workspace.validate()?;
    noise.validate()?;
    let mount = mount.transform();
    let mount_inv = mount.inverse();
    let mut rng = rng_for(seed, stream::TRAJECTORY);
    let center = Vector3::new(board.width / 2.0, board.height / 2.0, 0.0);
    let mut frames = Vec::with_capacity(frame_count);
    for frame_id in 0..frame_count as u64 {
        let mut accepted = None;
        for _ in 0..MAX_RETRIES {
            let position = center
                + Vector3::new(
                    uniform(&mut rng, workspace.x),
                    uniform(&mut rng, workspace.y),
                    -uniform(&mut rng, workspace.distance),
                );
            let j = workspace.look_jitter;
            let target = center
                + Vector3::new(
                    uniform(&mut rng, [-j, j]),
                    uniform(&mut rng, [-j, j]),
                    0.0,
                );
            let r = workspace.roll_deg.to_radians();
            let roll = uniform(&mut rng, [-r, r]);
            let Some(in_board) = look_at_in_board(&position, &target, roll) else {
                continue;
            };
            let pose = board.pose.compose(&in_board);
            if board_center_visible(board, &pose, cam) {
                accepted = Some(pose);
                break;
            }
        }
        let Some(true_pose) = accepted else {
            return Err(Error::Config(format!(
                "no valid camera pose for frame {frame_id} after {MAX_RETRIES} attempts"
            )));
        };
        let true_ee = true_pose.compose(&mount_inv);
        let reported_ee = noise.perturb(&true_ee, &mut rng);
        frames.push(TrajectoryFrame::from_ee(frame_id, true_ee, reported_ee, &mount));
    }
    Ok(frames)
}

/// Distance along the optical axis from the camera to the board plane.
pub fn axial_distance(pose: &RigidTransform, board: &BoardModel) -> Result<f64> {
    let plane = board.plane();
    let axis = pose.transform_vector(&Vector3::z());
    let denom = plane.normal().dot(&axis);
    if denom.abs() < 1e-9 {
        return Err(Error::DegenerateGeometry("optical axis parallel to the board".into()));
    }
    let s = (plane.offset() - plane.normal().dot(pose.translation())) / denom;
    if !(s > 0.0) {
        return Err(Error::DegenerateGeometry("board is behind the rangefinder".into()));
    }
    Ok(s)
}

/// Draws `sample_count` noisy range readings along the optical axis and averages them.
pub fn simulate_rangefinder<R: Rng + ?Sized>(
    true_pose: &RigidTransform,
    board: &BoardModel,
    noise: &NoiseModel,
    sample_count: usize,
    rng: &mut R,
) -> Result<RangeEstimate> {
    let d = axial_distance(true_pose, board)?;
    let samples = range_samples(d, noise.range_sigma, sample_count, rng);
    average_range(&samples)
}

pub fn range_samples<R: Rng + ?Sized>(distance: f64, sigma: f64, count: usize, rng: &mut R) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![distance; count];
    }
    let normal = Normal::new(distance, sigma).expect("sigma is finite and positive");
    (0..count).map(|_| normal.sample(rng)).collect()
}

/// Four tag corners as seen in an image, in the tag's winding order.
#[derive(Debug, Clone, PartialEq)]
pub struct TagObservation {
    pub tag_id: u32,
    pub image_corners: [Vector2<f64>; 4],
}

/// Projects every tag fully inside the image and adds isotropic pixel noise.
pub fn observe_tags<R: Rng + ?Sized>(
    board: &BoardModel,
    true_pose: &RigidTransform,
    cam: &CameraModel,
    noise: &NoiseModel,
    rng: &mut R,
) -> Vec<TagObservation> {
    let m = ProjectionMatrix::from_camera_pose(true_pose);
    let mut out = Vec::new();
    for tag in &board.tags {
        let mut corners = [Vector2::zeros(); 4];
        let mut visible = true;
        for (c, p) in corners.iter_mut().zip(&tag.corners) {
            match m.project(&board.to_world(p), cam) {
                Ok(px) if cam.contains(&px) => *c = px,
                _ => {
                    visible = false;
                    break;
                }
            }
        }
        if !visible {
            continue;
        }
        if noise.tag_pixel_sigma > 0.0 {
            let n = Normal::new(0.0, noise.tag_pixel_sigma).expect("valid sigma");
            for c in corners.iter_mut() {
                c.x += n.sample(rng);
                c.y += n.sample(rng);
            }
        }
        out.push(TagObservation {
            tag_id: tag.id,
            image_corners: corners,
        });
    }
    out
}

/// Exact labels of every board object at `pose`; objects with a vertex behind
/// the camera are listed in `hidden`.
pub fn truth_annotation(
    board: &BoardModel,
    pose: &RigidTransform,
    cam: &CameraModel,
    frame_id: u64,
) -> FrameAnnotation {
    let m = ProjectionMatrix::from_camera_pose(pose);
    let mut polygons = Vec::new();
    let mut hidden = Vec::new();
    for (i, o) in board.objects.iter().enumerate() {
        let verts: Result<Vec<_>> = o.polygon.iter().map(|p| m.project(&board.to_world(p), cam)).collect();
        match verts {
            Ok(vertices) => polygons.push(PolygonAnnotation {
                class_id: o.class_id,
                vertices,
            }),
            Err(_) => hidden.push(i),
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

/// Smooth color-temperature shift plus a coarse grid of colored light patches.
#[derive(Debug, Clone)]
pub struct Tint {
    temperature: f64,
    grid: Vec<[f64; 3]>,
}

const TINT_GRID: (usize, usize) = (4, 3);

impl Tint {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let temperature = rng.random_range(-1.0..1.0);
        let grid = (0..TINT_GRID.0 * TINT_GRID.1)
            .map(|_| {
                [
                    rng.random_range(0.75..1.15),
                    rng.random_range(0.75..1.15),
                    rng.random_range(0.75..1.15),
                ]
            })
            .collect();
        Self { temperature, grid }
    }

    fn factor(&self, u: f64, v: f64) -> [f64; 3] {
        let (gw, gh) = TINT_GRID;
        let gx = (u * (gw - 1) as f64).clamp(0.0, (gw - 1) as f64);
        let gy = (v * (gh - 1) as f64).clamp(0.0, (gh - 1) as f64);
        let (x0, y0) = (gx.floor() as usize, gy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(gw - 1), (y0 + 1).min(gh - 1));
        let (fx, fy) = (gx - x0 as f64, gy - y0 as f64);
        let g = |x: usize, y: usize| self.grid[y * gw + x];
        let t = self.temperature * 0.15;
        let warm = [1.0 + t, 1.0, 1.0 - t];
        std::array::from_fn(|c| {
            let top = g(x0, y0)[c] * (1.0 - fx) + g(x1, y0)[c] * fx;
            let bottom = g(x0, y1)[c] * (1.0 - fx) + g(x1, y1)[c] * fx;
            (top * (1.0 - fy) + bottom * fy) * warm[c]
        })
    }
}

const SUPERSAMPLE: u32 = 4;

fn object_bbox(o: &BoardObject) -> [f64; 4] {
    o.polygon.iter().fold(
        [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
        |b, p| [b[0].min(p[0]), b[1].min(p[1]), b[2].max(p[0]), b[3].max(p[1])],
    )
}

fn point_in_polygon(p: &[f64; 2], poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    let mut inside = false;
    for k in 0..n {
        let a = poly[k];
        let b = poly[(k + 1) % n];
        if (a[1] <= p[1]) != (b[1] <= p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

fn stripe_hash(object: usize, bar: i64) -> u64 {
    let mut h = (object as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (bar as u64);
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h
}

/// Reflectance of the scene at board coordinates `p`, or `None` off the board.
fn shade(board: &BoardModel, bboxes: &[[f64; 4]], p: &[f64; 2]) -> Option<[f64; 3]> {
    if p[0] < 0.0 || p[1] < 0.0 || p[0] > board.width || p[1] > board.height {
        return None;
    }
    for tag in &board.tags {
        let [x0, y0] = tag.corners[0];
        let [x1, y1] = tag.corners[2];
        if p[0] >= x0 && p[0] <= x1 && p[1] >= y0 && p[1] <= y1 {
            let cell = (x1 - x0) / 6.0;
            let (i, j) = (((p[0] - x0) / cell) as u32, ((p[1] - y0) / cell) as u32);
            let border = i == 0 || j == 0 || i >= 5 || j >= 5;
            let bit = !border && (stripe_hash(tag.id as usize + 1000, (i * 6 + j) as i64) & 1) == 1;
            let v = if border || !bit { 0.05 } else { 0.95 };
            return Some([v, v, v]);
        }
    }
    for (k, (o, b)) in board.objects.iter().zip(bboxes).enumerate() {
        if p[0] < b[0] || p[0] > b[2] || p[1] < b[1] || p[1] > b[3] {
            continue;
        }
        if point_in_polygon(p, &o.polygon) {
            let module = 0.0012;
            let bar = ((p[0] - b[0]) / module).floor() as i64;
            let dark = stripe_hash(k, bar) % 5 < 2;
            let v = if dark { 0.08 } else { 0.92 };
            return Some([v, v, v]);
        }
    }
    Some([0.85, 0.84, 0.80])
}

/// Hard-edged mask of every board object at `true_pose`.
pub fn truth_mask(board: &BoardModel, true_pose: &RigidTransform, cam: &CameraModel) -> Mask {
    let truth = truth_annotation(board, true_pose, cam, 0);
    rasterize_polygons(
        truth.polygons.iter().map(|p| p.vertices.as_slice()),
        cam.width,
        cam.height,
    )
}

/// Schematic color image (4x4 supersampled, tinted) and the hard-edged
/// ground-truth mask of all board objects.
pub fn render_frame(
    board: &BoardModel,
    true_pose: &RigidTransform,
    cam: &CameraModel,
    tint_seed: u64,
) -> (RgbImage, Mask) {
    let mask = truth_mask(board, true_pose, cam);
    let tint = Tint::random(&mut rng_for(tint_seed, stream::TINT));
    let plane = board.plane();
    let board_from_world = board.pose.inverse();
    let bboxes: Vec<[f64; 4]> = board.objects.iter().map(object_bbox).collect();
    let origin = *true_pose.translation();
    let background = [0.16, 0.16, 0.18];
    let (w, h) = (cam.width, cam.height);
    let step = 1.0 / SUPERSAMPLE as f64;

    let rows: Vec<Vec<u8>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = Vec::with_capacity(w as usize * 3);
            for x in 0..w {
                let mut acc = [0.0; 3];
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let px = Vector2::new(
                            x as f64 + (sx as f64 + 0.5) * step,
                            y as f64 + (sy as f64 + 0.5) * step,
                        );
                        let dir = true_pose.transform_vector(&cam.pixel_to_ray(&px));
                        let denom = plane.normal().dot(&dir);
                        let color = if denom.abs() > 1e-12 {
                            let s = (plane.offset() - plane.normal().dot(&origin)) / denom;
                            if s > 0.0 {
                                let b = board_from_world.transform_point(&(origin + dir * s));
                                shade(board, &bboxes, &[b.x, b.y]).unwrap_or(background)
                            } else {
                                background
                            }
                        } else {
                            background
                        };
                        for c in 0..3 {
                            acc[c] += color[c];
                        }
                    }
                }
                let f = tint.factor(x as f64 / w as f64, y as f64 / h as f64);
                let n = (SUPERSAMPLE * SUPERSAMPLE) as f64;
                for c in 0..3 {
                    row.push((acc[c] / n * f[c] * 255.0).round().clamp(0.0, 255.0) as u8);
                }
            }
            row
        })
        .collect();
    let image = RgbImage::from_raw(w, h, rows.concat()).expect("buffer matches dimensions");
    (image, mask)
}

/// Blends the mask boundary onto `image` for visual inspection. Pixels
/// outside the 1-pixel dilated boundary band are untouched.
pub fn overlay(image: &RgbImage, mask: &Mask) -> RgbImage {
    let mut out = image.clone();
    let grown = mask.dilate(1);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if grown.get(x, y) && !is_interior(mask, x, y) {
                out.put_pixel(x, y, Rgb([255, 40, 200]));
            }
        }
    }
    out
}

fn is_interior(mask: &Mask, x: u32, y: u32) -> bool {
    if !mask.get(x, y) {
        return false;
    }
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    for (dx, dy) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
        if nx < 0 || ny < 0 || nx >= w || ny >= h || !mask.get(nx as u32, ny as u32) {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_board_is_valid_and_frontal() {
        let board = BoardModel::default_board();
        assert_eq!(board.objects.len(), 20);
        assert_eq!(board.tags.len(), 4);
        let cam = CameraModel::default();
        let pose = board.frontal_camera(1.2);
        let px = ProjectionMatrix::from_camera_pose(&pose)
            .project(&board.center(), &cam)
            .unwrap();
        assert!((px - Vector2::new(cam.cx, cam.cy)).norm() < 1e-9);
        assert!((axial_distance(&pose, &board).unwrap() - 1.2).abs() < 1e-12);
    }

    #[test]
    fn board_rejects_bad_tags_and_objects() {
        let b = BoardModel::default_board();
        let mut tags = b.tags.clone();
        tags[0].corners[2][0] += 0.01;
        assert!(BoardModel::new(b.pose, b.width, b.height, b.objects.clone(), tags).is_err());
        let mut objects = b.objects.clone();
        objects[0].polygon[0] = [-0.1, 0.0];
        assert!(BoardModel::new(b.pose, b.width, b.height, objects, b.tags.clone()).is_err());
    }

    #[test]
    fn truncated_normal_respects_bound() {
        let mut rng = rng_for(1, 0);
        for _ in 0..10_000 {
            assert!(truncated_normal(&mut rng, 0.08).abs() <= 0.08);
        }
        assert_eq!(truncated_normal(&mut rng, 0.0), 0.0);
    }

    #[test]
    fn zero_noise_trajectory_is_exact() {
        let board = BoardModel::default_board();
        let t = generate_trajectory(
            3,
            20,
            &Workspace::default(),
            &board,
            &CameraMount::default(),
            &CameraModel::default(),
            &NoiseModel::zero(),
        )
        .unwrap();
        assert_eq!(t.len(), 20);
        for f in &t {
            assert_eq!(f.true_ee, f.reported_ee);
            assert!(f.true_pose.max_abs_diff(&f.reported_pose) == 0.0);
        }
    }

    #[test]
    fn unreachable_look_targets_are_a_config_error() {
        let board = BoardModel::default_board();
        let ws = Workspace {
            look_jitter: 1000.0,
            ..Workspace::default()
        };
        let r = generate_trajectory(
            1,
            1,
            &ws,
            &board,
            &CameraMount::default(),
            &CameraModel::default(),
            &NoiseModel::zero(),
        );
        assert!(matches!(r, Err(Error::Config(_))));
        let ws = Workspace {
            distance: [0.0, 0.0],
            ..Workspace::default()
        };
        assert!(ws.validate().is_err());
    }

    #[test]
    fn zero_range_noise_is_exact() {
        let board = BoardModel::default_board();
        let pose = board.frontal_camera(1.2);
        let mut rng = rng_for(0, stream::RANGE);
        let r = simulate_rangefinder(&pose, &board, &NoiseModel::zero(), 1000, &mut rng).unwrap();
        assert!(r.sigma < 1e-12);
        assert!((r.mean - 1.2).abs() < 1e-12);
        assert_eq!(r.sample_count, 1000);
    }

    #[test]
    fn rangefinder_misses_when_looking_away() {
        let board = BoardModel::default_board();
        let pose = board
            .frontal_camera(1.2)
            .compose(&RigidTransform::rotation_x(std::f64::consts::PI * 0.9));
        let mut rng = rng_for(0, stream::RANGE);
        assert!(simulate_rangefinder(&pose, &board, &NoiseModel::measured(), 10, &mut rng).is_err());
    }

    #[test]
    fn frontal_tags_noise_free() {
        let board = BoardModel::default_board();
        let cam = CameraModel::default();
        let pose = board.frontal_camera(1.2);
        let mut rng = rng_for(0, stream::TAGS);
        let obs = observe_tags(&board, &pose, &cam, &NoiseModel::zero(), &mut rng);
        assert_eq!(obs.len(), 4);
        for o in &obs {
            let tag = board.tags.iter().find(|t| t.id == o.tag_id).unwrap();
            for (c, p) in o.image_corners.iter().zip(&tag.corners) {
                let exact = crate::camera::project(&board.to_world(p), &pose, &cam).unwrap();
                assert!((c - exact).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn shifted_camera_loses_a_tag() {
        let board = BoardModel::default_board();
        let cam = CameraModel::default();
        // Rolled 25 degrees and shifted 5 cm: only the bottom-left tag leaves the frame.
        let pose = board
            .frontal_camera(1.0)
            .compose(&RigidTransform::from_pose_vector(&PoseVector::new(0.05, 0.0, 0.0, 0.0, 0.0, 25f64.to_radians())));
        let mut rng = rng_for(0, stream::TAGS);
        let ids: Vec<u32> = observe_tags(&board, &pose, &cam, &NoiseModel::zero(), &mut rng)
            .iter()
            .map(|o| o.tag_id)
            .collect();
        assert_eq!(ids, vec![0, 1, 2]);
    }
}
