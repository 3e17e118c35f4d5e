//! Browser bindings for the label propagation core.
//!
//! A [`Demo`] holds one simulated scene: the default board, a camera at a
//! frontal initial pose and the operator labels anchored on the board plane.
//! The page moves the camera around and asks for propagated labels, a
//! predicted-vs-truth mask comparison, or a fiducial localization trial.

use autolabel::fiducial::{localize_from_tags, LocalizeOptions};
use autolabel::geometry::group_delta;
use autolabel::propagation::{anchor_initial_frame, propagate};
use autolabel::simulator::{observe_tags, rng_for, simulate_rangefinder, truth_annotation, truth_mask};
use autolabel::{AnchoredPolygon, BoardModel, CameraModel, NoiseModel, PoseVector, RigidTransform};
use nalgebra::{Rotation3, Vector3};
use wasm_bindgen::prelude::*;

const RANGE_SAMPLES: usize = 1000;

fn js_err(e: autolabel::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Camera offset from the initial pose, in the initial camera frame.
fn offset(dx_mm: f64, dy_mm: f64, dz_mm: f64, roll_deg: f64, pitch_deg: f64, yaw_deg: f64) -> RigidTransform {
    let r = Rotation3::from_euler_angles(roll_deg.to_radians(), pitch_deg.to_radians(), yaw_deg.to_radians());
    let w = r.scaled_axis();
    RigidTransform::from_pose_vector(&PoseVector::new(dx_mm * 1e-3, dy_mm * 1e-3, dz_mm * 1e-3, w.x, w.y, w.z))
}

#[wasm_bindgen]
pub struct Demo {
    board: BoardModel,
    cam: CameraModel,
    initial: RigidTransform,
    anchored: Vec<AnchoredPolygon>,
    differing: u32,
    objects: usize,
}

impl Demo {
    fn build(distance: f64, seed: u32) -> autolabel::Result<Demo> {
        let board = BoardModel::default_board();
        let cam = CameraModel::default();
        let initial = board.frontal_camera(distance);
        let range = simulate_rangefinder(&initial, &board, &NoiseModel::measured(), RANGE_SAMPLES, &mut rng_for(seed as u64, 3))?;
        let labels = truth_annotation(&board, &initial, &cam, 0).polygons;
        let anchored = anchor_initial_frame(&labels, &initial, &cam, &range)?;
        Ok(Demo {
            board,
            cam,
            initial,
            anchored,
            differing: 0,
            objects: 0,
        })
    }

    fn camera_at(&self, dx: f64, dy: f64, dz: f64, roll: f64, pitch: f64, yaw: f64) -> RigidTransform {
        self.initial.compose(&offset(dx, dy, dz, roll, pitch, yaw))
    }
}

#[wasm_bindgen]
impl Demo {
    /// Scene with the initial camera `distance` meters in front of the board.
    #[wasm_bindgen(constructor)]
    pub fn new(distance: f64, seed: u32) -> Result<Demo, JsError> {
        Demo::build(distance, seed).map_err(js_err)
    }

    #[wasm_bindgen(getter)]
    pub fn width(&self) -> u32 {
        self.cam.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> u32 {
        self.cam.height
    }

    /// Differing pixels of the last [`Demo::compare_masks`] call.
    #[wasm_bindgen(getter)]
    pub fn differing_pixels(&self) -> u32 {
        self.differing
    }

    /// Objects in view during the last [`Demo::compare_masks`] call.
    #[wasm_bindgen(getter)]
    pub fn objects(&self) -> usize {
        self.objects
    }

    /// Labels propagated to the moved camera, flattened as
    /// `[count, class, n, x0, y0, ..., class, n, ...]`.
    pub fn propagate(&self, dx_mm: f64, dy_mm: f64, dz_mm: f64, roll_deg: f64, pitch_deg: f64, yaw_deg: f64) -> Vec<f64> {
        let pose = self.camera_at(dx_mm, dy_mm, dz_mm, roll_deg, pitch_deg, yaw_deg);
        let frame = propagate(&self.anchored, &pose, &self.cam, 1);
        let mut out = vec![frame.polygons.len() as f64];
        for p in &frame.polygons {
            out.push(p.class_id as f64);
            out.push(p.vertices.len() as f64);
            for v in &p.vertices {
                out.extend([v.x, v.y]);
            }
        }
        out
    }

    /// RGBA comparison of labels propagated with a noisy reported pose
    /// against the exact masks. The arm noise is the measured repeatability
    /// scaled by `noise_scale`. White: both, red: truth only, blue: predicted only.
    #[allow(clippy::too_many_arguments)]
    pub fn compare_masks(
        &mut self,
        dx_mm: f64,
        dy_mm: f64,
        dz_mm: f64,
        roll_deg: f64,
        pitch_deg: f64,
        yaw_deg: f64,
        noise_scale: f64,
        seed: u32,
    ) -> Vec<u8> {
        let truth_pose = self.camera_at(dx_mm, dy_mm, dz_mm, roll_deg, pitch_deg, yaw_deg);
        let measured = NoiseModel::measured();
        let noise = NoiseModel {
            trans_bound: measured.trans_bound * noise_scale.max(0.0),
            rot_bound_deg: measured.rot_bound_deg * noise_scale.max(0.0),
            ..measured
        };
        let reported = noise.perturb(&truth_pose, &mut rng_for(seed as u64, 1));
        let predicted = propagate(&self.anchored, &reported, &self.cam, 1);
        let pred = autolabel::dataset::rasterize_mask(&predicted, &self.cam);
        let truth = truth_mask(&self.board, &truth_pose, &self.cam);
        self.differing = pred.symmetric_difference(&truth).unwrap_or(0) as u32;
        self.objects = predicted.polygons.len();
        let mut rgba = Vec::with_capacity(pred.data().len() * 4);
        for (p, t) in pred.data().iter().zip(truth.data()) {
            let px = match (*p != 0, *t != 0) {
                (true, true) => [255, 255, 255, 255],
                (false, true) => [230, 40, 40, 255],
                (true, false) => [40, 90, 230, 255],
                (false, false) => [24, 24, 24, 255],
            };
            rgba.extend(px);
        }
        rgba
    }

    /// One fiducial localization at the moved camera using the first `tags`
    /// visible tags with `sigma_px` corner noise. Returns
    /// `[translation error mm, rotation error deg, reprojection rmse px, tags used]`,
    /// or NaN errors when no pose could be recovered.
    #[allow(clippy::too_many_arguments)]
    pub fn fiducial_trial(
        &self,
        dx_mm: f64,
        dy_mm: f64,
        dz_mm: f64,
        roll_deg: f64,
        pitch_deg: f64,
        yaw_deg: f64,
        tags: usize,
        sigma_px: f64,
        seed: u32,
    ) -> Vec<f64> {
        let pose = self.camera_at(dx_mm, dy_mm, dz_mm, roll_deg, pitch_deg, yaw_deg);
        let noise = NoiseModel {
            tag_pixel_sigma: sigma_px.max(0.0),
            ..NoiseModel::zero()
        };
        let obs = observe_tags(&self.board, &pose, &self.cam, &noise, &mut rng_for(seed as u64, 4));
        let used = &obs[..tags.min(obs.len())];
        let est = localize_from_tags(used, &self.board, &self.cam, &LocalizeOptions::default());
        match est.and_then(|e| Ok((group_delta(&e.pose, &pose)?, e))) {
            Ok((d, e)) => vec![
                (e.pose.translation() - pose.translation()).norm() * 1e3,
                Vector3::from(d.rotation()).norm().to_degrees(),
                e.reprojection_rmse,
                used.len() as f64,
            ],
            Err(_) => vec![f64::NAN, f64::NAN, f64::NAN, used.len() as f64],
        }
    }
}
