//! End-to-end simulated labeling run.
//!
//! 1. The arm moves to the initial pose and the operator labels that frame.
//! 2. The rangefinder averages its samples to get the board distance.
//! 3. The initial labels are anchored on the frontal plane at that distance.
//! 4. For every trajectory frame the anchored labels are re-projected with the
//!    pose from odometry or from fiducial tags, next to the exact labels.

use std::time::Instant;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraModel, RangeEstimate};
use crate::dataset::{DatasetRecord, DatasetWriter, FrameOutput, LocalizationMethod};
use crate::error::{Error, Result};
use crate::fiducial::{localize_from_tags, LocalizeOptions};
use crate::geometry::{group_delta, rotation_exp, CameraMount, PoseDelta, PoseVector, RigidTransform};
use crate::metrics::{evaluate_frame, FrameEvaluation};
use crate::propagation::{anchor_initial_frame, propagate, AnchoredPolygon, FrameAnnotation, PolygonAnnotation};
use crate::raster::polygon_spans;
use crate::simulator::{
    generate_trajectory, initial_frame, observe_tags, render_frame, rng_for, simulate_rangefinder, stream,
    truth_annotation, BoardModel, NoiseModel, TrajectoryFrame, Workspace,
};

pub const RANGE_SAMPLES: usize = 1000;

/// Scene description shared by every subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub board: BoardModel,
    pub mount: CameraMount,
    /// Camera-to-board distance at the initial pose, meters.
    pub initial_distance: f64,
    pub noise: NoiseModel,
    pub workspace: Workspace,
    pub seed: u64,
    /// Operator time spent on the initial frame, seconds.
    pub initial_label_sec: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            board: BoardModel::default_board(),
            mount: CameraMount::default(),
            initial_distance: 1.2,
            noise: NoiseModel::measured(),
            workspace: Workspace::default(),
            seed: 7,
            initial_label_sec: 119.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        self.workspace.validate()?;
        if !(self.initial_distance > 0.0 && self.initial_distance.is_finite()) {
            return Err(Error::Config(format!(
                "initial_distance must be positive, got {}",
                self.initial_distance
            )));
        }
        if !(self.initial_label_sec >= 0.0) {
            return Err(Error::Config("initial_label_sec must be non-negative".into()));
        }
        Ok(())
    }
}

/// Outcome of one frame.
#[derive(Debug, Clone)]
pub struct FrameResult {
    pub trajectory: TrajectoryFrame,
    pub pose_used: RigidTransform,
    pub predicted: FrameAnnotation,
    pub truth: FrameAnnotation,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub method: LocalizationMethod,
    pub initial: TrajectoryFrame,
    pub initial_pose_used: RigidTransform,
    pub range: RangeEstimate,
    pub initial_labels: Vec<PolygonAnnotation>,
    pub anchored: Vec<AnchoredPolygon>,
    pub frames: Vec<FrameResult>,
    /// Frames with no usable fiducial pose.
    pub skipped: Vec<u64>,
    /// Wall time spent in [`run`], seconds.
    pub machine_sec: f64,
}

/// Exact labels an operator would draw on the initial frame: every object
/// at least partly inside the image.
pub fn operator_labels(board: &BoardModel, initial: &TrajectoryFrame, cam: &CameraModel) -> Vec<PolygonAnnotation> {
    truth_annotation(board, &initial.true_pose, cam, 0)
        .polygons
        .into_iter()
        .filter(|p| !polygon_spans(&p.vertices, cam.width, cam.height).is_empty())
        .collect()
}

/// Camera pose used for labeling; `tag_stream` seeds the tag corner noise.
fn localize(
    method: LocalizationMethod,
    frame: &TrajectoryFrame,
    tag_stream: u64,
    config: &SceneConfig,
    cam: &CameraModel,
) -> Result<RigidTransform> {
    match method {
        LocalizationMethod::Odometry => Ok(frame.reported_pose),
        LocalizationMethod::Fiducial => {
            let mut rng = rng_for(config.seed, tag_stream);
            let obs = observe_tags(&config.board, &frame.true_pose, cam, &config.noise, &mut rng);
            Ok(localize_from_tags(&obs, &config.board, cam, &LocalizeOptions::default())?.pose)
        }
    }
}

/// Runs the whole pipeline. `initial_labels` overrides the simulated
/// operator labels.
pub fn run(
    config: &SceneConfig,
    cam: &CameraModel,
    frame_count: usize,
    method: LocalizationMethod,
    initial_labels: Option<Vec<PolygonAnnotation>>,
) -> Result<RunResult> {
    let start = Instant::now();
    config.validate()?;
    if frame_count == 0 {
        return Err(Error::Config("frame count must be at least 1".into()));
    }
    let initial = initial_frame(config.seed, &config.board, &config.mount, config.initial_distance, &config.noise);
    let mut range_rng = rng_for(config.seed, stream::RANGE);
    let range = simulate_rangefinder(&initial.true_pose, &config.board, &config.noise, RANGE_SAMPLES, &mut range_rng)?;
    let labels = initial_labels.unwrap_or_else(|| operator_labels(&config.board, &initial, cam));

    let initial_pose_used = localize(method, &initial, stream::frame(stream::INITIAL, 0), config, cam)?;
    let anchored = anchor_initial_frame(&labels, &initial_pose_used, cam, &range)?;

    let trajectory = generate_trajectory(
        config.seed,
        frame_count,
        &config.workspace,
        &config.board,
        &config.mount,
        cam,
        &config.noise,
    )?;

    let results: Vec<Result<Option<FrameResult>>> = trajectory
        .into_par_iter()
        .map(|frame| {
            let id = frame.frame_id;
            let pose_used = match localize(method, &frame, stream::frame(stream::TAGS, id), config, cam) {
                Ok(p) => p,
                Err(Error::NoTags | Error::DegenerateConfiguration(_)) => return Ok(None),
                Err(e) => return Err(e.in_frame(id)),
            };
            let predicted = propagate(&anchored, &pose_used, cam, id);
            let truth = truth_annotation(&config.board, &frame.true_pose, cam, id);
            Ok(Some(FrameResult {
                trajectory: frame,
                pose_used,
                predicted,
                truth,
            }))
        })
        .collect();

    let mut frames = Vec::with_capacity(results.len());
    let mut skipped = Vec::new();
    for (id, r) in results.into_iter().enumerate() {
        match r? {
            Some(f) => frames.push(f),
            None => skipped.push(id as u64),
        }
    }
    Ok(RunResult {
        method,
        initial,
        initial_pose_used,
        range,
        initial_labels: labels,
        anchored,
        frames,
        skipped,
        machine_sec: start.elapsed().as_secs_f64(),
    })
}

/// Scores every frame of a run against the simulator's exact labels.
/// Frames with no truth object in view are left out.
pub fn evaluate_run(run: &RunResult, cam: &CameraModel) -> Result<Vec<FrameEvaluation>> {
    let evals: Vec<Result<Option<FrameEvaluation>>> = run
        .frames
        .par_iter()
        .map(|f| match evaluate_frame(&f.predicted, &f.truth, cam) {
            Ok(e) => Ok(Some(e)),
            Err(Error::UndefinedMetric(_)) => Ok(None),
            Err(e) => Err(e.in_frame(f.truth.frame_id)),
        })
        .collect();
    evals.into_iter().filter_map(Result::transpose).collect()
}

/// Which labels of a run to write.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSource {
    Predicted,
    Truth,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WriteOptions {
    pub images: bool,
    pub overlay: bool,
}

/// Writes a run as a dataset. Frames are written in parallel and appended to
/// the manifest in frame order.
pub fn write_run(
    run: &RunResult,
    config: &SceneConfig,
    cam: &CameraModel,
    writer: &mut DatasetWriter,
    source: LabelSource,
    options: WriteOptions,
) -> Result<Vec<DatasetRecord>> {
    let initial_pose: PoseVector = run.initial_pose_used.to_pose_vector()?;
    let writer_ref = &*writer;
    let records: Vec<Result<DatasetRecord>> = run
        .frames
        .par_iter()
        .map(|f| {
            let (frame, method) = match source {
                LabelSource::Predicted => (&f.predicted, run.method),
                LabelSource::Truth => (&f.truth, LocalizationMethod::Odometry),
            };
            let image = options.images.then(|| {
                let tint_seed = config.seed ^ f.trajectory.frame_id.wrapping_mul(0x9E37_79B9_7F4A_7C15);
                render_frame(&config.board, &f.trajectory.true_pose, cam, tint_seed).0
            });
            writer_ref.write_frame(&FrameOutput {
                frame,
                initial_pose: &initial_pose,
                range: &run.range,
                method,
                image: image.as_ref(),
                overlay: options.overlay,
            })
        })
        .collect();
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let r = r?;
        writer.append(&r)?;
        out.push(r);
    }
    Ok(out)
}

/// Simulated home-return trials: the arm is sent back to the initial pose
/// `trials` times and the deviation of the pose it actually reaches is recorded.
pub fn repeatability_trials(config: &SceneConfig, trials: usize) -> Result<Vec<PoseDelta>> {
    config.validate()?;
    let home = initial_frame(config.seed, &config.board, &config.mount, config.initial_distance, &NoiseModel::zero()).true_ee;
    let mut rng = rng_for(config.seed, stream::REPEATABILITY);
    (0..trials)
        .map(|_| group_delta(&config.noise.perturb(&home, &mut rng), &home))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub tags: usize,
    pub pixel_sigma: f64,
    pub trials: usize,
    /// Trials where no pose could be recovered. They count as infinite error.
    pub failures: usize,
    pub median_translation_m: f64,
    pub median_rotation_deg: f64,
}

#[derive(Debug, Clone, Copy)]
struct TrialError {
    translation: f64,
    rotation: f64,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Monte-Carlo of fiducial localization error against the number of visible
/// tags and the corner noise. Each trial draws one camera pose near the
/// frontal initial pose and one random tag order; the same draws are reused
/// for every tag count and noise level.
pub fn fiducial_sweep(
    config: &SceneConfig,
    cam: &CameraModel,
    tag_counts: &[usize],
    pixel_sigmas: &[f64],
    trials: usize,
) -> Result<Vec<SweepPoint>> {
    config.validate()?;
    let total_tags = config.board.tags.len();
    if let Some(&k) = tag_counts.iter().find(|&&k| k == 0 || k > total_tags) {
        return Err(Error::Config(format!("tag count {k} outside 1..={total_tags}")));
    }
    if pixel_sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return Err(Error::Config("pixel noise must be finite and >= 0".into()));
    }
    let frontal = config.board.frontal_camera(config.initial_distance);
    let mut out = Vec::new();
    for &sigma in pixel_sigmas {
        let noise = NoiseModel {
            tag_pixel_sigma: sigma,
            ..NoiseModel::zero()
        };
        let per_trial: Vec<Vec<Option<TrialError>>> = (0..trials as u64)
            .into_par_iter()
            .map(|t| {
                let mut rng = rng_for(config.seed, stream::frame(stream::SWEEP, t));
                let jitter = Vector3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), 0.0);
                let tilt = Vector3::new(
                    rng.random_range(-0.03..0.03),
                    rng.random_range(-0.03..0.03),
                    rng.random_range(-0.1..0.1),
                );
                let pose = frontal.compose(&RigidTransform::from_parts_unchecked(rotation_exp(&tilt), jitter));
                let mut order: Vec<usize> = (0..total_tags).collect();
                order.shuffle(&mut rng);
                let observed = observe_tags(&config.board, &pose, cam, &noise, &mut rng);
                tag_counts
                    .iter()
                    .map(|&k| {
                        let ids: Vec<u32> = order[..k].iter().map(|&i| config.board.tags[i].id).collect();
                        let subset: Vec<_> = observed.iter().filter(|o| ids.contains(&o.tag_id)).cloned().collect();
                        if subset.len() < k {
                            return None;
                        }
                        let est = localize_from_tags(&subset, &config.board, cam, &LocalizeOptions::default()).ok()?;
                        let d = group_delta(&est.pose, &pose).ok()?;
                        Some(TrialError {
                            translation: (est.pose.translation() - pose.translation()).norm(),
                            rotation: Vector3::from(d.rotation()).norm().to_degrees(),
                        })
                    })
                    .collect()
            })
            .collect();
        for (ki, &k) in tag_counts.iter().enumerate() {
            let errs: Vec<Option<TrialError>> = per_trial.iter().map(|r| r[ki]).collect();
            let failures = errs.iter().filter(|e| e.is_none()).count();
            let mut tr: Vec<f64> = errs.iter().map(|e| e.map_or(f64::INFINITY, |e| e.translation)).collect();
            let mut rot: Vec<f64> = errs.iter().map(|e| e.map_or(f64::INFINITY, |e| e.rotation)).collect();
            out.push(SweepPoint {
                tags: k,
                pixel_sigma: sigma,
                trials,
                failures,
                median_translation_m: median(&mut tr),
                median_rotation_deg: median(&mut rot),
            });
        }
    }
    Ok(out)
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("tags,pixel_sigma,trials,failures,median_translation_mm,median_rotation_deg\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{:.6},{:.6}\n",
            p.tags,
            p.pixel_sigma,
            p.trials,
            p.failures,
            p.median_translation_m * 1e3,
            p.median_rotation_deg
        ));
    }
    out
}
