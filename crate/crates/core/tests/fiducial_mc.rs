use autolabel::camera::project;
use autolabel::fiducial::{estimate_homography, localize_from_tags, LocalizeOptions};
use autolabel::geometry::group_delta;
use autolabel::propagation::apply_homography;
use autolabel::simulator::{observe_tags, rng_for, TagObservation};
use autolabel::{BoardModel, CameraModel, NoiseModel, PoseVector, RigidTransform};
use nalgebra::{Matrix3, Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

struct Trial {
    pose: RigidTransform,
    observations: Vec<TagObservation>,
}

/// Camera near the frontal pose at 1.2 m, all four tags observed with 0.5 px noise.
fn trials(count: u64) -> Vec<Trial> {
    let board = BoardModel::default_board();
    let cam = CameraModel::default();
    let noise = NoiseModel {
        tag_pixel_sigma: 0.5,
        ..NoiseModel::zero()
    };
    (0..count)
        .map(|t| {
            let mut rng = rng_for(t, 77);
            let pose = board.frontal_camera(1.2).compose(&RigidTransform::from_pose_vector(&PoseVector::new(
                rng.random_range(-0.03..0.03),
                rng.random_range(-0.03..0.03),
                0.0,
                rng.random_range(-0.02..0.02),
                rng.random_range(-0.02..0.02),
                rng.random_range(-0.1..0.1),
            )));
            let observations = observe_tags(&board, &pose, &cam, &noise, &mut rng);
            assert_eq!(observations.len(), 4);
            Trial { pose, observations }
        })
        .collect()
}

/// Median translation (m) and rotation (deg) errors using the first `k` tags.
fn median_errors(trials: &[Trial], k: usize) -> (f64, f64) {
    let board = BoardModel::default_board();
    let cam = CameraModel::default();
    let (mut tr, mut rot) = (Vec::new(), Vec::new());
    for t in trials {
        match localize_from_tags(&t.observations[..k], &board, &cam, &LocalizeOptions::default()) {
            Ok(est) => {
                tr.push((est.pose.translation() - t.pose.translation()).norm());
                let d = group_delta(&est.pose, &t.pose).unwrap();
                rot.push(Vector3::from(d.rotation()).norm().to_degrees());
            }
            Err(_) => {
                tr.push(f64::INFINITY);
                rot.push(f64::INFINITY);
            }
        }
    }
    (median(tr), median(rot))
}

#[test]
fn four_tags_localize_within_millimeters() {
    let t = trials(1000);
    let (tr, rot) = median_errors(&t, 4);
    assert!(tr < 0.005, "median translation error {tr} m");
    assert!(rot < 0.3, "median rotation error {rot} deg");
}

#[test]
fn fewer_tags_are_worse() {
    let t = trials(1000);
    let errs: Vec<(f64, f64)> = (1..=4).map(|k| median_errors(&t, k)).collect();
    assert!(errs[0].0 > errs[3].0 && errs[0].1 > errs[3].1, "{errs:?}");
    for w in errs.windows(2) {
        assert!(w[1].0 <= w[0].0, "translation not monotone: {errs:?}");
        assert!(w[1].1 <= w[0].1, "rotation not monotone: {errs:?}");
    }
}

#[test]
fn homography_residual_is_below_twice_the_noise() {
    let h_true = Matrix3::new(520.0, 12.0, 80.0, -8.0, 515.0, 60.0, 0.02, -0.01, 1.0);
    let normal = Normal::new(0.0, 0.5).unwrap();
    let mut worst: f64 = 0.0;
    for seed in 0..200 {
        let mut rng = rng_for(seed, 78);
        let pairs: Vec<(Vector2<f64>, Vector2<f64>)> = (0..16)
            .map(|i| {
                let b = Vector2::new(0.1 * (i % 4) as f64, 0.1 * (i / 4) as f64);
                let p = apply_homography(&h_true, &b);
                (b, p + Vector2::new(normal.sample(&mut rng), normal.sample(&mut rng)))
            })
            .collect();
        let h = estimate_homography(&pairs).unwrap();
        let rmse = (pairs
            .iter()
            .map(|(b, p)| (apply_homography(&h, b) - p).norm_squared())
            .sum::<f64>()
            / pairs.len() as f64)
            .sqrt();
        worst = worst.max(rmse);
    }
    assert!(worst < 1.0, "worst rmse {worst}");
}

#[test]
fn correspondence_count_and_rmse_are_consistent() {
    let board = BoardModel::default_board();
    let cam = CameraModel::default();
    let t = &trials(1)[0];
    let est = localize_from_tags(&t.observations[..2], &board, &cam, &LocalizeOptions::default()).unwrap();
    assert_eq!(est.correspondence_count, 8);
    let mut sum = 0.0;
    for obs in &t.observations[..2] {
        let tag = board.tags.iter().find(|g| g.id == obs.tag_id).unwrap();
        for (c, px) in tag.corners.iter().zip(&obs.image_corners) {
            sum += (project(&board.to_world(c), &est.pose, &cam).unwrap() - px).norm_squared();
        }
    }
    let rmse = (sum / 8.0).sqrt();
    assert!((rmse - est.reprojection_rmse).abs() < 1e-9);
}

#[test]
fn noiseless_tags_recover_the_pose() {
    let board = BoardModel::default_board();
    let cam = CameraModel::default();
    let pose = board.frontal_camera(1.1).compose(&RigidTransform::from_pose_vector(&PoseVector::new(
        0.02, -0.01, 0.0, 0.1, -0.05, 0.2,
    )));
    let obs = observe_tags(&board, &pose, &cam, &NoiseModel::zero(), &mut rng_for(0, 0));
    assert_eq!(obs.len(), 4);
    let est = localize_from_tags(&obs, &board, &cam, &LocalizeOptions::default()).unwrap();
    assert!((est.pose.translation() - pose.translation()).norm() < 1e-6);
    let d = group_delta(&est.pose, &pose).unwrap();
    assert!(Vector3::from(d.rotation()).norm() < 1e-6);
    let r = est.pose.rotation();
    assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-9);
    assert!((r.determinant() - 1.0).abs() < 1e-9);
}
