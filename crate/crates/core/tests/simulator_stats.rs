use autolabel::geometry::group_delta;
use autolabel::simulator::{
    generate_trajectory, observe_tags, range_samples, render_frame, rng_for, simulate_rangefinder, truth_mask, BoardObject,
};
use autolabel::{BoardModel, CameraModel, CameraMount, NoiseModel, Workspace};
use nalgebra::Vector3;

/// Wilson-Hilferty approximation of the chi-square quantile.
fn chi2_quantile(k: f64, z: f64) -> f64 {
    let a = 2.0 / (9.0 * k);
    k * (1.0 - a + z * a.sqrt()).powi(3)
}

const Z_995: f64 = 2.575_829_303_548_901;

#[test]
fn rangefinder_statistics_follow_the_noise_model() {
    let board = BoardModel::default_board();
    let pose = board.frontal_camera(1.2);
    let noise = NoiseModel::measured();
    let n = 1000.0;
    let lo = noise.range_sigma * (chi2_quantile(n - 1.0, -Z_995) / (n - 1.0)).sqrt();
    let hi = noise.range_sigma * (chi2_quantile(n - 1.0, Z_995) / (n - 1.0)).sqrt();
    // The exact 99% band for 1000 samples is much narrower than 4.9..7.7 mm.
    assert!(lo > 0.0049 && hi < 0.0077);
    let runs = 400;
    let (mut sigma_in, mut mean_in) = (0, 0);
    for seed in 0..runs {
        let mut rng = rng_for(seed, 3);
        let r = simulate_rangefinder(&pose, &board, &noise, 1000, &mut rng).unwrap();
        if r.sigma >= lo && r.sigma <= hi {
            sigma_in += 1;
        }
        if (r.mean - 1.2).abs() <= 3.0 * noise.range_sigma / n.sqrt() {
            mean_in += 1;
        }
    }
    // 99% and 99.73% coverage, with room for sampling error over 400 runs.
    assert!(sigma_in as f64 / runs as f64 > 0.975, "{sigma_in}/{runs}");
    assert!(mean_in as f64 / runs as f64 > 0.985, "{mean_in}/{runs}");
}

#[test]
fn raw_range_samples_stay_in_three_sigma() {
    let mut rng = rng_for(1, 3);
    let s = range_samples(1.2, 0.0063, 100_000, &mut rng);
    let inside = s.iter().filter(|v| (*v - 1.2).abs() <= 3.0 * 0.0063).count();
    assert!(inside as f64 / s.len() as f64 > 0.99);
}

#[test]
fn tag_corner_noise_has_configured_sigma() {
    let board = BoardModel::default_board();
    let cam = CameraModel::default();
    let pose = board.frontal_camera(1.2);
    let exact = observe_tags(&board, &pose, &cam, &NoiseModel::zero(), &mut rng_for(0, 0));
    assert_eq!(exact.len(), 4);
    let noise = NoiseModel {
        tag_pixel_sigma: 0.5,
        ..NoiseModel::zero()
    };
    let mut rng = rng_for(2, 4);
    let (mut sum, mut sum2, mut n) = (0.0, 0.0, 0.0);
    for _ in 0..1000 {
        let obs = observe_tags(&board, &pose, &cam, &noise, &mut rng);
        for (o, e) in obs.iter().zip(&exact) {
            for (c, d) in o.image_corners.iter().zip(&e.image_corners) {
                for v in [c.x - d.x, c.y - d.y] {
                    sum += v;
                    sum2 += v * v;
                    n += 1.0;
                }
            }
        }
    }
    let mean = sum / n;
    let std = (sum2 / n - mean * mean).sqrt();
    assert!((std - 0.5).abs() < 0.05, "std {std}");
}

#[test]
fn trajectories_are_deterministic_and_bounded() {
    let board = BoardModel::default_board();
    let cam = CameraModel::default();
    let noise = NoiseModel::measured();
    let mount = CameraMount::default();
    let ws = Workspace::default();
    let a = generate_trajectory(5, 200, &ws, &board, &mount, &cam, &noise).unwrap();
    let b = generate_trajectory(5, 200, &ws, &board, &mount, &cam, &noise).unwrap();
    assert_eq!(a, b);
    let rb = noise.rot_bound_deg.to_radians();
    // Subtracting translations near 1 m can round past the bound by an ulp.
    let eps = 1e-15;
    for f in &a {
        let d = group_delta(&f.reported_ee, &f.true_ee).unwrap();
        for k in 0..3 {
            assert!(d.0[k].abs() <= noise.trans_bound[k] + eps, "{d:?}");
            assert!(d.0[k + 3].abs() <= rb + eps, "{d:?}");
        }
    }
    let zero = generate_trajectory(5, 50, &ws, &board, &mount, &cam, &NoiseModel::zero()).unwrap();
    assert!(zero.iter().all(|f| f.reported_pose == f.true_pose));
}

fn shoelace(points: &[[f64; 2]]) -> f64 {
    let n = points.len();
    (0..n)
        .map(|i| {
            let (a, b) = (points[i], points[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        .abs()
        / 2.0
}

#[test]
fn frontal_rectangle_mask_matches_projected_area() {
    let base = BoardModel::default_board();
    let rect = vec![[0.4, 0.2], [0.6, 0.2], [0.6, 0.4], [0.4, 0.4]];
    let board = BoardModel::new(
        base.pose,
        base.width,
        base.height,
        vec![BoardObject {
            class_id: 0,
            polygon: rect.clone(),
        }],
        vec![],
    )
    .unwrap();
    let cam = CameraModel::default();
    let d = 1.2;
    let mask = truth_mask(&board, &board.frontal_camera(d), &cam);
    let expected = shoelace(&rect) * (cam.fx / d) * (cam.fy / d);
    let got = mask.count() as f64;
    assert!((got - expected).abs() / expected < 0.01, "{got} vs {expected}");

    // Out of view: look the other way.
    let away = board
        .frontal_camera(d)
        .compose(&autolabel::RigidTransform::from_pose_vector(&autolabel::PoseVector::new(
            0.0,
            0.0,
            0.0,
            0.0,
            std::f64::consts::PI * 0.9,
            0.0,
        )));
    assert_eq!(truth_mask(&board, &away, &cam).count(), 0);
}

#[test]
fn tint_never_changes_geometry() {
    let board = BoardModel::default_board();
    let cam = CameraModel {
        width: 160,
        height: 120,
        fx: 132.5,
        fy: 132.5,
        cx: 80.0,
        cy: 60.0,
        ..CameraModel::default()
    };
    let pose = board.frontal_camera(1.2);
    let (img_a, mask_a) = render_frame(&board, &pose, &cam, 1);
    let (img_b, mask_b) = render_frame(&board, &pose, &cam, 2);
    assert_eq!(mask_a, mask_b);
    assert_eq!(mask_a, truth_mask(&board, &pose, &cam));
    assert_ne!(img_a, img_b);
    assert_eq!(img_a.dimensions(), (160, 120));
}

#[test]
fn board_center_stays_in_view() {
    let board = BoardModel::default_board();
    let cam = CameraModel::default();
    let t = generate_trajectory(9, 300, &Workspace::default(), &board, &CameraMount::default(), &cam, &NoiseModel::zero())
        .unwrap();
    for f in t {
        let px = autolabel::camera::project(&board.center(), &f.true_pose, &cam).unwrap();
        assert!(cam.contains(&px));
        let axis = f.true_pose.transform_vector(&Vector3::z());
        assert!(axis.dot(&(board.center() - f.true_pose.translation())) > 0.0);
    }
}
