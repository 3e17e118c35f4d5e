use autolabel::camera::{back_project_to_plane, project, Plane, ProjectionMatrix};
use autolabel::{CameraModel, Distortion, PoseVector, RigidTransform};
use nalgebra::{Vector2, Vector3};
use proptest::prelude::*;

/// Brown-Conrady model written out term by term, independent of the crate.
fn oracle_pixel(cam: &CameraModel, pc: &Vector3<f64>) -> Vector2<f64> {
    let x = pc.x / pc.z;
    let y = pc.y / pc.z;
    let Distortion { k1, k2, p1, p2 } = cam.dist;
    let r2 = x * x + y * y;
    let r4 = r2 * r2;
    let xd = x * (1.0 + k1 * r2 + k2 * r4) + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x);
    let yd = y * (1.0 + k1 * r2 + k2 * r4) + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y;
    Vector2::new(cam.fx * xd + cam.cx, cam.fy * yd + cam.cy)
}

fn distortion() -> impl Strategy<Value = Distortion> {
    (-0.3f64..0.3, -0.05f64..0.05, -1e-3f64..1e-3, -1e-3f64..1e-3).prop_map(|(k1, k2, p1, p2)| Distortion {
        k1,
        k2,
        p1,
        p2,
    })
}

fn camera() -> impl Strategy<Value = CameraModel> {
    (400.0f64..800.0, 0.98f64..1.02, 300.0f64..340.0, 220.0f64..260.0, distortion()).prop_map(
        |(fx, aspect, cx, cy, dist)| CameraModel::new(fx, fx * aspect, cx, cy, 640, 480, dist).unwrap(),
    )
}

fn pose() -> impl Strategy<Value = RigidTransform> {
    (
        prop::array::uniform3(-0.4f64..0.4),
        prop::array::uniform3(-1.0f64..1.0),
    )
        .prop_map(|(w, t)| RigidTransform::from_pose_vector(&PoseVector::new(t[0], t[1], t[2], w[0], w[1], w[2])))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn back_projection_round_trip(
        cam in camera(),
        pose in pose(),
        nx in -0.6f64..0.6,
        ny in -0.45f64..0.45,
        depth in 0.3f64..3.0,
        tilt in prop::array::uniform2(-0.3f64..0.3),
    ) {
        // A plane crossing the optical axis at `depth`, tilted a little.
        let normal_cam = Vector3::new(tilt[0], tilt[1], -1.0).normalize();
        let point = pose.transform_point(&Vector3::new(0.0, 0.0, depth));
        let plane = Plane::from_point_normal(&point, &pose.transform_vector(&normal_cam)).unwrap();
        // Pixels are drawn as images of in-view directions, where distortion is invertible.
        let px = cam.normalized_to_pixel(&cam.dist.distort(&Vector2::new(nx, ny)));
        let world = back_project_to_plane(&px, &pose, &cam, &plane).unwrap();
        prop_assert!(plane.residual(&world).abs() < 1e-9);
        let back = project(&world, &pose, &cam).unwrap();
        prop_assert!((back - px).norm() < 1e-6, "{px} -> {back}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn undistort_inverts_distort(d in distortion(), x in -0.6f64..0.6, y in -0.45f64..0.45) {
        let p = Vector2::new(x, y);
        let back = d.undistort(&d.distort(&p));
        prop_assert!((back - p).norm() < 1e-9, "{p} -> {back}");
    }

    #[test]
    fn projection_matches_brown_conrady_oracle(
        cam in camera(),
        x in -0.5f64..0.5,
        y in -0.4f64..0.4,
        z in 0.2f64..5.0,
    ) {
        let pc = Vector3::new(x * z, y * z, z);
        let px = cam.project_camera_point(&pc).unwrap();
        prop_assert!((px - oracle_pixel(&cam, &pc)).norm() < 1e-9);
    }

    #[test]
    fn projection_matrix_is_inverse_pose(pose in pose(), p in prop::array::uniform3(-3.0f64..3.0)) {
        let world = Vector3::from(p);
        let m = ProjectionMatrix::from_camera_pose(&pose);
        let expected = pose.inverse().transform_point(&world);
        prop_assert!((m.to_camera(&world) - expected).norm() < 1e-12);
        prop_assert!((m.0 * world.push(1.0) - expected).norm() < 1e-12);
    }
}

#[test]
fn behind_camera_is_rejected() {
    let cam = CameraModel::default();
    let pose = RigidTransform::identity();
    assert!(project(&Vector3::new(0.0, 0.0, -1.0), &pose, &cam).is_err());
    let plane = Plane::from_point_normal(&Vector3::new(0.0, 0.0, -1.0), &Vector3::z()).unwrap();
    assert!(back_project_to_plane(&Vector2::new(320.0, 240.0), &pose, &cam, &plane).is_err());
}
