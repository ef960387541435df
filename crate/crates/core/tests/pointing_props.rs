use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use deixis_core::geometry::{angle_between, camera_to_map, normalize_angle, CameraIntrinsics, PixelBox, Pose2, Vec2, Vec3};
use deixis_core::navigation::{Cell, OccupancyGrid};
use deixis_core::pointing::{body_pointing_ray, estimate_depth, estimate_pointing, PointingConfig, PointingError};
use deixis_core::world::{
    inject_gesture, observe_person, pointing_side, InstructorModel, NoiseConfig, PerceptionRng, PersonDetection, RobotState,
    WorldModel,
};

fn world(robot: Pose2, ins: InstructorModel) -> WorldModel {
    let g = OccupancyGrid::new(400, 400, 0.05, Pose2::identity(), Cell::Free);
    WorldModel::new(g, vec![], vec![ins], RobotState::new(robot), 0).unwrap()
}

fn aimed(robot: Pose2, at: Pose2, target: Vec3) -> WorldModel {
    let mut w = world(robot, InstructorModel::new("alice", at, 1.75));
    let m = inject_gesture(&w, "alice", target).unwrap();
    *w.instructor_mut("alice").unwrap() = m;
    w
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn arm_direction_error_matches_monte_carlo_oracle() {
    let noise = NoiseConfig::default();
    let robot = Pose2::new(2.0, 10.0, 0.0);
    let target = Vec3::new(7.0, 13.0, 0.5);
    let w = aimed(robot, Pose2::new(5.5, 10.0, 3.0), target);
    let ins = w.instructor("alice").unwrap();
    let side = pointing_side(&ins.base, &target);
    let to_cam = camera_to_map(&robot, w.robot.camera_height).inverse();
    let j = ins.joints();
    let (s, e) = (to_cam.apply(&j.get(side.shoulder())), to_cam.apply(&j.get(side.wrist())));
    let truth = e - s;

    let mut rng = PerceptionRng::new(9);
    let errs: Vec<f64> = (0..1000)
        .map(|_| {
            let obs = observe_person(&w, "alice", &noise, &mut rng).unwrap();
            angle_between(&body_pointing_ray(&obs.skeleton).unwrap().direction, &truth)
        })
        .collect();

    let mut mc = rand::rngs::StdRng::seed_from_u64(1);
    let n = Normal::new(0.0, noise.joint_sigma).unwrap();
    let mut draw = || Vec3::new(n.sample(&mut mc), n.sample(&mut mc), n.sample(&mut mc));
    let oracle: Vec<f64> = (0..20_000).map(|_| angle_between(&(truth + draw() - draw()), &truth)).collect();

    let (got, want) = (median(errs).to_degrees(), median(oracle).to_degrees());
    assert!((got - want).abs() < 0.4, "median arm error {got:.2}° vs oracle {want:.2}°");
}

#[test]
fn depth_tolerates_two_pixels_of_bottom_noise() {
    let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
    let (h, d) = (1.2, 3.0);
    let b_y = k.cy + k.fy * h / d;
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let mut errs: Vec<f64> = (0..2000)
        .map(|_| {
            let det = PersonDetection {
                bbox: PixelBox {
                    x_min: 300.0,
                    y_min: 50.0,
                    x_max: 340.0,
                    y_max: b_y + r.random_range(-2.0..2.0),
                },
                foot_visible: true,
            };
            (estimate_depth(&det, &k, h).unwrap() - d).abs()
        })
        .collect();
    errs.sort_by(f64::total_cmp);
    assert!(errs[(0.95 * errs.len() as f64) as usize] < 0.12);
    // first-order sensitivity d²/(f·H)
    let slope = d * d / (k.fy * h);
    assert!(errs.last().unwrap() <= &(2.0 * slope * 1.05));
}

#[test]
fn foot_out_of_frame_refuses_depth() {
    let w = aimed(Pose2::new(2.0, 10.0, 0.0), Pose2::new(3.8, 10.0, 3.1), Vec3::new(4.0, 12.0, 0.0));
    let obs = observe_person(&w, "alice", &NoiseConfig::zero(), &mut PerceptionRng::new(0)).unwrap();
    assert!(!obs.detection.foot_visible);
    assert_eq!(
        estimate_pointing(&obs, &w.robot, &PointingConfig::default()).err(),
        Some(PointingError::FootNotVisible)
    );
}

proptest! {
    #[test]
    fn same_seed_same_observations(seed in any::<u64>(), n in 1usize..6) {
        let w = aimed(Pose2::new(2.0, 10.0, 0.0), Pose2::new(6.0, 10.5, 3.0), Vec3::new(7.0, 14.0, 0.0));
        let (mut a, mut b) = (PerceptionRng::new(seed), PerceptionRng::new(seed));
        for _ in 0..n {
            let oa = observe_person(&w, "alice", &NoiseConfig::default(), &mut a).unwrap();
            let ob = observe_person(&w, "alice", &NoiseConfig::default(), &mut b).unwrap();
            prop_assert_eq!(oa, ob);
        }
    }

    #[test]
    fn azimuth_does_not_depend_on_robot_pose(
        r1 in (0.5..2.5f64, 9.3..10.7f64, -0.1..0.1f64),
        r2 in (0.5..2.5f64, 9.3..10.7f64, -0.1..0.1f64),
        tx in 6.0..9.0f64,
        ty in 12.0..15.0f64,
    ) {
        let target = Vec3::new(tx, ty, 0.0);
        let at = Pose2::new(6.0, 10.0, 2.8);
        let est = |r: (f64, f64, f64)| {
            let robot = Pose2::new(r.0, r.1, r.2);
            let w = aimed(robot, at, target);
            let obs = observe_person(&w, "alice", &NoiseConfig::zero(), &mut PerceptionRng::new(0)).unwrap();
            estimate_pointing(&obs, &w.robot, &PointingConfig::default()).unwrap()
        };
        let (a, b) = (est(r1), est(r2));
        prop_assert!(normalize_angle(a.azimuth - b.azimuth).abs() < 1e-6);
        // depth comes from the nearer foot, so the recovered origin moves by a few centimetres at most
        let shift = (a.ray_ground_origin() - b.ray_ground_origin()).norm();
        prop_assert!(shift < 0.1, "origin shift {shift}");
        let t = Vec2::new(tx, ty);
        for e in [a, b] {
            let d = t - e.ray_ground_origin();
            let miss = (d.x * e.azimuth.sin() - d.y * e.azimuth.cos()).abs();
            prop_assert!(miss < 0.1, "ray misses the target by {miss}");
        }
    }
}
