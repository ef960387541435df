use deixis_core::geometry::{Pose2, Vec2};
use deixis_core::navigation::{Cell, OccupancyGrid};
use deixis_core::pipeline::{intermediate_goal, ApproachConfig};

/// Walks the same probe sequence by hand: 1 m out, then half-cell steps to 2 m.
fn probe_oracle(grid: &OccupancyGrid, from: Vec2, azimuth: f64) -> Option<f64> {
    let dir = Vec2::new(azimuth.cos(), azimuth.sin());
    let step = grid.resolution() / 2.0;
    (0..)
        .map(|k| 1.0 + k as f64 * step)
        .take_while(|d| *d <= 2.0 + 1e-9)
        .find(|d| grid.cell_at(&(from + dir * *d)) == Cell::Free)
}

#[test]
fn band_on_the_ray_pushes_the_goal_past_it() {
    let mut g = OccupancyGrid::new(40, 40, 0.25, Pose2::identity(), Cell::Free);
    let from = Vec2::new(5.0, 5.0);
    g.fill_rect(Vec2::new(5.8, 3.0), Vec2::new(6.1, 7.0), Cell::Occupied);
    let goal = intermediate_goal(&from, 0.0, &g, &ApproachConfig::default()).unwrap();
    let d = (goal.position() - from).norm();
    assert_eq!(Some(d), probe_oracle(&g, from, 0.0));
    assert!(d > 1.1);
    assert_eq!(goal.theta, 0.0);
}

#[test]
fn band_sweep_matches_oracle() {
    for start in [0.6, 0.8, 0.9, 1.2, 1.6, 1.9] {
        for width in [0.1, 0.3, 0.5, 1.5] {
            for az in [0.0, 0.7, 2.0, -2.5] {
                let mut g = OccupancyGrid::new(40, 40, 0.25, Pose2::identity(), Cell::Free);
                let from = Vec2::new(5.0, 5.0);
                let dir = Vec2::new(f64::cos(az), f64::sin(az));
                // a thick blob around the ray between start and start + width
                for k in 0..=20 {
                    let p = from + dir * (start + width * k as f64 / 20.0);
                    g.fill_rect(p - Vec2::new(0.05, 0.05), p + Vec2::new(0.05, 0.05), Cell::Occupied);
                }
                let got = intermediate_goal(&from, az, &g, &ApproachConfig::default())
                    .ok()
                    .map(|p| (p.position() - from).norm());
                let want = probe_oracle(&g, from, az);
                match (got, want) {
                    (Some(a), Some(b)) => assert!((a - b).abs() < 1e-9, "start {start} width {width} az {az}"),
                    (a, b) => assert_eq!(a.is_some(), b.is_some(), "start {start} width {width} az {az}"),
                }
            }
        }
    }
}
