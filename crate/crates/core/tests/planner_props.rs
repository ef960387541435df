use proptest::prelude::*;

use deixis_core::geometry::{Pose2, Vec2};
use deixis_core::navigation::{disk_collides, follow, inflation_radius, plan, Cell, FollowConfig, OccupancyGrid, Path};
use deixis_core::world::{RobotState, WorldModel};

const RES: f64 = 0.1;
const RADIUS: f64 = 0.25;

fn walled_grid(rects: &[(f64, f64, f64, f64)]) -> OccupancyGrid {
    let mut g = OccupancyGrid::new(48, 48, RES, Pose2::identity(), Cell::Free);
    for k in 0..48 {
        for (i, j) in [(k, 0), (k, 47), (0, k), (47, k)] {
            g.set(i, j, Cell::Occupied);
        }
    }
    for &(x, y, w, h) in rects {
        g.fill_rect(Vec2::new(x, y), Vec2::new(x + w, y + h), Cell::Occupied);
    }
    g
}

fn rects() -> impl Strategy<Value = Vec<(f64, f64, f64, f64)>> {
    prop::collection::vec((0.0..4.8f64, 0.0..4.8f64, 0.1..1.2f64, 0.1..1.2f64), 0..8)
}

fn length(p: &Path) -> f64 {
    p.waypoints.windows(2).map(|w| (w[1].position() - w[0].position()).norm()).sum()
}

/// Draws a start that is free after inflation, or `None`.
fn free_point(g: &OccupancyGrid, p: (f64, f64)) -> Option<Vec2> {
    let inflated = g.inflate(inflation_radius(g, RADIUS));
    let v = Vec2::new(p.0, p.1);
    inflated.world_to_cell(&v).filter(|&(i, j)| inflated.is_free(i as i64, j as i64)).map(|_| v)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn executions_are_collision_free(
        rects in rects(),
        a in (0.3..4.5f64, 0.3..4.5f64),
        b in (0.3..4.5f64, 0.3..4.5f64),
        heading in -3.1..3.1f64,
    ) {
        let g = walled_grid(&rects);
        let (Some(a), Some(b)) = (free_point(&g, a), free_point(&g, b)) else {
            return Ok(());
        };
        let start = Pose2::new(a.x, a.y, heading);
        let Ok(path) = plan(&g, &start, &Pose2::new(b.x, b.y, 0.0), RADIUS) else {
            return Ok(());
        };
        let world = WorldModel::new(g.clone(), vec![], vec![], RobotState::new(start), 0).unwrap();
        let run = follow(&path, &world, &FollowConfig::for_resolution(RES));
        prop_assert!(run.is_ok(), "follower stalled: {:?}", run.err());
        let run = run.unwrap();
        for p in &run.poses {
            prop_assert!(!disk_collides(&g, &p.position(), RADIUS), "collision at {:?}", p);
        }
        prop_assert!((run.world.robot.pose.position() - b).norm() <= 0.5 * RES + 1e-9);
    }

    #[test]
    fn reversed_plans_have_similar_length(
        rects in rects(),
        a in (0.3..4.5f64, 0.3..4.5f64),
        b in (0.3..4.5f64, 0.3..4.5f64),
    ) {
        let g = walled_grid(&rects);
        let (Some(a), Some(b)) = (free_point(&g, a), free_point(&g, b)) else {
            return Ok(());
        };
        let ab = plan(&g, &Pose2::new(a.x, a.y, 0.0), &Pose2::new(b.x, b.y, 0.0), RADIUS);
        let ba = plan(&g, &Pose2::new(b.x, b.y, 0.0), &Pose2::new(a.x, a.y, 0.0), RADIUS);
        match (ab, ba) {
            (Ok(ab), Ok(ba)) => prop_assert!((length(&ab) - length(&ba)).abs() < RES * std::f64::consts::SQRT_2),
            (ab, ba) => prop_assert_eq!(ab.is_ok(), ba.is_ok()),
        }
    }

    #[test]
    fn shortcut_paths_keep_line_of_sight(
        rects in rects(),
        a in (0.3..4.5f64, 0.3..4.5f64),
        b in (0.3..4.5f64, 0.3..4.5f64),
    ) {
        let g = walled_grid(&rects);
        let inflated = g.inflate(inflation_radius(&g, RADIUS));
        let (Some(a), Some(b)) = (free_point(&g, a), free_point(&g, b)) else {
            return Ok(());
        };
        if let Ok(p) = plan(&g, &Pose2::new(a.x, a.y, 0.0), &Pose2::new(b.x, b.y, 0.0), RADIUS) {
            for w in p.waypoints.windows(2) {
                prop_assert!(inflated.line_of_sight(&w[0].position(), &w[1].position()));
            }
        }
    }
}
