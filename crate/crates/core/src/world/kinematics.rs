//! Unicycle integration and collision-checked robot stepping.

use serde::{Deserialize, Serialize};

use crate::geometry::{Pose2, Vec2};
use crate::navigation::{disk_collides, OccupancyGrid};

use super::WorldModel;

/// Below this turn rate a command is integrated as a straight line.
const ARC_EPS: f64 = 1e-9;

/// One velocity command held for `dt` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveCommand {
    pub v: f64,
    pub w: f64,
    pub dt: f64,
}

impl DriveCommand {
    pub fn new(v: f64, w: f64, dt: f64) -> Self {
        Self { v, w, dt }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepOutcome {
    /// Motion was rejected because the swept disk hit a non-free cell.
    pub blocked: bool,
}

/// Exact unicycle integration over `dt`.
pub fn integrate_unicycle(pose: &Pose2, v: f64, w: f64, dt: f64) -> Pose2 {
    if w.abs() > ARC_EPS {
        let th1 = pose.theta + w * dt;
        let r = v / w;
        Pose2::new(
            pose.x + r * (th1.sin() - pose.theta.sin()),
            pose.y - r * (th1.cos() - pose.theta.cos()),
            th1,
        )
    } else {
        Pose2::new(
            pose.x + v * dt * pose.theta.cos(),
            pose.y + v * dt * pose.theta.sin(),
            pose.theta,
        )
    }
}

/// True when a disk of `radius` moving along the commanded arc overlaps a
/// non-free cell anywhere after leaving its start position.
pub fn sweep_collides(grid: &OccupancyGrid, pose: &Pose2, cmd: &DriveCommand, radius: f64) -> bool {
    let travel = (cmd.v * cmd.dt).abs();
    if travel == 0.0 {
        return false;
    }
    let max_gap = grid.resolution() / 4.0;
    let n = (travel / max_gap).ceil().max(1.0) as usize;
    (1..=n).any(|k| {
        let t = cmd.dt * k as f64 / n as f64;
        let p = integrate_unicycle(pose, cmd.v, cmd.w, t);
        disk_collides(grid, &Vec2::new(p.x, p.y), radius)
    })
}

/// Applies a drive command to the world's robot.
///
/// When the swept footprint would touch a non-free cell the pose is left
/// unchanged and `blocked` is raised.
pub fn step_robot(world: &WorldModel, v: f64, w: f64, dt: f64) -> (WorldModel, StepOutcome) {
    assert!(dt > 0.0, "dt must be positive");
    let cmd = DriveCommand::new(v, w, dt);
    let pose = world.robot.pose;
    let mut next = world.clone();
    if sweep_collides(&world.grid, &pose, &cmd, world.robot.radius) {
        return (next, StepOutcome { blocked: true });
    }
    next.robot.pose = integrate_unicycle(&pose, v, w, dt);
    (next, StepOutcome { blocked: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::navigation::Cell;
    use crate::world::RobotState;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    fn world(pose: Pose2) -> WorldModel {
        let mut g = OccupancyGrid::new(100, 100, 0.1, Pose2::new(-5.0, -5.0, 0.0), Cell::Free);
        g.fill_rect(Vec2::new(2.0, -5.0), Vec2::new(2.2, 5.0), Cell::Occupied);
        WorldModel::new(g, vec![], vec![], RobotState::new(pose), 0).unwrap()
    }

    #[test]
    fn straight_line() {
        let p = integrate_unicycle(&Pose2::identity(), 1.0, 0.0, 1.0);
        assert_abs_diff_eq!(p.x, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.y, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn turn_in_place() {
        let p = integrate_unicycle(&Pose2::identity(), 0.0, FRAC_PI_2, 1.0);
        assert_abs_diff_eq!(p.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.theta, FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn quarter_arc_radius_one() {
        let p = integrate_unicycle(&Pose2::identity(), FRAC_PI_2, FRAC_PI_2, 1.0);
        assert_abs_diff_eq!(p.x, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.y, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.theta, FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn blocked_motion_keeps_pose() {
        let w = world(Pose2::new(1.0, 0.0, 0.0));
        let (n, out) = step_robot(&w, 1.0, 0.0, 1.0);
        assert!(out.blocked);
        assert_eq!(n.robot.pose, w.robot.pose);
        let (n, out) = step_robot(&w, 0.5, 0.0, 1.0);
        assert!(!out.blocked);
        assert_abs_diff_eq!(n.robot.pose.x, 1.5, epsilon = 1e-12);
    }

    #[test]
    fn thin_wall_is_not_tunnelled() {
        let w = world(Pose2::new(1.0, 0.0, 0.0));
        // one long step whose endpoint is past the wall
        let (_, out) = step_robot(&w, 3.0, 0.0, 1.0);
        assert!(out.blocked);
    }
}
