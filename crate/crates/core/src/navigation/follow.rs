//! Rotate-then-drive path execution.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::planner::Path;
use crate::geometry::{normalize_angle, Pose2};
use crate::world::{step_robot, DriveCommand, WorldModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FollowConfig {
    pub v_max: f64,
    pub w_max: f64,
    pub dt: f64,
    /// Turn in place until the heading error drops below this, radians.
    pub heading_tol: f64,
    /// Drop back to turning in place above this heading error, radians.
    pub realign_threshold: f64,
    /// Waypoint acceptance radius, metres.
    pub reach_tol: f64,
    /// Simulated seconds without progress before giving up.
    pub stuck_after: f64,
}

impl Default for FollowConfig {
    fn default() -> Self {
        Self {
            v_max: 0.5,
            w_max: 1.0,
            dt: 0.1,
            heading_tol: 5f64.to_radians(),
            realign_threshold: 30f64.to_radians(),
            reach_tol: 0.025,
            stuck_after: 5.0,
        }
    }
}

impl FollowConfig {
    /// Acceptance radius of half a grid cell.
    pub fn for_resolution(resolution: f64) -> Self {
        Self {
            reach_tol: 0.5 * resolution,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FollowError {
    #[error("no progress for {seconds:.1} s at ({x:.2}, {y:.2})")]
    Stuck { x: f64, y: f64, seconds: f64 },
}

/// What the controller wants next.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FollowStep {
    Command(DriveCommand),
    Arrived,
    Stuck,
}

/// Incremental controller; one call per control tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Follower {
    pub path: Path,
    next: usize,
    rotating: bool,
    anchor: Pose2,
    idle_time: f64,
    cfg: FollowConfig,
}

/// Progress below these amounts does not reset the stuck timer.
const PROGRESS_DIST: f64 = 1e-3;
const PROGRESS_ANGLE: f64 = 1e-3;

impl Follower {
    pub fn new(path: Path, start: Pose2, cfg: FollowConfig) -> Self {
        assert!(!path.waypoints.is_empty(), "path must have at least one waypoint");
        Self {
            path,
            next: 0,
            rotating: true,
            anchor: start,
            idle_time: 0.0,
            cfg,
        }
    }

    pub fn config(&self) -> &FollowConfig {
        &self.cfg
    }

    fn turn(&self, err: f64) -> f64 {
        (err / self.cfg.dt).clamp(-self.cfg.w_max, self.cfg.w_max)
    }

    /// Command for the robot at `pose`. Call once per tick with the pose that
    /// resulted from the previous command.
    pub fn step(&mut self, pose: &Pose2) -> FollowStep {
        let moved = (pose.position() - self.anchor.position()).norm() >= PROGRESS_DIST
            || normalize_angle(pose.theta - self.anchor.theta).abs() >= PROGRESS_ANGLE;
        if moved {
            self.anchor = *pose;
            self.idle_time = 0.0;
        }
        let last = self.path.waypoints.len() - 1;
        while self.next < last && (self.path.waypoints[self.next].position() - pose.position()).norm() <= self.cfg.reach_tol {
            self.next += 1;
            self.rotating = true;
        }
        let target = self.path.waypoints[self.next];
        let delta = target.position() - pose.position();
        let dist = delta.norm();
        let cmd = if self.next == last && dist <= self.cfg.reach_tol {
            let err = normalize_angle(target.theta - pose.theta);
            if err.abs() <= self.cfg.heading_tol {
                return FollowStep::Arrived;
            }
            DriveCommand::new(0.0, self.turn(err), self.cfg.dt)
        } else {
            let err = normalize_angle(delta.y.atan2(delta.x) - pose.theta);
            if self.rotating && err.abs() < self.cfg.heading_tol {
                self.rotating = false;
            } else if !self.rotating && err.abs() > self.cfg.realign_threshold {
                self.rotating = true;
            }
            if self.rotating {
                DriveCommand::new(0.0, self.turn(err), self.cfg.dt)
            } else {
                DriveCommand::new((dist / self.cfg.dt).min(self.cfg.v_max), self.turn(err), self.cfg.dt)
            }
        };
        if self.idle_time >= self.cfg.stuck_after - 1e-9 {
            return FollowStep::Stuck;
        }
        self.idle_time += self.cfg.dt;
        FollowStep::Command(cmd)
    }
}

/// Result of executing a path in simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct FollowRun {
    pub commands: Vec<DriveCommand>,
    /// Robot pose after each command, starting with the initial pose.
    pub poses: Vec<Pose2>,
    pub world: WorldModel,
}

/// Drives the world's robot along `path` until arrival or a stall.
pub fn follow(path: &Path, world: &WorldModel, cfg: &FollowConfig) -> Result<FollowRun, FollowError> {
    let mut f = Follower::new(path.clone(), world.robot.pose, *cfg);
    let mut w = world.clone();
    let mut commands = Vec::new();
    let mut poses = vec![w.robot.pose];
    loop {
        match f.step(&w.robot.pose) {
            FollowStep::Arrived => {
                return Ok(FollowRun {
                    commands,
                    poses,
                    world: w,
                })
            }
            FollowStep::Stuck => {
                let p = w.robot.pose;
                return Err(FollowError::Stuck {
                    x: p.x,
                    y: p.y,
                    seconds: cfg.stuck_after,
                });
            }
            FollowStep::Command(c) => {
                w = step_robot(&w, c.v, c.w, c.dt).0;
                commands.push(c);
                poses.push(w.robot.pose);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec2;
    use crate::navigation::{Cell, OccupancyGrid};
    use crate::world::RobotState;

    fn world(pose: Pose2) -> WorldModel {
        let g = OccupancyGrid::new(100, 100, 0.05, Pose2::identity(), Cell::Free);
        WorldModel::new(g, vec![], vec![], RobotState::new(pose), 0).unwrap()
    }

    #[test]
    fn at_goal_needs_no_commands() {
        let start = Pose2::new(1.0, 1.0, 0.2);
        let run = follow(&Path::from_waypoints(vec![start]), &world(start), &FollowConfig::default()).unwrap();
        assert!(run.commands.is_empty());
    }

    #[test]
    fn straight_two_metres() {
        let start = Pose2::new(1.0, 2.0, 0.0);
        let path = Path::from_waypoints(vec![start, Pose2::new(3.0, 2.0, 0.0)]);
        let run = follow(&path, &world(start), &FollowConfig::for_resolution(0.05)).unwrap();
        let drive = run.commands.iter().filter(|c| c.v > 0.0).count();
        assert!((38..=42).contains(&drive), "{drive} drive steps");
        let end = run.world.robot.pose;
        assert!((end.position() - Vec2::new(3.0, 2.0)).norm() < 0.0125);
    }

    #[test]
    fn turns_before_driving() {
        let start = Pose2::new(1.0, 1.0, 0.0);
        let path = Path::from_waypoints(vec![start, Pose2::new(1.0, 3.0, 0.0)]);
        let run = follow(&path, &world(start), &FollowConfig::for_resolution(0.05)).unwrap();
        assert_eq!(run.commands[0].v, 0.0);
        let end = run.world.robot.pose;
        assert!((end.position() - Vec2::new(1.0, 3.0)).norm() < 0.025);
        assert!(end.theta.abs() <= 5f64.to_radians());
    }

    #[test]
    fn unmodelled_obstacle_means_stuck() {
        let start = Pose2::new(1.0, 2.0, 0.0);
        let mut w = world(start);
        w.grid.fill_rect(Vec2::new(2.0, 0.0), Vec2::new(2.1, 5.0), Cell::Occupied);
        let path = Path::from_waypoints(vec![start, Pose2::new(3.0, 2.0, 0.0)]);
        let e = follow(&path, &w, &FollowConfig::for_resolution(0.05)).unwrap_err();
        assert!(matches!(e, FollowError::Stuck { .. }));
    }
}
