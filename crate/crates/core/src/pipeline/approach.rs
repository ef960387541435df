//! Goal selection along the pointing ray and the final approach rule.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::state::StopReason;
use crate::geometry::{normalize_angle, Pose2, Vec2};
use crate::navigation::{follow, FollowConfig, OccupancyGrid, Path};
use crate::world::{render_object_boxes, WorldModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ApproachError {
    #[error("no free pose on the pointing ray within {max:.1} m of the instructor")]
    NoFreePoseOnRay { max: f64 },
    #[error("no free pose around the referred person")]
    NoFreePoseNearPerson,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApproachConfig {
    /// Distance of the intermediate goal from the instructor, metres.
    pub goal_distance: f64,
    /// Farthest probe along the ray when the first candidate is blocked, metres.
    pub goal_max_distance: f64,
    /// Length of one final-approach segment, metres.
    pub segment: f64,
    /// Distance kept from the target's face at the end of the approach, metres.
    pub standoff: f64,
    /// The target counts as reached once its face is closer than this, metres.
    pub reach_distance: f64,
    /// Below this visible fraction the target is out of view.
    pub min_visible: f64,
    /// Target footprint margin for attributing a ray hit to it, in cells.
    pub hit_margin_cells: f64,
    /// Distance kept from a referred person, metres.
    pub person_distance: f64,
}

impl Default for ApproachConfig {
    fn default() -> Self {
        Self {
            goal_distance: 1.0,
            goal_max_distance: 2.0,
            segment: 0.5,
            standoff: 0.5,
            reach_distance: 0.8,
            min_visible: 0.05,
            hit_margin_cells: 1.5,
            person_distance: 3.0,
        }
    }
}

/// Pose on the pointing ray `goal_distance` from the instructor, pushed
/// outward in half-cell steps while the candidate cell is blocked.
///
/// `grid` is the inflated planning grid.
pub fn intermediate_goal(
    instructor_ground: &Vec2,
    azimuth: f64,
    grid: &OccupancyGrid,
    cfg: &ApproachConfig,
) -> Result<Pose2, ApproachError> {
    let dir = Vec2::new(azimuth.cos(), azimuth.sin());
    let step = 0.5 * grid.resolution();
    let mut k = 0;
    loop {
        let d = cfg.goal_distance + step * k as f64;
        if d > cfg.goal_max_distance + 1e-9 {
            return Err(ApproachError::NoFreePoseOnRay {
                max: cfg.goal_max_distance,
            });
        }
        let p = instructor_ground + dir * d;
        let (i, j) = grid.world_to_cell_signed(&p);
        if grid.is_free(i, j) {
            return Ok(Pose2::new(p.x, p.y, azimuth));
        }
        k += 1;
    }
}

/// Free pose `person_distance` from a person, preferring the side facing `from`.
pub fn referral_pose(person: &Vec2, from: &Vec2, grid: &OccupancyGrid, cfg: &ApproachConfig) -> Result<Pose2, ApproachError> {
    let d = from - person;
    let base = if d.norm() > 1e-9 { d.y.atan2(d.x) } else { 0.0 };
    for k in 0..=18 {
        for sign in [1.0, -1.0] {
            if k == 0 && sign < 0.0 {
                continue;
            }
            let a = base + sign * (k as f64 * 10f64.to_radians());
            let p = person + Vec2::new(a.cos(), a.sin()) * cfg.person_distance;
            let (i, j) = grid.world_to_cell_signed(&p);
            if grid.is_free(i, j) {
                return Ok(Pose2::new(p.x, p.y, normalize_angle(a + std::f64::consts::PI)));
            }
        }
    }
    Err(ApproachError::NoFreePoseNearPerson)
}

/// Outcome of one look along the approach azimuth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ApproachDecision {
    Stop(StopReason),
    /// Drive this far along the azimuth, then look again.
    Advance(f64),
}

/// Looks along `azimuth` from the robot's current pose and decides whether to stop.
pub fn approach_decision(world: &WorldModel, target_id: &str, azimuth: f64, cfg: &ApproachConfig) -> ApproachDecision {
    let pose = world.robot.pose;
    let k = &world.robot.intrinsics;
    let views = render_object_boxes(world, &pose);
    let Some(view) = views.iter().find(|v| v.object_id == target_id) else {
        return ApproachDecision::Stop(StopReason::OutOfView);
    };
    if view.visible_fraction < cfg.min_visible {
        return ApproachDecision::Stop(StopReason::OutOfView);
    }
    let grid = &world.grid;
    let res = grid.resolution();
    let pos = pose.position();
    let (range, hit) = grid.raycast(&pos, azimuth, 1e3).unwrap_or((0.0, true));
    let hit_point = pos + Vec2::new(azimuth.cos(), azimuth.sin()) * range;
    let on_target = hit
        && world
            .object(target_id)
            .is_some_and(|o| o.footprint.contains(&hit_point, cfg.hit_margin_cells * res));
    if on_target && range < cfg.reach_distance && view.full_in_view(k) {
        return ApproachDecision::Stop(StopReason::ObjectReached);
    }
    let clearance = world.robot.radius + res;
    if range < clearance {
        return ApproachDecision::Stop(StopReason::NoNavigableSpace);
    }
    let keep = if on_target { cfg.standoff } else { clearance };
    let seg = cfg.segment.min(range - keep);
    if seg < 1e-2 {
        return ApproachDecision::Stop(StopReason::NoNavigableSpace);
    }
    ApproachDecision::Advance(seg)
}

/// Segment endpoint `seg` metres along `azimuth`, heading along it.
pub fn segment_path(from: &Pose2, azimuth: f64, seg: f64) -> Path {
    let end = from.position() + Vec2::new(azimuth.cos(), azimuth.sin()) * seg;
    Path::from_waypoints(vec![*from, Pose2::new(end.x, end.y, azimuth)])
}

/// Result of a complete final approach.
#[derive(Debug, Clone, PartialEq)]
pub struct ApproachRun {
    pub poses: Vec<Pose2>,
    pub stop: StopReason,
    pub world: WorldModel,
}

/// Moves along `azimuth` in segments until a stop condition fires.
pub fn final_approach(
    world: &WorldModel,
    target_id: &str,
    azimuth: f64,
    cfg: &ApproachConfig,
    follow_cfg: &FollowConfig,
) -> ApproachRun {
    let mut w = world.clone();
    let mut poses = vec![w.robot.pose];
    loop {
        match approach_decision(&w, target_id, azimuth, cfg) {
            ApproachDecision::Stop(stop) => return ApproachRun { poses, stop, world: w },
            ApproachDecision::Advance(seg) => match follow(&segment_path(&w.robot.pose, azimuth, seg), &w, follow_cfg) {
                Ok(run) => {
                    poses.extend(run.poses.into_iter().skip(1));
                    w = run.world;
                }
                Err(_) => {
                    return ApproachRun {
                        poses,
                        stop: StopReason::NoNavigableSpace,
                        world: w,
                    }
                }
            },
        }
    }
}
