//! Ground-truth world model and simulated perception.
//!
//! The world is a snapshot: an occupancy grid with annotated objects stamped
//! into it, the instructors standing on the floor and the robot. Stepping the
//! robot returns a new snapshot.

pub mod kinematics;
pub mod perception;
pub mod skeleton;

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, Pose2, Vec2, Vec3};
use crate::navigation::OccupancyGrid;

pub use kinematics::{integrate_unicycle, step_robot, DriveCommand, StepOutcome};
pub use perception::{
    observe_person, observe_scene, render_object_boxes, HeadPoseObservation, NoiseConfig, ObjectView, PerceptionRng,
    PersonDetection, PersonObservation, SkeletonObservation, ViewEntry,
};
pub use skeleton::{pointing_side, Joint, JointSet, JointTemplate, Side, JOINT_COUNT};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorldError {
    #[error("unknown instructor '{0}'")]
    UnknownInstructor(String),
    #[error("instructor '{0}' is not visible from the robot camera")]
    NotVisible(String),
    #[error("gesture target ({x:.2}, {y:.2}) is outside the map")]
    TargetOutsideGrid { x: f64, y: f64 },
    #[error("gesture target coincides with the instructor position")]
    DegenerateGesture,
    #[error("invalid world: {0}")]
    Invalid(String),
}

/// Axis-aligned map-frame rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Footprint {
    pub fn new(min: Vec2, max: Vec2) -> Self {
        Self {
            min: [min.x.min(max.x), min.y.min(max.y)],
            max: [min.x.max(max.x), min.y.max(max.y)],
        }
    }

    pub fn min(&self) -> Vec2 {
        Vec2::new(self.min[0], self.min[1])
    }

    pub fn max(&self) -> Vec2 {
        Vec2::new(self.max[0], self.max[1])
    }

    pub fn centroid(&self) -> Vec2 {
        (self.min() + self.max()) * 0.5
    }

    pub fn area(&self) -> f64 {
        (self.max[0] - self.min[0]) * (self.max[1] - self.min[1])
    }

    pub fn contains(&self, p: &Vec2, margin: f64) -> bool {
        p.x >= self.min[0] - margin && p.x <= self.max[0] + margin && p.y >= self.min[1] - margin && p.y <= self.max[1] + margin
    }

    pub fn corners(&self) -> [Vec2; 4] {
        [
            Vec2::new(self.min[0], self.min[1]),
            Vec2::new(self.max[0], self.min[1]),
            Vec2::new(self.max[0], self.max[1]),
            Vec2::new(self.min[0], self.max[1]),
        ]
    }
}

/// Annotated object in the scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimObject {
    pub id: String,
    pub class_label: String,
    pub attributes: BTreeSet<String>,
    pub footprint: Footprint,
    pub height: f64,
}

impl SimObject {
    pub fn centroid(&self) -> Vec2 {
        self.footprint.centroid()
    }
}

/// A person who can point and talk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructorModel {
    pub id: String,
    pub base: Pose2,
    pub stature: f64,
    pub joint_template: JointTemplate,
    pub point_target: Option<Vec3>,
    pub gaze_target: Option<Vec3>,
}

impl InstructorModel {
    pub fn new(id: impl Into<String>, base: Pose2, stature: f64) -> Self {
        Self {
            id: id.into(),
            base,
            stature,
            joint_template: JointTemplate::standard(stature),
            point_target: None,
            gaze_target: None,
        }
    }

    /// Ground-truth map-frame joints in the current gesture.
    pub fn joints(&self) -> JointSet {
        skeleton::pose_joints(&self.joint_template, &self.base, self.point_target.as_ref())
    }

    /// Footprint used when the instructor appears as a "person" in the robot view.
    pub fn footprint(&self) -> Footprint {
        let half = 0.2 * self.stature / 1.75;
        let c = self.base.position();
        Footprint::new(c - Vec2::new(half, half), c + Vec2::new(half, half))
    }
}

/// Robot pose plus its camera mount.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub pose: Pose2,
    /// Camera height above the floor, metres.
    pub camera_height: f64,
    pub intrinsics: CameraIntrinsics,
    /// Pixels trimmed from each image border when testing whether a person is in view.
    pub fov_check_margin: f64,
    /// Disk radius of the base, metres.
    pub radius: f64,
}

impl RobotState {
    pub fn new(pose: Pose2) -> Self {
        Self {
            pose,
            camera_height: 1.0,
            intrinsics: CameraIntrinsics::default(),
            fov_check_margin: 0.0,
            radius: 0.25,
        }
    }

    pub fn with_pose(&self, pose: Pose2) -> Self {
        Self { pose, ..*self }
    }
}

/// Single source of ground truth for a simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldModel {
    pub grid: OccupancyGrid,
    pub objects: Vec<SimObject>,
    pub instructors: Vec<InstructorModel>,
    pub robot: RobotState,
    pub seed: u64,
}

impl WorldModel {
    /// Validates the model and stamps object footprints into the grid as occupied.
    pub fn new(
        mut grid: OccupancyGrid,
        objects: Vec<SimObject>,
        instructors: Vec<InstructorModel>,
        robot: RobotState,
        seed: u64,
    ) -> Result<Self, Vec<String>> {
        let mut errs = Vec::new();
        let mut ids = HashSet::new();
        let (lo, hi) = grid.extent();
        let inside = |p: Vec2| p.x >= lo.x && p.y >= lo.y && p.x <= hi.x && p.y <= hi.y;
        for o in &objects {
            if !ids.insert(o.id.as_str()) {
                errs.push(format!("duplicate object id '{}'", o.id));
            }
            if !(o.height > 0.0) {
                errs.push(format!("object '{}' must have positive height", o.id));
            }
            if !(o.footprint.area() > 0.0) {
                errs.push(format!("object '{}' footprint must have positive area", o.id));
            }
            if !o.footprint.corners().iter().all(|c| inside(*c)) {
                errs.push(format!("object '{}' footprint leaves the map", o.id));
            }
        }
        let mut iids = HashSet::new();
        for i in &instructors {
            if !iids.insert(i.id.as_str()) {
                errs.push(format!("duplicate instructor id '{}'", i.id));
            }
            if !(1.0..=2.2).contains(&i.stature) {
                errs.push(format!("instructor '{}' stature {} outside [1.0, 2.2] m", i.id, i.stature));
            }
            if !grid.contains(&i.base.position()) {
                errs.push(format!("instructor '{}' stands outside the map", i.id));
            }
        }
        let r = robot.radius;
        let rp = robot.pose.position();
        if !(inside(rp - Vec2::new(r, r)) && inside(rp + Vec2::new(r, r))) {
            errs.push("robot footprint leaves the map".to_string());
        }
        if !(robot.camera_height > 0.0) {
            errs.push("camera height must be positive".to_string());
        }
        if let Err(e) = robot.intrinsics.validate() {
            errs.push(e.to_string());
        }
        if !errs.is_empty() {
            return Err(errs);
        }
        for o in &objects {
            grid.fill_rect(o.footprint.min(), o.footprint.max(), crate::navigation::Cell::Occupied);
        }
        Ok(Self {
            grid,
            objects,
            instructors,
            robot,
            seed,
        })
    }

    pub fn instructor(&self, id: &str) -> Result<&InstructorModel, WorldError> {
        self.instructors
            .iter()
            .find(|i| i.id == id)
            .ok_or_else(|| WorldError::UnknownInstructor(id.to_string()))
    }

    pub fn instructor_mut(&mut self, id: &str) -> Result<&mut InstructorModel, WorldError> {
        self.instructors
            .iter_mut()
            .find(|i| i.id == id)
            .ok_or_else(|| WorldError::UnknownInstructor(id.to_string()))
    }

    pub fn object(&self, id: &str) -> Option<&SimObject> {
        self.objects.iter().find(|o| o.id == id)
    }
}

/// Aims an instructor's arm and gaze at a map point.
///
/// `target` is (x, y, z); the observation stack then re-derives the
/// pointing direction from the posed skeleton.
pub fn inject_gesture(world: &WorldModel, instructor_id: &str, target: Vec3) -> Result<InstructorModel, WorldError> {
    let ins = world.instructor(instructor_id)?;
    let xy = Vec2::new(target.x, target.y);
    if !world.grid.contains(&xy) {
        return Err(WorldError::TargetOutsideGrid { x: target.x, y: target.y });
    }
    if (xy - ins.base.position()).norm() < 0.1 {
        return Err(WorldError::DegenerateGesture);
    }
    let mut updated = ins.clone();
    updated.point_target = Some(target);
    updated.gaze_target = Some(target);
    Ok(updated)
}
