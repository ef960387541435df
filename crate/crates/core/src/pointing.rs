//! Pointing-direction estimation from a monocular observation of the instructor.
//!
//! Depth comes from the image row of the foot contact, which fixes the scale
//! of the skeleton. The arm ray and the gaze ray are fused in the camera frame
//! and the result is carried into the map frame through the robot pose.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{angle_between, camera_to_map, ground_project, normalize_angle, CameraIntrinsics, GeometryError, Ray3, Vec2, Vec3};
use crate::world::{Joint, JointSet, PersonDetection, PersonObservation, RobotState, Side, SkeletonObservation};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PointingError {
    #[error("foot contact point is not visible")]
    FootNotVisible,
    #[error("foot contact is within one pixel of the horizon")]
    DegenerateHorizon,
    #[error("foot contact is above the horizon")]
    FootAboveHorizon,
    #[error("skeleton pelvis is not in front of the camera")]
    DegenerateSkeleton,
    #[error("no arm is raised into a pointing pose")]
    NoPointingArm,
    #[error("body and gaze directions cancel out")]
    DegenerateFusion,
    #[error("pointing ray is vertical")]
    VerticalRay,
}

impl From<GeometryError> for PointingError {
    fn from(_: GeometryError) -> Self {
        PointingError::VerticalRay
    }
}

/// Distance to a person standing on the floor from the image row of their foot contact.
pub fn estimate_depth(det: &PersonDetection, k: &CameraIntrinsics, camera_height: f64) -> Result<f64, PointingError> {
    if !det.foot_visible {
        return Err(PointingError::FootNotVisible);
    }
    let b_y = det.bottom_center().y;
    let dy = b_y - k.cy;
    if dy.abs() < 1.0 {
        return Err(PointingError::DegenerateHorizon);
    }
    if dy < 0.0 {
        return Err(PointingError::FootAboveHorizon);
    }
    Ok(k.fy * camera_height / dy)
}

/// Rescales a skeleton so its pelvis sits at depth `d`.
pub fn recover_scale(skel: &SkeletonObservation, d: f64) -> Result<SkeletonObservation, PointingError> {
    let z = skel.get(Joint::Pelvis).z;
    if !(z > 1e-6) || !(d > 0.0) {
        return Err(PointingError::DegenerateSkeleton);
    }
    let s = d / z;
    Ok(SkeletonObservation {
        joints: skel.joints.map(|p| p * s),
    })
}

/// Instructor-centric frame: origin at the pelvis, x toward the left hip, y up the spine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyFrame {
    pub origin: Vec3,
    pub x_axis: Vec3,
    pub y_axis: Vec3,
    pub z_axis: Vec3,
}

impl BodyFrame {
    pub fn from_joints(j: &JointSet) -> Result<Self, PointingError> {
        let origin = j.get(Joint::Pelvis);
        let x = j.get(Joint::LeftHip) - origin;
        if x.norm() < 1e-9 {
            return Err(PointingError::DegenerateSkeleton);
        }
        let x = x.normalize();
        let spine = j.get(Joint::Spine) - origin;
        let y = spine - x * spine.dot(&x);
        if y.norm() < 1e-9 {
            return Err(PointingError::DegenerateSkeleton);
        }
        let y = y.normalize();
        Ok(Self {
            origin,
            x_axis: x,
            y_axis: y,
            z_axis: x.cross(&y),
        })
    }
}

/// Minimum angle between a pointing arm and the hanging rest direction.
pub const ELEVATION_GATE: f64 = 15.0 * std::f64::consts::PI / 180.0;

/// Elevation of the shoulder→wrist vector above the downward spine direction.
pub fn arm_elevation(j: &JointSet, frame: &BodyFrame, side: Side) -> f64 {
    let arm = j.get(side.wrist()) - j.get(side.shoulder());
    angle_between(&arm, &(-frame.y_axis))
}

/// Shoulder→wrist ray of the raised arm reaching farthest from the pelvis.
pub fn body_pointing_ray(skel: &SkeletonObservation) -> Result<Ray3, PointingError> {
    let j = &skel.joints;
    let frame = BodyFrame::from_joints(j)?;
    let pelvis = j.get(Joint::Pelvis);
    let side = [Side::Left, Side::Right]
        .into_iter()
        .filter(|&s| arm_elevation(j, &frame, s) > ELEVATION_GATE)
        .max_by(|&a, &b| {
            let da = (j.get(a.wrist()) - pelvis).norm();
            let db = (j.get(b.wrist()) - pelvis).norm();
            da.total_cmp(&db)
        })
        .ok_or(PointingError::NoPointingArm)?;
    let s = j.get(side.shoulder());
    Ray3::new(s, j.get(side.wrist()) - s).map_err(|_| PointingError::NoPointingArm)
}

/// Weighted direction average of two rays.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fusion {
    pub direction: Vec3,
    /// Angle between the two inputs, radians.
    pub disagreement: f64,
}

pub fn fuse_directions(body: &Ray3, gaze: &Ray3, w_body: f64, w_gaze: f64) -> Result<Fusion, PointingError> {
    let sum = body.direction * w_body + gaze.direction * w_gaze;
    let disagreement = angle_between(&body.direction, &gaze.direction);
    if sum.norm() < 1e-6 {
        return Err(PointingError::DegenerateFusion);
    }
    Ok(Fusion {
        direction: sum.normalize(),
        disagreement,
    })
}

/// Camera-frame ray expressed in the map, with its azimuth.
pub fn to_map_frame(dir_cam: &Vec3, origin_cam: &Vec3, robot: &RobotState) -> Result<(Ray3, f64), PointingError> {
    let t = camera_to_map(&robot.pose, robot.camera_height);
    let ray = Ray3::new(t.apply(origin_cam), t.apply_vector(dir_cam)).map_err(|_| PointingError::VerticalRay)?;
    let az = ground_project(&ray)?;
    Ok((ray, az))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PointingConfig {
    pub w_body: f64,
    pub w_gaze: f64,
    /// Above this body/gaze disagreement the gaze ray is used alone, radians.
    pub gaze_override: f64,
}

impl Default for PointingConfig {
    fn default() -> Self {
        Self {
            w_body: 0.5,
            w_gaze: 0.5,
            gaze_override: 45f64.to_radians(),
        }
    }
}

/// Full pointing estimate for one observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointingEstimate {
    pub body_ray: Ray3,
    pub gaze_ray: Option<Ray3>,
    pub fused_ray_map: Ray3,
    pub depth: f64,
    pub azimuth: f64,
    /// Angle between body and gaze rays; zero when there is no gaze.
    pub disagreement: f64,
    pub body_azimuth: f64,
    pub gaze_azimuth: Option<f64>,
    /// Pelvis projected to the floor, map frame.
    pub instructor_ground: [f64; 2],
    /// Head pose was unavailable; the body ray was used alone.
    pub gaze_degraded: bool,
    /// Disagreement exceeded the override threshold; the gaze ray was used alone.
    pub gaze_overrode: bool,
}

impl PointingEstimate {
    pub fn instructor_ground(&self) -> Vec2 {
        Vec2::new(self.instructor_ground[0], self.instructor_ground[1])
    }

    /// Floor projection of the fused ray origin.
    pub fn ray_ground_origin(&self) -> Vec2 {
        self.fused_ray_map.origin.xy()
    }

    /// Azimuth error against the bearing from the ray's ground origin to `target`.
    pub fn azimuth_error_to(&self, target: &Vec2) -> f64 {
        let d = target - self.ray_ground_origin();
        normalize_angle(self.azimuth - d.y.atan2(d.x)).abs()
    }
}

/// Runs depth, scale recovery, arm and gaze rays, fusion and the map transform.
pub fn estimate_pointing(
    obs: &PersonObservation,
    robot: &RobotState,
    cfg: &PointingConfig,
) -> Result<PointingEstimate, PointingError> {
    let depth = estimate_depth(&obs.detection, &robot.intrinsics, robot.camera_height)?;
    let skel = recover_scale(&obs.skeleton, depth)?;
    let body = body_pointing_ray(&skel)?;
    let head = skel.get(Joint::Head);
    let gaze = obs.head.map(|h| Ray3::new(head, h.gaze_dir)).transpose().map_err(|_| PointingError::VerticalRay)?;
    let (dir, origin, disagreement, overrode) = match &gaze {
        None => (body.direction, body.origin, 0.0, false),
        Some(g) => {
            let fused = fuse_directions(&body, g, cfg.w_body, cfg.w_gaze)?;
            if fused.disagreement > cfg.gaze_override {
                (g.direction, g.origin, fused.disagreement, true)
            } else {
                let wsum = cfg.w_body + cfg.w_gaze;
                let o = (body.origin * cfg.w_body + g.origin * cfg.w_gaze) / wsum;
                (fused.direction, o, fused.disagreement, false)
            }
        }
    };
    let (fused_ray_map, azimuth) = to_map_frame(&dir, &origin, robot)?;
    let (_, body_azimuth) = to_map_frame(&body.direction, &body.origin, robot)?;
    let gaze_azimuth = gaze.as_ref().and_then(|g| to_map_frame(&g.direction, &g.origin, robot).ok()).map(|r| r.1);
    let pelvis_map = camera_to_map(&robot.pose, robot.camera_height).apply(&skel.get(Joint::Pelvis));
    Ok(PointingEstimate {
        body_ray: body,
        gaze_ray: gaze,
        fused_ray_map,
        depth,
        azimuth,
        disagreement,
        body_azimuth,
        gaze_azimuth,
        instructor_ground: [pelvis_map.x, pelvis_map.y],
        gaze_degraded: gaze.is_none(),
        gaze_overrode: overrode,
    })
}
