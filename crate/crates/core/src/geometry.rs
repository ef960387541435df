//! Rigid transforms, the pinhole camera and ray types.
//!
//! Frame conventions used throughout the crate:
//!
//! - map / robot base: x forward, y left, z up (right-handed, z = 0 is the floor)
//! - camera: x right, y down, z forward
//!
//! The camera is mounted on the robot base with zero pitch and zero roll at a
//! configurable height, so the optical axis is parallel to the floor.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;

/// Errors from camera and ray operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("pixel ({u}, {v}) is outside the image")]
    OutOfImage { u: f64, v: f64 },
    #[error("ray has no horizontal component")]
    VerticalRay,
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("ray direction has zero length")]
    ZeroDirection,
}

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    let wrapped = a.rem_euclid(2.0 * PI);
    if wrapped > PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

/// Absolute difference of two angles, in [0, pi].
pub fn angle_diff(a: f64, b: f64) -> f64 {
    normalize_angle(a - b).abs()
}

/// Angle between two (not necessarily unit) vectors, in [0, pi].
pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    // atan2 form stays accurate near 0 and pi
    a.cross(b).norm().atan2(a.dot(b))
}

/// Planar pose on the map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn identity() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    /// `self ∘ other`: express `other` (given in this pose's frame) in the parent frame.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(
            -c * self.x - s * self.y,
            s * self.x - c * self.y,
            -self.theta,
        )
    }

    pub fn distance_to(&self, p: &Vec2) -> f64 {
        (self.position() - p).norm()
    }

    /// Lifts the planar pose to a 3D transform (rotation about z, translation in the floor plane).
    pub fn to_transform3(&self) -> Transform3 {
        Transform3::new(rot_z(self.theta), Vec3::new(self.x, self.y, 0.0))
    }
}

/// Rotation by `angle` radians about +z.
pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rigid 3D transform `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform3 {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Transform3 {
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vec3::zeros())
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `compose(a, b).apply(p) == a.apply(b.apply(p))`.
    pub fn compose(&self, other: &Transform3) -> Transform3 {
        Transform3::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Transform3 {
        let rt = self.rotation.transpose();
        Transform3::new(rt, -(rt * self.translation))
    }

    /// Checks orthonormality and a positive determinant within `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        let rtr = self.rotation.transpose() * self.rotation;
        (rtr - Matrix3::identity()).abs().max() <= tol
            && (self.rotation.determinant() - 1.0).abs() <= tol
    }

    pub fn apply_ray(&self, ray: &Ray3) -> Ray3 {
        Ray3 {
            origin: self.apply(&ray.origin),
            direction: self.apply_vector(&ray.direction),
        }
    }
}

/// Pinhole intrinsics `K = (f_x, f_y, c_x, c_y)` plus the image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraIntrinsics {
    /// 640×480 with a 500 px focal length, principal point at the image centre.
    fn default() -> Self {
        Self {
            fx: 500.0,
            fy: 500.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
        }
    }
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx = {}, fy = {})",
                self.fx, self.fy
            )));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) || !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn contains(&self, px: &Vec2) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x <= self.width as f64 && px.y <= self.height as f64
    }

    /// Half of the horizontal field of view, radians.
    pub fn half_hfov(&self) -> f64 {
        (self.width as f64 - self.cx).max(self.cx).atan2(self.fx)
    }
}

/// Axis-aligned image rectangle in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl PixelBox {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec2>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = PixelBox {
            x_min: first.x,
            y_min: first.y,
            x_max: first.x,
            y_max: first.y,
        };
        for p in it {
            b.x_min = b.x_min.min(p.x);
            b.y_min = b.y_min.min(p.y);
            b.x_max = b.x_max.max(p.x);
            b.y_max = b.y_max.max(p.y);
        }
        Some(b)
    }

    pub fn width(&self) -> f64 {
        (self.x_max - self.x_min).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y_max - self.y_min).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Intersection with the image rectangle; `None` when nothing of the box is inside.
    pub fn clip_to_image(&self, k: &CameraIntrinsics) -> Option<PixelBox> {
        let c = PixelBox {
            x_min: self.x_min.max(0.0),
            y_min: self.y_min.max(0.0),
            x_max: self.x_max.min(k.width as f64),
            y_max: self.y_max.min(k.height as f64),
        };
        (c.x_max > c.x_min && c.y_max > c.y_min).then_some(c)
    }

    /// Midpoint of the bottom edge.
    pub fn bottom_center(&self) -> Vec2 {
        Vec2::new(0.5 * (self.x_min + self.x_max), self.y_max)
    }
}

/// Pinhole projection of a camera-frame point.
pub fn project(p_cam: &Vec3, k: &CameraIntrinsics) -> Result<Vec2, GeometryError> {
    if p_cam.z <= 0.0 {
        return Err(GeometryError::BehindCamera { z: p_cam.z });
    }
    Ok(Vec2::new(
        k.fx * p_cam.x / p_cam.z + k.cx,
        k.fy * p_cam.y / p_cam.z + k.cy,
    ))
}

/// Unit bearing through a pixel, as a ray from the camera centre.
pub fn bearing_of_pixel(px: &Vec2, k: &CameraIntrinsics) -> Result<Ray3, GeometryError> {
    if !k.contains(px) {
        return Err(GeometryError::OutOfImage { u: px.x, v: px.y });
    }
    let dir = Vec3::new((px.x - k.cx) / k.fx, (px.y - k.cy) / k.fy, 1.0);
    Ray3::new(Vec3::zeros(), dir)
}

/// Azimuth of a map-frame ray's horizontal component.
pub fn ground_project(ray: &Ray3) -> Result<f64, GeometryError> {
    let h = ray.direction.xy();
    if h.norm() < 1e-6 {
        return Err(GeometryError::VerticalRay);
    }
    Ok(h.y.atan2(h.x))
}

/// Half-line with a unit direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ray3 {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray3 {
    /// Builds a ray, normalizing `direction`.
    pub fn new(origin: Vec3, direction: Vec3) -> Result<Self, GeometryError> {
        let n = direction.norm();
        if !(n > 1e-12) || !n.is_finite() {
            return Err(GeometryError::ZeroDirection);
        }
        Ok(Self {
            origin,
            direction: direction / n,
        })
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// Rotation taking camera-frame vectors (x right, y down, z forward) to the
/// robot base frame (x forward, y left, z up).
pub fn camera_to_base_rotation() -> Matrix3<f64> {
    Matrix3::new(
        0.0, 0.0, 1.0, //
        -1.0, 0.0, 0.0, //
        0.0, -1.0, 0.0,
    )
}

/// Camera → robot-base transform for a level camera at `height` above the base origin.
pub fn camera_to_base(height: f64) -> Transform3 {
    Transform3::new(camera_to_base_rotation(), Vec3::new(0.0, 0.0, height))
}

/// Camera → map transform for a robot at `pose` with a level camera at `height`.
pub fn camera_to_map(pose: &Pose2, height: f64) -> Transform3 {
    pose.to_transform3().compose(&camera_to_base(height))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::default()
    }

    #[test]
    fn normalize_angle_range() {
        assert_abs_diff_eq!(normalize_angle(PI), PI);
        assert_abs_diff_eq!(normalize_angle(-PI), PI);
        assert_abs_diff_eq!(normalize_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(normalize_angle(-7.0 * PI), PI, epsilon = 1e-9);
    }

    #[test]
    fn pose2_inverse() {
        let p = Pose2::new(1.5, -2.0, 2.7);
        let id = p.compose(&p.inverse());
        assert_abs_diff_eq!(id.x, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(id.y, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(id.theta, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn compose_identity_and_inverse() {
        let t = Transform3::new(rot_z(0.4), Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(Transform3::identity().compose(&t), t);
        let id = t.compose(&t.inverse());
        assert!((id.rotation - Matrix3::identity()).abs().max() < 1e-9);
        assert!(id.translation.norm() < 1e-9);
    }

    #[test]
    fn compose_rz30_rz60() {
        let a = Transform3::new(rot_z(30f64.to_radians()), Vec3::zeros());
        let b = Transform3::new(rot_z(60f64.to_radians()), Vec3::zeros());
        let c = a.compose(&b);
        // Rz(90°) by hand: [[0,-1,0],[1,0,0],[0,0,1]]
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((c.rotation - expected).abs().max() < 1e-12);
    }

    #[test]
    fn project_examples() {
        assert_eq!(project(&Vec3::new(0.0, 0.0, 2.0), &k()).unwrap(), Vec2::new(320.0, 240.0));
        assert_eq!(project(&Vec3::new(1.0, 0.0, 2.0), &k()).unwrap(), Vec2::new(570.0, 240.0));
        assert!(matches!(
            project(&Vec3::new(0.0, 0.0, -1.0), &k()),
            Err(GeometryError::BehindCamera { .. })
        ));
    }

    #[test]
    fn bearing_examples() {
        let r = bearing_of_pixel(&Vec2::new(320.0, 240.0), &k()).unwrap();
        assert_abs_diff_eq!(r.direction, Vec3::new(0.0, 0.0, 1.0), epsilon = 1e-12);
        let r = bearing_of_pixel(&Vec2::new(570.0, 240.0), &k()).unwrap();
        assert_abs_diff_eq!(r.direction, Vec3::new(0.5, 0.0, 1.0).normalize(), epsilon = 1e-12);
        assert!(matches!(
            bearing_of_pixel(&Vec2::new(-1.0, 0.0), &k()),
            Err(GeometryError::OutOfImage { .. })
        ));
    }

    #[test]
    fn ground_project_examples() {
        let r = |d: Vec3| Ray3::new(Vec3::zeros(), d).unwrap();
        assert_abs_diff_eq!(ground_project(&r(Vec3::new(1.0, 0.0, 0.0))).unwrap(), 0.0);
        assert_abs_diff_eq!(
            ground_project(&r(Vec3::new(1.0, 1.0, -0.2))).unwrap(),
            PI / 4.0,
            epsilon = 1e-12
        );
        assert_eq!(
            ground_project(&r(Vec3::new(0.0, 0.0, -1.0))),
            Err(GeometryError::VerticalRay)
        );
    }

    #[test]
    fn mount_rotation_is_proper() {
        assert!(camera_to_base(1.0).is_valid(1e-12));
        // optical axis maps to robot forward
        assert_abs_diff_eq!(
            camera_to_base_rotation() * Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(1.0, 0.0, 0.0)
        );
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 500.0, 320.0, 240.0, 640, 480).is_err());
        assert!(CameraIntrinsics::new(500.0, 500.0, 640.0, 240.0, 640, 480).is_err());
        assert!(CameraIntrinsics::new(500.0, 500.0, 0.0, 0.0, 640, 480).is_ok());
    }
}
