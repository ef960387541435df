//! Thirteen-joint instructor skeleton and its forward posing.
//!
//! Body-frame offsets use the instructor-centric convention: origin at the
//! pelvis, x toward the left hip, y up the spine, z = x × y (body forward).

use serde::{Deserialize, Serialize};

use crate::geometry::{Pose2, Transform3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Joint {
    Pelvis,
    Spine,
    Head,
    LeftShoulder,
    LeftElbow,
    LeftWrist,
    RightShoulder,
    RightElbow,
    RightWrist,
    LeftHip,
    LeftAnkle,
    RightHip,
    RightAnkle,
}

pub const JOINT_COUNT: usize = 13;

impl Joint {
    pub const ALL: [Joint; JOINT_COUNT] = [
        Joint::Pelvis,
        Joint::Spine,
        Joint::Head,
        Joint::LeftShoulder,
        Joint::LeftElbow,
        Joint::LeftWrist,
        Joint::RightShoulder,
        Joint::RightElbow,
        Joint::RightWrist,
        Joint::LeftHip,
        Joint::LeftAnkle,
        Joint::RightHip,
        Joint::RightAnkle,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn shoulder(self) -> Joint {
        match self {
            Side::Left => Joint::LeftShoulder,
            Side::Right => Joint::RightShoulder,
        }
    }

    pub fn elbow(self) -> Joint {
        match self {
            Side::Left => Joint::LeftElbow,
            Side::Right => Joint::RightElbow,
        }
    }

    pub fn wrist(self) -> Joint {
        match self {
            Side::Left => Joint::LeftWrist,
            Side::Right => Joint::RightWrist,
        }
    }
}

/// One 3-vector per joint, indexed by [`Joint`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointSet(pub [Vec3; JOINT_COUNT]);

impl JointSet {
    pub fn get(&self, j: Joint) -> Vec3 {
        self.0[j.index()]
    }

    pub fn set(&mut self, j: Joint, v: Vec3) {
        self.0[j.index()] = v;
    }

    pub fn map(&self, f: impl Fn(&Vec3) -> Vec3) -> JointSet {
        JointSet(std::array::from_fn(|i| f(&self.0[i])))
    }

    pub fn iter(&self) -> impl Iterator<Item = (Joint, Vec3)> + '_ {
        Joint::ALL.iter().map(|&j| (j, self.get(j)))
    }
}

/// Reference stature the default template is drawn at.
const TEMPLATE_STATURE: f64 = 1.75;
/// Ankle joint height above the sole.
const ANKLE_HEIGHT: f64 = 0.08;

/// Rest-pose joint offsets in the body frame, metres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTemplate {
    pub offsets: JointSet,
    /// Height of the ankle joints above the sole.
    pub ankle_height: f64,
}

impl JointTemplate {
    /// Arms hanging, scaled to `stature`.
    pub fn standard(stature: f64) -> Self {
        let k = stature / TEMPLATE_STATURE;
        let v = |x: f64, y: f64, z: f64| Vec3::new(x, y, z) * k;
        let mut o = JointSet([Vec3::zeros(); JOINT_COUNT]);
        o.set(Joint::Pelvis, v(0.0, 0.0, 0.0));
        o.set(Joint::Spine, v(0.0, 0.25, 0.0));
        o.set(Joint::Head, v(0.0, 0.62, 0.0));
        o.set(Joint::LeftShoulder, v(0.19, 0.45, 0.0));
        o.set(Joint::LeftElbow, v(0.21, 0.16, 0.0));
        o.set(Joint::LeftWrist, v(0.22, -0.10, 0.0));
        o.set(Joint::RightShoulder, v(-0.19, 0.45, 0.0));
        o.set(Joint::RightElbow, v(-0.21, 0.16, 0.0));
        o.set(Joint::RightWrist, v(-0.22, -0.10, 0.0));
        o.set(Joint::LeftHip, v(0.10, 0.0, 0.0));
        o.set(Joint::LeftAnkle, v(0.11, -0.85, 0.0));
        o.set(Joint::RightHip, v(-0.10, 0.0, 0.0));
        o.set(Joint::RightAnkle, v(-0.11, -0.85, 0.0));
        Self {
            offsets: o,
            ankle_height: ANKLE_HEIGHT * k,
        }
    }

    /// Height of the pelvis above the floor implied by the ankle offsets.
    pub fn pelvis_height(&self) -> f64 {
        let lowest = self.offsets.get(Joint::LeftAnkle).y.min(self.offsets.get(Joint::RightAnkle).y);
        -lowest + self.ankle_height
    }

    pub fn upper_arm(&self, side: Side) -> f64 {
        (self.offsets.get(side.elbow()) - self.offsets.get(side.shoulder())).norm()
    }

    pub fn forearm(&self, side: Side) -> f64 {
        (self.offsets.get(side.wrist()) - self.offsets.get(side.elbow())).norm()
    }
}

/// Body frame → map transform for an instructor standing at `base`.
pub fn body_to_map(base: &Pose2, pelvis_height: f64) -> Transform3 {
    let (s, c) = base.theta.sin_cos();
    let left = Vec3::new(-s, c, 0.0);
    let up = Vec3::new(0.0, 0.0, 1.0);
    let forward = Vec3::new(c, s, 0.0);
    let r = nalgebra::Matrix3::from_columns(&[left, up, forward]);
    Transform3::new(r, Vec3::new(base.x, base.y, pelvis_height))
}

/// Map-frame joints for an instructor, with one arm aimed at `point_target`
/// (shoulder → wrist passes through the target).
pub fn pose_joints(template: &JointTemplate, base: &Pose2, point_target: Option<&Vec3>) -> JointSet {
    let t = body_to_map(base, template.pelvis_height());
    let mut joints = template.offsets.map(|o| t.apply(o));
    if let Some(target) = point_target {
        let side = pointing_side(base, target);
        let shoulder = joints.get(side.shoulder());
        let aim = target - shoulder;
        if aim.norm() > 1e-9 {
            let dir = aim.normalize();
            let upper = template.upper_arm(side);
            let reach = upper + template.forearm(side);
            joints.set(side.elbow(), shoulder + dir * upper);
            joints.set(side.wrist(), shoulder + dir * reach);
        }
    }
    joints
}

/// The arm on the side of the body the target lies on.
pub fn pointing_side(base: &Pose2, target: &Vec3) -> Side {
    let (s, c) = base.theta.sin_cos();
    let lateral = -s * (target.x - base.x) + c * (target.y - base.y);
    if lateral > 0.0 {
        Side::Left
    } else {
        Side::Right
    }
}
