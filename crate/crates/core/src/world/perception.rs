//! Simulated camera front-ends: person observation and object annotation boxes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::{camera_to_map, project, CameraIntrinsics, PixelBox, Pose2, Transform3, Vec2, Vec3};
use crate::navigation::OccupancyGrid;

use super::skeleton::{Joint, JointSet};
use super::{Footprint, InstructorModel, WorldError, WorldModel};

/// Near clipping plane for object rendering, metres in front of the camera.
pub const NEAR_PLANE: f64 = 0.05;
/// Fractional padding of the person box on its left, right and top edges.
const BBOX_PAD: f64 = 0.05;

/// Perception noise parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Isotropic per-axis Gaussian noise on every joint, metres.
    pub joint_sigma: f64,
    /// Angular noise on the gaze direction, radians.
    pub gaze_sigma: f64,
    /// Gaussian noise on each bbox edge, pixels.
    pub bbox_sigma: f64,
    /// Range of the per-observation non-metric scale multiplier.
    pub nonmetric_scale_range: [f64; 2],
    /// Head pose is lost beyond this ground range, metres.
    pub gaze_max_range: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            joint_sigma: 0.0266,
            gaze_sigma: 3f64.to_radians(),
            bbox_sigma: 1.0,
            nonmetric_scale_range: [0.5, 2.0],
            gaze_max_range: 6.0,
        }
    }
}

impl NoiseConfig {
    /// All noise off, metric scale.
    pub fn zero() -> Self {
        Self {
            joint_sigma: 0.0,
            gaze_sigma: 0.0,
            bbox_sigma: 0.0,
            nonmetric_scale_range: [1.0, 1.0],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut errs = Vec::new();
        for (name, v) in [
            ("joint_sigma", self.joint_sigma),
            ("gaze_sigma", self.gaze_sigma),
            ("bbox_sigma", self.bbox_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                errs.push(format!("{name} must be a finite value >= 0"));
            }
        }
        let [lo, hi] = self.nonmetric_scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            errs.push("nonmetric_scale_range must satisfy 0 < low <= high".into());
        }
        if !(self.gaze_max_range > 0.0) {
            errs.push("gaze_max_range must be positive".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs.join("; "))
        }
    }
}

/// Independent random streams for each noise source.
///
/// Every draw is a standard variate scaled afterwards, so the number of
/// values consumed never depends on the configured sigmas.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptionRng {
    skeleton: ChaCha8Rng,
    gaze: ChaCha8Rng,
    bbox: ChaCha8Rng,
}

impl PerceptionRng {
    pub fn new(seed: u64) -> Self {
        let stream = |s: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(s);
            r
        };
        Self {
            skeleton: stream(1),
            gaze: stream(2),
            bbox: stream(3),
        }
    }
}

fn normal(r: &mut ChaCha8Rng) -> f64 {
    r.sample(StandardNormal)
}

/// 13 camera-frame joints in an unknown common scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkeletonObservation {
    pub joints: JointSet,
}

impl SkeletonObservation {
    pub fn get(&self, j: Joint) -> Vec3 {
        self.joints.get(j)
    }
}

/// Estimated head orientation in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadPoseObservation {
    /// Unit gaze direction.
    pub gaze_dir: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersonDetection {
    pub bbox: PixelBox,
    pub foot_visible: bool,
}

impl PersonDetection {
    pub fn bottom_center(&self) -> Vec2 {
        self.bbox.bottom_center()
    }
}

/// Everything the camera stack reports about one person.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersonObservation {
    pub skeleton: SkeletonObservation,
    /// `None` when the head pose cannot be estimated (too far away or no gaze target).
    pub head: Option<HeadPoseObservation>,
    pub detection: PersonDetection,
}

fn map_to_camera(world: &WorldModel, pose: &Pose2) -> Transform3 {
    camera_to_map(pose, world.robot.camera_height).inverse()
}

fn pixel_in_view(px: &Vec2, k: &CameraIntrinsics, margin: f64) -> bool {
    px.x >= margin && px.y >= margin && px.x <= k.width as f64 - margin && px.y <= k.height as f64 - margin
}

/// Rotates unit `dir` by a small random angle with per-axis tangent noise `sigma`.
fn perturb_direction(dir: &Vec3, sigma: f64, r: &mut ChaCha8Rng) -> Vec3 {
    let (n1, n2) = (normal(r), normal(r));
    let helper = if dir.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let t1 = dir.cross(&helper).normalize();
    let t2 = dir.cross(&t1);
    let e = t1 * (n1 * sigma) + t2 * (n2 * sigma);
    let angle = e.norm();
    if angle < 1e-15 {
        return *dir;
    }
    (dir * angle.cos() + e * (angle.sin() / angle)).normalize()
}

/// Simulated pose, head-pose and detection networks for one instructor.
///
/// Noise is applied in order: per-joint Gaussian, one shared scale factor,
/// gaze rotation, bbox edge jitter. Each source draws from its own stream.
pub fn observe_person(
    world: &WorldModel,
    instructor_id: &str,
    noise: &NoiseConfig,
    rng: &mut PerceptionRng,
) -> Result<PersonObservation, WorldError> {
    let ins = world.instructor(instructor_id)?;
    let robot = &world.robot;
    let k = &robot.intrinsics;
    let to_cam = map_to_camera(world, &robot.pose);
    let joints_map = ins.joints();
    let joints_cam = joints_map.map(|p| to_cam.apply(p));

    let not_visible = || WorldError::NotVisible(instructor_id.to_string());
    let pelvis = joints_cam.get(Joint::Pelvis);
    let pelvis_px = project(&pelvis, k).map_err(|_| not_visible())?;
    if !pixel_in_view(&pelvis_px, k, robot.fov_check_margin) {
        return Err(not_visible());
    }
    let pelvis_map = joints_map.get(Joint::Pelvis);
    if !world.grid.line_of_sight(&robot.pose.position(), &pelvis_map.xy()) {
        return Err(not_visible());
    }

    let mut noisy = joints_cam;
    for j in crate::world::Joint::ALL {
        let n = Vec3::new(normal(&mut rng.skeleton), normal(&mut rng.skeleton), normal(&mut rng.skeleton));
        noisy.set(j, joints_cam.get(j) + n * noise.joint_sigma);
    }
    let u: f64 = rng.skeleton.random();
    let [lo, hi] = noise.nonmetric_scale_range;
    let scale = lo + u * (hi - lo);
    let skeleton = SkeletonObservation {
        joints: noisy.map(|p| p * scale),
    };

    let head = gaze_observation(world, ins, &to_cam, &joints_cam, noise, rng);
    let detection = detect_person(&joints_map, &to_cam, k, noise, rng).ok_or_else(not_visible)?;
    Ok(PersonObservation {
        skeleton,
        head,
        detection,
    })
}

fn gaze_observation(
    world: &WorldModel,
    ins: &InstructorModel,
    to_cam: &Transform3,
    joints_cam: &JointSet,
    noise: &NoiseConfig,
    rng: &mut PerceptionRng,
) -> Option<HeadPoseObservation> {
    // draw unconditionally so later observations see the same stream
    let head_cam = joints_cam.get(Joint::Head);
    let target = ins.gaze_target.or(ins.point_target);
    let range = (ins.base.position() - world.robot.pose.position()).norm();
    let dir = target.map(|t| to_cam.apply(&t) - head_cam).filter(|d| d.norm() > 1e-9);
    let fallback = Vec3::z();
    let noisy = perturb_direction(&dir.map(|d| d.normalize()).unwrap_or(fallback), noise.gaze_sigma, &mut rng.gaze);
    if dir.is_none() || range > noise.gaze_max_range {
        return None;
    }
    Some(HeadPoseObservation { gaze_dir: noisy })
}

/// Person box from the projected skeleton and the floor contact under each ankle.
fn detect_person(
    joints_map: &JointSet,
    to_cam: &Transform3,
    k: &CameraIntrinsics,
    noise: &NoiseConfig,
    rng: &mut PerceptionRng,
) -> Option<PersonDetection> {
    let jitter: [f64; 4] = std::array::from_fn(|_| normal(&mut rng.bbox) * noise.bbox_sigma);
    let contacts: Vec<Vec2> = [Joint::LeftAnkle, Joint::RightAnkle]
        .iter()
        .filter_map(|&j| {
            let a = joints_map.get(j);
            project(&to_cam.apply(&Vec3::new(a.x, a.y, 0.0)), k).ok()
        })
        .collect();
    let body: Vec<Vec2> = joints_map
        .iter()
        .filter_map(|(_, p)| project(&to_cam.apply(&p), k).ok())
        .collect();
    if contacts.len() < 2 || body.is_empty() {
        return None;
    }
    let foot_visible = contacts.iter().all(|c| c.y < k.height as f64 && c.x >= 0.0 && c.x <= k.width as f64);
    let raw = PixelBox::from_points(body.iter().chain(contacts.iter()))?;
    let (w, h) = (raw.width(), raw.height());
    let padded = PixelBox {
        x_min: raw.x_min - BBOX_PAD * w + jitter[0],
        y_min: raw.y_min - BBOX_PAD * h + jitter[1],
        x_max: raw.x_max + BBOX_PAD * w + jitter[2],
        y_max: raw.y_max + jitter[3],
    };
    let ordered = PixelBox::from_points(&[
        Vec2::new(padded.x_min, padded.y_min),
        Vec2::new(padded.x_max, padded.y_max),
    ])?;
    let bbox = ordered.clip_to_image(k)?;
    Some(PersonDetection { bbox, foot_visible })
}

/// One annotated object as seen by the robot camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectView {
    pub object_id: String,
    /// Box clipped to the image.
    pub bbox: PixelBox,
    /// Projection of the near-plane-clipped object before image clipping.
    pub raw_bbox: PixelBox,
    /// Part of the object lies behind the near plane.
    pub near_clipped: bool,
    pub visible_fraction: f64,
}

impl ObjectView {
    /// The left, right and top edges of the object all lie inside the image.
    ///
    /// The bottom edge is not required: a level camera always loses the
    /// foot of a low object once it gets close.
    pub fn full_in_view(&self, k: &CameraIntrinsics) -> bool {
        !self.near_clipped && self.raw_bbox.x_min >= 0.0 && self.raw_bbox.x_max <= k.width as f64 && self.raw_bbox.y_min >= 0.0
    }
}

/// Object with its semantic annotation, as consumed by grounding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewEntry {
    #[serde(flatten)]
    pub view: ObjectView,
    pub class_label: String,
    pub attributes: Vec<String>,
}

const BOX_EDGES: [(usize, usize); 12] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (3, 0),
    (4, 5),
    (5, 6),
    (6, 7),
    (7, 4),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

/// Projection of a footprint extruded to `height`, or `None` when nothing is in front of the camera.
fn project_prism(fp: &Footprint, height: f64, to_cam: &Transform3, k: &CameraIntrinsics) -> Option<(PixelBox, bool)> {
    let corners: Vec<Vec3> = [0.0, height]
        .iter()
        .flat_map(|&z| fp.corners().map(|c| to_cam.apply(&Vec3::new(c.x, c.y, z))))
        .collect();
    let mut pts = Vec::with_capacity(16);
    let mut clipped = false;
    for c in &corners {
        if c.z >= NEAR_PLANE {
            pts.push(*c);
        } else {
            clipped = true;
        }
    }
    for &(a, b) in &BOX_EDGES {
        let (pa, pb) = (corners[a], corners[b]);
        if (pa.z - NEAR_PLANE) * (pb.z - NEAR_PLANE) < 0.0 {
            let t = (NEAR_PLANE - pa.z) / (pb.z - pa.z);
            pts.push(pa + (pb - pa) * t);
        }
    }
    let px: Vec<Vec2> = pts.iter().filter_map(|p| project(p, k).ok()).collect();
    PixelBox::from_points(&px).map(|b| (b, clipped))
}

/// Fraction of the five ground sample points with a clear grid line of sight.
fn occlusion_factor(grid: &OccupancyGrid, from: &Vec2, fp: &Footprint) -> f64 {
    let c = fp.centroid();
    let inset = |p: Vec2| p + (c - p) * 0.1;
    let samples = std::iter::once(c).chain(fp.corners().into_iter().map(inset));
    // cells overlapping the footprint belong to the target itself
    let gmin = grid.to_grid_units(&fp.min());
    let gmax = grid.to_grid_units(&fp.max());
    let (lo, hi) = (gmin.inf(&gmax), gmin.sup(&gmax));
    let own = |i: i64, j: i64| (i as f64) < hi.x && (i as f64 + 1.0) > lo.x && (j as f64) < hi.y && (j as f64 + 1.0) > lo.y;
    let mut clear = 0;
    for s in samples {
        let d = s - from;
        let mut blocked = false;
        grid.traverse(from, &d, d.norm() - 1e-9, |i, j, _| {
            if !own(i, j) && !grid.is_free(i, j) {
                blocked = true;
                return true;
            }
            false
        });
        if !blocked {
            clear += 1;
        }
    }
    clear as f64 / 5.0
}

fn view_of(world: &WorldModel, pose: &Pose2, id: &str, fp: &Footprint, height: f64) -> Option<ObjectView> {
    let k = &world.robot.intrinsics;
    let to_cam = map_to_camera(world, pose);
    let (raw, near_clipped) = project_prism(fp, height, &to_cam, k)?;
    let bbox = raw.clip_to_image(k)?;
    let area_ratio = if raw.area() > 0.0 { bbox.area() / raw.area() } else { 0.0 };
    let vis = area_ratio * occlusion_factor(&world.grid, &pose.position(), fp);
    (vis > 0.0).then(|| ObjectView {
        object_id: id.to_string(),
        bbox,
        raw_bbox: raw,
        near_clipped,
        visible_fraction: vis.clamp(0.0, 1.0),
    })
}

/// Annotation boxes of all static objects visible from `robot_pose`.
pub fn render_object_boxes(world: &WorldModel, robot_pose: &Pose2) -> Vec<ObjectView> {
    world
        .objects
        .iter()
        .filter_map(|o| view_of(world, robot_pose, &o.id, &o.footprint, o.height))
        .collect()
}

/// Objects plus instructors (as class "person"), skipping `exclude_instructor`.
pub fn observe_scene(world: &WorldModel, robot_pose: &Pose2, exclude_instructor: Option<&str>) -> Vec<ViewEntry> {
    let objects = world.objects.iter().filter_map(|o| {
        view_of(world, robot_pose, &o.id, &o.footprint, o.height).map(|view| ViewEntry {
            view,
            class_label: o.class_label.clone(),
            attributes: o.attributes.iter().cloned().collect(),
        })
    });
    let people = world
        .instructors
        .iter()
        .filter(|i| Some(i.id.as_str()) != exclude_instructor)
        .filter_map(|i| {
            view_of(world, robot_pose, &i.id, &i.footprint(), i.stature).map(|view| ViewEntry {
                view,
                class_label: "person".into(),
                attributes: Vec::new(),
            })
        });
    objects.chain(people).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::navigation::Cell;
    use crate::world::{RobotState, SimObject};
    use approx::assert_abs_diff_eq;
    use std::collections::BTreeSet;

    fn empty_world(objects: Vec<SimObject>, instructors: Vec<InstructorModel>) -> WorldModel {
        let g = OccupancyGrid::new(200, 200, 0.05, Pose2::new(0.0, 0.0, 0.0), Cell::Free);
        WorldModel::new(g, objects, instructors, RobotState::new(Pose2::new(1.0, 5.0, 0.0)), 1).unwrap()
    }

    fn obj(id: &str, min: (f64, f64), max: (f64, f64)) -> SimObject {
        SimObject {
            id: id.into(),
            class_label: "chair".into(),
            attributes: BTreeSet::new(),
            footprint: Footprint::new(Vec2::new(min.0, min.1), Vec2::new(max.0, max.1)),
            height: 0.8,
        }
    }

    #[test]
    fn zero_noise_returns_true_joints() {
        let mut ins = InstructorModel::new("a", Pose2::new(5.0, 5.2, std::f64::consts::PI), 1.75);
        ins.point_target = Some(Vec3::new(6.0, 8.0, 0.4));
        let w = empty_world(vec![], vec![ins.clone()]);
        let obs = observe_person(&w, "a", &NoiseConfig::zero(), &mut PerceptionRng::new(3)).unwrap();
        let to_cam = map_to_camera(&w, &w.robot.pose);
        for (j, p) in ins.joints().iter() {
            assert_abs_diff_eq!(obs.skeleton.get(j), to_cam.apply(&p), epsilon = 1e-9);
        }
        assert!(obs.detection.foot_visible);
        assert!(obs.head.is_some());
    }

    #[test]
    fn close_instructor_has_feet_cut_off() {
        let ins = InstructorModel::new("a", Pose2::new(2.9, 5.0, std::f64::consts::PI), 1.75);
        let w = empty_world(vec![], vec![ins]);
        let obs = observe_person(&w, "a", &NoiseConfig::zero(), &mut PerceptionRng::new(3)).unwrap();
        assert!(!obs.detection.foot_visible);
        assert_abs_diff_eq!(obs.detection.bbox.y_max, 480.0);
    }

    #[test]
    fn wall_occludes_instructor() {
        let ins = InstructorModel::new("a", Pose2::new(6.0, 5.0, std::f64::consts::PI), 1.75);
        let mut w = empty_world(vec![], vec![ins]);
        w.grid.fill_rect(Vec2::new(3.0, 0.0), Vec2::new(3.2, 10.0), Cell::Occupied);
        assert_eq!(
            observe_person(&w, "a", &NoiseConfig::default(), &mut PerceptionRng::new(3)),
            Err(WorldError::NotVisible("a".into()))
        );
    }

    #[test]
    fn streams_are_independent_of_other_sigmas() {
        let mut ins = InstructorModel::new("a", Pose2::new(5.0, 5.2, std::f64::consts::PI), 1.75);
        ins.point_target = Some(Vec3::new(6.0, 8.0, 0.4));
        let w = empty_world(vec![], vec![ins]);
        let mut a = NoiseConfig::default();
        let mut b = a;
        b.bbox_sigma = 0.0;
        b.gaze_sigma = 0.0;
        let oa = observe_person(&w, "a", &a, &mut PerceptionRng::new(9)).unwrap();
        let ob = observe_person(&w, "a", &b, &mut PerceptionRng::new(9)).unwrap();
        assert_eq!(oa.skeleton, ob.skeleton);
        a.joint_sigma = 0.0;
        let oc = observe_person(&w, "a", &a, &mut PerceptionRng::new(9)).unwrap();
        assert_eq!(oa.detection, oc.detection);
        assert_eq!(oa.head, oc.head);
    }

    #[test]
    fn centred_object_fully_visible() {
        // wide lens so the floor is in view from 1.25 m
        let mut w = empty_world(vec![obj("c", (2.8, 4.8), (3.2, 5.2))], vec![]);
        w.robot.intrinsics = CameraIntrinsics::new(300.0, 300.0, 320.0, 240.0, 640, 480).unwrap();
        let v = render_object_boxes(&w, &w.robot.pose);
        assert_eq!(v.len(), 1);
        assert_abs_diff_eq!(v[0].visible_fraction, 1.0, epsilon = 1e-6);
        assert!(v[0].full_in_view(&w.robot.intrinsics));
    }

    #[test]
    fn object_behind_camera_excluded() {
        let w = empty_world(vec![obj("c", (0.1, 4.8), (0.5, 5.2))], vec![]);
        assert!(render_object_boxes(&w, &w.robot.pose).is_empty());
    }

    #[test]
    fn half_outside_image_is_about_half_visible() {
        // the right image edge at depth 2 m lies 2*320/500 = 1.28 m to the right
        let w = empty_world(vec![obj("c", (2.9, 5.0 - 1.28 - 0.2), (3.1, 5.0 - 1.28 + 0.2))], vec![]);
        let v = render_object_boxes(&w, &w.robot.pose);
        assert_eq!(v.len(), 1);
        assert!((v[0].visible_fraction - 0.5).abs() < 0.1, "{}", v[0].visible_fraction);
    }

    #[test]
    fn occluder_reduces_visibility() {
        let mut w = empty_world(vec![obj("c", (4.8, 4.8), (5.2, 5.2))], vec![]);
        let before = render_object_boxes(&w, &w.robot.pose)[0].visible_fraction;
        w.grid.fill_rect(Vec2::new(3.0, 3.0), Vec2::new(3.2, 7.0), Cell::Occupied);
        assert_abs_diff_eq!(before, 1.0, epsilon = 1e-9);
        assert!(render_object_boxes(&w, &w.robot.pose).is_empty());
    }

    #[test]
    fn scene_includes_people_except_excluded() {
        let a = InstructorModel::new("a", Pose2::new(5.0, 5.5, 0.0), 1.75);
        let b = InstructorModel::new("b", Pose2::new(6.0, 4.5, 0.0), 1.75);
        let w = empty_world(vec![], vec![a, b]);
        let s = observe_scene(&w, &w.robot.pose, Some("a"));
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].view.object_id, "b");
        assert_eq!(s[0].class_label, "person");
    }
}
