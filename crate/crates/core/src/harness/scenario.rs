//! Scenario files: JSON documents describing one reproducible setup.

use std::path::{Path as FsPath, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, Pose2, Vec2, Vec3};
use crate::navigation::{Cell, OccupancyGrid};
use crate::pipeline::{CommandEvent, PipelineConfig};
use crate::world::{inject_gesture, Footprint, InstructorModel, NoiseConfig, RobotState, SimObject, WorldModel};

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {msg}")]
    Parse { line: usize, column: usize, msg: String },
    #[error("invalid scenario:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),
}

/// Axis-aligned rectangle in map coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RectSpec {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

/// A map drawn in the scenario file itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineMap {
    pub resolution: f64,
    #[serde(default)]
    pub origin: [f64; 2],
    /// Map size in metres; required unless `rows` is given.
    #[serde(default)]
    pub size: Option<[f64; 2]>,
    /// Occupied rectangles.
    #[serde(default)]
    pub walls: Vec<RectSpec>,
    /// Character raster, first row at the top: `#` occupied, `?` unknown, anything else free.
    #[serde(default)]
    pub rows: Option<Vec<String>>,
    /// Surround the map with a one-cell wall.
    #[serde(default = "yes")]
    pub border: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MapSpec {
    Inline(InlineMap),
    /// PGM image plus YAML sidecar, relative to the scenario file.
    Files { pgm: PathBuf, yaml: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    /// `[x, y, theta]`.
    pub pose: [f64; 3],
    #[serde(default = "default_camera_height")]
    pub camera_height: f64,
    #[serde(default)]
    pub intrinsics: CameraIntrinsics,
    #[serde(default = "default_radius")]
    pub radius: f64,
}

fn default_camera_height() -> f64 {
    1.0
}

fn default_radius() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub id: String,
    pub class: String,
    #[serde(default)]
    pub attributes: Vec<String>,
    pub center: [f64; 2],
    pub size: [f64; 2],
    pub height: f64,
}

/// What an instructor points at: a map point or the centre of an object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PointAt {
    Point([f64; 3]),
    Object(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstructorSpec {
    pub id: String,
    pub pose: [f64; 3],
    #[serde(default = "default_stature")]
    pub stature: f64,
    #[serde(default)]
    pub point_at: Option<PointAt>,
    /// Defaults to the pointing target.
    #[serde(default)]
    pub gaze_at: Option<PointAt>,
}

fn default_stature() -> f64 {
    1.75
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub map: MapSpec,
    pub robot: RobotSpec,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub instructors: Vec<InstructorSpec>,
    #[serde(default)]
    pub commands: Vec<CommandEvent>,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub expected_target: Option<String>,
    #[serde(default = "default_budget")]
    pub step_budget: u64,
    /// Success radius around the expected target centroid, metres.
    #[serde(default = "default_success_radius")]
    pub success_radius: f64,
    /// Directory the scenario was loaded from; file map paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_budget() -> u64 {
    10_000
}

fn default_success_radius() -> f64 {
    1.0
}

fn parse_error(e: serde_json::Error) -> ScenarioError {
    ScenarioError::Parse {
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    }
}

impl ScenarioSpec {
    /// Parses and validates a scenario document. File paths resolve against `base_dir`.
    pub fn from_json(text: &str, base_dir: &FsPath) -> Result<Self, ScenarioError> {
        let mut spec: ScenarioSpec = serde_json::from_str(text).map_err(parse_error)?;
        spec.base_dir = base_dir.to_path_buf();
        spec.validate()?;
        Ok(spec)
    }

    /// Canonical JSON, with every default filled in.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            noise: self.noise,
            step_budget: self.step_budget,
            ..Default::default()
        }
    }

    /// Checks everything that can be checked and reports all violations at once.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut errs = Vec::new();
        if self.schema_version != SCENARIO_SCHEMA_VERSION {
            errs.push(format!(
                "schema_version {} is not supported (expected {SCENARIO_SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if let Err(e) = self.noise.validate() {
            errs.push(format!("noise: {e}"));
        }
        if self.step_budget == 0 {
            errs.push("step_budget must be positive".into());
        }
        if !(self.success_radius > 0.0) {
            errs.push("success_radius must be positive".into());
        }
        if let Some(t) = &self.expected_target {
            if !self.objects.iter().any(|o| &o.id == t) {
                errs.push(format!("expected_target '{t}' is not among the objects"));
            }
        }
        for (k, c) in self.commands.iter().enumerate() {
            if c.utterance.trim().is_empty() {
                errs.push(format!("commands[{k}]: utterance is empty"));
            }
            if !self.instructors.iter().any(|i| i.id == c.instructor_id) {
                errs.push(format!("commands[{k}]: unknown instructor '{}'", c.instructor_id));
            }
            if !(c.time >= 0.0 && c.time.is_finite()) {
                errs.push(format!("commands[{k}]: time must be >= 0"));
            }
        }
        for (k, o) in self.objects.iter().enumerate() {
            if !(o.size[0] > 0.0 && o.size[1] > 0.0) {
                errs.push(format!("objects[{k}] '{}': size must be positive", o.id));
            }
        }
        for ins in &self.instructors {
            for p in [&ins.point_at, &ins.gaze_at].into_iter().flatten() {
                if let PointAt::Object(id) = p {
                    if !self.objects.iter().any(|o| &o.id == id) {
                        errs.push(format!("instructor '{}' points at unknown object '{id}'", ins.id));
                    }
                }
            }
        }
        if let MapSpec::Files { pgm, yaml } = &self.map {
            for p in [pgm, yaml] {
                let full = self.base_dir.join(p);
                if !full.is_file() {
                    errs.push(format!("map file {} does not exist", full.display()));
                }
            }
        }
        if let MapSpec::Inline(m) = &self.map {
            if !(m.resolution > 0.0) {
                errs.push("map.inline.resolution must be positive".into());
            }
            if m.size.is_none() && m.rows.is_none() {
                errs.push("map.inline needs `size` or `rows`".into());
            }
            if let Some(rows) = &m.rows {
                if rows.is_empty() || rows.iter().any(|r| r.chars().count() != rows[0].chars().count()) {
                    errs.push("map.inline.rows must be non-empty and of equal length".into());
                }
            }
        }
        if errs.is_empty() {
            if let Err(e) = self.build_world(self.seed) {
                match e {
                    ScenarioError::Validation(v) => errs.extend(v),
                    other => errs.push(other.to_string()),
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Validation(errs))
        }
    }

    pub fn build_grid(&self) -> Result<OccupancyGrid, ScenarioError> {
        match &self.map {
            MapSpec::Files { pgm, yaml } => OccupancyGrid::load(&self.base_dir.join(pgm), &self.base_dir.join(yaml))
                .map_err(|e| ScenarioError::Validation(vec![format!("map: {e}")])),
            MapSpec::Inline(m) => {
                let origin = Pose2::new(m.origin[0], m.origin[1], 0.0);
                let mut g = match (&m.rows, m.size) {
                    (Some(rows), _) => {
                        let h = rows.len();
                        let w = rows[0].chars().count();
                        let mut cells = vec![Cell::Free; w * h];
                        for (r, line) in rows.iter().enumerate() {
                            let j = h - 1 - r;
                            for (i, ch) in line.chars().enumerate() {
                                cells[j * w + i] = match ch {
                                    '#' => Cell::Occupied,
                                    '?' => Cell::Unknown,
                                    _ => Cell::Free,
                                };
                            }
                        }
                        OccupancyGrid::from_cells(w, h, m.resolution, origin, cells)
                    }
                    (None, Some([sx, sy])) => {
                        let w = (sx / m.resolution).round() as usize;
                        let h = (sy / m.resolution).round() as usize;
                        OccupancyGrid::new(w, h, m.resolution, origin, Cell::Free)
                    }
                    (None, None) => return Err(ScenarioError::Validation(vec!["map.inline needs `size` or `rows`".into()])),
                };
                for r in &m.walls {
                    g.fill_rect(Vec2::new(r.min[0], r.min[1]), Vec2::new(r.max[0], r.max[1]), Cell::Occupied);
                }
                if m.border {
                    let (w, h) = (g.width(), g.height());
                    for i in 0..w {
                        g.set(i, 0, Cell::Occupied);
                        g.set(i, h - 1, Cell::Occupied);
                    }
                    for j in 0..h {
                        g.set(0, j, Cell::Occupied);
                        g.set(w - 1, j, Cell::Occupied);
                    }
                }
                Ok(g)
            }
        }
    }

    fn object_point(&self, p: &PointAt) -> Vec3 {
        match p {
            PointAt::Point([x, y, z]) => Vec3::new(*x, *y, *z),
            PointAt::Object(id) => {
                let o = self.objects.iter().find(|o| &o.id == id).expect("validated object reference");
                Vec3::new(o.center[0], o.center[1], 0.5 * o.height)
            }
        }
    }

    /// Builds the world with instructors posed as scripted.
    pub fn build_world(&self, seed: u64) -> Result<WorldModel, ScenarioError> {
        let grid = self.build_grid()?;
        let objects = self
            .objects
            .iter()
            .map(|o| {
                let c = Vec2::new(o.center[0], o.center[1]);
                let half = Vec2::new(0.5 * o.size[0], 0.5 * o.size[1]);
                SimObject {
                    id: o.id.clone(),
                    class_label: o.class.clone(),
                    attributes: o.attributes.iter().cloned().collect(),
                    footprint: Footprint::new(c - half, c + half),
                    height: o.height,
                }
            })
            .collect();
        let instructors = self
            .instructors
            .iter()
            .map(|i| InstructorModel::new(i.id.clone(), Pose2::new(i.pose[0], i.pose[1], i.pose[2]), i.stature))
            .collect();
        let mut robot = RobotState::new(Pose2::new(self.robot.pose[0], self.robot.pose[1], self.robot.pose[2]));
        robot.camera_height = self.robot.camera_height;
        robot.intrinsics = self.robot.intrinsics;
        robot.radius = self.robot.radius;
        let mut world = WorldModel::new(grid, objects, instructors, robot, seed).map_err(ScenarioError::Validation)?;
        let mut errs = Vec::new();
        for spec in &self.instructors {
            if let Some(p) = &spec.point_at {
                match inject_gesture(&world, &spec.id, self.object_point(p)) {
                    Ok(mut m) => {
                        if let Some(g) = &spec.gaze_at {
                            m.gaze_target = Some(self.object_point(g));
                        }
                        *world.instructor_mut(&spec.id).expect("instructor exists") = m;
                    }
                    Err(e) => errs.push(format!("instructor '{}': {e}", spec.id)),
                }
            } else if let Some(g) = &spec.gaze_at {
                world.instructor_mut(&spec.id).expect("instructor exists").gaze_target = Some(self.object_point(g));
            }
        }
        if errs.is_empty() {
            Ok(world)
        } else {
            Err(ScenarioError::Validation(errs))
        }
    }
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: &FsPath) -> Result<ScenarioSpec, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let base = path.parent().unwrap_or_else(|| FsPath::new("."));
    ScenarioSpec::from_json(&text, base)
}
