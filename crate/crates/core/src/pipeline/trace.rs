//! Line-delimited JSON episode traces and kinematic replay.

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::machine::PipelineConfig;
use super::state::{PipelineState, StopReason};
use crate::geometry::Pose2;
use crate::grounding::{CandidateOffset, GroundingProposal, Phrase};
use crate::navigation::OccupancyGrid;
use crate::pointing::PointingEstimate;
use crate::world::{step_robot, DriveCommand, InstructorModel, RobotState, SimObject, WorldModel};

pub const TRACE_SCHEMA_VERSION: u32 = 1;

fn is_false(b: &bool) -> bool {
    !*b
}

/// Optional payload of a step record.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StepDetail {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instructor: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phrase: Option<Phrase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pointing: Option<PointingEstimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaze_degraded: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<Pose2>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<Vec<Pose2>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposals: Option<Vec<GroundingProposal>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen: Option<GroundingProposal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<CandidateOffset>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_reason: Option<StopReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl StepDetail {
    pub fn is_empty(&self) -> bool {
        *self == StepDetail::default()
    }
}

/// Map embedded in the trace header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedMap {
    pub resolution: f64,
    pub origin: Pose2,
    pub width: usize,
    pub height: usize,
    pub digest: String,
    pub pgm_base64: String,
}

impl EmbeddedMap {
    pub fn from_grid(g: &OccupancyGrid) -> Self {
        Self {
            resolution: g.resolution(),
            origin: g.origin(),
            width: g.width(),
            height: g.height(),
            digest: g.digest(),
            pgm_base64: base64::engine::general_purpose::STANDARD.encode(g.to_pgm_bytes()),
        }
    }

    pub fn to_grid(&self) -> Result<OccupancyGrid, TraceError> {
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(&self.pgm_base64)
            .map_err(|e| TraceError::Map(e.to_string()))?;
        OccupancyGrid::from_pgm_bytes(&bytes, self.resolution, self.origin).map_err(|e| TraceError::Map(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub config: PipelineConfig,
    pub map: EmbeddedMap,
    pub robot: RobotState,
    pub objects: Vec<SimObject>,
    pub instructors: Vec<InstructorModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_target: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub step: u64,
    /// State the machine was in during this tick.
    pub state: PipelineState,
    /// Robot pose after the tick's command was applied.
    pub pose: Pose2,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<DriveCommand>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub blocked: bool,
    #[serde(flatten)]
    pub detail: StepDetail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Robot distance to the target object's centroid at the end, metres.
    pub final_distance: Option<f64>,
    /// Last pointing azimuth against the bearing to the instructor's true target, radians.
    pub azimuth_error: Option<f64>,
    pub steps: u64,
    pub sim_time: f64,
    pub invocations: u32,
    pub gaze_degraded: bool,
    pub target_in_view: bool,
    pub chosen: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalRecord {
    pub t: f64,
    pub step: u64,
    pub outcome: PipelineState,
    pub pose: Pose2,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_reason: Option<StopReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_detail: Option<String>,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceLine {
    Header(TraceHeader),
    Step(StepRecord),
    Terminal(TerminalRecord),
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("trace structure: {0}")]
    Structure(String),
    #[error("embedded map: {0}")]
    Map(String),
    #[error("replay diverged at step {step}: {msg}")]
    Diverged { step: u64, msg: String },
}

/// A complete episode: header, step records, one terminal record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub header: TraceHeader,
    pub steps: Vec<StepRecord>,
    pub terminal: TerminalRecord,
}

impl EpisodeTrace {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |l: TraceLine| {
            out.push_str(&serde_json::to_string(&l).expect("trace records serialize"));
            out.push('\n');
        };
        push(TraceLine::Header(self.header.clone()));
        for s in &self.steps {
            push(TraceLine::Step(s.clone()));
        }
        push(TraceLine::Terminal(self.terminal.clone()));
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TraceError> {
        let mut header = None;
        let mut steps = Vec::new();
        let mut terminal = None;
        for (i, l) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let line: TraceLine = serde_json::from_str(l).map_err(|e| TraceError::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            match line {
                TraceLine::Header(h) if header.is_none() && steps.is_empty() => header = Some(h),
                TraceLine::Step(s) if header.is_some() && terminal.is_none() => steps.push(s),
                TraceLine::Terminal(t) if header.is_some() && terminal.is_none() => terminal = Some(t),
                _ => return Err(TraceError::Structure(format!("unexpected record on line {}", i + 1))),
            }
        }
        Ok(Self {
            header: header.ok_or_else(|| TraceError::Structure("missing header".into()))?,
            steps,
            terminal: terminal.ok_or_else(|| TraceError::Structure("missing terminal record".into()))?,
        })
    }

    /// The state sequence with consecutive repeats collapsed, ending with the outcome.
    pub fn state_sequence(&self) -> Vec<PipelineState> {
        let mut v: Vec<PipelineState> = Vec::new();
        for s in self.steps.iter().map(|s| s.state).chain(std::iter::once(self.terminal.outcome)) {
            if v.last() != Some(&s) {
                v.push(s);
            }
        }
        v
    }

    /// Number of ticks spent estimating pointing (one per accepted command).
    pub fn pointing_invocations(&self) -> usize {
        self.steps.iter().filter(|s| s.state == PipelineState::EstimatingPointing).count()
    }
}

/// Summary of a successful replay.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub commands: usize,
    pub states: Vec<PipelineState>,
    pub final_pose: Pose2,
}

/// Re-integrates every recorded command on the embedded map and checks the
/// recorded poses, timestamps and state transitions. No randomness is used.
pub fn replay(trace: &EpisodeTrace) -> Result<ReplayReport, TraceError> {
    let h = &trace.header;
    if h.schema_version != TRACE_SCHEMA_VERSION {
        return Err(TraceError::Structure(format!("unsupported schema_version {}", h.schema_version)));
    }
    let grid = h.map.to_grid()?;
    if grid.digest() != h.map.digest {
        return Err(TraceError::Map("digest mismatch".into()));
    }
    let mut world = WorldModel {
        grid,
        objects: Vec::new(),
        instructors: Vec::new(),
        robot: h.robot,
        seed: h.seed,
    };
    let mut last_t = f64::NEG_INFINITY;
    let mut last_step = None;
    let mut prev_state: Option<PipelineState> = None;
    let mut commands = 0;
    const TOL: f64 = 1e-9;
    for r in &trace.steps {
        let diverged = |msg: String| TraceError::Diverged { step: r.step, msg };
        if r.t < last_t || last_step.is_some_and(|s| r.step <= s) {
            return Err(diverged("timestamps or step counters go backwards".into()));
        }
        if let Some(p) = prev_state {
            if !p.can_transition_to(&r.state) {
                return Err(diverged(format!("illegal transition {p} -> {}", r.state)));
            }
        }
        if let Some(c) = r.command {
            let (next, out) = step_robot(&world, c.v, c.w, c.dt);
            if out.blocked != r.blocked {
                return Err(diverged("blocked flag differs".into()));
            }
            world = next;
            commands += 1;
        }
        let p = world.robot.pose;
        if (p.x - r.pose.x).abs() > TOL || (p.y - r.pose.y).abs() > TOL || crate::geometry::angle_diff(p.theta, r.pose.theta) > TOL {
            return Err(diverged(format!("pose ({:.6}, {:.6}, {:.6}) recorded as ({:.6}, {:.6}, {:.6})", p.x, p.y, p.theta, r.pose.x, r.pose.y, r.pose.theta)));
        }
        last_t = r.t;
        last_step = Some(r.step);
        prev_state = Some(r.state);
    }
    let t = &trace.terminal;
    if let Some(p) = prev_state {
        if !p.can_transition_to(&t.outcome) && p != t.outcome {
            return Err(TraceError::Diverged {
                step: t.step,
                msg: format!("illegal final transition {p} -> {}", t.outcome),
            });
        }
    }
    Ok(ReplayReport {
        commands,
        states: trace.state_sequence(),
        final_pose: world.robot.pose,
    })
}
