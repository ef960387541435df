//! Wire messages. Every frame is one JSON document with a `type` tag and the protocol version.

use serde::{Deserialize, Serialize};

use deixis_core::geometry::{PixelBox, Pose2};
use deixis_core::pipeline::PipelineState;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepAction {
    Play,
    Pause,
    Step,
    Rate,
}

/// Client to server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientBody {
    /// Either a shipped scenario by name or a full scenario document.
    LoadScenario {
        #[serde(default)]
        name: Option<String>,
        #[serde(default)]
        spec: Option<serde_json::Value>,
    },
    PlaceInstructor {
        instructor_id: String,
        pose: Pose2,
    },
    /// `target` is `[x, y]` or `[x, y, z]` in map metres.
    PointGesture {
        instructor_id: String,
        target: Vec<f64>,
    },
    Utter {
        instructor_id: String,
        text: String,
    },
    StepControl {
        action: StepAction,
        /// Control ticks per broadcast tick, for `rate`.
        #[serde(default)]
        rate: Option<f64>,
    },
    Reset {
        #[serde(default)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientMessage {
    pub protocol_version: u32,
    pub seq: u64,
    #[serde(flatten)]
    pub body: ClientBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapInfo {
    pub scenario: String,
    pub digest: String,
    pub resolution: f64,
    pub origin: Pose2,
    pub width: usize,
    pub height: usize,
    pub pgm_base64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructorView {
    pub id: String,
    pub pose: Pose2,
    pub point_target: Option<[f64; 3]>,
}

/// A ray drawn on the floor plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundRay {
    pub origin: [f64; 2],
    pub azimuth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaysView {
    pub instructor_id: String,
    pub body: GroundRay,
    pub gaze: Option<GroundRay>,
    pub fused: GroundRay,
    pub gaze_degraded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxView {
    pub object_id: String,
    pub class_label: String,
    pub bbox: PixelBox,
    pub visible_fraction: f64,
    /// Grounding score, once the pipeline has scored this object.
    pub score: Option<f64>,
    pub chosen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub scenario: String,
    pub seed: u64,
    pub sim_time: f64,
    pub step: u64,
    pub playing: bool,
    pub rate: f64,
    pub robot: Pose2,
    pub path: Vec<Pose2>,
    pub intermediate_goal: Option<Pose2>,
    pub state: PipelineState,
    /// Failure detail or stop reason.
    pub reason: Option<String>,
    pub instructors: Vec<InstructorView>,
    pub rays: Option<RaysView>,
    pub boxes: Vec<BoxView>,
    /// Trace lines produced since the previous snapshot.
    pub records: Vec<serde_json::Value>,
    pub map_digest: String,
}

/// Server to client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerBody {
    Map(MapInfo),
    Snapshot(Box<StateSnapshot>),
    Ack { client_seq: u64 },
    Error {
        client_seq: Option<u64>,
        code: String,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerMessage {
    pub protocol_version: u32,
    pub seq: u64,
    #[serde(flatten)]
    pub body: ServerBody,
}
