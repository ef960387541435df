//! The behaviour state machine, final approach, episodes and traces.

pub mod approach;
pub mod episode;
pub mod machine;
pub mod state;
pub mod trace;

pub use approach::{
    approach_decision, final_approach, intermediate_goal, referral_pose, segment_path, ApproachConfig, ApproachDecision, ApproachError,
    ApproachRun,
};
pub use episode::{Episode, EpisodeOptions};
pub use machine::{planning_grid, run_step, ApproachState, CommandEvent, Context, MachineState, PipelineConfig, StepOutput};
pub use state::{FailureReason, PipelineState, StopReason};
pub use trace::{
    replay, EmbeddedMap, EpisodeTrace, Metrics, ReplayReport, StepDetail, StepRecord, TerminalRecord, TraceError, TraceHeader, TraceLine,
    TRACE_SCHEMA_VERSION,
};
