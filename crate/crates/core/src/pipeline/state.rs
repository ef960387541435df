//! Pipeline states and terminal reasons.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FailureReason {
    FootNotVisible,
    NoPointingArm,
    DegenerateHorizon,
    GroundingNotFound,
    NoPath,
    Stuck,
    NoCandidates,
    DegenerateFusion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PipelineState {
    Idle,
    AwaitingCommand,
    EstimatingPointing,
    NavigatingIntermediate,
    Grounding,
    ApproachingFinal,
    SeekingReferredPerson,
    Done,
    Failed(FailureReason),
}

impl PipelineState {
    pub fn is_terminal(&self) -> bool {
        matches!(self, PipelineState::Done | PipelineState::Failed(_))
    }

    /// Whether `self → next` is an edge of the transition table.
    pub fn can_transition_to(&self, next: &PipelineState) -> bool {
        use PipelineState::*;
        if self == next {
            return !self.is_terminal();
        }
        match (self, next) {
            (Idle, AwaitingCommand) => true,
            (AwaitingCommand, EstimatingPointing) => true,
            (AwaitingCommand, Failed(FailureReason::GroundingNotFound)) => true,
            (EstimatingPointing, NavigatingIntermediate) => true,
            (EstimatingPointing, Failed(_)) => true,
            (NavigatingIntermediate, Grounding) => true,
            (NavigatingIntermediate, Failed(FailureReason::Stuck)) => true,
            (Grounding, ApproachingFinal | SeekingReferredPerson) => true,
            (Grounding, Failed(_)) => true,
            (ApproachingFinal, Done) => true,
            (SeekingReferredPerson, AwaitingCommand) => true,
            (SeekingReferredPerson, Failed(_)) => true,
            // step budget exhaustion can end any live state
            (s, Failed(FailureReason::Stuck)) => !s.is_terminal(),
            _ => false,
        }
    }
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl fmt::Display for PipelineState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PipelineState::Failed(r) => write!(f, "Failed({r})"),
            s => fmt::Debug::fmt(s, f),
        }
    }
}

/// Why the final approach stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StopReason {
    ObjectReached,
    NoNavigableSpace,
    OutOfView,
}
