//! The pure transition function driving one pipeline tick.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::approach::{approach_decision, intermediate_goal, referral_pose, segment_path, ApproachConfig, ApproachDecision, ApproachError};
use super::state::{FailureReason, PipelineState, StopReason};
use super::trace::StepDetail;
use crate::geometry::{Pose2, Vec2};
use crate::grounding::{disambiguate, ground, parse_phrase, GroundingError, Lexicon, Phrase, DEFAULT_THRESHOLD};
use crate::navigation::{inflation_radius, plan_inflated, Cell, FollowConfig, FollowStep, Follower, OccupancyGrid, PlanError};
use crate::pointing::{estimate_pointing, PointingConfig, PointingError};
use crate::world::{observe_person, observe_scene, DriveCommand, NoiseConfig, PerceptionRng, WorldError, WorldModel};

/// A spoken command attributed to one instructor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandEvent {
    pub instructor_id: String,
    pub utterance: String,
    /// Simulated time at which the command is spoken, seconds.
    #[serde(default)]
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub noise: NoiseConfig,
    pub pointing: PointingConfig,
    pub approach: ApproachConfig,
    pub follow: FollowConfig,
    /// Presence threshold on grounding scores.
    pub threshold: f64,
    /// Control period, seconds.
    pub dt: f64,
    pub step_budget: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            noise: NoiseConfig::default(),
            pointing: PointingConfig::default(),
            approach: ApproachConfig::default(),
            follow: FollowConfig::default(),
            threshold: DEFAULT_THRESHOLD,
            dt: 0.1,
            step_budget: 10_000,
        }
    }
}

/// Final-approach bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproachState {
    pub target_id: String,
    pub azimuth: f64,
    pub follower: Option<Follower>,
    pub segments: u32,
}

/// Data carried between ticks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Context {
    pub active_instructor: Option<String>,
    pub phrase: Option<Phrase>,
    pub pointing: Option<crate::pointing::PointingEstimate>,
    pub intermediate_goal: Option<Pose2>,
    pub follower: Option<Follower>,
    pub chosen: Option<crate::grounding::GroundingProposal>,
    pub approach: Option<ApproachState>,
    pub referred: Option<String>,
    /// Number of commands accepted so far.
    pub invocations: u32,
    pub gaze_degraded: bool,
    pub stop_reason: Option<StopReason>,
    pub failure_detail: Option<String>,
}

/// Everything the transition function reads besides the world.
#[derive(Debug, Clone)]
pub struct MachineState {
    pub state: PipelineState,
    pub ctx: Context,
    pub rng: PerceptionRng,
    pub cfg: Arc<PipelineConfig>,
    pub lexicon: Arc<Lexicon>,
    /// Inflated grid with instructors stamped in.
    pub planning_grid: Arc<OccupancyGrid>,
}

/// Obstacle grid the planner uses: the world map plus standing people, inflated for the robot.
pub fn planning_grid(world: &WorldModel) -> OccupancyGrid {
    let mut g = world.grid.clone();
    for i in &world.instructors {
        let f = i.footprint();
        g.fill_rect(f.min(), f.max(), Cell::Occupied);
    }
    g.inflate(inflation_radius(&g, world.robot.radius))
}

impl MachineState {
    pub fn new(world: &WorldModel, cfg: PipelineConfig, lexicon: Arc<Lexicon>) -> Self {
        let mut cfg = cfg;
        cfg.follow.dt = cfg.dt;
        cfg.follow.reach_tol = 0.5 * world.grid.resolution();
        Self {
            state: PipelineState::Idle,
            ctx: Context::default(),
            rng: PerceptionRng::new(world.seed),
            cfg: Arc::new(cfg),
            lexicon,
            planning_grid: Arc::new(planning_grid(world)),
        }
    }

    /// Recomputes the planning grid after people moved.
    pub fn refresh_planning_grid(&mut self, world: &WorldModel) {
        self.planning_grid = Arc::new(planning_grid(world));
    }
}

/// Result of one tick.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub next: MachineState,
    pub action: Option<DriveCommand>,
    pub detail: StepDetail,
    pub consumed_event: bool,
}

fn fail(mut m: MachineState, reason: FailureReason, detail: impl Into<String>) -> (MachineState, StepDetail) {
    let detail = detail.into();
    m.state = PipelineState::Failed(reason);
    m.ctx.failure_detail = Some(detail.clone());
    (
        m,
        StepDetail {
            note: Some(detail),
            ..Default::default()
        },
    )
}

fn pointing_reason(e: &PointingError) -> FailureReason {
    match e {
        PointingError::FootNotVisible => FailureReason::FootNotVisible,
        PointingError::DegenerateHorizon | PointingError::FootAboveHorizon => FailureReason::DegenerateHorizon,
        PointingError::DegenerateSkeleton | PointingError::NoPointingArm | PointingError::VerticalRay => FailureReason::NoPointingArm,
        PointingError::DegenerateFusion => FailureReason::DegenerateFusion,
    }
}

fn world_reason(_: &WorldError) -> FailureReason {
    // an instructor the camera cannot see leaves no foot contact to measure
    FailureReason::FootNotVisible
}

fn plan_reason(_: &PlanError) -> FailureReason {
    FailureReason::NoPath
}

fn approach_reason(_: &ApproachError) -> FailureReason {
    FailureReason::NoPath
}

fn grounding_reason(e: &GroundingError) -> FailureReason {
    match e {
        GroundingError::NoCandidates => FailureReason::NoCandidates,
        _ => FailureReason::GroundingNotFound,
    }
}

/// Advances the pipeline by one control tick.
///
/// Pure: the input state is not modified and the same inputs always give the
/// same output. `event` is only looked at while awaiting a command.
pub fn run_step(m: &MachineState, world: &WorldModel, event: Option<&CommandEvent>) -> StepOutput {
    let mut next = m.clone();
    let cfg = m.cfg.clone();
    let mut action = None;
    let mut consumed_event = false;
    let detail = match m.state {
        PipelineState::Idle => {
            next.state = PipelineState::AwaitingCommand;
            StepDetail {
                note: Some("engaged".into()),
                ..Default::default()
            }
        }
        PipelineState::AwaitingCommand => match event {
            None => StepDetail::default(),
            Some(ev) => {
                consumed_event = true;
                match parse_phrase(&ev.utterance, &m.lexicon) {
                    Err(e) => {
                        let (n, d) = fail(next, grounding_reason(&e), e.to_string());
                        next = n;
                        d
                    }
                    Ok(phrase) => {
                        let invocations = next.ctx.invocations + 1;
                        let degraded = next.ctx.gaze_degraded;
                        next.ctx = Context {
                            active_instructor: Some(ev.instructor_id.clone()),
                            phrase: Some(phrase.clone()),
                            invocations,
                            gaze_degraded: degraded,
                            ..Default::default()
                        };
                        next.state = PipelineState::EstimatingPointing;
                        StepDetail {
                            instructor: Some(ev.instructor_id.clone()),
                            phrase: Some(phrase),
                            ..Default::default()
                        }
                    }
                }
            }
        },
        PipelineState::EstimatingPointing => {
            let (n, d) = estimate(next, world);
            next = n;
            d
        }
        PipelineState::NavigatingIntermediate | PipelineState::SeekingReferredPerson => {
            let mut f = next.ctx.follower.take().expect("navigation state has a follower");
            match f.step(&world.robot.pose) {
                FollowStep::Command(c) => {
                    action = Some(c);
                    next.ctx.follower = Some(f);
                    StepDetail::default()
                }
                FollowStep::Stuck => {
                    let (n, d) = fail(next, FailureReason::Stuck, "no progress along the planned path");
                    next = n;
                    d
                }
                FollowStep::Arrived if m.state == PipelineState::NavigatingIntermediate => {
                    next.state = PipelineState::Grounding;
                    StepDetail {
                        note: Some("reached intermediate goal".into()),
                        ..Default::default()
                    }
                }
                FollowStep::Arrived => {
                    next.state = PipelineState::AwaitingCommand;
                    StepDetail {
                        note: Some(format!(
                            "waiting for {}",
                            next.ctx.referred.as_deref().unwrap_or("a command")
                        )),
                        ..Default::default()
                    }
                }
            }
        }
        PipelineState::Grounding => {
            let (n, d) = ground_phrase(next, world);
            next = n;
            d
        }
        PipelineState::ApproachingFinal => {
            let mut ap = next.ctx.approach.take().expect("approach state is set");
            let mut detail = StepDetail::default();
            if let Some(mut f) = ap.follower.take() {
                match f.step(&world.robot.pose) {
                    FollowStep::Command(c) => {
                        action = Some(c);
                        ap.follower = Some(f);
                    }
                    FollowStep::Arrived => {}
                    FollowStep::Stuck => {
                        next.state = PipelineState::Done;
                        next.ctx.stop_reason = Some(StopReason::NoNavigableSpace);
                        detail.stop_reason = Some(StopReason::NoNavigableSpace);
                    }
                }
            }
            if action.is_none() && next.state == PipelineState::ApproachingFinal {
                match approach_decision(world, &ap.target_id, ap.azimuth, &cfg.approach) {
                    ApproachDecision::Stop(r) => {
                        next.state = PipelineState::Done;
                        next.ctx.stop_reason = Some(r);
                        detail.stop_reason = Some(r);
                    }
                    ApproachDecision::Advance(seg) => {
                        let path = segment_path(&world.robot.pose, ap.azimuth, seg);
                        let mut f = Follower::new(path.clone(), world.robot.pose, cfg.follow);
                        ap.segments += 1;
                        match f.step(&world.robot.pose) {
                            FollowStep::Command(c) => {
                                action = Some(c);
                                ap.follower = Some(f);
                            }
                            // segment shorter than the reach tolerance: nothing left to drive
                            _ => {
                                next.state = PipelineState::Done;
                                next.ctx.stop_reason = Some(StopReason::NoNavigableSpace);
                                detail.stop_reason = Some(StopReason::NoNavigableSpace);
                            }
                        }
                        detail.path = Some(path.waypoints);
                    }
                }
            }
            next.ctx.approach = Some(ap);
            detail
        }
        PipelineState::Done | PipelineState::Failed(_) => StepDetail::default(),
    };
    StepOutput {
        next,
        action,
        detail,
        consumed_event,
    }
}

fn estimate(mut m: MachineState, world: &WorldModel) -> (MachineState, StepDetail) {
    let cfg = m.cfg.clone();
    let id = m.ctx.active_instructor.clone().expect("active instructor is set");
    let obs = match observe_person(world, &id, &cfg.noise, &mut m.rng) {
        Ok(o) => o,
        Err(e) => return fail(m, world_reason(&e), e.to_string()),
    };
    let est = match estimate_pointing(&obs, &world.robot, &cfg.pointing) {
        Ok(p) => p,
        Err(e) => return fail(m, pointing_reason(&e), e.to_string()),
    };
    m.ctx.gaze_degraded |= est.gaze_degraded;
    m.ctx.pointing = Some(est);
    let goal = match intermediate_goal(&est.instructor_ground(), est.azimuth, &m.planning_grid, &cfg.approach) {
        Ok(g) => g,
        Err(e) => {
            let (m, mut d) = fail(m, approach_reason(&e), e.to_string());
            d.pointing = Some(est);
            return (m, d);
        }
    };
    let path = match plan_inflated(&m.planning_grid, &world.robot.pose, &goal) {
        Ok(p) => p,
        Err(e) => {
            let (m, mut d) = fail(m, plan_reason(&e), e.to_string());
            d.pointing = Some(est);
            d.goal = Some(goal);
            return (m, d);
        }
    };
    m.ctx.intermediate_goal = Some(goal);
    m.ctx.follower = Some(Follower::new(path.clone(), world.robot.pose, cfg.follow));
    m.state = PipelineState::NavigatingIntermediate;
    (
        m,
        StepDetail {
            pointing: Some(est),
            goal: Some(goal),
            path: Some(path.waypoints),
            gaze_degraded: est.gaze_degraded.then_some(true),
            ..Default::default()
        },
    )
}

fn ground_phrase(mut m: MachineState, world: &WorldModel) -> (MachineState, StepDetail) {
    let cfg = m.cfg.clone();
    let mut phrase = m.ctx.phrase.clone().expect("phrase is set");
    if phrase.class_token.is_none() && phrase.referral {
        phrase.class_token = Some("person".into());
    }
    let view = observe_scene(world, &world.robot.pose, m.ctx.active_instructor.as_deref());
    let proposals = ground(&view, &phrase, cfg.threshold);
    if proposals.is_empty() {
        return fail(m, FailureReason::GroundingNotFound, format!("nothing matching '{}' in view", phrase.raw));
    }
    let pointing = m.ctx.pointing.expect("pointing estimate is set");
    let dis = match disambiguate(&proposals, &pointing.fused_ray_map, &world.robot) {
        Ok(d) => d,
        Err(e) => return fail(m, grounding_reason(&e), e.to_string()),
    };
    let chosen = dis.chosen.clone();
    let ground_pt = dis
        .candidates
        .iter()
        .find(|c| c.object_id == chosen.object_id)
        .map(|c| Vec2::new(c.ground[0], c.ground[1]))
        .expect("chosen proposal has a candidate entry");
    let mut detail = StepDetail {
        proposals: Some(proposals),
        chosen: Some(chosen.clone()),
        candidates: Some(dis.candidates),
        ..Default::default()
    };
    m.ctx.chosen = Some(chosen.clone());
    let robot_pos = world.robot.pose.position();
    if chosen.class_label == "person" || phrase.referral {
        let pose = match referral_pose(&ground_pt, &robot_pos, &m.planning_grid, &cfg.approach) {
            Ok(p) => p,
            Err(e) => {
                let (m, mut d) = fail(m, approach_reason(&e), e.to_string());
                d.chosen = detail.chosen;
                return (m, d);
            }
        };
        let path = match plan_inflated(&m.planning_grid, &world.robot.pose, &pose) {
            Ok(p) => p,
            Err(e) => return fail(m, plan_reason(&e), e.to_string()),
        };
        m.ctx.referred = Some(chosen.object_id.clone());
        m.ctx.follower = Some(Follower::new(path.clone(), world.robot.pose, cfg.follow));
        m.state = PipelineState::SeekingReferredPerson;
        detail.goal = Some(pose);
        detail.path = Some(path.waypoints);
    } else {
        let d = ground_pt - robot_pos;
        let azimuth = d.y.atan2(d.x);
        m.ctx.approach = Some(ApproachState {
            target_id: chosen.object_id.clone(),
            azimuth,
            follower: None,
            segments: 0,
        });
        m.state = PipelineState::ApproachingFinal;
        detail.note = Some(format!("approach azimuth {:.4}", azimuth));
    }
    (m, detail)
}
