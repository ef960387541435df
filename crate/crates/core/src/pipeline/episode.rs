//! Drives the state machine and the simulated robot through one episode.

use std::collections::VecDeque;
use std::sync::Arc;

use super::machine::{run_step, CommandEvent, MachineState, PipelineConfig};
use super::state::{FailureReason, PipelineState};
use super::trace::{EmbeddedMap, EpisodeTrace, Metrics, StepRecord, TerminalRecord, TraceHeader, TRACE_SCHEMA_VERSION};
use crate::geometry::Vec2;
use crate::grounding::Lexicon;
use crate::world::{render_object_boxes, step_robot, InstructorModel, WorldError, WorldModel};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeOptions {
    pub scenario: String,
    /// Object the episode is scored against.
    pub expected_target: Option<String>,
    /// Fail with `Stuck` when a command is awaited and none is scheduled.
    /// Batch runs set this; a live session waits instead.
    pub fail_when_idle: bool,
}

/// One simulated run: world, machine, scheduled commands and the growing trace.
#[derive(Debug, Clone)]
pub struct Episode {
    world: WorldModel,
    machine: MachineState,
    events: VecDeque<CommandEvent>,
    sim_time: f64,
    steps: u64,
    header: TraceHeader,
    records: Vec<StepRecord>,
    terminal: Option<TerminalRecord>,
    opts: EpisodeOptions,
}

impl Episode {
    pub fn new(world: WorldModel, cfg: PipelineConfig, lexicon: Arc<Lexicon>, events: Vec<CommandEvent>, opts: EpisodeOptions) -> Self {
        let machine = MachineState::new(&world, cfg, lexicon);
        let mut events = events;
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        let header = TraceHeader {
            schema_version: TRACE_SCHEMA_VERSION,
            scenario: opts.scenario.clone(),
            seed: world.seed,
            config: *machine.cfg,
            map: EmbeddedMap::from_grid(&world.grid),
            robot: world.robot,
            objects: world.objects.clone(),
            instructors: world.instructors.clone(),
            expected_target: opts.expected_target.clone(),
        };
        Self {
            world,
            machine,
            events: events.into(),
            sim_time: 0.0,
            steps: 0,
            header,
            records: Vec::new(),
            terminal: None,
            opts,
        }
    }

    pub fn world(&self) -> &WorldModel {
        &self.world
    }

    pub fn machine(&self) -> &MachineState {
        &self.machine
    }

    pub fn state(&self) -> PipelineState {
        self.machine.state
    }

    pub fn sim_time(&self) -> f64 {
        self.sim_time
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn header(&self) -> &TraceHeader {
        &self.header
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn terminal(&self) -> Option<&TerminalRecord> {
        self.terminal.as_ref()
    }

    pub fn is_finished(&self) -> bool {
        self.terminal.is_some()
    }

    pub fn pending_events(&self) -> usize {
        self.events.len()
    }

    /// Schedules a command; it is consumed on the first tick that awaits one at or after `time`.
    pub fn push_event(&mut self, ev: CommandEvent) {
        let at = self.events.iter().position(|e| e.time > ev.time).unwrap_or(self.events.len());
        self.events.insert(at, ev);
    }

    /// Replaces an instructor (new placement or gesture) and refreshes the planning grid.
    pub fn set_instructor(&mut self, model: InstructorModel) -> Result<(), WorldError> {
        let id = model.id.clone();
        *self.world.instructor_mut(&id)? = model;
        self.machine.refresh_planning_grid(&self.world);
        Ok(())
    }

    /// Runs one control tick. Returns the trace record it produced, if any.
    pub fn tick(&mut self) -> Option<&StepRecord> {
        if self.terminal.is_some() {
            return None;
        }
        let state = self.machine.state;
        if state.is_terminal() {
            self.finish();
            return None;
        }
        if self.steps >= self.machine.cfg.step_budget {
            self.force_fail("step budget exhausted");
            return None;
        }
        if state == PipelineState::AwaitingCommand && self.events.is_empty() && self.opts.fail_when_idle {
            self.force_fail("no further commands scheduled");
            return None;
        }
        let event = match state {
            PipelineState::AwaitingCommand => self.events.front().filter(|e| e.time <= self.sim_time + 1e-9),
            _ => None,
        };
        let out = run_step(&self.machine, &self.world, event);
        if out.consumed_event {
            self.events.pop_front();
        }
        let mut blocked = false;
        if let Some(c) = out.action {
            let (w, outcome) = step_robot(&self.world, c.v, c.w, c.dt);
            self.world = w;
            blocked = outcome.blocked;
        }
        self.steps += 1;
        self.sim_time = self.steps as f64 * self.machine.cfg.dt;
        let changed = out.next.state != state;
        self.machine = out.next;
        let wrote = out.action.is_some() || changed || !out.detail.is_empty();
        if wrote {
            self.records.push(StepRecord {
                t: self.sim_time,
                step: self.steps,
                state,
                pose: self.world.robot.pose,
                command: out.action,
                blocked,
                detail: out.detail,
            });
        }
        if self.machine.state.is_terminal() {
            self.finish();
        }
        if wrote {
            self.records.last()
        } else {
            None
        }
    }

    /// Ticks until the episode ends.
    pub fn run_to_end(mut self) -> EpisodeTrace {
        while !self.is_finished() {
            self.tick();
        }
        self.into_trace().expect("finished episode has a terminal record")
    }

    pub fn into_trace(self) -> Option<EpisodeTrace> {
        Some(EpisodeTrace {
            header: self.header,
            steps: self.records,
            terminal: self.terminal?,
        })
    }

    /// Trace of a finished episode without consuming it.
    pub fn trace(&self) -> Option<EpisodeTrace> {
        Some(EpisodeTrace {
            header: self.header.clone(),
            steps: self.records.clone(),
            terminal: self.terminal.clone()?,
        })
    }

    fn force_fail(&mut self, why: &str) {
        self.machine.state = PipelineState::Failed(FailureReason::Stuck);
        self.machine.ctx.failure_detail = Some(why.to_string());
        self.finish();
    }

    /// Object the metrics are measured against: the expected one, else the chosen one.
    fn scored_target(&self) -> Option<String> {
        self.opts
            .expected_target
            .clone()
            .or_else(|| self.machine.ctx.chosen.as_ref().map(|c| c.object_id.clone()))
    }

    pub fn metrics(&self) -> Metrics {
        let ctx = &self.machine.ctx;
        let pose = self.world.robot.pose;
        let target = self.scored_target().and_then(|id| self.world.object(&id).cloned());
        let final_distance = target.as_ref().map(|o| (o.footprint.centroid() - pose.position()).norm());
        let target_in_view = target.as_ref().is_some_and(|o| {
            render_object_boxes(&self.world, &pose)
                .iter()
                .any(|v| v.object_id == o.id && v.visible_fraction >= self.machine.cfg.approach.min_visible)
        });
        let azimuth_error = ctx.pointing.as_ref().and_then(|p| {
            let ins = self.world.instructor(ctx.active_instructor.as_deref()?).ok()?;
            let t = ins.point_target?;
            Some(p.azimuth_error_to(&Vec2::new(t.x, t.y)))
        });
        Metrics {
            final_distance,
            azimuth_error,
            steps: self.steps,
            sim_time: self.sim_time,
            invocations: ctx.invocations,
            gaze_degraded: ctx.gaze_degraded,
            target_in_view,
            chosen: ctx.chosen.as_ref().map(|c| c.object_id.clone()),
        }
    }

    fn finish(&mut self) {
        let ctx = &self.machine.ctx;
        self.terminal = Some(TerminalRecord {
            t: self.sim_time,
            step: self.steps,
            outcome: self.machine.state,
            pose: self.world.robot.pose,
            stop_reason: ctx.stop_reason,
            failure_detail: ctx.failure_detail.clone(),
            metrics: self.metrics(),
        });
    }
}
