//! The single owner of the live simulation. All mutations go through its queue.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use tokio::sync::{broadcast, mpsc, oneshot};

use deixis_core::geometry::Vec3;
use deixis_core::grounding::Lexicon;
use deixis_core::harness::{load_scenario, scenario_files, ScenarioSpec};
use deixis_core::pipeline::{CommandEvent, Episode, EpisodeOptions, TraceLine};
use deixis_core::world::{inject_gesture, observe_scene};

use crate::protocol::*;

/// What the session needs from its host.
#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub scenario_dir: PathBuf,
    /// Snapshot broadcasts per wall-clock second.
    pub tick_hz: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            scenario_dir: PathBuf::from("scenarios"),
            tick_hz: 20.0,
        }
    }
}

pub type ClientId = u64;

/// Requests into the session queue.
#[derive(Debug)]
pub enum Command {
    /// A text frame from a client; replies go to `reply`.
    Frame {
        client: ClientId,
        text: String,
        reply: mpsc::UnboundedSender<Arc<str>>,
    },
    /// A new client wants the map and the latest snapshot.
    Join { reply: mpsc::UnboundedSender<Arc<str>> },
    Leave { client: ClientId },
    /// Current trace as line-delimited JSON, if a scenario is loaded.
    Trace { reply: oneshot::Sender<Option<String>> },
    /// Runs `n` control ticks immediately; used by tests and tooling.
    Advance { n: u64, reply: oneshot::Sender<()> },
}

/// Handle for feeding the session and listening to its broadcasts.
#[derive(Debug, Clone)]
pub struct SessionHandle {
    pub commands: mpsc::UnboundedSender<Command>,
    pub broadcast: broadcast::Sender<Arc<str>>,
}

impl SessionHandle {
    pub async fn trace(&self) -> Option<String> {
        let (tx, rx) = oneshot::channel();
        self.commands.send(Command::Trace { reply: tx }).ok()?;
        rx.await.ok().flatten()
    }
}

struct Live {
    spec: ScenarioSpec,
    episode: Episode,
    /// Trace records already sent in a snapshot.
    sent_records: usize,
    sent_terminal: bool,
}

pub struct Session {
    cfg: SessionConfig,
    lexicon: Arc<Lexicon>,
    live: Option<Live>,
    playing: bool,
    rate: f64,
    /// Fractional control ticks carried between broadcasts.
    carry: f64,
    out_seq: u64,
    last_client_seq: HashMap<ClientId, u64>,
    tx: broadcast::Sender<Arc<str>>,
}

fn error_body(client_seq: Option<u64>, code: &str, message: impl Into<String>) -> ServerBody {
    ServerBody::Error {
        client_seq,
        code: code.into(),
        message: message.into(),
    }
}

/// Starts the session task.
pub fn spawn_session(cfg: SessionConfig) -> SessionHandle {
    let (ctx, crx) = mpsc::unbounded_channel();
    let (btx, _) = broadcast::channel(256);
    let session = Session {
        cfg,
        lexicon: Arc::new(Lexicon::default()),
        live: None,
        playing: true,
        rate: 1.0,
        carry: 0.0,
        out_seq: 0,
        last_client_seq: HashMap::new(),
        tx: btx.clone(),
    };
    tokio::spawn(session.run(crx));
    SessionHandle {
        commands: ctx,
        broadcast: btx,
    }
}

impl Session {
    async fn run(mut self, mut rx: mpsc::UnboundedReceiver<Command>) {
        let period = Duration::from_secs_f64(1.0 / self.cfg.tick_hz.max(0.1));
        let mut interval = tokio::time::interval(period);
        interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            tokio::select! {
                biased;
                cmd = rx.recv() => match cmd {
                    Some(c) => self.handle(c),
                    None => return,
                },
                _ = interval.tick() => {
                    if self.playing {
                        self.carry += self.rate;
                        let n = self.carry.floor();
                        self.carry -= n;
                        self.advance(n as u64);
                    }
                    self.broadcast_snapshot();
                }
            }
        }
    }

    fn frame(&mut self, body: ServerBody) -> Arc<str> {
        self.out_seq += 1;
        let m = ServerMessage {
            protocol_version: PROTOCOL_VERSION,
            seq: self.out_seq,
            body,
        };
        serde_json::to_string(&m).expect("server messages serialize").into()
    }

    fn handle(&mut self, cmd: Command) {
        match cmd {
            Command::Frame { client, text, reply } => {
                let body = self.apply_frame(client, &text);
                let f = self.frame(body);
                let _ = reply.send(f);
            }
            Command::Join { reply } => {
                if let Some(m) = self.map_info() {
                    let f = self.frame(ServerBody::Map(m));
                    let _ = reply.send(f);
                }
                if let Some(s) = self.snapshot(false) {
                    let f = self.frame(ServerBody::Snapshot(Box::new(s)));
                    let _ = reply.send(f);
                }
            }
            Command::Leave { client } => {
                self.last_client_seq.remove(&client);
            }
            Command::Trace { reply } => {
                let _ = reply.send(self.live.as_ref().map(|l| trace_text(&l.episode)));
            }
            Command::Advance { n, reply } => {
                self.advance(n);
                let _ = reply.send(());
            }
        }
    }

    fn apply_frame(&mut self, client: ClientId, text: &str) -> ServerBody {
        let raw: serde_json::Value = match serde_json::from_str(text) {
            Ok(v) => v,
            Err(e) => return error_body(None, "malformed", e.to_string()),
        };
        let seq = raw.get("seq").and_then(|s| s.as_u64());
        let msg: ClientMessage = match serde_json::from_value(raw) {
            Ok(m) => m,
            Err(e) => return error_body(seq, "malformed", e.to_string()),
        };
        if msg.protocol_version != PROTOCOL_VERSION {
            return error_body(
                Some(msg.seq),
                "protocol_version",
                format!("expected protocol_version {PROTOCOL_VERSION}"),
            );
        }
        if let Some(&last) = self.last_client_seq.get(&client) {
            if msg.seq <= last {
                return error_body(Some(msg.seq), "sequence", format!("seq must exceed {last}"));
            }
        }
        self.last_client_seq.insert(client, msg.seq);
        match self.apply(msg.body) {
            Ok(()) => ServerBody::Ack { client_seq: msg.seq },
            Err((code, message)) => error_body(Some(msg.seq), code, message),
        }
    }

    fn apply(&mut self, body: ClientBody) -> Result<(), (&'static str, String)> {
        match body {
            ClientBody::LoadScenario { name, spec } => {
                let spec = match (name, spec) {
                    (_, Some(v)) => ScenarioSpec::from_json(&v.to_string(), &self.cfg.scenario_dir)
                        .map_err(|e| ("invalid_scenario", e.to_string()))?,
                    (Some(n), None) => self.find_scenario(&n)?,
                    (None, None) => return Err(("invalid_request", "load_scenario needs `name` or `spec`".into())),
                };
                let seed = spec.seed;
                self.start(spec, seed)?;
                if let Some(m) = self.map_info() {
                    let f = self.frame(ServerBody::Map(m));
                    let _ = self.tx.send(f);
                }
                Ok(())
            }
            ClientBody::Reset { seed } => {
                let spec = self.live()?.spec.clone();
                let seed = seed.unwrap_or(spec.seed);
                self.start(spec, seed)
            }
            ClientBody::PlaceInstructor { instructor_id, pose } => {
                let live = self.live_mut()?;
                let mut m = live
                    .episode
                    .world()
                    .instructor(&instructor_id)
                    .map_err(|e| ("unknown_instructor", e.to_string()))?
                    .clone();
                if !live.episode.world().grid.contains(&pose.position()) {
                    return Err(("outside_map", "instructor pose is outside the map".into()));
                }
                m.base = pose;
                live.episode.set_instructor(m).map_err(|e| ("unknown_instructor", e.to_string()))
            }
            ClientBody::PointGesture { instructor_id, target } => {
                let t = match target.as_slice() {
                    [x, y] => Vec3::new(*x, *y, 0.0),
                    [x, y, z] => Vec3::new(*x, *y, *z),
                    _ => return Err(("invalid_request", "target must have 2 or 3 coordinates".into())),
                };
                let live = self.live_mut()?;
                let m = inject_gesture(live.episode.world(), &instructor_id, t).map_err(|e| ("gesture", e.to_string()))?;
                live.episode.set_instructor(m).map_err(|e| ("unknown_instructor", e.to_string()))
            }
            ClientBody::Utter { instructor_id, text } => {
                if text.trim().is_empty() {
                    return Err(("invalid_request", "utterance is empty".into()));
                }
                let live = self.live_mut()?;
                live.episode
                    .world()
                    .instructor(&instructor_id)
                    .map_err(|e| ("unknown_instructor", e.to_string()))?;
                let time = live.episode.sim_time();
                live.episode.push_event(CommandEvent {
                    instructor_id,
                    utterance: text,
                    time,
                });
                Ok(())
            }
            ClientBody::StepControl { action, rate } => {
                match action {
                    StepAction::Play => self.playing = true,
                    StepAction::Pause => self.playing = false,
                    StepAction::Step => {
                        self.live()?;
                        self.playing = false;
                        self.advance(1);
                    }
                    StepAction::Rate => match rate {
                        Some(r) if r > 0.0 && r <= 1000.0 => self.rate = r,
                        _ => return Err(("invalid_request", "rate must be in (0, 1000]".into())),
                    },
                }
                Ok(())
            }
        }
    }

    fn find_scenario(&self, name: &str) -> Result<ScenarioSpec, (&'static str, String)> {
        let files = scenario_files(&self.cfg.scenario_dir).map_err(|e| ("scenario_dir", e.to_string()))?;
        for f in files {
            if f.file_stem().is_some_and(|s| s == name) {
                return load_scenario(&f).map_err(|e| ("invalid_scenario", e.to_string()));
            }
        }
        Err(("unknown_scenario", format!("no scenario named '{name}'")))
    }

    fn start(&mut self, spec: ScenarioSpec, seed: u64) -> Result<(), (&'static str, String)> {
        let world = spec.build_world(seed).map_err(|e| ("invalid_scenario", e.to_string()))?;
        let opts = EpisodeOptions {
            scenario: spec.name.clone(),
            expected_target: spec.expected_target.clone(),
            fail_when_idle: false,
        };
        let episode = Episode::new(world, spec.pipeline_config(), self.lexicon.clone(), spec.commands.clone(), opts);
        self.live = Some(Live {
            spec,
            episode,
            sent_records: 0,
            sent_terminal: false,
        });
        self.carry = 0.0;
        Ok(())
    }

    fn live(&self) -> Result<&Live, (&'static str, String)> {
        self.live.as_ref().ok_or(("no_scenario", "no scenario loaded".into()))
    }

    fn live_mut(&mut self) -> Result<&mut Live, (&'static str, String)> {
        self.live.as_mut().ok_or(("no_scenario", "no scenario loaded".into()))
    }

    fn advance(&mut self, n: u64) {
        if let Some(l) = &mut self.live {
            for _ in 0..n {
                if l.episode.is_finished() {
                    break;
                }
                l.episode.tick();
            }
        }
    }

    fn map_info(&self) -> Option<MapInfo> {
        let l = self.live.as_ref()?;
        let m = &l.episode.header().map;
        Some(MapInfo {
            scenario: l.spec.name.clone(),
            digest: m.digest.clone(),
            resolution: m.resolution,
            origin: m.origin,
            width: m.width,
            height: m.height,
            pgm_base64: m.pgm_base64.clone(),
        })
    }

    fn broadcast_snapshot(&mut self) {
        if self.tx.receiver_count() == 0 {
            // still mark records as delivered so late joiners start fresh
            let _ = self.snapshot(true);
            return;
        }
        if let Some(s) = self.snapshot(true) {
            let f = self.frame(ServerBody::Snapshot(Box::new(s)));
            let _ = self.tx.send(f);
        }
    }

    /// Builds a snapshot; `consume` marks the included trace records as sent.
    fn snapshot(&mut self, consume: bool) -> Option<StateSnapshot> {
        let playing = self.playing;
        let rate = self.rate;
        let l = self.live.as_mut()?;
        let ep = &l.episode;
        let world = ep.world();
        let m = ep.machine();
        let ctx = &m.ctx;
        let mut records: Vec<serde_json::Value> = ep.records()[l.sent_records..]
            .iter()
            .map(|r| serde_json::to_value(TraceLine::Step(r.clone())).expect("records serialize"))
            .collect();
        if let (Some(t), false) = (ep.terminal(), l.sent_terminal) {
            records.push(serde_json::to_value(TraceLine::Terminal(t.clone())).expect("records serialize"));
        }
        let path = ctx
            .follower
            .as_ref()
            .or(ctx.approach.as_ref().and_then(|a| a.follower.as_ref()))
            .map(|f| f.path.waypoints.clone())
            .unwrap_or_default();
        let rays = ctx.pointing.as_ref().map(|p| {
            let o = p.ray_ground_origin();
            let origin = [o.x, o.y];
            RaysView {
                instructor_id: ctx.active_instructor.clone().unwrap_or_default(),
                body: GroundRay {
                    origin,
                    azimuth: p.body_azimuth,
                },
                gaze: p.gaze_azimuth.map(|a| GroundRay { origin, azimuth: a }),
                fused: GroundRay { origin, azimuth: p.azimuth },
                gaze_degraded: p.gaze_degraded,
            }
        });
        let scored: HashMap<String, f64> = ep
            .records()
            .iter()
            .rev()
            .find_map(|r| r.detail.proposals.as_ref())
            .map(|ps| ps.iter().map(|p| (p.object_id.clone(), p.score)).collect())
            .unwrap_or_default();
        let chosen = ctx.chosen.as_ref().map(|c| c.object_id.as_str());
        let boxes = observe_scene(world, &world.robot.pose, ctx.active_instructor.as_deref())
            .into_iter()
            .map(|v| BoxView {
                score: scored.get(&v.view.object_id).copied(),
                chosen: Some(v.view.object_id.as_str()) == chosen,
                object_id: v.view.object_id,
                class_label: v.class_label,
                bbox: v.view.bbox,
                visible_fraction: v.view.visible_fraction,
            })
            .collect();
        let reason = ctx
            .failure_detail
            .clone()
            .or_else(|| ctx.stop_reason.map(|r| format!("{r:?}")));
        let snap = StateSnapshot {
            scenario: l.spec.name.clone(),
            seed: world.seed,
            sim_time: ep.sim_time(),
            step: ep.steps(),
            playing,
            rate,
            robot: world.robot.pose,
            path,
            intermediate_goal: ctx.intermediate_goal,
            state: m.state,
            reason,
            instructors: world
                .instructors
                .iter()
                .map(|i| InstructorView {
                    id: i.id.clone(),
                    pose: i.base,
                    point_target: i.point_target.map(|t| [t.x, t.y, t.z]),
                })
                .collect(),
            rays,
            boxes,
            records,
            map_digest: ep.header().map.digest.clone(),
        };
        if consume {
            l.sent_records = ep.records().len();
            l.sent_terminal = ep.terminal().is_some();
        }
        Some(snap)
    }
}

fn trace_text(ep: &Episode) -> String {
    match ep.trace() {
        Some(t) => t.to_jsonl(),
        None => {
            let mut out = String::new();
            let header = TraceLine::Header(ep.header().clone());
            out.push_str(&serde_json::to_string(&header).expect("header serializes"));
            out.push('\n');
            for r in ep.records() {
                out.push_str(&serde_json::to_string(&TraceLine::Step(r.clone())).expect("records serialize"));
                out.push('\n');
            }
            out
        }
    }
}
