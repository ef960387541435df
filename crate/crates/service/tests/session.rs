use std::path::PathBuf;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

use deixis_core::harness::{load_scenario, run, ScenarioSpec};
use deixis_core::pipeline::PipelineState;
use deixis_service::protocol::{ServerBody, ServerMessage, StateSnapshot};
use deixis_service::{run_on, ServeConfig};

fn scenario_dir() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios"))
}

fn shipped(name: &str) -> ScenarioSpec {
    load_scenario(&scenario_dir().join(format!("{name}.json"))).unwrap()
}

async fn start(tick_hz: f64) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let cfg = ServeConfig {
        port: addr.port(),
        scenario_dir: scenario_dir(),
        tick_hz,
    };
    tokio::spawn(run_on(listener, cfg));
    addr.to_string()
}

struct Client {
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
    seq: u64,
}

impl Client {
    async fn connect(addr: &str) -> Self {
        let (ws, _) = connect_async(format!("ws://{addr}/ws")).await.unwrap();
        Self { ws, seq: 0 }
    }

    /// Sends `body` with the next sequence number and returns that number.
    async fn send(&mut self, mut body: Value) -> u64 {
        self.seq += 1;
        body["protocol_version"] = 1.into();
        body["seq"] = self.seq.into();
        self.ws.send(Message::text(body.to_string())).await.unwrap();
        self.seq
    }

    async fn request(&mut self, body: Value) -> ServerBody {
        let seq = self.send(body).await;
        self.reply_to(seq).await
    }

    async fn raw(&mut self, text: &str) {
        self.ws.send(Message::text(text.to_string())).await.unwrap();
    }

    async fn next(&mut self) -> ServerMessage {
        loop {
            let m = tokio::time::timeout(Duration::from_secs(20), self.ws.next())
                .await
                .expect("server went quiet")
                .expect("socket closed")
                .unwrap();
            if let Message::Text(t) = m {
                return serde_json::from_str(t.as_str()).unwrap();
            }
        }
    }

    async fn until<T>(&mut self, mut f: impl FnMut(&ServerMessage) -> Option<T>) -> T {
        loop {
            let m = self.next().await;
            if let Some(v) = f(&m) {
                return v;
            }
        }
    }

    async fn reply_to(&mut self, seq: u64) -> ServerBody {
        self.until(|m| match &m.body {
            ServerBody::Ack { client_seq } if *client_seq == seq => Some(m.body.clone()),
            ServerBody::Error { client_seq: Some(s), .. } if *s == seq => Some(m.body.clone()),
            ServerBody::Error { client_seq: None, .. } => Some(m.body.clone()),
            _ => None,
        })
        .await
    }

    async fn snapshot(&mut self) -> StateSnapshot {
        self.until(|m| match &m.body {
            ServerBody::Snapshot(s) => Some((**s).clone()),
            _ => None,
        })
        .await
    }

    async fn snapshot_where(&mut self, mut f: impl FnMut(&StateSnapshot) -> bool) -> StateSnapshot {
        loop {
            let s = self.snapshot().await;
            if f(&s) {
                return s;
            }
        }
    }
}

fn is_ack(b: &ServerBody) -> bool {
    matches!(b, ServerBody::Ack { .. })
}

fn error_code(b: &ServerBody) -> Option<&str> {
    match b {
        ServerBody::Error { code, .. } => Some(code),
        _ => None,
    }
}

async fn http_get(addr: &str, path: &str) -> (u16, String) {
    let mut s = TcpStream::connect(addr).await.unwrap();
    s.write_all(format!("GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").as_bytes())
        .await
        .unwrap();
    let mut buf = String::new();
    s.read_to_string(&mut buf).await.unwrap();
    let status = buf[9..12].parse().unwrap();
    let body = buf.split_once("\r\n\r\n").map(|(_, b)| b.to_string()).unwrap_or_default();
    (status, body)
}

/// The scenario as an inline document without its scripted commands.
fn without_commands(spec: &ScenarioSpec) -> Value {
    let mut v: Value = serde_json::from_str(&spec.to_json()).unwrap();
    v["commands"] = json!([]);
    v
}

#[tokio::test(flavor = "multi_thread")]
async fn load_sends_map_and_snapshot() {
    let addr = start(50.0).await;
    let mut c = Client::connect(&addr).await;
    let seq = c.send(json!({"type": "load_scenario", "name": "occluded_chairs"})).await;
    let mut acked = false;
    let mut digest = None;
    while !(acked && digest.is_some()) {
        let m = c.next().await;
        match m.body {
            ServerBody::Ack { client_seq } => acked = client_seq == seq,
            ServerBody::Map(info) => {
                assert_eq!(info.scenario, "occluded_chairs");
                assert_eq!((info.width, info.height), (240, 160));
                digest = Some(info.digest);
            }
            _ => {}
        }
    }
    let s = c.snapshot().await;
    assert_eq!(Some(&s.map_digest), digest.as_ref());
    assert_eq!((s.robot.x, s.robot.y), (2.0, 2.0));
    assert_eq!(s.instructors.len(), 1);
    assert_eq!(s.instructors[0].id, "alice");
    // the chairs are behind the wall, so the robot sees nothing yet
    assert!(s.boxes.iter().all(|b| b.class_label != "chair"));
}

#[tokio::test(flavor = "multi_thread")]
async fn bad_frames_get_errors_and_leave_the_session_alone() {
    let addr = start(50.0).await;
    let mut c = Client::connect(&addr).await;
    assert!(is_ack(&c.request(json!({"type": "load_scenario", "name": "referral"})).await));

    c.raw("{not json").await;
    assert_eq!(error_code(&c.reply_to(0).await), Some("malformed"));

    let seq = c.send(json!({"type": "fly"})).await;
    assert_eq!(error_code(&c.reply_to(seq).await), Some("malformed"));

    c.raw(r#"{"protocol_version": 7, "seq": 100, "type": "reset"}"#).await;
    assert_eq!(error_code(&c.reply_to(100).await), Some("protocol_version"));

    let seq = c.send(json!({"type": "load_scenario", "name": "nope"})).await;
    assert_eq!(error_code(&c.reply_to(seq).await), Some("unknown_scenario"));

    let seq = c.send(json!({"type": "utter", "instructor_id": "zed", "text": "hi"})).await;
    assert_eq!(error_code(&c.reply_to(seq).await), Some("unknown_instructor"));

    let seq = c.send(json!({"type": "step_control", "action": "rate", "rate": -1.0})).await;
    assert_eq!(error_code(&c.reply_to(seq).await), Some("invalid_request"));

    // the referral scenario is still loaded and answering
    let s = c.snapshot().await;
    assert_eq!(s.scenario, "referral");
    assert!(is_ack(&c.request(json!({"type": "step_control", "action": "pause"})).await));
}

#[tokio::test(flavor = "multi_thread")]
async fn sequence_numbers_must_increase() {
    let addr = start(50.0).await;
    let mut c = Client::connect(&addr).await;
    c.raw(r#"{"protocol_version": 1, "seq": 5, "type": "step_control", "action": "pause"}"#).await;
    assert!(is_ack(&c.reply_to(5).await));
    c.raw(r#"{"protocol_version": 1, "seq": 5, "type": "step_control", "action": "play"}"#).await;
    assert_eq!(error_code(&c.reply_to(5).await), Some("sequence"));
    c.raw(r#"{"protocol_version": 1, "seq": 3, "type": "step_control", "action": "play"}"#).await;
    assert_eq!(error_code(&c.reply_to(3).await), Some("sequence"));
    c.raw(r#"{"protocol_version": 1, "seq": 6, "type": "step_control", "action": "play"}"#).await;
    assert!(is_ack(&c.reply_to(6).await));

    // a second client has its own counter
    let mut d = Client::connect(&addr).await;
    d.raw(r#"{"protocol_version": 1, "seq": 1, "type": "step_control", "action": "play"}"#).await;
    assert!(is_ack(&d.reply_to(1).await));
}

#[tokio::test(flavor = "multi_thread")]
async fn clients_see_the_same_snapshots() {
    let addr = start(50.0).await;
    let mut a = Client::connect(&addr).await;
    let mut b = Client::connect(&addr).await;
    assert!(is_ack(&a.request(json!({"type": "load_scenario", "name": "referral"})).await));
    let mut seen_a = std::collections::BTreeMap::new();
    for _ in 0..10 {
        let m = a.until(|m| matches!(m.body, ServerBody::Snapshot(_)).then(|| m.clone())).await;
        seen_a.insert(m.seq, m);
    }
    let mut matched = 0;
    for _ in 0..10 {
        let m = b.until(|m| matches!(m.body, ServerBody::Snapshot(_)).then(|| m.clone())).await;
        if let Some(other) = seen_a.get(&m.seq) {
            assert_eq!(other, &m);
            matched += 1;
        }
    }
    assert!(matched >= 5, "only {matched} common snapshots");
}

#[tokio::test(flavor = "multi_thread")]
async fn gesture_and_utterance_drive_to_done() {
    let addr = start(50.0).await;
    let mut c = Client::connect(&addr).await;
    let spec = shipped("occluded_chairs");
    assert!(is_ack(&c.request(json!({"type": "step_control", "action": "pause"})).await));
    let load = c.send(json!({"type": "load_scenario", "spec": without_commands(&spec)})).await;
    assert!(is_ack(&c.reply_to(load).await));
    // re-aim alice at the red chair by clicking on it
    let g = c.send(json!({"type": "point_gesture", "instructor_id": "alice", "target": [4.9, 5.8]})).await;
    assert!(is_ack(&c.reply_to(g).await));
    let u = c.send(json!({"type": "utter", "instructor_id": "alice", "text": "the red chair"})).await;
    assert!(is_ack(&c.reply_to(u).await));
    let r = c.send(json!({"type": "step_control", "action": "rate", "rate": 20.0})).await;
    assert!(is_ack(&c.reply_to(r).await));
    let p = c.send(json!({"type": "step_control", "action": "play"})).await;
    assert!(is_ack(&c.reply_to(p).await));

    let with_goal = c.snapshot_where(|s| s.intermediate_goal.is_some()).await;
    let goal = with_goal.intermediate_goal.unwrap();
    let alice = with_goal.instructors[0].pose;
    let d = ((goal.x - alice.x).powi(2) + (goal.y - alice.y).powi(2)).sqrt();
    assert!((d - 1.0).abs() <= 0.05, "goal {d:.3} m from the instructor");
    assert!(with_goal.rays.is_some());

    let done = c.snapshot_where(|s| s.state.is_terminal()).await;
    assert_eq!(done.state, PipelineState::Done);
    assert!(done.boxes.iter().any(|b| b.object_id == "red_chair" && b.chosen));
}

#[tokio::test(flavor = "multi_thread")]
async fn http_endpoints() {
    let addr = start(50.0).await;
    let (status, body) = http_get(&addr, "/scenarios").await;
    assert_eq!(status, 200);
    let list: Vec<Value> = serde_json::from_str(&body).unwrap();
    let names: Vec<&str> = list.iter().map(|e| e["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["far_instructor", "foot_occluded", "occluded_chairs", "referral"]);

    assert_eq!(http_get(&addr, "/trace").await.0, 404);

    let mut c = Client::connect(&addr).await;
    assert!(is_ack(&c.request(json!({"type": "load_scenario", "name": "foot_occluded"})).await));
    c.snapshot_where(|s| s.state.is_terminal()).await;
    let (status, body) = http_get(&addr, "/trace").await;
    assert_eq!(status, 200);
    let trace = deixis_core::pipeline::EpisodeTrace::from_jsonl(&body).unwrap();
    assert_eq!(trace.header.scenario, "foot_occluded");
    assert_eq!(trace.terminal.outcome.to_string(), "Failed(FootNotVisible)");
}

#[tokio::test(flavor = "multi_thread")]
async fn service_trace_matches_batch_run() {
    let mut spec = shipped("occluded_chairs");
    for c in &mut spec.commands {
        c.time = 0.0;
    }
    let (expected, _) = run(&spec, None).unwrap();

    let addr = start(50.0).await;
    let mut c = Client::connect(&addr).await;
    assert!(is_ack(&c.request(json!({"type": "step_control", "action": "pause"})).await));
    let load = c.send(json!({"type": "load_scenario", "spec": without_commands(&spec)})).await;
    assert!(is_ack(&c.reply_to(load).await));
    for cmd in &spec.commands {
        let u = c.send(json!({"type": "utter", "instructor_id": cmd.instructor_id, "text": cmd.utterance})).await;
        assert!(is_ack(&c.reply_to(u).await));
    }
    let r = c.send(json!({"type": "step_control", "action": "rate", "rate": 50.0})).await;
    assert!(is_ack(&c.reply_to(r).await));
    c.send(json!({"type": "step_control", "action": "play"})).await;
    c.snapshot_where(|s| s.state.is_terminal()).await;

    let (status, body) = http_get(&addr, "/trace").await;
    assert_eq!(status, 200);
    assert_eq!(body, expected.to_jsonl());
}

#[tokio::test(flavor = "multi_thread")]
async fn pause_freezes_time_but_not_delivery() {
    let addr = start(50.0).await;
    let mut c = Client::connect(&addr).await;
    assert!(is_ack(&c.request(json!({"type": "load_scenario", "name": "referral"})).await));
    let p = c.send(json!({"type": "step_control", "action": "pause"})).await;
    assert!(is_ack(&c.reply_to(p).await));

    let first = c.next().await;
    let mut last_seq = first.seq;
    let mut times = Vec::new();
    for _ in 0..8 {
        let m = c.next().await;
        assert_eq!(m.seq, last_seq + 1, "a frame went missing");
        last_seq = m.seq;
        if let ServerBody::Snapshot(s) = m.body {
            assert!(!s.playing);
            times.push(s.sim_time);
        }
    }
    assert!(times.len() >= 5);
    assert!(times.windows(2).all(|w| w[0] == w[1]));

    let st = c.send(json!({"type": "step_control", "action": "step"})).await;
    assert!(is_ack(&c.reply_to(st).await));
    let s = c.snapshot().await;
    assert!((s.sim_time - times[0] - 0.1).abs() < 1e-9);
}
