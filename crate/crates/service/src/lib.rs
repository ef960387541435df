//! Interactive session host: one live simulation, a WebSocket protocol and a few HTTP endpoints.
//!
//! `GET /ws` upgrades to the session protocol (see [`protocol`]), `GET /scenarios`
//! lists the shipped scenarios and `GET /trace` downloads the current trace as
//! line-delimited JSON.

pub mod protocol;
pub mod session;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use serde::Serialize;
use thiserror::Error;
use tokio::sync::mpsc;

use deixis_core::harness::{load_scenario, scenario_files};

pub use session::{spawn_session, Command, SessionConfig, SessionHandle};

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("scenario directory {0} is not readable")]
    ScenarioDir(String),
    #[error("tick rate must be positive")]
    TickRate,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub port: u16,
    pub scenario_dir: PathBuf,
    pub tick_hz: f64,
}

#[derive(Clone)]
struct AppState {
    session: SessionHandle,
    scenario_dir: PathBuf,
    next_client: Arc<AtomicU64>,
}

#[derive(Debug, Serialize)]
struct ScenarioEntry {
    name: String,
    file: String,
    description: String,
}

/// Router over a running session.
pub fn app(session: SessionHandle, scenario_dir: PathBuf) -> Router {
    Router::new()
        .route("/ws", get(ws_upgrade))
        .route("/scenarios", get(list_scenarios))
        .route("/trace", get(current_trace))
        .with_state(AppState {
            session,
            scenario_dir,
            next_client: Arc::new(AtomicU64::new(1)),
        })
}

/// Binds `0.0.0.0:port` and serves until the process ends. Port 0 picks a free port.
pub async fn serve(cfg: ServeConfig) -> Result<(), ServeError> {
    let listener = bind(&cfg).await?;
    run_on(listener, cfg).await
}

pub async fn bind(cfg: &ServeConfig) -> Result<tokio::net::TcpListener, ServeError> {
    if !(cfg.tick_hz > 0.0) {
        return Err(ServeError::TickRate);
    }
    if !cfg.scenario_dir.is_dir() {
        return Err(ServeError::ScenarioDir(cfg.scenario_dir.display().to_string()));
    }
    Ok(tokio::net::TcpListener::bind(SocketAddr::from(([0, 0, 0, 0], cfg.port))).await?)
}

pub async fn run_on(listener: tokio::net::TcpListener, cfg: ServeConfig) -> Result<(), ServeError> {
    let session = spawn_session(SessionConfig {
        scenario_dir: cfg.scenario_dir.clone(),
        tick_hz: cfg.tick_hz,
    });
    tracing::info!(addr = %listener.local_addr()?, "serving");
    axum::serve(listener, app(session, cfg.scenario_dir)).await?;
    Ok(())
}

async fn list_scenarios(State(st): State<AppState>) -> Response {
    let files = match scenario_files(&st.scenario_dir) {
        Ok(f) => f,
        Err(e) => return (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    };
    let entries: Vec<ScenarioEntry> = files
        .iter()
        .filter_map(|f| {
            let spec = load_scenario(f).ok()?;
            Some(ScenarioEntry {
                name: spec.name,
                file: f.file_name()?.to_string_lossy().into_owned(),
                description: spec.description,
            })
        })
        .collect();
    Json(entries).into_response()
}

async fn current_trace(State(st): State<AppState>) -> Response {
    match st.session.trace().await {
        Some(t) => ([(header::CONTENT_TYPE, "application/x-ndjson")], t).into_response(),
        None => (StatusCode::NOT_FOUND, "no scenario loaded").into_response(),
    }
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(st): State<AppState>) -> Response {
    let id = st.next_client.fetch_add(1, Ordering::Relaxed);
    ws.on_upgrade(move |socket| client_loop(socket, st.session, id))
}

/// Pumps one client. Failures here only end this connection.
async fn client_loop(socket: WebSocket, session: SessionHandle, id: u64) {
    let (mut sink, mut stream) = socket.split();
    let (reply_tx, mut reply_rx) = mpsc::unbounded_channel::<Arc<str>>();
    let mut snapshots = session.broadcast.subscribe();
    if session.commands.send(Command::Join { reply: reply_tx.clone() }).is_err() {
        return;
    }
    loop {
        tokio::select! {
            msg = stream.next() => match msg {
                Some(Ok(Message::Text(t))) => {
                    let cmd = Command::Frame { client: id, text: t.to_string(), reply: reply_tx.clone() };
                    if session.commands.send(cmd).is_err() {
                        break;
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
            Some(out) = reply_rx.recv() => {
                if sink.send(Message::Text(out.as_ref().into())).await.is_err() {
                    break;
                }
            }
            b = snapshots.recv() => match b {
                Ok(out) => {
                    if sink.send(Message::Text(out.as_ref().into())).await.is_err() {
                        break;
                    }
                }
                Err(tokio::sync::broadcast::error::RecvError::Lagged(n)) => {
                    tracing::warn!(client = id, skipped = n, "slow client dropped snapshots");
                }
                Err(_) => break,
            },
        }
    }
    let _ = session.commands.send(Command::Leave { client: id });
}
