//! JSON-over-WebSocket bridge to one live control loop.
//!
//! The loop runs on its own thread and applies UI commands between steps.
//! Sockets get decimated samples through a newest-wins channel, so a slow
//! browser loses samples instead of slowing the loop. The first socket
//! controls the loop; later ones are observers.

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{Html, IntoResponse};
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use openlab_core::control::loops::{ControlLoop, LocalTank, LoopRecord, Placement, PlantBinding};
use openlab_core::control::PidParams;
use openlab_core::experiment::{remote_loop, Binding, ConfigError, ExperimentConfig, ExperimentError};
use openlab_core::plant::CoupledTanksVi;
use serde::{Deserialize, Serialize};
use tokio::sync::{oneshot, watch};
use tower_http::services::ServeDir;

use crate::transport::HttpTransport;

/// Heartbeat interval of a connected but paused loop.
pub const KEEPALIVE: Duration = Duration::from_secs(1);

const PLACEHOLDER: &str = include_str!("placeholder.html");

/// Client to service.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum UiCommand {
    /// Any subset of the PID parameters; the rest keep their values.
    SetGains {
        kp: Option<f64>,
        ki: Option<f64>,
        kd: Option<f64>,
        n: Option<f64>,
        u_min: Option<f64>,
        u_max: Option<f64>,
    },
    SetDelta {
        delta: f64,
    },
    SetSetpoint {
        #[serde(alias = "r")]
        setpoint: f64,
    },
    SetPlacement {
        placement: Placement,
    },
    Start,
    Stop,
    Connect,
    Disconnect,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub r: f64,
    pub y: f64,
    pub u: f64,
    pub sampled: f64,
    pub event: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Status {
    pub state: String,
    pub detail: String,
    /// Session time of the first step that sees the change.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
}

/// Service to client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum UiMessage {
    Sample(Sample),
    Status(Status),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopState {
    Disconnected,
    Stopped,
    Running,
    Error,
}

impl LoopState {
    pub fn as_str(self) -> &'static str {
        match self {
            LoopState::Disconnected => "disconnected",
            LoopState::Stopped => "stopped",
            LoopState::Running => "running",
            LoopState::Error => "error",
        }
    }
}

impl Status {
    fn new(state: &str, detail: impl Into<String>) -> Self {
        Self {
            state: state.to_owned(),
            detail: detail.into(),
            t: None,
        }
    }

    fn error(detail: impl Into<String>) -> Self {
        Self::new("error", detail)
    }
}

struct Command {
    op: UiCommand,
    reply: oneshot::Sender<Status>,
}

type DynLoop = ControlLoop<Box<dyn PlantBinding + Send>>;

fn config_error(pointer: &str, message: String) -> ExperimentError {
    ConfigError {
        pointer: pointer.into(),
        message,
    }
    .into()
}

fn build_loop(exp: &ExperimentConfig) -> Result<DynLoop, ExperimentError> {
    let plant: Box<dyn PlantBinding + Send> = match &exp.binding {
        Binding::Local => {
            let vi = CoupledTanksVi::new(exp.plant.clone()).map_err(|e| config_error("/plant", e.to_string()))?;
            Box::new(LocalTank::new(vi.process(), exp.plant.period))
        }
        Binding::Remote(table) => Box::new(remote_loop(exp, table, HttpTransport::new())?.into_plant()),
    };
    ControlLoop::new(exp.loop_cfg, plant).map_err(|e| config_error("/loop", e.to_string()))
}

/// The loop actor: owns the loop, applies commands at step boundaries.
struct Actor {
    exp: ExperimentConfig,
    control: Option<DynLoop>,
    running: bool,
    /// Session time at which the current loop started.
    offset: f64,
    /// Steps since the current loop started.
    k: u64,
    samples: watch::Sender<Option<Sample>>,
    notices: watch::Sender<Option<Status>>,
    state: watch::Sender<LoopState>,
}

impl Actor {
    fn session_time(&self) -> f64 {
        self.offset + self.control.as_ref().map_or(0.0, |c| c.time())
    }

    fn set_state(&mut self, s: LoopState) {
        self.state.send_replace(s);
    }

    fn current(&self) -> LoopState {
        *self.state.borrow()
    }

    fn ack(&self, detail: impl Into<String>) -> Status {
        Status {
            t: self.control.as_ref().map(|_| self.session_time()),
            ..Status::new(self.current().as_str(), detail)
        }
    }

    fn connect(&mut self) -> Result<(), Status> {
        if self.control.is_some() {
            return Ok(());
        }
        match build_loop(&self.exp) {
            Ok(c) => {
                self.control = Some(c);
                self.k = 0;
                self.set_state(LoopState::Stopped);
                Ok(())
            }
            Err(e) => {
                log::error!("connect: {e}");
                self.set_state(LoopState::Error);
                Err(Status::error(e.to_string()))
            }
        }
    }

    fn disconnect(&mut self) {
        self.running = false;
        if let Some(mut c) = self.control.take() {
            self.offset += c.time();
            c.plant_mut().release();
        }
        self.set_state(LoopState::Disconnected);
    }

    fn apply(&mut self, op: UiCommand) -> Status {
        let applied = match op {
            UiCommand::Connect => {
                if let Err(s) = self.connect() {
                    return s;
                }
                "connected"
            }
            UiCommand::Start => {
                if let Err(s) = self.connect() {
                    return s;
                }
                self.running = true;
                self.set_state(LoopState::Running);
                "started"
            }
            UiCommand::Stop => {
                self.running = false;
                if self.control.is_some() {
                    self.set_state(LoopState::Stopped);
                }
                "stopped"
            }
            UiCommand::Disconnect => {
                self.disconnect();
                "disconnected"
            }
            UiCommand::SetGains {
                kp,
                ki,
                kd,
                n,
                u_min,
                u_max,
            } => {
                let old = self.exp.loop_cfg.pid;
                let pid = PidParams {
                    kp: kp.unwrap_or(old.kp),
                    ki: ki.unwrap_or(old.ki),
                    kd: kd.unwrap_or(old.kd),
                    n: n.unwrap_or(old.n),
                    u_min: u_min.unwrap_or(old.u_min),
                    u_max: u_max.unwrap_or(old.u_max),
                };
                if let Err(e) = pid.validate() {
                    return Status::error(format!("set_gains: {e}"));
                }
                if let Some(c) = &mut self.control {
                    c.set_gains(pid).expect("validated");
                }
                self.exp.loop_cfg.pid = pid;
                "gains updated"
            }
            UiCommand::SetDelta { delta } => {
                if !(delta.is_finite() && delta > 0.0) {
                    return Status::error(format!("set_delta: must be positive, got {delta}"));
                }
                if let Some(c) = &mut self.control {
                    c.set_delta(delta).expect("validated");
                }
                self.exp.loop_cfg.delta = delta;
                "delta updated"
            }
            UiCommand::SetSetpoint { setpoint } => {
                if !setpoint.is_finite() {
                    return Status::error("set_setpoint: must be finite");
                }
                if let Some(c) = &mut self.control {
                    c.set_setpoint(setpoint).expect("validated");
                }
                self.exp.loop_cfg.setpoint = setpoint;
                "setpoint updated"
            }
            UiCommand::SetPlacement { placement } => {
                if let Some(c) = &mut self.control {
                    c.set_placement(placement);
                }
                self.exp.loop_cfg.placement = placement;
                "placement updated"
            }
        };
        self.ack(applied)
    }

    fn step(&mut self) {
        let Some(c) = &mut self.control else { return };
        match c.step() {
            Ok(rec) => {
                if self.k.is_multiple_of(u64::from(self.exp.ui_decimation)) {
                    self.samples.send_replace(Some(sample(self.offset, &rec)));
                }
                self.k += 1;
            }
            Err(e) => {
                log::error!("loop stopped: {e}");
                self.disconnect();
                self.set_state(LoopState::Error);
                self.notices.send_replace(Some(Status::error(format!("loop stopped: {e}"))));
            }
        }
    }

    fn keepalive(&mut self) {
        let Some(c) = &mut self.control else { return };
        if let Err(e) = c.plant_mut().keepalive() {
            log::error!("keepalive: {e}");
            self.disconnect();
            self.set_state(LoopState::Error);
            self.notices.send_replace(Some(Status::error(format!("connection lost: {e}"))));
        }
    }

    fn run(mut self, commands: mpsc::Receiver<Command>) {
        let dt = Duration::from_secs_f64(self.exp.loop_cfg.dt);
        let mut next_step = Instant::now();
        let mut next_keepalive = Instant::now() + KEEPALIVE;
        loop {
            let wait_until = if self.running { next_step } else { next_keepalive };
            match commands.recv_timeout(wait_until.saturating_duration_since(Instant::now())) {
                Ok(cmd) => {
                    let was_running = self.running;
                    let status = self.apply(cmd.op);
                    if self.running && !was_running {
                        next_step = Instant::now();
                    }
                    let _ = cmd.reply.send(status);
                    continue;
                }
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => break,
            }
            let now = Instant::now();
            if self.running && now >= next_step {
                self.step();
                next_step += dt;
                if now > next_step + 10 * dt {
                    // Fell far behind (suspended host); resume from now.
                    next_step = now;
                }
                next_keepalive = now + KEEPALIVE;
            } else if !self.running && now >= next_keepalive {
                self.keepalive();
                next_keepalive = now + KEEPALIVE;
            }
        }
        self.disconnect();
    }
}

fn sample(offset: f64, rec: &LoopRecord) -> Sample {
    Sample {
        t: offset + rec.t,
        r: rec.r,
        y: rec.y,
        u: rec.u,
        sampled: rec.sampled,
        event: rec.event,
    }
}

struct Shared {
    commands: Mutex<mpsc::Sender<Command>>,
    samples: watch::Receiver<Option<Sample>>,
    notices: watch::Receiver<Option<Status>>,
    state: watch::Receiver<LoopState>,
    controller: Mutex<Option<u64>>,
    next_id: AtomicU64,
}

/// A running loop actor plus the state its sockets share.
/// The actor thread ends, releasing the plant, once the bridge and every
/// router and socket built from it are gone.
pub struct Bridge {
    shared: Arc<Shared>,
}

impl Bridge {
    /// Starts the loop actor; the loop connects on the first `connect` or
    /// `start`.
    pub fn start(exp: ExperimentConfig) -> Self {
        let (cmd_tx, cmd_rx) = mpsc::channel();
        let (samples_tx, samples) = watch::channel(None);
        let (notices_tx, notices) = watch::channel(None);
        let (state_tx, state) = watch::channel(LoopState::Disconnected);
        let actor = Actor {
            exp,
            control: None,
            running: false,
            offset: 0.0,
            k: 0,
            samples: samples_tx,
            notices: notices_tx,
            state: state_tx,
        };
        std::thread::Builder::new()
            .name("control-loop".into())
            .spawn(move || actor.run(cmd_rx))
            .expect("spawn loop thread");
        Self {
            shared: Arc::new(Shared {
                commands: Mutex::new(cmd_tx),
                samples,
                notices,
                state,
                controller: Mutex::new(None),
                next_id: AtomicU64::new(0),
            }),
        }
    }

    /// `/ws` plus static assets at `/`: files from `assets`, or a built-in
    /// placeholder page.
    pub fn router(&self, assets: Option<PathBuf>) -> Router {
        let r = Router::new()
            .route("/ws", get(upgrade))
            .with_state(self.shared.clone());
        match assets {
            Some(dir) => r.fallback_service(ServeDir::new(dir)),
            None => r.route("/", get(|| async { Html(PLACEHOLDER) })),
        }
    }

    /// Sends a command as the controlling client would and waits for the
    /// acknowledgement.
    pub async fn command(&self, op: UiCommand) -> Status {
        send_command(&self.shared, op).await
    }
}

async fn send_command(shared: &Shared, op: UiCommand) -> Status {
    let (reply, rx) = oneshot::channel();
    let sent = shared
        .commands
        .lock()
        .unwrap_or_else(|e| e.into_inner())
        .send(Command { op, reply });
    if sent.is_err() {
        return Status::error("control loop is gone");
    }
    rx.await.unwrap_or_else(|_| Status::error("control loop is gone"))
}

async fn upgrade(ws: WebSocketUpgrade, State(shared): State<Arc<Shared>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| session(socket, shared))
}

fn encode(msg: &UiMessage) -> Message {
    Message::Text(serde_json::to_string(msg).expect("serializable").into())
}

async fn session(socket: WebSocket, shared: Arc<Shared>) {
    let id = shared.next_id.fetch_add(1, Ordering::Relaxed);
    let controls = {
        let mut slot = shared.controller.lock().unwrap_or_else(|e| e.into_inner());
        slot.get_or_insert(id) == &id
    };
    log::info!("ui socket {id} opened as {}", if controls { "controller" } else { "observer" });
    let (mut tx, mut rx) = socket.split();
    let mut samples = shared.samples.clone();
    let mut notices = shared.notices.clone();
    samples.mark_unchanged();
    notices.mark_unchanged();

    let hello = if controls {
        Status::new(shared.state.borrow().as_str(), "controller")
    } else {
        Status::new("observer", "read-only: another client controls the loop")
    };
    let mut last_t = f64::NEG_INFINITY;
    let mut ok = tx.send(encode(&UiMessage::Status(hello))).await.is_ok();
    while ok {
        let out = tokio::select! {
            msg = rx.next() => match msg {
                Some(Ok(Message::Text(text))) => Some(UiMessage::Status(reply(&shared, controls, &text).await)),
                Some(Ok(Message::Binary(_))) => Some(UiMessage::Status(Status::error("expected a JSON text message"))),
                Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                Some(Ok(_)) => None,
            },
            changed = samples.changed() => {
                if changed.is_err() {
                    break;
                }
                match *samples.borrow_and_update() {
                    Some(s) if s.t > last_t => {
                        last_t = s.t;
                        Some(UiMessage::Sample(s))
                    }
                    _ => None,
                }
            },
            changed = notices.changed() => {
                if changed.is_err() {
                    break;
                }
                notices.borrow_and_update().clone().map(UiMessage::Status)
            },
        };
        if let Some(msg) = out {
            ok = tx.send(encode(&msg)).await.is_ok();
        }
    }
    if controls {
        *shared.controller.lock().unwrap_or_else(|e| e.into_inner()) = None;
    }
    log::info!("ui socket {id} closed");
}

async fn reply(shared: &Shared, controls: bool, text: &str) -> Status {
    let op = match serde_json::from_str::<UiCommand>(text) {
        Ok(op) => op,
        Err(e) => return Status::error(format!("malformed message: {e}")),
    };
    if !controls {
        return Status::new("observer", "read-only: command ignored");
    }
    send_command(shared, op).await
}
