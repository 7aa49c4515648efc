//! Transport-independent instrument server.
//!
//! `InstrumentServer` owns the registry, the sessions and every live
//! instrument. All mutation goes through `&mut self`, so wrapping it in one
//! mutex gives the single serialization point the protocol relies on. Time
//! is passed in explicitly (`now`, seconds on a monotonic clock) which lets
//! tests drive the real-time scheduler and the watchdog deterministically.

use std::collections::hash_map::RandomState;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::{BuildHasher, Hasher};
use std::path::PathBuf;
use std::sync::Arc;

use crate::protocol::{
    admit, decode_call, encode_response, ConnectionState, Direction, Fault, FaultCode, Method, MethodCall, Value,
    TICK_VARIABLE,
};

use super::instrument::{InstrumentProcess, VirtualInstrument};
use super::log::CsvLog;

pub const DEFAULT_WATCHDOG: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ServerConfig {
    /// Controller silence, in seconds, after which the watchdog intervenes.
    pub watchdog: f64,
    /// Steps run only on explicit `__tick` writes instead of the clock.
    pub lockstep: bool,
    /// Directory for per-run CSV logs; `None` disables logging.
    pub log_dir: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            watchdog: DEFAULT_WATCHDOG,
            lockstep: false,
            log_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Controller,
    Observer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub token: String,
    pub client_id: String,
    pub state: ConnectionState,
    pub role: Role,
    pub vi: Option<String>,
    pub last_heartbeat: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ServerEvent {
    WatchdogTripped { vi: String, client_id: String, at: f64 },
}

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("instrument path '{0}' is already registered")]
    Duplicate(String),
    #[error("instrument '{path}' has invalid metadata: {source}")]
    Metadata {
        path: String,
        source: crate::protocol::MetadataError,
    },
}

struct Registered {
    vi: Arc<dyn VirtualInstrument>,
    metadata_json: String,
}

struct Instance {
    vi: Arc<dyn VirtualInstrument>,
    process: Box<dyn InstrumentProcess>,
    /// Last accepted write per control.
    controls: BTreeMap<String, Value>,
    /// Writes waiting for the next step boundary, in arrival order.
    pending: Vec<(String, Value)>,
    running: bool,
    run_origin: f64,
    run_steps: u64,
    total_steps: u64,
    controller: Option<String>,
    observers: BTreeSet<String>,
    log: Option<CsvLog>,
}

impl Instance {
    fn new(vi: Arc<dyn VirtualInstrument>) -> Self {
        let process = vi.instantiate();
        let controls = vi
            .metadata()
            .controls()
            .map(|d| (d.name.clone(), d.initial.clone()))
            .collect();
        Self {
            vi,
            process,
            controls,
            pending: Vec::new(),
            running: false,
            run_origin: 0.0,
            run_steps: 0,
            total_steps: 0,
            controller: None,
            observers: BTreeSet::new(),
            log: None,
        }
    }

    fn period(&self) -> f64 {
        self.vi.metadata().period
    }

    fn time(&self) -> f64 {
        self.total_steps as f64 * self.period()
    }

    fn step(&mut self) {
        for (name, value) in self.pending.drain(..) {
            self.process.write_control(&name, &value);
        }
        let period = self.period();
        self.process.step(period);
        self.total_steps += 1;
        self.run_steps += 1;
        if let Some(log) = self.log.as_mut() {
            let t = self.total_steps as f64 * period;
            let values: Vec<Value> = self
                .vi
                .metadata()
                .variables
                .iter()
                .map(|d| self.process.value(&d.name).unwrap_or_else(|| d.initial.clone()))
                .collect();
            log.append(t, &values);
        }
    }

    fn start(&mut self, now: f64, log_dir: Option<&PathBuf>) {
        self.running = true;
        self.run_origin = now;
        self.run_steps = 0;
        self.log = log_dir.and_then(|dir| {
            let meta = self.vi.metadata();
            let columns: Vec<&str> = meta.variables.iter().map(|d| d.name.as_str()).collect();
            match CsvLog::create(dir, &meta.vi, chrono::Utc::now(), &columns) {
                Ok(log) => Some(log),
                Err(e) => {
                    log::warn!("cannot open experiment log in {}: {e}", dir.display());
                    None
                }
            }
        });
    }

    fn stop(&mut self) {
        self.running = false;
        if let Some(mut log) = self.log.take() {
            log.finish();
        }
    }

    /// Forces every control with a declared safe value, bypassing the
    /// step-boundary buffer.
    fn force_safe(&mut self) {
        let safe: Vec<(String, Value)> = self
            .vi
            .metadata()
            .controls()
            .filter_map(|d| d.safe.clone().map(|s| (d.name.clone(), s)))
            .collect();
        for (name, value) in safe {
            self.pending.retain(|(n, _)| *n != name);
            self.process.write_control(&name, &value);
            self.controls.insert(name, value);
        }
    }
}

pub struct InstrumentServer {
    config: ServerConfig,
    registry: BTreeMap<String, Registered>,
    sessions: HashMap<String, Session>,
    instances: BTreeMap<String, Instance>,
    events: Vec<ServerEvent>,
    token_seed: RandomState,
    token_counter: u64,
}

impl InstrumentServer {
    pub fn new(config: ServerConfig) -> Self {
        Self {
            config,
            registry: BTreeMap::new(),
            sessions: HashMap::new(),
            instances: BTreeMap::new(),
            events: Vec::new(),
            token_seed: RandomState::new(),
            token_counter: 0,
        }
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    pub fn register_instrument(&mut self, vi: Arc<dyn VirtualInstrument>) -> Result<(), RegistryError> {
        let path = vi.path().to_owned();
        if self.registry.contains_key(&path) {
            return Err(RegistryError::Duplicate(path));
        }
        vi.metadata()
            .validate()
            .map_err(|source| RegistryError::Metadata {
                path: path.clone(),
                source,
            })?;
        let metadata_json = vi.metadata().to_json();
        self.registry.insert(path, Registered { vi, metadata_json });
        Ok(())
    }

    /// Decodes one XML-RPC request body, dispatches it and encodes the reply.
    pub fn handle_request(&mut self, token: Option<&str>, body: &[u8], now: f64) -> Vec<u8> {
        let result = decode_call(body).and_then(|call| self.handle_call(token, call, now));
        encode_response(&result)
    }

    pub fn handle_call(&mut self, token: Option<&str>, call: MethodCall, now: f64) -> Result<Value, Fault> {
        let MethodCall { method, params } = call;
        if method == Method::Connect {
            let client_id = match params.first() {
                Some(Value::Text(s)) => s.clone(),
                _ => return Err(Fault::with_detail(FaultCode::TypeMismatch, "clientId")),
            };
            return Ok(Value::Text(self.open_session(client_id, now)));
        }
        let token = token
            .filter(|t| self.sessions.contains_key(*t))
            .ok_or_else(Fault::invalid_session)?
            .to_owned();
        let session = self.sessions.get_mut(&token).expect("checked above");
        session.last_heartbeat = now;
        let next = admit(session.state, method)?;
        match method {
            Method::Connect => unreachable!(),
            Method::OpenVi => self.open_vi(&token, text_param(&params, 0)?),
            Method::RunVi => self.run_vi(&token, now),
            Method::StopVi => self.stop_vi(&token),
            Method::CloseVi => {
                self.close_vi(&token);
                Ok(Value::Boolean(true))
            }
            Method::Disconnect => {
                self.drop_session(&token);
                debug_assert_eq!(next, ConnectionState::Disconnected);
                Ok(Value::Boolean(true))
            }
            Method::GetMetadata => {
                let path = self.session_vi(&token)?;
                Ok(Value::Text(self.registry[&path].metadata_json.clone()))
            }
            Method::SetValue => {
                let value = params.get(1).cloned().ok_or_else(|| Fault::with_detail(FaultCode::TypeMismatch, "value"))?;
                self.set_value(&token, text_param(&params, 0)?, value)
            }
            Method::GetValue => self.get_value(&token, text_param(&params, 0)?),
            Method::Heartbeat => Ok(Value::Boolean(true)),
        }
    }

    /// Runs every step that is due by `now` (real-time mode) and then the
    /// watchdog. Call at least every `watchdog / 4` seconds.
    pub fn poll(&mut self, now: f64) {
        if !self.config.lockstep {
            for inst in self.instances.values_mut().filter(|i| i.running) {
                let due = ((now - inst.run_origin) / inst.period() + 1e-9).floor();
                while (inst.run_steps as f64) < due {
                    inst.step();
                }
            }
        }
        self.watchdog_tick(now);
    }

    /// Forces a silent controller's instrument into its safe state.
    pub fn watchdog_tick(&mut self, now: f64) {
        let limit = self.config.watchdog;
        for (path, inst) in self.instances.iter_mut() {
            let Some(token) = inst.controller.clone() else {
                continue;
            };
            let Some(session) = self.sessions.get_mut(&token) else {
                continue;
            };
            if now - session.last_heartbeat <= limit {
                continue;
            }
            inst.force_safe();
            inst.stop();
            inst.controller = None;
            inst.observers.insert(token);
            session.role = Role::Observer;
            session.state = ConnectionState::Opened;
            log::warn!(
                "watchdog: controller '{}' silent for {:.3} s; {path} forced safe and stopped",
                session.client_id,
                now - session.last_heartbeat
            );
            self.events.push(ServerEvent::WatchdogTripped {
                vi: path.clone(),
                client_id: session.client_id.clone(),
                at: now,
            });
        }
    }

    pub fn events(&self) -> &[ServerEvent] {
        &self.events
    }

    pub fn session(&self, token: &str) -> Option<&Session> {
        self.sessions.get(token)
    }

    pub fn is_running(&self, path: &str) -> bool {
        self.instances.get(path).is_some_and(|i| i.running)
    }

    pub fn is_open(&self, path: &str) -> bool {
        self.instances.contains_key(path)
    }

    /// Committed, noise-free value as the instrument currently holds it.
    pub fn peek(&self, path: &str, name: &str) -> Option<Value> {
        self.instances.get(path)?.process.value(name)
    }

    /// Instrument time of an open instrument.
    pub fn instrument_time(&self, path: &str) -> Option<f64> {
        self.instances.get(path).map(Instance::time)
    }

    pub fn log_path(&self, path: &str) -> Option<PathBuf> {
        Some(self.instances.get(path)?.log.as_ref()?.path().to_owned())
    }

    fn open_session(&mut self, client_id: String, now: f64) -> String {
        self.token_counter += 1;
        let mut h = self.token_seed.build_hasher();
        h.write_u64(self.token_counter);
        h.write(client_id.as_bytes());
        let token = format!("{:04x}{:016x}", self.token_counter, h.finish());
        self.sessions.insert(
            token.clone(),
            Session {
                token: token.clone(),
                client_id,
                state: ConnectionState::Connected,
                role: Role::Observer,
                vi: None,
                last_heartbeat: now,
            },
        );
        token
    }

    fn session_vi(&self, token: &str) -> Result<String, Fault> {
        self.sessions[token]
            .vi
            .clone()
            .filter(|p| self.instances.contains_key(p))
            .ok_or_else(|| Fault::wrong_state("no open instrument"))
    }

    fn open_vi(&mut self, token: &str, path: &str) -> Result<Value, Fault> {
        let vi = self
            .registry
            .get(path)
            .map(|r| Arc::clone(&r.vi))
            .ok_or_else(|| Fault::with_detail(FaultCode::UnknownVi, path))?;
        let inst = self
            .instances
            .entry(path.to_owned())
            .or_insert_with(|| Instance::new(vi));
        let role = if inst.controller.is_none() {
            inst.controller = Some(token.to_owned());
            Role::Controller
        } else {
            inst.observers.insert(token.to_owned());
            Role::Observer
        };
        let session = self.sessions.get_mut(token).expect("valid token");
        session.role = role;
        session.vi = Some(path.to_owned());
        session.state = ConnectionState::Opened;
        Ok(Value::Boolean(true))
    }

    fn run_vi(&mut self, token: &str, now: f64) -> Result<Value, Fault> {
        let path = self.session_vi(token)?;
        let inst = self.instances.get_mut(&path).expect("checked by session_vi");
        match inst.controller.as_deref() {
            Some(c) if c == token => {}
            Some(_) => {
                return Err(Fault::with_detail(
                    FaultCode::SessionBusy,
                    "instrument is controlled by another session",
                ))
            }
            None => {
                // Control is free (e.g. after a watchdog demotion): claim it.
                inst.observers.remove(token);
                inst.controller = Some(token.to_owned());
            }
        }
        inst.start(now, self.config.log_dir.as_ref());
        let session = self.sessions.get_mut(token).expect("valid token");
        session.role = Role::Controller;
        session.state = ConnectionState::Running;
        Ok(Value::Boolean(true))
    }

    fn stop_vi(&mut self, token: &str) -> Result<Value, Fault> {
        let path = self.session_vi(token)?;
        let inst = self.instances.get_mut(&path).expect("checked by session_vi");
        inst.stop();
        self.sessions.get_mut(token).expect("valid token").state = ConnectionState::Opened;
        Ok(Value::Boolean(true))
    }

    fn close_vi(&mut self, token: &str) {
        let Some(path) = self.sessions[token].vi.clone() else {
            return;
        };
        let is_controller = self
            .instances
            .get(&path)
            .is_some_and(|i| i.controller.as_deref() == Some(token));
        let detached: Vec<String> = if is_controller {
            let mut inst = self.instances.remove(&path).expect("instance exists");
            inst.stop();
            inst.observers.into_iter().chain([token.to_owned()]).collect()
        } else {
            if let Some(inst) = self.instances.get_mut(&path) {
                inst.observers.remove(token);
            }
            vec![token.to_owned()]
        };
        for t in detached {
            if let Some(s) = self.sessions.get_mut(&t) {
                s.vi = None;
                s.role = Role::Observer;
                s.state = ConnectionState::Connected;
            }
        }
    }

    fn drop_session(&mut self, token: &str) {
        let state = self.sessions[token].state;
        if state == ConnectionState::Running {
            let _ = self.stop_vi(token);
        }
        self.close_vi(token);
        self.sessions.remove(token);
    }

    fn set_value(&mut self, token: &str, name: &str, value: Value) -> Result<Value, Fault> {
        let path = self.session_vi(token)?;
        let lockstep = self.config.lockstep;
        let inst = self.instances.get_mut(&path).expect("checked by session_vi");
        let is_controller = inst.controller.as_deref() == Some(token);
        if name == TICK_VARIABLE && lockstep {
            if !is_controller {
                return Err(Fault::with_detail(FaultCode::SessionBusy, "only the controller may tick"));
            }
            if !inst.running {
                return Err(Fault::wrong_state("instrument is not running"));
            }
            let n = match value {
                Value::Int(n) if n >= 1 => n,
                Value::Int(n) => return Err(Fault::with_detail(FaultCode::ValueOutOfRange, format!("tick count {n}"))),
                other => {
                    return Err(Fault::with_detail(
                        FaultCode::TypeMismatch,
                        format!("tick count must be int, got {}", other.wire_type()),
                    ))
                }
            };
            for _ in 0..n {
                inst.step();
            }
            return Ok(Value::Boolean(true));
        }
        let desc = inst
            .vi
            .metadata()
            .variable(name)
            .ok_or_else(|| Fault::with_detail(FaultCode::UnknownVariable, name))?;
        if desc.direction == Direction::Indicator {
            return Err(Fault::with_detail(FaultCode::NotWritable, name));
        }
        if !is_controller {
            return Err(Fault::with_detail(
                FaultCode::SessionBusy,
                format!("{name}: controls are held by another session"),
            ));
        }
        let value = desc.admit_write(&value)?;
        inst.controls.insert(name.to_owned(), value.clone());
        inst.pending.push((name.to_owned(), value));
        Ok(Value::Boolean(true))
    }

    fn get_value(&mut self, token: &str, name: &str) -> Result<Value, Fault> {
        let path = self.session_vi(token)?;
        let inst = self.instances.get_mut(&path).expect("checked by session_vi");
        let desc = inst
            .vi
            .metadata()
            .variable(name)
            .ok_or_else(|| Fault::with_detail(FaultCode::UnknownVariable, name))?;
        match desc.direction {
            Direction::Control => Ok(inst.controls[name].clone()),
            Direction::Indicator => inst
                .process
                .sample(name)
                .ok_or_else(|| Fault::internal(format!("instrument did not provide {name}"))),
        }
    }
}

fn text_param(params: &[Value], i: usize) -> Result<&str, Fault> {
    match params.get(i) {
        Some(Value::Text(s)) => Ok(s),
        _ => Err(Fault::with_detail(FaultCode::TypeMismatch, format!("parameter {i} must be a string"))),
    }
}
