//! Headless experiments: the JSON configuration, loop assembly for local or
//! remote plants, and the CSV trace format.

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::Deserialize;

use crate::connector::{ConnectorError, HighLevelSession, LinkTable, Transport};
use crate::control::loops::{periods_per_step, ControlLoop, LocalTank, LoopConfig, LoopRecord, PlantBinding, PlantError, RemotePlant};
use crate::plant::{CoupledTanksVi, TankConfig};
use crate::protocol::Fault;

pub const DEFAULT_UI_DECIMATION: u32 = 5;

pub const TRACE_HEADER: [&str; 7] = ["t", "r", "y", "e", "u", "sampled", "event"];

#[derive(Debug, Clone, PartialEq)]
pub enum Binding {
    /// Simulated tank in the client process.
    Local,
    Remote(LinkTable),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Steps paced by the wall clock.
    Realtime,
    /// Steps run back to back; a remote server advances only on ticks.
    Lockstep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub binding: Binding,
    pub plant: TankConfig,
    pub loop_cfg: LoopConfig,
    pub duration: f64,
    pub mode: Mode,
    pub output: Option<PathBuf>,
    pub ui_decimation: u32,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    binding: serde_json::Value,
    #[serde(default)]
    plant: Option<serde_json::Value>,
    #[serde(rename = "loop")]
    loop_cfg: LoopConfig,
    duration: f64,
    #[serde(default = "default_mode")]
    mode: Mode,
    #[serde(default)]
    output: Option<PathBuf>,
    #[serde(default = "default_decimation")]
    ui_decimation: u32,
}

fn default_mode() -> Mode {
    Mode::Lockstep
}

fn default_decimation() -> u32 {
    DEFAULT_UI_DECIMATION
}

/// A configuration problem located by JSON pointer.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{pointer}: {message}")]
pub struct ConfigError {
    pub pointer: String,
    pub message: String,
}

impl ConfigError {
    fn new(pointer: &str, message: impl Into<String>) -> Self {
        Self {
            pointer: if pointer.is_empty() { "/".into() } else { pointer.into() },
            message: message.into(),
        }
    }
}

/// Converts serde_path_to_error's dotted path into a JSON pointer.
fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } | Segment::Enum { variant: key } => {
                out.push_str(&key.replace('~', "~0").replace('/', "~1"))
            }
            Segment::Unknown => out.push('?'),
        }
    }
    out
}

fn parse_at<T: serde::de::DeserializeOwned>(value: serde_json::Value, prefix: &str) -> Result<T, ConfigError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let inner = e.inner().to_string();
        let pointer = format!("{prefix}{}", pointer_of(e.path()));
        ConfigError::new(pointer.trim_end_matches("/?"), inner)
    })
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let json: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ConfigError::new("", format!("not valid JSON: {e}")))?;
        let raw: RawConfig = parse_at(json, "")?;
        let binding = match raw.binding {
            serde_json::Value::String(s) if s == "local" => Binding::Local,
            serde_json::Value::String(s) => {
                return Err(ConfigError::new(
                    "/binding",
                    format!("unknown binding '{s}', expected \"local\" or a link table"),
                ))
            }
            v @ serde_json::Value::Object(_) => Binding::Remote(parse_at(v, "/binding")?),
            _ => return Err(ConfigError::new("/binding", "expected \"local\" or a link table object")),
        };
        let plant = match raw.plant {
            None => TankConfig::default(),
            Some(v) => parse_at(v, "/plant")?,
        };
        let cfg = Self {
            binding,
            plant,
            loop_cfg: raw.loop_cfg,
            duration: raw.duration,
            mode: raw.mode,
            output: raw.output,
            ui_decimation: raw.ui_decimation,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(ConfigError::new("/duration", format!("must be positive, got {}", self.duration)));
        }
        let l = &self.loop_cfg;
        if !(l.dt.is_finite() && l.dt > 0.0) {
            return Err(ConfigError::new("/loop/dt", format!("must be positive, got {}", l.dt)));
        }
        if !l.setpoint.is_finite() {
            return Err(ConfigError::new("/loop/setpoint", "must be finite"));
        }
        if !(l.delta.is_finite() && l.delta > 0.0) {
            return Err(ConfigError::new("/loop/delta", format!("must be positive, got {}", l.delta)));
        }
        l.pid.validate().map_err(|e| ConfigError::new("/loop/pid", e.to_string()))?;
        if self.ui_decimation == 0 {
            return Err(ConfigError::new("/ui_decimation", "must be at least 1"));
        }
        match &self.binding {
            Binding::Local => {
                self.plant
                    .validate()
                    .map_err(|e| ConfigError::new("/plant", e.to_string()))?;
                if periods_per_step(l.dt, self.plant.period).is_none() {
                    return Err(ConfigError::new(
                        "/loop/dt",
                        format!("must be a whole multiple of the plant period {}", self.plant.period),
                    ));
                }
            }
            Binding::Remote(table) => {
                if let Some(p) = table.problems().first() {
                    return Err(ConfigError::new("/binding", p.clone()));
                }
            }
        }
        Ok(())
    }

    /// Number of loop steps (and trace rows).
    pub fn steps(&self) -> u64 {
        (self.duration / self.loop_cfg.dt).round() as u64
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("configuration error at {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Connector(#[from] ConnectorError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error("cannot write trace: {0}")]
    Io(#[from] io::Error),
}

impl ExperimentError {
    /// Process exit code: 1 for configuration problems, 2 for runtime
    /// failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 1,
            _ => 2,
        }
    }

    pub fn fault(&self) -> Option<&Fault> {
        match self {
            ExperimentError::Connector(e) => e.fault(),
            ExperimentError::Plant(e) => e.fault(),
            _ => None,
        }
    }
}

/// Builds the loop around an in-process tank.
pub fn local_loop(cfg: &ExperimentConfig) -> Result<ControlLoop<LocalTank>, ExperimentError> {
    let vi = CoupledTanksVi::new(cfg.plant.clone()).map_err(|e| ConfigError::new("/plant", e.to_string()))?;
    let plant = LocalTank::new(vi.process(), cfg.plant.period);
    ControlLoop::new(cfg.loop_cfg, plant).map_err(|e| ConfigError::new("/loop", e.to_string()).into())
}

/// Connects a link-table session and builds the loop around it.
pub fn remote_loop<T: Transport>(
    cfg: &ExperimentConfig,
    table: &LinkTable,
    transport: T,
) -> Result<ControlLoop<RemotePlant<T>>, ExperimentError> {
    let problems = RemotePlant::<T>::link_problems(table);
    if !problems.is_empty() {
        return Err(ConfigError::new("/binding/links", problems.join("; ")).into());
    }
    let mut session = HighLevelSession::configure(table.clone(), transport)?;
    session.connect()?;
    let period = session.metadata().map_or(cfg.loop_cfg.dt, |m| m.period);
    if periods_per_step(cfg.loop_cfg.dt, period).is_none() {
        session.disconnect();
        return Err(ConfigError::new(
            "/loop/dt",
            format!("must be a whole multiple of the instrument period {period}"),
        )
        .into());
    }
    let plant = RemotePlant::new(session, cfg.mode == Mode::Lockstep);
    ControlLoop::new(cfg.loop_cfg, plant).map_err(|e| ConfigError::new("/loop", e.to_string()).into())
}

/// Runs `steps` loop steps, sleeping between steps in real-time mode.
pub fn drive<P: PlantBinding>(
    control: &mut ControlLoop<P>,
    steps: u64,
    mode: Mode,
) -> Result<Vec<LoopRecord>, PlantError> {
    let dt = control.config().dt;
    let start = Instant::now();
    let mut out = Vec::with_capacity(steps as usize);
    for k in 0..steps {
        out.push(control.step()?);
        if mode == Mode::Realtime {
            let due = start + Duration::from_secs_f64((k + 1) as f64 * dt);
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                std::thread::sleep(wait);
            }
        }
    }
    Ok(out)
}

/// Runs a local-binding experiment to completion.
pub fn run_local(cfg: &ExperimentConfig) -> Result<Vec<LoopRecord>, ExperimentError> {
    let mut control = local_loop(cfg)?;
    Ok(drive(&mut control, cfg.steps(), cfg.mode)?)
}

/// Runs a remote-binding experiment; the session is always torn down.
pub fn run_remote<T: Transport>(
    cfg: &ExperimentConfig,
    table: &LinkTable,
    transport: T,
) -> Result<Vec<LoopRecord>, ExperimentError> {
    let mut control = remote_loop(cfg, table, transport)?;
    let result = drive(&mut control, cfg.steps(), cfg.mode);
    control.plant_mut().session_mut().disconnect();
    Ok(result?)
}

/// Writes `t,r,y,e,u,sampled,event` rows.
pub fn write_trace<W: Write>(out: W, records: &[LoopRecord]) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER).map_err(io::Error::other)?;
    for r in records {
        w.write_record([
            r.t.to_string(),
            r.r.to_string(),
            r.y.to_string(),
            r.e.to_string(),
            r.u.to_string(),
            r.sampled.to_string(),
            u8::from(r.event).to_string(),
        ])
        .map_err(io::Error::other)?;
    }
    w.flush()
}

pub fn write_trace_file(path: &Path, records: &[LoopRecord]) -> io::Result<()> {
    write_trace(io::BufWriter::new(File::create(path)?), records)
}
