//! Closed loops with a send-on-delta sampler either in front of the PID
//! (error sampled) or between the PID and the plant (control sampled).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::connector::{ConnectorError, HighLevelSession, LinkTable, Transport};
use crate::plant::CoupledTanks;
use crate::protocol::{Fault, Value};
use crate::runtime::InstrumentProcess;

use super::block::{Block, BlockKind};
use super::pid::{PidController, PidParams, PidParamsError};
use super::sod::{BadDelta, SodSampler};
use super::solver::refine_event_time;

pub const DEFAULT_DT: f64 = 0.01;

/// Where the send-on-delta sampler sits in the loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Placement {
    /// The controller sees the sampled error.
    #[serde(rename = "error")]
    ErrorSampled,
    /// The controller runs on the raw error; its output is sampled.
    #[serde(rename = "control")]
    ControlSampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopConfig {
    pub placement: Placement,
    pub setpoint: f64,
    pub pid: PidParams,
    pub delta: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Locate each event between grid points by bisection.
    #[serde(default = "default_refine")]
    pub refine_events: bool,
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

fn default_refine() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LoopConfigError {
    #[error("dt must be positive and finite, got {0}")]
    BadDt(f64),
    #[error("setpoint must be finite")]
    BadSetpoint,
    #[error(transparent)]
    Delta(#[from] BadDelta),
    #[error(transparent)]
    Pid(#[from] PidParamsError),
}

impl LoopConfig {
    /// PI gains and thresholds picked by the grid search in
    /// `examples/tune_gains.rs` for a 0 -> 10 cm step on the default tank.
    /// The pump range 0..10 V bounds the controller output.
    pub fn tuned(placement: Placement, setpoint: f64) -> Self {
        let (kp, ki, delta) = match placement {
            Placement::ErrorSampled => (1.0, 0.05, 0.05),
            Placement::ControlSampled => (2.0, 0.1, 0.02),
        };
        Self {
            placement,
            setpoint,
            pid: PidParams::new(kp, ki, 0.0).with_limits(0.0, 10.0),
            delta,
            dt: DEFAULT_DT,
            refine_events: true,
        }
    }

    pub fn validate(&self) -> Result<(), LoopConfigError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(LoopConfigError::BadDt(self.dt));
        }
        if !self.setpoint.is_finite() {
            return Err(LoopConfigError::BadSetpoint);
        }
        SodSampler::new(self.delta)?;
        self.pid.validate()?;
        Ok(())
    }
}

/// One row of a loop trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopRecord {
    pub t: f64,
    pub r: f64,
    pub y: f64,
    pub e: f64,
    /// Controller output.
    pub u: f64,
    /// Held output of the sampler (error or control, by placement).
    pub sampled: f64,
    pub event: bool,
}

/// A sampler emission located between two grid points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinedEvent {
    pub t_grid: f64,
    pub t: f64,
    pub value: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum PlantError {
    #[error(transparent)]
    Remote(#[from] ConnectorError),
}

impl PlantError {
    pub fn fault(&self) -> Option<&Fault> {
        match self {
            PlantError::Remote(e) => e.fault(),
        }
    }
}

/// The plant as seen by a loop: one measured output, one actuated input.
pub trait PlantBinding {
    fn measure(&mut self) -> Result<f64, PlantError>;

    fn actuate(&mut self, u: f64) -> Result<(), PlantError>;

    /// Advances the plant by `dt` seconds.
    fn advance(&mut self, dt: f64) -> Result<(), PlantError>;

    /// Liveness signal while the loop is paused.
    fn keepalive(&mut self) -> Result<(), PlantError> {
        Ok(())
    }

    /// Gives the plant up; no further calls follow.
    fn release(&mut self) {}
}

impl<P: PlantBinding + ?Sized> PlantBinding for Box<P> {
    fn measure(&mut self) -> Result<f64, PlantError> {
        (**self).measure()
    }

    fn actuate(&mut self, u: f64) -> Result<(), PlantError> {
        (**self).actuate(u)
    }

    fn advance(&mut self, dt: f64) -> Result<(), PlantError> {
        (**self).advance(dt)
    }

    fn keepalive(&mut self) -> Result<(), PlantError> {
        (**self).keepalive()
    }

    fn release(&mut self) {
        (**self).release()
    }
}

/// Number of instrument periods in one loop step; `None` if `dt` is not a
/// whole multiple of `period`.
pub fn periods_per_step(dt: f64, period: f64) -> Option<i32> {
    let n = (dt / period).round();
    let fits = n >= 1.0 && n <= f64::from(i32::MAX) && (n * period - dt).abs() <= 1e-9 * dt;
    fits.then_some(n as i32)
}

/// The simulated tank driven in-process with the same stepping as the
/// instrument server: bottom level measured, pump voltage actuated.
pub struct LocalTank {
    process: CoupledTanks,
    period: f64,
}

impl LocalTank {
    pub fn new(process: CoupledTanks, period: f64) -> Self {
        Self { process, period }
    }

    pub fn process(&self) -> &CoupledTanks {
        &self.process
    }
}

impl PlantBinding for LocalTank {
    fn measure(&mut self) -> Result<f64, PlantError> {
        Ok(self.process.sample("h_bot").and_then(|v| v.as_f64()).unwrap_or(0.0))
    }

    fn actuate(&mut self, u: f64) -> Result<(), PlantError> {
        let u = u.clamp(0.0, self.process.params().u_max);
        self.process.write_control("pump_u", &Value::Double(u));
        Ok(())
    }

    fn advance(&mut self, dt: f64) -> Result<(), PlantError> {
        let n = periods_per_step(dt, self.period).expect("dt checked against the plant period");
        for _ in 0..n {
            self.process.step(self.period);
        }
        Ok(())
    }
}

impl Block for LocalTank {
    fn kind(&self) -> BlockKind {
        BlockKind::Hybrid
    }
}

/// Local name of the measured read link in a remote loop.
pub const MEASURED_LOCAL: &str = "y";
/// Local name of the actuated write link in a remote loop.
pub const ACTUATED_LOCAL: &str = "u";

/// A plant reached through a connected high-level session. The link table
/// must bind `y` (read) and `u` (write).
pub struct RemotePlant<T> {
    session: HighLevelSession<T>,
    lockstep: bool,
    u_range: (f64, f64),
}

impl<T: Transport> RemotePlant<T> {
    /// Missing `y`/`u` links, one message each.
    pub fn link_problems(table: &LinkTable) -> Vec<String> {
        [MEASURED_LOCAL, ACTUATED_LOCAL]
            .into_iter()
            .filter(|name| table.link(name).is_none())
            .map(|name| format!("the loop needs a link with local name '{name}'"))
            .collect()
    }

    /// Wraps a session that is already running. Actuation is clamped to
    /// the published range of the `u` target.
    pub fn new(session: HighLevelSession<T>, lockstep: bool) -> Self {
        let u_range = session
            .descriptor(ACTUATED_LOCAL)
            .map(|d| (d.min.unwrap_or(f64::NEG_INFINITY), d.max.unwrap_or(f64::INFINITY)))
            .unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
        Self {
            session,
            lockstep,
            u_range,
        }
    }

    pub fn period(&self) -> Option<f64> {
        self.session.metadata().map(|m| m.period)
    }

    pub fn session_mut(&mut self) -> &mut HighLevelSession<T> {
        &mut self.session
    }

    pub fn into_session(self) -> HighLevelSession<T> {
        self.session
    }
}

impl<T: Transport> PlantBinding for RemotePlant<T> {
    fn measure(&mut self) -> Result<f64, PlantError> {
        let values = self.session.get_values()?;
        let y = values.get(MEASURED_LOCAL).and_then(Value::as_f64).ok_or_else(|| {
            ConnectorError::Link {
                link: MEASURED_LOCAL.to_owned(),
                fault: Fault::internal("measured value is not numeric"),
            }
        })?;
        Ok(y)
    }

    fn actuate(&mut self, u: f64) -> Result<(), PlantError> {
        let u = u.clamp(self.u_range.0, self.u_range.1);
        let subset = BTreeMap::from([(ACTUATED_LOCAL.to_owned(), Value::Double(u))]);
        Ok(self.session.set_values(&subset)?)
    }

    fn advance(&mut self, dt: f64) -> Result<(), PlantError> {
        if self.lockstep {
            let period = self.period().unwrap_or(dt);
            let n = periods_per_step(dt, period).ok_or_else(|| {
                ConnectorError::Config(vec![format!(
                    "loop dt {dt} is not a multiple of the instrument period {period}"
                )])
            })?;
            self.session.tick(n)?;
        } else {
            self.session.heartbeat()?;
        }
        Ok(())
    }

    fn keepalive(&mut self) -> Result<(), PlantError> {
        Ok(self.session.heartbeat()?)
    }

    fn release(&mut self) {
        self.session.disconnect();
    }
}

impl<T> Block for RemotePlant<T> {
    fn kind(&self) -> BlockKind {
        BlockKind::Hybrid
    }
}

/// A PID loop with a send-on-delta sampler around a plant binding.
///
/// Each step: measure `y`, form `e = r - y`, run sampler and controller in
/// the configured order, transmit the plant input only if it changed, then
/// advance the plant by `dt`. Time is `k·dt` for step `k`.
pub struct ControlLoop<P> {
    cfg: LoopConfig,
    plant: P,
    pid: PidController,
    sampler: SodSampler,
    k: u64,
    last_sent: Option<f64>,
    last_input: Option<(f64, f64)>,
    events: Vec<RefinedEvent>,
}

impl<P: PlantBinding> ControlLoop<P> {
    pub fn new(cfg: LoopConfig, plant: P) -> Result<Self, LoopConfigError> {
        cfg.validate()?;
        Ok(Self {
            pid: PidController::new(cfg.pid),
            sampler: SodSampler::new(cfg.delta)?,
            cfg,
            plant,
            k: 0,
            last_sent: None,
            last_input: None,
            events: Vec::new(),
        })
    }

    pub fn config(&self) -> &LoopConfig {
        &self.cfg
    }

    pub fn plant(&self) -> &P {
        &self.plant
    }

    pub fn plant_mut(&mut self) -> &mut P {
        &mut self.plant
    }

    pub fn into_plant(self) -> P {
        self.plant
    }

    /// Time of the next step.
    pub fn time(&self) -> f64 {
        self.k as f64 * self.cfg.dt
    }

    pub fn refined_events(&self) -> &[RefinedEvent] {
        &self.events
    }

    /// Block kinds in signal order: sampler and controller swap places with
    /// the placement.
    pub fn blocks(&self) -> [(&'static str, BlockKind); 3] {
        let sampler = ("send-on-delta", self.sampler.kind());
        let pid = ("pid", self.pid.kind());
        let plant = ("plant", BlockKind::Hybrid);
        match self.cfg.placement {
            Placement::ErrorSampled => [sampler, pid, plant],
            Placement::ControlSampled => [pid, sampler, plant],
        }
    }

    /// New gains and limits; controller memory is kept.
    pub fn set_gains(&mut self, pid: PidParams) -> Result<(), LoopConfigError> {
        pid.validate()?;
        self.cfg.pid = pid;
        self.pid.params = pid;
        Ok(())
    }

    pub fn set_setpoint(&mut self, r: f64) -> Result<(), LoopConfigError> {
        if !r.is_finite() {
            return Err(LoopConfigError::BadSetpoint);
        }
        self.cfg.setpoint = r;
        Ok(())
    }

    /// New threshold; the sampler re-initializes on the next step.
    pub fn set_delta(&mut self, delta: f64) -> Result<(), LoopConfigError> {
        self.sampler = SodSampler::new(delta)?;
        self.cfg.delta = delta;
        self.last_input = None;
        Ok(())
    }

    /// Moves the sampler; it re-initializes on the next step.
    pub fn set_placement(&mut self, placement: Placement) {
        if placement != self.cfg.placement {
            self.cfg.placement = placement;
            self.sampler.reset();
            self.last_input = None;
        }
    }

    pub fn step(&mut self) -> Result<LoopRecord, PlantError> {
        let t = self.time();
        let dt = self.cfg.dt;
        let r = self.cfg.setpoint;
        let y = self.plant.measure()?;
        let e = r - y;
        let before = self.sampler.state;
        let (input, u, sampled, event, plant_u) = match self.cfg.placement {
            Placement::ErrorSampled => {
                let (held, event) = self.sampler.sample(e, t);
                let u = self.pid.update(held, dt);
                (e, u, held, event, u)
            }
            Placement::ControlSampled => {
                let u = self.pid.update(e, dt);
                let (held, event) = self.sampler.sample(u, t);
                (u, u, held, event, held)
            }
        };
        if event && self.cfg.refine_events {
            self.refine(before, t, input);
        }
        self.last_input = Some((t, input));
        if self.last_sent != Some(plant_u) {
            self.plant.actuate(plant_u)?;
            self.last_sent = Some(plant_u);
        }
        self.plant.advance(dt)?;
        self.k += 1;
        Ok(LoopRecord {
            t,
            r,
            y,
            e,
            u,
            sampled,
            event,
        })
    }

    pub fn run(&mut self, steps: u64) -> Result<Vec<LoopRecord>, PlantError> {
        (0..steps).map(|_| self.step()).collect()
    }

    fn refine(&mut self, before: Option<super::sod::SodState>, t: f64, v: f64) {
        let (Some(state), Some((t_prev, v_prev))) = (before, self.last_input) else {
            return;
        };
        let span = t - t_prev;
        let line = |s: f64| v_prev + (v - v_prev) * ((s - t_prev) / span);
        let t_event = refine_event_time(line, &state, t_prev, t, self.cfg.dt / 64.0).unwrap_or(t);
        self.events.push(RefinedEvent {
            t_grid: t,
            t: t_event,
            value: v,
        });
    }
}
