//! Simulated coupled-tank plant.
//!
//! Two tanks stacked vertically with a single pump. Outflow through each
//! orifice follows Torricelli's law `q = a·sqrt(2·g·h)`. The pump feeds
//! either the top tank (which drains into the bottom one) or the bottom tank
//! directly, giving a second- or first-order path to the bottom level.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::control::{rk4_step, Block, BlockKind};
use crate::protocol::{InstrumentMetadata, SyncClass, Value, VariableDescriptor};
use crate::runtime::{InstrumentProcess, VirtualInstrument};

pub const VI_PATH: &str = "plants/coupled_tanks.vi";

/// Physical constants (cm, s, V).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TankParams {
    /// Tank cross-section, cm².
    pub area: f64,
    /// Top tank outlet orifice, cm².
    pub a_top: f64,
    /// Bottom tank outlet orifice, cm².
    pub a_bot: f64,
    /// Pump flow per volt, cm³/(s·V).
    pub k_pump: f64,
    pub g: f64,
    pub h_max: f64,
    pub u_max: f64,
}

impl Default for TankParams {
    fn default() -> Self {
        Self {
            area: 15.52,
            a_top: 0.178,
            a_bot: 0.178,
            k_pump: 4.6,
            g: 981.0,
            h_max: 30.0,
            u_max: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid tank parameters: {0}")]
pub struct TankParamsError(pub String);

impl TankParams {
    pub fn validate(&self) -> Result<(), TankParamsError> {
        let named = [
            ("area", self.area),
            ("a_top", self.a_top),
            ("a_bot", self.a_bot),
            ("k_pump", self.k_pump),
            ("g", self.g),
            ("h_max", self.h_max),
            ("u_max", self.u_max),
        ];
        if let Some((name, v)) = named.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(TankParamsError(format!("{name} must be positive, got {v}")));
        }
        if self.a_top > self.area || self.a_bot > self.area {
            return Err(TankParamsError("orifice larger than the tank".into()));
        }
        Ok(())
    }

    /// Torricelli outflow; negative levels count as empty.
    pub fn outflow(&self, h: f64, a: f64) -> f64 {
        a * (2.0 * self.g * h.max(0.0)).sqrt()
    }

    /// Steady levels `(h_top, h_bot)` for a constant pump voltage.
    pub fn equilibrium(&self, u: f64, route: Route) -> (f64, f64) {
        let q = self.k_pump * u;
        let level = |a: f64| (q / a).powi(2) / (2.0 * self.g);
        match route {
            Route::ToTop => (level(self.a_top), level(self.a_bot)),
            Route::ToBottom => (0.0, level(self.a_bot)),
        }
    }
}

/// Pump destination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    #[default]
    ToTop,
    ToBottom,
}

impl Route {
    pub fn code(self) -> i32 {
        match self {
            Route::ToTop => 0,
            Route::ToBottom => 1,
        }
    }

    pub fn from_code(code: i32) -> Option<Self> {
        match code {
            0 => Some(Route::ToTop),
            1 => Some(Route::ToBottom),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TankState {
    pub h_top: f64,
    pub h_bot: f64,
    /// Last committed pump command, V.
    pub u: f64,
    pub route: Route,
}

/// Level rates `(dh_top/dt, dh_bot/dt)`.
pub fn derivatives(s: &TankState, p: &TankParams) -> (f64, f64) {
    let q_top = p.outflow(s.h_top, p.a_top);
    let q_bot = p.outflow(s.h_bot, p.a_bot);
    let q_in = p.k_pump * s.u;
    match s.route {
        Route::ToTop => ((q_in - q_top) / p.area, (q_top - q_bot) / p.area),
        Route::ToBottom => (-q_top / p.area, (q_in + q_top - q_bot) / p.area),
    }
}

/// One RK4 step followed by the hard clamp `0 <= h <= h_max`.
pub fn integrate_step(s: &TankState, p: &TankParams, dt: f64) -> TankState {
    let flow = |_t: f64, x: &[f64; 2]| {
        let (a, b) = derivatives(
            &TankState {
                h_top: x[0],
                h_bot: x[1],
                ..*s
            },
            p,
        );
        [a, b]
    };
    let [h_top, h_bot] = rk4_step(flow, 0.0, &[s.h_top, s.h_bot], dt);
    TankState {
        h_top: h_top.clamp(0.0, p.h_max),
        h_bot: h_bot.clamp(0.0, p.h_max),
        ..*s
    }
}

/// Instrument configuration, overridable from the server config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TankConfig {
    #[serde(flatten)]
    pub params: TankParams,
    /// Execution period of the instrument, s.
    pub period: f64,
    /// 1 or 2 independent tank units; the second uses the `unit2_` prefix.
    pub units: u8,
    /// Seed of the sensor-noise generator.
    pub seed: u64,
    pub h_top0: f64,
    pub h_bot0: f64,
    pub route: Route,
}

impl Default for TankConfig {
    fn default() -> Self {
        Self {
            params: TankParams::default(),
            period: 0.01,
            units: 1,
            seed: 0,
            h_top0: 0.0,
            h_bot0: 0.0,
            route: Route::ToTop,
        }
    }
}

impl TankConfig {
    pub fn validate(&self) -> Result<(), TankParamsError> {
        self.params.validate()?;
        if !(self.period.is_finite() && self.period > 0.0) {
            return Err(TankParamsError(format!("period must be positive, got {}", self.period)));
        }
        if !(1..=2).contains(&self.units) {
            return Err(TankParamsError(format!("units must be 1 or 2, got {}", self.units)));
        }
        let ok = |h: f64| (0.0..=self.params.h_max).contains(&h);
        if !ok(self.h_top0) || !ok(self.h_bot0) {
            return Err(TankParamsError("initial levels outside [0, h_max]".into()));
        }
        Ok(())
    }

    fn initial_state(&self) -> TankState {
        TankState {
            h_top: self.h_top0,
            h_bot: self.h_bot0,
            u: 0.0,
            route: self.route,
        }
    }
}

/// The coupled-tank virtual instrument.
pub struct CoupledTanksVi {
    config: TankConfig,
    metadata: InstrumentMetadata,
}

impl CoupledTanksVi {
    pub fn new(config: TankConfig) -> Result<Self, TankParamsError> {
        config.validate()?;
        let metadata = build_metadata(&config);
        metadata
            .validate()
            .map_err(|e| TankParamsError(e.to_string()))?;
        Ok(Self { config, metadata })
    }

    pub fn config(&self) -> &TankConfig {
        &self.config
    }

    /// A fresh execution, usable directly as a local plant.
    pub fn process(&self) -> CoupledTanks {
        CoupledTanks::new(self.config.clone())
    }
}

fn unit_prefix(unit: usize) -> &'static str {
    if unit == 0 {
        ""
    } else {
        "unit2_"
    }
}

fn build_metadata(cfg: &TankConfig) -> InstrumentMetadata {
    use SyncClass::{Asynchronous, Synchronous};
    let init = cfg.initial_state();
    let mut controls = Vec::new();
    let mut indicators = Vec::new();
    for unit in 0..usize::from(cfg.units) {
        let p = unit_prefix(unit);
        controls.push(
            VariableDescriptor::control(&format!("{p}pump_u"), Value::Double(0.0), Synchronous)
                .range(0.0, cfg.params.u_max)
                .safe(Value::Double(0.0)),
        );
        controls.push(
            VariableDescriptor::control(&format!("{p}route"), Value::Int(init.route.code()), Asynchronous)
                .range(0.0, 1.0),
        );
        if unit == 0 {
            controls.push(VariableDescriptor::control("noise_sigma", Value::Double(0.0), Asynchronous).min(0.0));
        }
        indicators.push(VariableDescriptor::indicator(
            &format!("{p}h_top"),
            Value::Double(init.h_top),
            Synchronous,
        ));
        indicators.push(VariableDescriptor::indicator(
            &format!("{p}h_bot"),
            Value::Double(init.h_bot),
            Synchronous,
        ));
        if unit == 0 {
            indicators.push(VariableDescriptor::indicator("t", Value::Double(0.0), Synchronous));
        }
    }
    controls.extend(indicators);
    InstrumentMetadata {
        vi: VI_PATH.to_owned(),
        period: cfg.period,
        variables: controls,
    }
}

impl VirtualInstrument for CoupledTanksVi {
    fn metadata(&self) -> &InstrumentMetadata {
        &self.metadata
    }

    fn instantiate(&self) -> Box<dyn InstrumentProcess> {
        Box::new(self.process())
    }
}

/// A running coupled-tank simulation.
#[derive(Debug, Clone)]
pub struct CoupledTanks {
    params: TankParams,
    units: Vec<TankState>,
    noise_sigma: f64,
    rng: ChaCha8Rng,
    steps: u64,
    time: f64,
}

impl CoupledTanks {
    pub fn new(config: TankConfig) -> Self {
        let units = vec![config.initial_state(); usize::from(config.units)];
        Self {
            params: config.params,
            units,
            noise_sigma: 0.0,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            steps: 0,
            time: 0.0,
        }
    }

    pub fn params(&self) -> &TankParams {
        &self.params
    }

    pub fn unit(&self, i: usize) -> &TankState {
        &self.units[i]
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    fn split(name: &str) -> (usize, &str) {
        match name.strip_prefix("unit2_") {
            Some(rest) => (1, rest),
            None => (0, name),
        }
    }

    fn noisy(&mut self, v: f64) -> f64 {
        if self.noise_sigma > 0.0 {
            let normal = Normal::new(0.0, self.noise_sigma).expect("sigma validated as finite, >= 0");
            v + normal.sample(&mut self.rng)
        } else {
            v
        }
    }
}

impl InstrumentProcess for CoupledTanks {
    fn write_control(&mut self, name: &str, value: &Value) {
        if name == "noise_sigma" {
            if let Value::Double(s) = value {
                self.noise_sigma = *s;
            }
            return;
        }
        let (unit, var) = Self::split(name);
        let u_max = self.params.u_max;
        let Some(state) = self.units.get_mut(unit) else {
            return;
        };
        match (var, value) {
            ("pump_u", Value::Double(u)) => state.u = u.clamp(0.0, u_max),
            ("route", Value::Int(code)) => {
                if let Some(route) = Route::from_code(*code) {
                    state.route = route;
                }
            }
            _ => {}
        }
    }

    fn step(&mut self, dt: f64) {
        for s in &mut self.units {
            *s = integrate_step(s, &self.params, dt);
        }
        self.steps += 1;
        self.time = self.steps as f64 * dt;
    }

    fn value(&self, name: &str) -> Option<Value> {
        if name == "noise_sigma" {
            return Some(Value::Double(self.noise_sigma));
        }
        if name == "t" {
            return Some(Value::Double(self.time));
        }
        let (unit, var) = Self::split(name);
        let s = self.units.get(unit)?;
        match var {
            "pump_u" => Some(Value::Double(s.u)),
            "route" => Some(Value::Int(s.route.code())),
            "h_top" => Some(Value::Double(s.h_top)),
            "h_bot" => Some(Value::Double(s.h_bot)),
            _ => None,
        }
    }

    fn sample(&mut self, name: &str) -> Option<Value> {
        match (Self::split(name).1, self.value(name)?) {
            ("h_top" | "h_bot", Value::Double(h)) => Some(Value::Double(self.noisy(h))),
            (_, v) => Some(v),
        }
    }
}

impl Block for CoupledTanks {
    /// Continuous levels with clamping at the tank limits and a switchable
    /// pump route.
    fn kind(&self) -> BlockKind {
        BlockKind::Hybrid
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_tanks_without_input_stay_put() {
        let s = TankState::default();
        assert_eq!(derivatives(&s, &TankParams::default()), (0.0, 0.0));
    }

    #[test]
    fn default_point_matches_scalar_evaluation() {
        // Oracle values from a separate evaluation of the flow balance:
        // q = 0.178·sqrt(2·981·5) = 17.6300...; q_in = 4.6·3 = 13.8.
        let p = TankParams::default();
        let s = TankState {
            h_top: 5.0,
            h_bot: 5.0,
            u: 3.0,
            route: Route::ToTop,
        };
        let (dt_top, dt_bot) = derivatives(&s, &p);
        let q = 0.178 * (2.0f64 * 981.0 * 5.0).sqrt();
        assert!((q - 17.630_089_052_526).abs() < 1e-9);
        assert!((dt_top + 0.246_784_088_436).abs() < 1e-9, "{dt_top}");
        assert_eq!(dt_bot, 0.0);

        let s = TankState {
            route: Route::ToBottom,
            ..s
        };
        let (dt_top, dt_bot) = derivatives(&s, &p);
        assert!((dt_top + 1.135_959_346_168).abs() < 1e-9, "{dt_top}");
        assert!((dt_bot - 0.889_175_257_732).abs() < 1e-9, "{dt_bot}");
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let p = TankParams::default();
        for route in [Route::ToTop, Route::ToBottom] {
            let (h_top, h_bot) = p.equilibrium(3.0, route);
            let s = TankState {
                h_top,
                h_bot,
                u: 3.0,
                route,
            };
            let (a, b) = derivatives(&s, &p);
            assert!(a.abs() < 1e-12 && b.abs() < 1e-12, "{route:?}: {a} {b}");
        }
    }

    #[test]
    fn vanishing_step_changes_nothing() {
        let p = TankParams::default();
        let s = TankState {
            h_top: 4.0,
            h_bot: 2.0,
            u: 5.0,
            route: Route::ToTop,
        };
        let next = integrate_step(&s, &p, 1e-12);
        assert!((next.h_top - s.h_top).abs() < 1e-10);
        assert!((next.h_bot - s.h_bot).abs() < 1e-10);
    }

    #[test]
    fn long_run_converges_to_equilibrium() {
        let p = TankParams::default();
        let mut s = TankState {
            u: 3.0,
            ..Default::default()
        };
        for _ in 0..100_000 {
            s = integrate_step(&s, &p, 0.01);
        }
        let (h_top, h_bot) = p.equilibrium(3.0, Route::ToTop);
        assert!((s.h_top - h_top).abs() < 1e-6);
        assert!((s.h_bot - h_bot).abs() < 1e-6);
    }

    #[test]
    fn draining_is_monotone() {
        let p = TankParams::default();
        let mut s = TankState {
            h_top: 20.0,
            h_bot: 1.0,
            u: 0.0,
            route: Route::ToTop,
        };
        let mut peak_passed = false;
        for _ in 0..20_000 {
            let next = integrate_step(&s, &p, 0.01);
            assert!(next.h_top <= s.h_top);
            if next.h_bot < s.h_bot {
                peak_passed = true;
            } else {
                assert!(!peak_passed || next.h_bot == s.h_bot, "bottom level rose after its peak");
            }
            s = next;
        }
        assert!(peak_passed);
    }

    #[test]
    fn overflow_is_clamped() {
        let p = TankParams::default();
        let mut s = TankState {
            u: 10.0,
            ..Default::default()
        };
        for _ in 0..50_000 {
            s = integrate_step(&s, &p, 0.01);
            assert!(s.h_top <= p.h_max && s.h_bot <= p.h_max);
        }
        assert_eq!(s.h_top, p.h_max);
    }

    #[test]
    fn metadata_lists_six_variables() {
        let vi = CoupledTanksVi::new(TankConfig::default()).unwrap();
        let names: Vec<_> = vi.metadata().variables.iter().map(|v| v.name.as_str()).collect();
        assert_eq!(names, ["pump_u", "route", "noise_sigma", "h_top", "h_bot", "t"]);
        let pump = vi.metadata().variable("pump_u").unwrap();
        assert_eq!(pump.safe, Some(Value::Double(0.0)));
        assert_eq!(pump.admit_write(&Value::Double(12.0)).unwrap_err().code, 106);
    }

    #[test]
    fn second_unit_is_prefixed() {
        let vi = CoupledTanksVi::new(TankConfig {
            units: 2,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(vi.metadata().variables.len(), 10);
        let mut p = vi.process();
        p.write_control("unit2_pump_u", &Value::Double(5.0));
        p.step(0.1);
        assert_eq!(p.value("h_top"), Some(Value::Double(0.0)));
        assert!(matches!(p.value("unit2_h_top"), Some(Value::Double(h)) if h > 0.0));
    }

    #[test]
    fn noise_is_seeded_and_off_by_default() {
        let vi = CoupledTanksVi::new(TankConfig {
            h_bot0: 5.0,
            seed: 7,
            ..Default::default()
        })
        .unwrap();
        let mut a = vi.process();
        assert_eq!(a.sample("h_bot"), a.sample("h_bot"));
        a.write_control("noise_sigma", &Value::Double(0.1));
        let mut b = vi.process();
        b.write_control("noise_sigma", &Value::Double(0.1));
        let ra: Vec<_> = (0..5).map(|_| a.sample("h_bot")).collect();
        let rb: Vec<_> = (0..5).map(|_| b.sample("h_bot")).collect();
        assert_eq!(ra, rb);
        assert_ne!(ra[0], ra[1]);
    }
}
