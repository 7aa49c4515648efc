//! Browser bindings for the demo page: a closed loop on the simulated tank,
//! send-on-delta sampling of a sine, and open-loop tank step responses.
//!
//! Each export returns a flat `Float64Array` of fixed-width rows so the page
//! can plot without parsing.

use openlab_core::control::loops::{ControlLoop, LocalTank, LoopConfig, Placement, DEFAULT_DT};
use openlab_core::control::{PidParams, SodSampler};
use openlab_core::plant::{CoupledTanksVi, Route, TankConfig};
use openlab_core::protocol::Value;
use openlab_core::runtime::InstrumentProcess;
use wasm_bindgen::prelude::wasm_bindgen;

/// Upper bound on returned rows, to keep a slider from freezing the tab.
pub const MAX_ROWS: usize = 200_000;

/// Columns of [`simulate_loop`].
pub const LOOP_COLUMNS: usize = 6;
/// Columns of [`sod_sine`].
pub const SOD_COLUMNS: usize = 4;
/// Columns of [`tank_step_response`].
pub const TANK_COLUMNS: usize = 3;

fn rows_for(duration: f64, dt: f64) -> Result<usize, String> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(format!("duration must be positive, got {duration}"));
    }
    let n = (duration / dt).round();
    if n > MAX_ROWS as f64 {
        return Err(format!("{duration} s is more than {MAX_ROWS} steps of {dt} s"));
    }
    Ok(n as usize)
}

fn tank() -> (CoupledTanksVi, TankConfig) {
    let cfg = TankConfig::default();
    (CoupledTanksVi::new(cfg.clone()).expect("default tank is valid"), cfg)
}

/// 0 -> `setpoint` step on the default tank. `placement` is "error" or
/// "control". Rows: t, r, y, u, sampled, event (0/1).
#[wasm_bindgen]
pub fn simulate_loop(
    placement: &str,
    setpoint: f64,
    kp: f64,
    ki: f64,
    kd: f64,
    delta: f64,
    duration: f64,
) -> Result<Vec<f64>, String> {
    let placement = match placement {
        "error" => Placement::ErrorSampled,
        "control" => Placement::ControlSampled,
        other => return Err(format!("unknown placement '{other}'")),
    };
    let (vi, cfg) = tank();
    let loop_cfg = LoopConfig {
        placement,
        setpoint,
        pid: PidParams::new(kp, ki, kd).with_limits(0.0, cfg.params.u_max),
        delta,
        dt: DEFAULT_DT,
        refine_events: false,
    };
    let n = rows_for(duration, loop_cfg.dt)?;
    let mut control =
        ControlLoop::new(loop_cfg, LocalTank::new(vi.process(), cfg.period)).map_err(|e| e.to_string())?;
    let mut out = Vec::with_capacity(n * LOOP_COLUMNS);
    for _ in 0..n {
        let r = control.step().map_err(|e| e.to_string())?;
        out.extend([r.t, r.r, r.y, r.u, r.sampled, f64::from(u8::from(r.event))]);
    }
    Ok(out)
}

/// Samples `amplitude·sin(2π·freq·t)` with threshold `delta`.
/// Rows: t, v, held, event (0/1).
#[wasm_bindgen]
pub fn sod_sine(amplitude: f64, freq: f64, delta: f64, dt: f64, duration: f64) -> Result<Vec<f64>, String> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(format!("dt must be positive, got {dt}"));
    }
    let n = rows_for(duration, dt)? + 1;
    let mut sampler = SodSampler::new(delta).map_err(|e| e.to_string())?;
    let mut out = Vec::with_capacity(n * SOD_COLUMNS);
    for i in 0..n {
        let t = i as f64 * dt;
        let v = amplitude * (2.0 * std::f64::consts::PI * freq * t).sin();
        let (held, event) = sampler.sample(v, t);
        out.extend([t, v, held, f64::from(u8::from(event))]);
    }
    Ok(out)
}

/// Open-loop response to a constant pump voltage. `route` 0 feeds the top
/// tank, 1 the bottom one. Rows: t, h_top, h_bot, every 10 instrument
/// periods.
#[wasm_bindgen]
pub fn tank_step_response(u: f64, route: i32, duration: f64) -> Result<Vec<f64>, String> {
    let route = Route::from_code(route).ok_or_else(|| format!("route must be 0 or 1, got {route}"))?;
    let (vi, cfg) = tank();
    if !(0.0..=cfg.params.u_max).contains(&u) {
        return Err(format!("u must be in [0, {}], got {u}", cfg.params.u_max));
    }
    let every = 10;
    let spacing = cfg.period * f64::from(every);
    let n = rows_for(duration, spacing)?;
    let mut p = vi.process();
    p.write_control("pump_u", &Value::Double(u));
    p.write_control("route", &Value::Int(route.code()));
    let level = |p: &mut dyn InstrumentProcess, name: &str| p.sample(name).and_then(|v| v.as_f64()).unwrap_or(0.0);
    let mut out = Vec::with_capacity((n + 1) * TANK_COLUMNS);
    for k in 0..=n {
        if k > 0 {
            for _ in 0..every {
                p.step(cfg.period);
            }
        }
        out.extend([k as f64 * spacing, level(&mut p, "h_top"), level(&mut p, "h_bot")]);
    }
    Ok(out)
}
