//! Non-interacting PID controller, `C(s) = kp + ki/s + kd·s`.
//!
//! Discretization with step `dt`:
//!
//! ```text
//! I[k] = I[k-1] + ki·e[k]·dt                              (backward Euler)
//! D[k] = (D[k-1] + kd·N·(e[k] - e[k-1])) / (1 + N·dt)     (kd·s / (1 + s/N), backward Euler)
//! u    = clamp(kp·e[k] + I[k] + D[k], u_min, u_max)
//! ```
//!
//! The integral is held (conditional integration) whenever the unclamped
//! output is saturated and the error would push it further into saturation.
//! On the first step after a reset `D` is forced to zero, so a setpoint step
//! does not produce a derivative kick.

use serde::{Deserialize, Serialize};

use super::block::{Block, BlockKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidParams {
    pub kp: f64,
    #[serde(default)]
    pub ki: f64,
    #[serde(default)]
    pub kd: f64,
    /// Derivative filter pole.
    #[serde(default = "default_filter")]
    pub n: f64,
    #[serde(default = "neg_inf")]
    pub u_min: f64,
    #[serde(default = "pos_inf")]
    pub u_max: f64,
}

fn default_filter() -> f64 {
    PidParams::DEFAULT_FILTER
}

fn neg_inf() -> f64 {
    f64::NEG_INFINITY
}

fn pos_inf() -> f64 {
    f64::INFINITY
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PidParamsError {
    #[error("derivative filter coefficient must be positive and finite, got {0}")]
    Filter(f64),
    #[error("output limits must satisfy u_min < u_max, got [{0}, {1}]")]
    Limits(f64, f64),
    #[error("gains must be finite")]
    Gains,
}

impl PidParams {
    pub const DEFAULT_FILTER: f64 = 20.0;

    pub fn new(kp: f64, ki: f64, kd: f64) -> Self {
        Self {
            kp,
            ki,
            kd,
            n: Self::DEFAULT_FILTER,
            u_min: f64::NEG_INFINITY,
            u_max: f64::INFINITY,
        }
    }

    pub fn with_limits(mut self, u_min: f64, u_max: f64) -> Self {
        self.u_min = u_min;
        self.u_max = u_max;
        self
    }

    pub fn validate(&self) -> Result<(), PidParamsError> {
        if ![self.kp, self.ki, self.kd].iter().all(|g| g.is_finite()) {
            return Err(PidParamsError::Gains);
        }
        if !(self.n.is_finite() && self.n > 0.0) {
            return Err(PidParamsError::Filter(self.n));
        }
        if !(self.u_min < self.u_max) {
            return Err(PidParamsError::Limits(self.u_min, self.u_max));
        }
        Ok(())
    }
}

/// Controller memory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidState {
    pub integral: f64,
    pub derivative: f64,
    pub e_prev: f64,
    pub first_step: bool,
}

impl Default for PidState {
    fn default() -> Self {
        Self {
            integral: 0.0,
            derivative: 0.0,
            e_prev: 0.0,
            first_step: true,
        }
    }
}

impl PidState {
    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

/// One controller update; returns the new state and the clamped output.
pub fn pid_step(state: PidState, p: &PidParams, e: f64, dt: f64) -> (PidState, f64) {
    debug_assert!(dt > 0.0);
    let derivative = if state.first_step {
        0.0
    } else {
        (state.derivative + p.kd * p.n * (e - state.e_prev)) / (1.0 + p.n * dt)
    };
    let mut integral = state.integral + p.ki * e * dt;
    let mut u_raw = p.kp * e + integral + derivative;
    let winding_up = u_raw > p.u_max && p.ki * e > 0.0;
    let winding_down = u_raw < p.u_min && p.ki * e < 0.0;
    if winding_up || winding_down {
        integral = state.integral;
        u_raw = p.kp * e + integral + derivative;
    }
    let next = PidState {
        integral,
        derivative,
        e_prev: e,
        first_step: false,
    };
    (next, u_raw.clamp(p.u_min, p.u_max))
}

/// A PID block with its parameters and memory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidController {
    pub params: PidParams,
    pub state: PidState,
}

impl PidController {
    pub fn new(params: PidParams) -> Self {
        Self {
            params,
            state: PidState::default(),
        }
    }

    pub fn update(&mut self, e: f64, dt: f64) -> f64 {
        let (state, u) = pid_step(self.state, &self.params, e, dt);
        self.state = state;
        u
    }
}

impl Block for PidController {
    fn kind(&self) -> BlockKind {
        BlockKind::Discrete
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_proportional() {
        let p = PidParams::new(1.0, 0.0, 0.0);
        let (_, u) = pid_step(PidState::default(), &p, 0.7, 0.01);
        assert_eq!(u, 0.7);
    }

    #[test]
    fn pure_integral_sum() {
        // Backward-Euler sum: 10 steps of ki·e·dt = 10 · 1 · 1 · 0.1.
        let mut c = PidController::new(PidParams::new(0.0, 1.0, 0.0));
        let mut u = 0.0;
        for _ in 0..10 {
            u = c.update(1.0, 0.1);
        }
        assert!((u - 1.0).abs() < 1e-12, "u = {u}");
    }

    #[test]
    fn zero_error_gives_zero_output() {
        let mut c = PidController::new(PidParams::new(3.0, 2.0, 1.5));
        for _ in 0..100 {
            assert_eq!(c.update(0.0, 0.01), 0.0);
        }
    }

    #[test]
    fn no_derivative_kick_on_first_step() {
        let mut c = PidController::new(PidParams::new(0.0, 0.0, 5.0));
        assert_eq!(c.update(10.0, 0.01), 0.0);
        // Second step with the same error: still no change in e.
        assert_eq!(c.update(10.0, 0.01), 0.0);
        assert!(c.update(11.0, 0.01) > 0.0);
    }

    #[test]
    fn derivative_filter_recurrence() {
        // Oracle: hand-unrolled recurrence for e = 0, 1, 1.
        let p = PidParams::new(0.0, 0.0, 2.0);
        let dt = 0.1;
        let mut c = PidController::new(p);
        c.update(0.0, dt);
        let u1 = c.update(1.0, dt);
        let d1 = (0.0 + 2.0 * 20.0 * 1.0) / (1.0 + 20.0 * 0.1);
        assert!((u1 - d1).abs() < 1e-12);
        let u2 = c.update(1.0, dt);
        assert!((u2 - d1 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn derivative_approaches_backward_difference_for_large_filter() {
        let mut p = PidParams::new(0.0, 0.0, 1.0);
        p.n = 1e9;
        let mut c = PidController::new(p);
        c.update(0.0, 0.01);
        let u = c.update(0.05, 0.01);
        assert!((u - 5.0).abs() < 1e-6);
    }

    #[test]
    fn conditional_integration_stops_windup() {
        let p = PidParams::new(1.0, 1.0, 0.0).with_limits(0.0, 2.0);
        let mut c = PidController::new(p);
        for _ in 0..1000 {
            assert!(c.update(5.0, 0.1) <= 2.0);
        }
        assert_eq!(c.state.integral, 0.0);
        // Error reversal unwinds immediately.
        assert!(c.update(-0.5, 0.1) < 0.5);
    }

    #[test]
    fn validation() {
        assert!(PidParams::new(1.0, 0.0, 0.0).validate().is_ok());
        let mut p = PidParams::new(1.0, 0.0, 0.0);
        p.n = 0.0;
        assert!(matches!(p.validate(), Err(PidParamsError::Filter(_))));
        let p = PidParams::new(1.0, 0.0, 0.0).with_limits(1.0, 1.0);
        assert!(matches!(p.validate(), Err(PidParamsError::Limits(..))));
    }
}
