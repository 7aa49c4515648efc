//! Send-on-delta sampler.
//!
//! The output is piecewise constant, equal to the value captured at the last
//! event time `t_k`. A new event fires at the first instant the input departs
//! from that value by at least `delta`. The initialization emission at `t_0`
//! records the quantization offset `alpha = v(t_0) - i·delta` with
//! `i = floor(v(t_0) / delta)`; emissions themselves carry the raw input.

use super::block::{Block, BlockKind};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SodState {
    pub delta: f64,
    pub v_last: f64,
    pub t_last: f64,
    pub alpha: f64,
    pub initialized: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("send-on-delta threshold must be positive and finite, got {0}")]
pub struct BadDelta(pub f64);

/// Initializes the sampler with its first emission `v(t_0) = v0`.
pub fn sod_init(v0: f64, t0: f64, delta: f64) -> Result<SodState, BadDelta> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(BadDelta(delta));
    }
    Ok(SodState {
        delta,
        v_last: v0,
        t_last: t0,
        alpha: v0 - (v0 / delta).floor() * delta,
        initialized: true,
    })
}

/// Feeds one input sample; returns the updated state and the emitted value
/// if an event fired. The threshold is inclusive.
pub fn sod_update(s: SodState, v: f64, t: f64) -> (SodState, Option<f64>) {
    debug_assert!(t >= s.t_last, "sampler time went backwards");
    if (v - s.v_last).abs() >= s.delta {
        let next = SodState {
            v_last: v,
            t_last: t,
            ..s
        };
        (next, Some(v))
    } else {
        (s, None)
    }
}

impl SodState {
    /// Held output `v(t_k)`.
    pub fn output(&self) -> f64 {
        self.v_last
    }

    /// Signed crossing indicator `|v - v(t_k)| - delta`; non-negative means
    /// an event condition holds.
    pub fn crossing(&self, v: f64) -> f64 {
        (v - self.v_last).abs() - self.delta
    }
}

/// Stateful wrapper used inside control loops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SodSampler {
    pub delta: f64,
    pub state: Option<SodState>,
}

impl SodSampler {
    pub fn new(delta: f64) -> Result<Self, BadDelta> {
        sod_init(0.0, 0.0, delta)?;
        Ok(Self { delta, state: None })
    }

    /// Returns `(held output, event fired)`. The first call initializes the
    /// sampler and counts as an emission.
    pub fn sample(&mut self, v: f64, t: f64) -> (f64, bool) {
        match self.state {
            None => {
                let s = sod_init(v, t, self.delta).expect("delta validated in new");
                self.state = Some(s);
                (v, true)
            }
            Some(s) => {
                let (s, event) = sod_update(s, v, t);
                self.state = Some(s);
                (s.output(), event.is_some())
            }
        }
    }

    /// Drops the held value; the next sample re-initializes.
    pub fn reset(&mut self) {
        self.state = None;
    }
}

impl Block for SodSampler {
    fn kind(&self) -> BlockKind {
        BlockKind::EventBased
    }
}
