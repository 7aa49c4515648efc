//! Remote-laboratory core: the `jil.*` XML-RPC protocol, the instrument
//! server runtime, the client connector, control blocks (PID, send-on-delta)
//! and the coupled-tank plant.

pub mod connector;
pub mod control;
pub mod experiment;
pub mod plant;
pub mod protocol;
pub mod runtime;
