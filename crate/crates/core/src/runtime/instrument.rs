use crate::protocol::{InstrumentMetadata, Value};

/// A server-hosted instrument: immutable metadata plus a factory for fresh
/// executions. `openVI` instantiates, `closeVI` drops the instance.
pub trait VirtualInstrument: Send + Sync {
    fn metadata(&self) -> &InstrumentMetadata;

    fn instantiate(&self) -> Box<dyn InstrumentProcess>;

    fn path(&self) -> &str {
        &self.metadata().vi
    }
}

/// One live execution of a virtual instrument.
///
/// The runtime validates every write against the metadata before it reaches
/// `write_control`, and only calls it at step boundaries.
pub trait InstrumentProcess: Send {
    fn write_control(&mut self, name: &str, value: &Value);

    /// Advances the instrument by `dt` seconds of instrument time.
    fn step(&mut self, dt: f64);

    /// Committed, noise-free value of any variable.
    fn value(&self, name: &str) -> Option<Value>;

    /// Client-facing read. Instruments with simulated sensors may add
    /// measurement noise here.
    fn sample(&mut self, name: &str) -> Option<Value> {
        self.value(name)
    }
}
