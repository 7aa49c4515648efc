//! Client side of the protocol: a transport abstraction, the low-level
//! call-per-method `Connector` and the link-table driven `HighLevelSession`.

mod highlevel;
mod lowlevel;
mod transport;

pub use highlevel::{ConnectorError, HighLevelSession, Link, LinkDirection, LinkTable};
pub use lowlevel::{Connector, DEFAULT_CLIENT_ID};
pub use transport::{Loopback, RecordingTransport, Transport, TransportError};
