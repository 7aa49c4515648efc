//! Wire values, variable metadata, the session state machine and the XML-RPC
//! codec shared by the instrument server and the connector.

mod fault;
mod metadata;
mod state;
mod value;
pub mod xmlrpc;

pub use fault::{Fault, FaultCode};
pub use metadata::{Direction, InstrumentMetadata, MetadataError, SyncClass, VariableDescriptor};
pub use state::{admit, transition, ConnectionState, Method, Param, ProtocolEvent};
pub use value::{Value, WireType};
pub use xmlrpc::{decode_call, decode_response, encode_call, encode_response, MethodCall};

/// HTTP path of the XML-RPC endpoint.
pub const RPC_PATH: &str = "/jil";

/// HTTP header carrying the session token on every call after `jil.connect`.
pub const SESSION_HEADER: &str = "X-JIL-Session";

/// Pseudo-control that advances a lockstep server by N steps.
pub const TICK_VARIABLE: &str = "__tick";
