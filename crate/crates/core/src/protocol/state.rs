use std::fmt;

use super::fault::Fault;
use super::value::WireType;

/// Lifecycle of a client session against the instrument server.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConnectionState {
    Disconnected,
    Connected,
    Opened,
    Running,
}

impl ConnectionState {
    pub const ALL: [ConnectionState; 4] = [
        ConnectionState::Disconnected,
        ConnectionState::Connected,
        ConnectionState::Opened,
        ConnectionState::Running,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ConnectionState::Disconnected => "disconnected",
            ConnectionState::Connected => "connected",
            ConnectionState::Opened => "opened",
            ConnectionState::Running => "running",
        }
    }
}

impl fmt::Display for ConnectionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Lifecycle events that move a session between states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProtocolEvent {
    Connect,
    OpenVi,
    RunVi,
    StopVi,
    CloseVi,
    Disconnect,
}

impl ProtocolEvent {
    pub const ALL: [ProtocolEvent; 6] = [
        ProtocolEvent::Connect,
        ProtocolEvent::OpenVi,
        ProtocolEvent::RunVi,
        ProtocolEvent::StopVi,
        ProtocolEvent::CloseVi,
        ProtocolEvent::Disconnect,
    ];
}

/// The session transition table.
///
/// `disconnect` is legal from every state except `Disconnected`; the server
/// performs the implied stop/close itself. Every other undefined pair is a
/// `WrongState` fault.
pub fn transition(state: ConnectionState, event: ProtocolEvent) -> Result<ConnectionState, Fault> {
    use ConnectionState::*;
    use ProtocolEvent::*;
    match (state, event) {
        (Disconnected, Connect) => Ok(Connected),
        (Connected, OpenVi) => Ok(Opened),
        (Opened, RunVi) => Ok(Running),
        (Running, StopVi) => Ok(Opened),
        (Opened, CloseVi) => Ok(Connected),
        (Connected | Opened | Running, Disconnect) => Ok(Disconnected),
        (s, e) => Err(Fault::wrong_state(format!("{e:?} not allowed while {s}"))),
    }
}

/// The `jil.*` XML-RPC method table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Connect,
    OpenVi,
    RunVi,
    StopVi,
    CloseVi,
    GetMetadata,
    SetValue,
    GetValue,
    Heartbeat,
    Disconnect,
}

/// Declared parameter shape of a method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    Typed(WireType),
    /// Any wire type (the value argument of `setValue`).
    Any,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::Connect,
        Method::OpenVi,
        Method::RunVi,
        Method::StopVi,
        Method::CloseVi,
        Method::GetMetadata,
        Method::SetValue,
        Method::GetValue,
        Method::Heartbeat,
        Method::Disconnect,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Connect => "jil.connect",
            Method::OpenVi => "jil.openVI",
            Method::RunVi => "jil.runVI",
            Method::StopVi => "jil.stopVI",
            Method::CloseVi => "jil.closeVI",
            Method::GetMetadata => "jil.getMetadata",
            Method::SetValue => "jil.setValue",
            Method::GetValue => "jil.getValue",
            Method::Heartbeat => "jil.heartbeat",
            Method::Disconnect => "jil.disconnect",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }

    pub fn params(self) -> &'static [Param] {
        const STRING: Param = Param::Typed(WireType::String);
        match self {
            Method::Connect | Method::OpenVi | Method::GetValue => &[STRING],
            Method::SetValue => &[STRING, Param::Any],
            _ => &[],
        }
    }

    /// The lifecycle event this method drives, if any.
    pub fn event(self) -> Option<ProtocolEvent> {
        match self {
            Method::Connect => Some(ProtocolEvent::Connect),
            Method::OpenVi => Some(ProtocolEvent::OpenVi),
            Method::RunVi => Some(ProtocolEvent::RunVi),
            Method::StopVi => Some(ProtocolEvent::StopVi),
            Method::CloseVi => Some(ProtocolEvent::CloseVi),
            Method::Disconnect => Some(ProtocolEvent::Disconnect),
            _ => None,
        }
    }

    /// Lowest session state in which a non-lifecycle method may be issued.
    pub fn min_state(self) -> ConnectionState {
        match self {
            Method::Connect => ConnectionState::Disconnected,
            Method::OpenVi | Method::Heartbeat | Method::Disconnect => ConnectionState::Connected,
            Method::CloseVi | Method::RunVi | Method::GetMetadata | Method::SetValue | Method::GetValue => {
                ConnectionState::Opened
            }
            Method::StopVi => ConnectionState::Running,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Checks whether `method` may be issued from `state` and returns the state
/// the session is in afterwards.
pub fn admit(state: ConnectionState, method: Method) -> Result<ConnectionState, Fault> {
    match method.event() {
        Some(event) => transition(state, event),
        None if state >= method.min_state() => Ok(state),
        None => Err(Fault::wrong_state(format!("{method} not allowed while {state}"))),
    }
}
