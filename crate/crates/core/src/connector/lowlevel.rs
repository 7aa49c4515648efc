use crate::protocol::{
    admit, decode_response, encode_call, ConnectionState, Fault, Method, Value, WireType, TICK_VARIABLE,
};

use super::transport::Transport;

pub const DEFAULT_CLIENT_ID: &str = "openlab-connector";

/// Low-level session API: one method per protocol call.
///
/// Every call is checked against the local session state first; an illegal
/// call fails with `WrongState` and sends nothing. Calls take `&mut self`,
/// so a connector cannot be driven concurrently without external locking.
pub struct Connector<T> {
    transport: T,
    url: String,
    client_id: String,
    token: Option<String>,
    state: ConnectionState,
}

impl<T: Transport> Connector<T> {
    pub fn new(transport: T) -> Self {
        Self {
            transport,
            url: String::new(),
            client_id: DEFAULT_CLIENT_ID.to_owned(),
            token: None,
            state: ConnectionState::Disconnected,
        }
    }

    pub fn with_client_id(mut self, id: impl Into<String>) -> Self {
        self.client_id = id.into();
        self
    }

    pub fn set_server_address(&mut self, url: impl Into<String>) {
        self.url = url.into();
    }

    pub fn server_address(&self) -> &str {
        &self.url
    }

    pub fn state(&self) -> ConnectionState {
        self.state
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    pub fn transport_mut(&mut self) -> &mut T {
        &mut self.transport
    }

    /// Forgets the session locally without contacting the server.
    pub fn reset(&mut self) {
        self.state = ConnectionState::Disconnected;
        self.token = None;
    }

    pub fn connect(&mut self) -> Result<(), Fault> {
        let id = Value::Text(self.client_id.clone());
        match self.call(Method::Connect, &[id], Some(WireType::String))? {
            Value::Text(token) => {
                self.token = Some(token);
                Ok(())
            }
            _ => unreachable!("decode_response enforces the string type"),
        }
    }

    pub fn open_vi(&mut self, path: &str) -> Result<(), Fault> {
        self.call(Method::OpenVi, &[path.into()], None).map(drop)
    }

    pub fn run_vi(&mut self) -> Result<(), Fault> {
        self.call(Method::RunVi, &[], None).map(drop)
    }

    pub fn stop_vi(&mut self) -> Result<(), Fault> {
        self.call(Method::StopVi, &[], None).map(drop)
    }

    pub fn close_vi(&mut self) -> Result<(), Fault> {
        self.call(Method::CloseVi, &[], None).map(drop)
    }

    /// Returns the metadata JSON document.
    pub fn get_metadata(&mut self) -> Result<String, Fault> {
        match self.call(Method::GetMetadata, &[], Some(WireType::String))? {
            Value::Text(doc) => Ok(doc),
            _ => unreachable!("decode_response enforces the string type"),
        }
    }

    pub fn disconnect(&mut self) -> Result<(), Fault> {
        self.call(Method::Disconnect, &[], None)?;
        self.token = None;
        Ok(())
    }

    pub fn set_value(&mut self, name: &str, value: Value) -> Result<(), Fault> {
        self.call(Method::SetValue, &[name.into(), value], None).map(drop)
    }

    /// Reads a variable; a reply of any other wire type is a `TypeMismatch`.
    pub fn get_value(&mut self, name: &str, expected: WireType) -> Result<Value, Fault> {
        self.call(Method::GetValue, &[name.into()], Some(expected))
    }

    pub fn heartbeat(&mut self) -> Result<(), Fault> {
        self.call(Method::Heartbeat, &[], None).map(drop)
    }

    /// Advances a lockstep server by `n` instrument periods.
    pub fn tick(&mut self, n: i32) -> Result<(), Fault> {
        self.set_value(TICK_VARIABLE, Value::Int(n))
    }

    fn call(&mut self, method: Method, params: &[Value], expected: Option<WireType>) -> Result<Value, Fault> {
        let next = admit(self.state, method)?;
        let body = encode_call(method, params)?;
        let reply = match self.transport.post(&self.url, self.token.as_deref(), body) {
            Ok(reply) => reply,
            Err(e) => {
                log::warn!("{method}: transport failure: {e}");
                self.reset();
                return Err(Fault::internal(format!("transport failure: {e}")));
            }
        };
        let value = decode_response(&reply, expected)?;
        self.state = next;
        Ok(value)
    }
}
