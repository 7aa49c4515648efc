use std::sync::{Arc, Mutex};
use std::time::Instant;

use crate::protocol::decode_call;
use crate::runtime::InstrumentServer;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{0}")]
pub struct TransportError(pub String);

/// Carries one encoded request to the server and returns the raw response.
pub trait Transport {
    fn post(&mut self, url: &str, session: Option<&str>, body: Vec<u8>) -> Result<Vec<u8>, TransportError>;
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn post(&mut self, url: &str, session: Option<&str>, body: Vec<u8>) -> Result<Vec<u8>, TransportError> {
        (**self).post(url, session, body)
    }
}

/// In-process transport straight into a shared server. The URL is ignored.
#[derive(Clone)]
pub struct Loopback {
    server: Arc<Mutex<InstrumentServer>>,
    epoch: Instant,
}

impl Loopback {
    pub fn new(server: Arc<Mutex<InstrumentServer>>) -> Self {
        Self {
            server,
            epoch: Instant::now(),
        }
    }

    pub fn server(&self) -> &Arc<Mutex<InstrumentServer>> {
        &self.server
    }
}

impl Transport for Loopback {
    fn post(&mut self, _url: &str, session: Option<&str>, body: Vec<u8>) -> Result<Vec<u8>, TransportError> {
        let now = self.epoch.elapsed().as_secs_f64();
        let mut server = self
            .server
            .lock()
            .map_err(|_| TransportError("server mutex poisoned".into()))?;
        Ok(server.handle_request(session, &body, now))
    }
}

/// Wraps another transport and records the method name of every request
/// that reaches it.
pub struct RecordingTransport<T> {
    inner: T,
    log: Arc<Mutex<Vec<String>>>,
}

impl<T> RecordingTransport<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            log: Arc::default(),
        }
    }

    /// Shared handle to the request log; stays valid after the transport is
    /// moved into a connector.
    pub fn log(&self) -> Arc<Mutex<Vec<String>>> {
        Arc::clone(&self.log)
    }

    pub fn inner_mut(&mut self) -> &mut T {
        &mut self.inner
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn post(&mut self, url: &str, session: Option<&str>, body: Vec<u8>) -> Result<Vec<u8>, TransportError> {
        let name = decode_call(&body)
            .map(|c| c.method.name().to_owned())
            .unwrap_or_else(|_| "?".to_owned());
        self.log.lock().expect("log mutex").push(name);
        self.inner.post(url, session, body)
    }
}
