use std::time::Duration;

use openlab_core::connector::{Transport, TransportError};

use crate::host::SESSION_HEADER;

/// Blocking HTTP POST transport. Any failure below XML-RPC (refused
/// connection, timeout, non-2xx status) becomes a `TransportError`.
pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

    pub fn new() -> Self {
        Self::with_timeout(Self::DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder().timeout_global(Some(timeout)).build();
        Self { agent: config.into() }
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl Transport for HttpTransport {
    fn post(&mut self, url: &str, session: Option<&str>, body: Vec<u8>) -> Result<Vec<u8>, TransportError> {
        let mut req = self.agent.post(url).header("content-type", "text/xml");
        if let Some(token) = session {
            req = req.header(SESSION_HEADER, token);
        }
        let mut resp = req
            .send(&body[..])
            .map_err(|e| TransportError(format!("{url}: {e}")))?;
        resp.body_mut()
            .read_to_vec()
            .map_err(|e| TransportError(format!("{url}: {e}")))
    }
}
