//! Networked tiers of the lab: the instrument server over HTTP, the
//! blocking HTTP transport used by connectors, and the WebSocket bridge
//! that lets a browser steer a running loop.

pub mod bridge;
pub mod host;
pub mod transport;

/// Environment variable holding the `env_logger` filter.
pub const LOG_ENV: &str = "OPENLAB_LOG";

/// Logging to stderr, `info` unless `OPENLAB_LOG` says otherwise.
pub fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "info");
    let _ = env_logger::Builder::from_env(env).format_timestamp_millis().try_init();
}
