//! Server tier: hosts virtual instruments and maps protocol calls onto their
//! lifecycle, with single-controller sessions, a safety watchdog and
//! per-run CSV logging.

mod instrument;
mod log;
mod server;

pub use self::log::CsvLog;
pub use instrument::{InstrumentProcess, VirtualInstrument};
pub use server::{
    InstrumentServer, RegistryError, Role, ServerConfig, ServerEvent, Session, DEFAULT_WATCHDOG,
};
