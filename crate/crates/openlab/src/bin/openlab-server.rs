use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::Parser;
use openlab::host::{Host, ENDPOINT};
use openlab_core::plant::{CoupledTanksVi, TankConfig, VI_PATH};
use openlab_core::runtime::{InstrumentServer, ServerConfig, DEFAULT_WATCHDOG};

/// Hosts the coupled-tank virtual instrument over XML-RPC.
#[derive(Parser)]
#[command(name = "openlab-server", version)]
struct Args {
    #[arg(long, default_value = "0.0.0.0:2055")]
    bind: String,
    /// Directory for per-run CSV logs; no logging without it.
    #[arg(long)]
    log_dir: Option<PathBuf>,
    /// Heartbeat silence, in seconds, after which the instrument is forced safe.
    #[arg(long, default_value_t = DEFAULT_WATCHDOG)]
    watchdog: f64,
    /// Advance instruments only on explicit `__tick` writes.
    #[arg(long)]
    lockstep: bool,
    /// Tank parameters as JSON (same keys as an experiment's "plant").
    #[arg(long)]
    plant: Option<PathBuf>,
}

fn tank_config(path: Option<&PathBuf>) -> Result<TankConfig, String> {
    let Some(path) = path else {
        return Ok(TankConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    openlab::init_logging();
    let args = Args::parse();
    if !(args.watchdog.is_finite() && args.watchdog > 0.0) {
        eprintln!("error: --watchdog must be positive, got {}", args.watchdog);
        return ExitCode::from(1);
    }
    if let Some(dir) = &args.log_dir {
        if let Err(e) = std::fs::create_dir_all(dir) {
            eprintln!("error: log directory {}: {e}", dir.display());
            return ExitCode::from(1);
        }
    }
    let tank = match tank_config(args.plant.as_ref()).and_then(|c| CoupledTanksVi::new(c).map_err(|e| e.to_string())) {
        Ok(vi) => vi,
        Err(e) => {
            eprintln!("error: plant configuration: {e}");
            return ExitCode::from(1);
        }
    };
    let mut server = InstrumentServer::new(ServerConfig {
        watchdog: args.watchdog,
        lockstep: args.lockstep,
        log_dir: args.log_dir.clone(),
    });
    if let Err(e) = server.register_instrument(Arc::new(tank)) {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }

    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    rt.block_on(async {
        let listener = match tokio::net::TcpListener::bind(&args.bind).await {
            Ok(l) => l,
            Err(e) => {
                eprintln!("error: cannot bind {}: {e}", args.bind);
                return ExitCode::from(2);
            }
        };
        let addr = listener.local_addr().map_or(args.bind.clone(), |a| a.to_string());
        log::info!(
            "serving {VI_PATH} at http://{addr}{ENDPOINT} ({} clock, watchdog {} s)",
            if args.lockstep { "lockstep" } else { "real-time" },
            args.watchdog
        );
        match Host::new(server).serve(listener).await {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        }
    })
}
