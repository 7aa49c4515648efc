use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use openlab::bridge::Bridge;
use openlab::transport::HttpTransport;
use openlab_core::experiment::{run_local, run_remote, write_trace, write_trace_file, Binding, ExperimentConfig};

#[derive(Parser)]
#[command(name = "openlab", version, about = "Run control experiments against the coupled-tank lab")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment headless and write its trace as CSV.
    Run {
        experiment: PathBuf,
        /// Trace file; overrides the config's "output". Stdout if neither is set.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve a live loop to browsers over WebSocket at /ws.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        #[arg(long)]
        experiment: PathBuf,
        /// Directory of UI assets served at /.
        #[arg(long)]
        assets: Option<PathBuf>,
    },
}

fn load(path: &Path) -> Result<ExperimentConfig, ExitCode> {
    ExperimentConfig::from_file(path).map_err(|e| {
        eprintln!("error: {}: configuration error at {e}", path.display());
        ExitCode::from(1)
    })
}

fn run(experiment: PathBuf, out: Option<PathBuf>) -> ExitCode {
    let cfg = match load(&experiment) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let result = match &cfg.binding {
        Binding::Local => run_local(&cfg),
        Binding::Remote(table) => run_remote(&cfg, table, HttpTransport::new()),
    };
    let records = match result {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let events = records.iter().filter(|r| r.event).count();
    log::info!("{} steps, {events} sampler events", records.len());
    let written = match out.or(cfg.output) {
        Some(path) => write_trace_file(&path, &records).map_err(|e| format!("{}: {e}", path.display())),
        None => {
            let stdout = io::stdout().lock();
            write_trace(stdout, &records)
                .and_then(|()| io::stdout().flush())
                .map_err(|e| e.to_string())
        }
    };
    match written {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: cannot write trace: {e}");
            ExitCode::from(2)
        }
    }
}

fn serve(bind: String, experiment: PathBuf, assets: Option<PathBuf>) -> ExitCode {
    let cfg = match load(&experiment) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    rt.block_on(async {
        let listener = match tokio::net::TcpListener::bind(&bind).await {
            Ok(l) => l,
            Err(e) => {
                eprintln!("error: cannot bind {bind}: {e}");
                return ExitCode::from(2);
            }
        };
        let addr = listener.local_addr().map_or(bind.clone(), |a| a.to_string());
        log::info!("session service at http://{addr}/ (WebSocket /ws)");
        let bridge = Bridge::start(cfg);
        match axum::serve(listener, bridge.router(assets)).await {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        }
    })
}

fn main() -> ExitCode {
    openlab::init_logging();
    match Cli::parse().cmd {
        Cmd::Run { experiment, out } => run(experiment, out),
        Cmd::Serve {
            bind,
            experiment,
            assets,
        } => serve(bind, experiment, assets),
    }
}
