//! The instrument server on HTTP: `POST /jil` carries one XML-RPC call,
//! the session token rides in the `X-JIL-Session` header.

use std::io;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderMap};
use axum::response::IntoResponse;
use axum::routing::post;
use axum::Router;
use openlab_core::runtime::InstrumentServer;
use tokio::net::TcpListener;
use tokio::sync::oneshot;

pub const ENDPOINT: &str = "/jil";
pub const SESSION_HEADER: &str = "x-jil-session";
/// Interval of the real-time stepping and watchdog task.
pub const POLL_PERIOD: Duration = Duration::from_millis(10);

/// An instrument server shared by request handlers and the poll task,
/// with its own monotonic clock.
#[derive(Clone)]
pub struct Host {
    server: Arc<Mutex<InstrumentServer>>,
    epoch: Instant,
}

impl Host {
    pub fn new(server: InstrumentServer) -> Self {
        Self {
            server: Arc::new(Mutex::new(server)),
            epoch: Instant::now(),
        }
    }

    /// Seconds since the host was created.
    pub fn now(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64()
    }

    pub fn lock(&self) -> MutexGuard<'_, InstrumentServer> {
        self.server.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn router(&self) -> Router {
        Router::new().route(ENDPOINT, post(handle)).with_state(self.clone())
    }

    /// Steps running instruments on the clock and checks the watchdog.
    pub async fn poll_forever(self) {
        let mut tick = tokio::time::interval(POLL_PERIOD);
        tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
        loop {
            tick.tick().await;
            let now = self.now();
            self.lock().poll(now);
        }
    }

    /// Serves requests on `listener` until the future is dropped.
    pub async fn serve(self, listener: TcpListener) -> io::Result<()> {
        tokio::spawn(self.clone().poll_forever());
        axum::serve(listener, self.router()).await
    }
}

async fn handle(State(host): State<Host>, headers: HeaderMap, body: Bytes) -> impl IntoResponse {
    let token = headers.get(SESSION_HEADER).and_then(|v| v.to_str().ok());
    let now = host.now();
    let reply = host.lock().handle_request(token, &body, now);
    ([(header::CONTENT_TYPE, "text/xml")], reply)
}

/// A host serving on its own runtime thread, stopped on drop.
pub struct Spawned {
    pub addr: SocketAddr,
    pub host: Host,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl Spawned {
    /// The XML-RPC endpoint URL.
    pub fn url(&self) -> String {
        format!("http://{}{ENDPOINT}", self.addr)
    }
}

impl Drop for Spawned {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds `addr` and serves `host` on a background thread.
pub fn spawn(host: Host, addr: &str) -> io::Result<Spawned> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()?;
    let listener = rt.block_on(TcpListener::bind(addr))?;
    let local = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let h = host.clone();
    let thread = std::thread::Builder::new().name("jil-host".into()).spawn(move || {
        rt.block_on(async move {
            tokio::select! {
                r = h.serve(listener) => if let Err(e) = r { log::error!("instrument server: {e}") },
                _ = rx => {}
            }
        })
    })?;
    Ok(Spawned {
        addr: local,
        host,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
