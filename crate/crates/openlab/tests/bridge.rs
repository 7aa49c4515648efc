use std::net::SocketAddr;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use openlab::bridge::{Bridge, Sample, Status, UiMessage};
use openlab_core::experiment::ExperimentConfig;
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

type Socket = WebSocketStream<MaybeTlsStream<TcpStream>>;

/// P-only loop on the local tank, a sample for every step, wide limits so
/// `u = kp e` holds exactly.
const EXPERIMENT: &str = r#"{
    "binding": "local",
    "loop": {
        "placement": "control",
        "setpoint": 10.0,
        "pid": { "kp": 1.0 },
        "delta": 1e-12
    },
    "duration": 60.0,
    "mode": "realtime",
    "ui_decimation": 1
}"#;

async fn serve(assets: Option<std::path::PathBuf>) -> SocketAddr {
    let bridge = Bridge::start(ExperimentConfig::from_json(EXPERIMENT).unwrap());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = bridge.router(assets);
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    addr
}

async fn open(addr: SocketAddr) -> Socket {
    connect_async(format!("ws://{addr}/ws")).await.unwrap().0
}

async fn recv(ws: &mut Socket) -> UiMessage {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(5), ws.next())
            .await
            .expect("no message within 5 s")
            .expect("socket closed")
            .unwrap();
        if let Message::Text(text) = msg {
            return serde_json::from_str(&text).unwrap();
        }
    }
}

async fn send(ws: &mut Socket, json: &str) {
    ws.send(Message::text(json)).await.unwrap();
}

/// Skips samples until the next status message.
async fn status(ws: &mut Socket) -> Status {
    loop {
        if let UiMessage::Status(s) = recv(ws).await {
            return s;
        }
    }
}

async fn sample(ws: &mut Socket) -> Sample {
    loop {
        if let UiMessage::Sample(s) = recv(ws).await {
            return s;
        }
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn set_gains_mid_run_changes_the_next_samples() {
    let addr = serve(None).await;
    let mut ws = open(addr).await;
    assert_eq!(status(&mut ws).await.detail, "controller");
    send(&mut ws, r#"{"op": "start"}"#).await;
    assert_eq!(status(&mut ws).await.state, "running");
    for _ in 0..10 {
        let s = sample(&mut ws).await;
        assert_eq!(s.u, s.r - s.y);
    }

    send(&mut ws, r#"{"op": "set_gains", "kp": 2}"#).await;
    let ack = status(&mut ws).await;
    assert_eq!((ack.state.as_str(), ack.detail.as_str()), ("running", "gains updated"));
    let from = ack.t.expect("ack carries the switch time");
    let mut last = f64::NEG_INFINITY;
    let mut checked = 0;
    while checked < 10 {
        let s = sample(&mut ws).await;
        assert!(s.t > last, "samples are monotone in t");
        last = s.t;
        if s.t >= from - 1e-9 {
            assert_eq!(s.u, 2.0 * (s.r - s.y), "t={}", s.t);
            checked += 1;
        }
    }
    send(&mut ws, r#"{"op": "stop"}"#).await;
    assert_eq!(status(&mut ws).await.state, "stopped");
}

#[tokio::test(flavor = "multi_thread")]
async fn placement_swap_reinitializes_the_sampler_at_the_next_step() {
    let addr = serve(None).await;
    let mut ws = open(addr).await;
    status(&mut ws).await;
    send(&mut ws, r#"{"op": "set_placement", "placement": "error"}"#).await;
    assert_eq!(status(&mut ws).await.detail, "placement updated");
    send(&mut ws, r#"{"op": "set_delta", "delta": 0.5}"#).await;
    status(&mut ws).await;
    send(&mut ws, r#"{"op": "start"}"#).await;
    status(&mut ws).await;
    for _ in 0..20 {
        sample(&mut ws).await;
    }
    send(&mut ws, r#"{"op": "set_placement", "placement": "control"}"#).await;
    let ack = status(&mut ws).await;
    let from = ack.t.unwrap();
    let first = loop {
        let s = sample(&mut ws).await;
        if s.t >= from - 1e-9 {
            break s;
        }
    };
    assert!((first.t - from).abs() < 1e-9, "one sample per step: {} vs {from}", first.t);
    assert!(first.event, "re-initialized sampler emits");
    assert_eq!(first.sampled, first.u, "control placement samples the controller output");
}

#[tokio::test(flavor = "multi_thread")]
async fn second_socket_is_an_observer() {
    let addr = serve(None).await;
    let mut a = open(addr).await;
    assert_eq!(status(&mut a).await.detail, "controller");
    let mut b = open(addr).await;
    assert_eq!(status(&mut b).await.state, "observer");

    send(&mut b, r#"{"op": "start"}"#).await;
    assert_eq!(status(&mut b).await.state, "observer");
    send(&mut a, r#"{"op": "start"}"#).await;
    assert_eq!(status(&mut a).await.state, "running");
    let s = sample(&mut b).await;
    assert!(s.t >= 0.0, "observers receive samples");

    // When the controller leaves, the next socket takes over.
    a.close(None).await.unwrap();
    drop(a);
    tokio::time::sleep(Duration::from_millis(200)).await;
    let mut c = open(addr).await;
    assert_eq!(status(&mut c).await.detail, "controller");
}

#[tokio::test(flavor = "multi_thread")]
async fn malformed_messages_get_an_error_status_and_the_session_survives() {
    let addr = serve(None).await;
    let mut ws = open(addr).await;
    status(&mut ws).await;
    for bad in [
        "not json",
        r#"{"op": "explode"}"#,
        r#"{"op": "set_gains", "kp": "two"}"#,
        r#"{"op": "set_delta"}"#,
    ] {
        send(&mut ws, bad).await;
        let s = status(&mut ws).await;
        assert_eq!(s.state, "error", "{bad}");
        assert!(s.detail.starts_with("malformed message"), "{}", s.detail);
    }
    send(&mut ws, r#"{"op": "set_delta", "delta": -1}"#).await;
    assert_eq!(status(&mut ws).await.state, "error");
    send(&mut ws, r#"{"op": "set_setpoint", "setpoint": 5}"#).await;
    let s = status(&mut ws).await;
    assert_eq!((s.state.as_str(), s.detail.as_str()), ("disconnected", "setpoint updated"));
    send(&mut ws, r#"{"op": "start"}"#).await;
    status(&mut ws).await;
    assert_eq!(sample(&mut ws).await.r, 5.0);
}

#[tokio::test(flavor = "multi_thread")]
async fn static_assets_are_served_at_the_root() {
    let addr = serve(None).await;
    let page = tokio::task::spawn_blocking(move || {
        ureq::get(&format!("http://{addr}/"))
            .call()
            .unwrap()
            .body_mut()
            .read_to_string()
            .unwrap()
    })
    .await
    .unwrap();
    assert!(page.contains("/ws"));

    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<p>lab ui</p>").unwrap();
    let addr = serve(Some(dir.path().to_owned())).await;
    let page = tokio::task::spawn_blocking(move || {
        ureq::get(&format!("http://{addr}/"))
            .call()
            .unwrap()
            .body_mut()
            .read_to_string()
            .unwrap()
    })
    .await
    .unwrap();
    assert_eq!(page, "<p>lab ui</p>");
}
