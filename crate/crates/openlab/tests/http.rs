use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use openlab::host::{spawn, Host, Spawned};
use openlab::transport::HttpTransport;
use openlab_core::connector::Connector;
use openlab_core::plant::{CoupledTanksVi, TankConfig, VI_PATH};
use openlab_core::protocol::{ConnectionState, Value, WireType};
use openlab_core::runtime::{InstrumentServer, ServerConfig};

fn host(config: ServerConfig) -> Spawned {
    let mut s = InstrumentServer::new(config);
    s.register_instrument(Arc::new(CoupledTanksVi::new(TankConfig::default()).unwrap()))
        .unwrap();
    spawn(Host::new(s), "127.0.0.1:0").unwrap()
}

fn connector(url: &str) -> Connector<HttpTransport> {
    let mut c = Connector::new(HttpTransport::with_timeout(Duration::from_secs(5)));
    c.set_server_address(url);
    c
}

fn remote_experiment(url: &str, duration: f64) -> String {
    format!(
        r#"{{
            "binding": {{
                "server": "{url}",
                "vi": "plants/coupled_tanks.vi",
                "links": [
                    {{ "local": "y", "remote": "h_bot", "dir": "read", "type": "double", "sync": "sync" }},
                    {{ "local": "u", "remote": "pump_u", "dir": "write", "type": "double", "sync": "sync" }}
                ]
            }},
            "loop": {{
                "placement": "control",
                "setpoint": 10.0,
                "pid": {{ "kp": 2.0, "ki": 0.1, "u_min": 0.0, "u_max": 10.0 }},
                "delta": 0.02
            }},
            "duration": {duration},
            "mode": "lockstep"
        }}"#
    )
}

#[test]
fn lifecycle_over_http() {
    let h = host(ServerConfig {
        lockstep: true,
        ..Default::default()
    });
    let mut c = connector(&h.url());
    c.connect().unwrap();
    c.open_vi(VI_PATH).unwrap();
    assert!(c.get_metadata().unwrap().contains("\"h_bot\""));
    c.run_vi().unwrap();
    c.set_value("pump_u", Value::Double(5.0)).unwrap();
    c.tick(100).unwrap();
    let h_top = c.get_value("h_top", WireType::Double).unwrap();
    assert!(matches!(h_top, Value::Double(v) if v > 0.0), "{h_top:?}");
    let err = c.set_value("pump_q", Value::Double(1.0)).unwrap_err();
    assert_eq!((err.code, err.message.as_str()), (102, "UnknownVariable: pump_q"));
    assert_eq!(c.state(), ConnectionState::Running, "a fault keeps the session");
    c.stop_vi().unwrap();
    c.close_vi().unwrap();
    c.disconnect().unwrap();
    assert!(!h.host.lock().is_open(VI_PATH));
}

#[test]
fn missing_session_header_is_fault_199() {
    let h = host(ServerConfig::default());
    let mut c = connector(&h.url());
    c.connect().unwrap();
    let body = openlab_core::protocol::encode_call(openlab_core::protocol::Method::Heartbeat, &[]).unwrap();
    let mut raw = HttpTransport::new();
    let reply = openlab_core::connector::Transport::post(&mut raw, &h.url(), None, body).unwrap();
    let fault = openlab_core::protocol::decode_response(&reply, None).unwrap_err();
    assert_eq!(fault.code, 199);
}

#[test]
fn real_time_server_steps_and_trips_its_watchdog() {
    let h = host(ServerConfig {
        watchdog: 0.5,
        ..Default::default()
    });
    let mut c = connector(&h.url());
    c.connect().unwrap();
    c.open_vi(VI_PATH).unwrap();
    c.run_vi().unwrap();
    c.set_value("pump_u", Value::Double(6.0)).unwrap();
    for _ in 0..5 {
        std::thread::sleep(Duration::from_millis(100));
        c.heartbeat().unwrap();
    }
    let t = h.host.lock().instrument_time(VI_PATH).unwrap();
    assert!(t > 0.3, "instrument time {t}");

    let muted = Instant::now();
    while h.host.lock().is_running(VI_PATH) {
        assert!(muted.elapsed() < Duration::from_secs(3), "watchdog never tripped");
        std::thread::sleep(Duration::from_millis(5));
    }
    let silent = muted.elapsed().as_secs_f64();
    assert!(silent > 0.4 && silent < 0.7, "tripped after {silent} s of silence");
    assert_eq!(h.host.lock().peek(VI_PATH, "pump_u"), Some(Value::Double(0.0)));
}

fn openlab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_openlab"))
        .args(args)
        .env("OPENLAB_LOG", "warn")
        .output()
        .unwrap()
}

#[test]
fn cli_lockstep_remote_run_writes_6000_rows() {
    let h = host(ServerConfig {
        lockstep: true,
        ..Default::default()
    });
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("remote.json");
    std::fs::write(&cfg, remote_experiment(&h.url(), 60.0)).unwrap();
    let out = dir.path().join("trace.csv");
    let run = openlab(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 6001);
    assert_eq!(text.lines().next(), Some("t,r,y,e,u,sampled,event"));
    assert!(!h.host.lock().is_open(VI_PATH), "the session was torn down");
}

#[test]
fn cli_unreachable_server_exits_2_with_fault_199() {
    // Bind then drop, so nothing listens on the port.
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("remote.json");
    std::fs::write(&cfg, remote_experiment(&format!("http://127.0.0.1:{port}/jil"), 1.0)).unwrap();
    let run = openlab(&["run", cfg.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&run.stderr);
    assert!(stderr.contains("Fault 199"), "{stderr}");
}

#[test]
fn cli_zero_duration_exits_1_before_connecting() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("remote.json");
    std::fs::write(&cfg, remote_experiment("http://127.0.0.1:9/jil", 0.0)).unwrap();
    let run = openlab(&["run", cfg.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&run.stderr);
    assert!(stderr.contains("/duration"), "{stderr}");
    assert!(!stderr.contains("Fault"), "{stderr}");
}

#[test]
fn cli_local_run_prints_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("local.json");
    std::fs::write(
        &cfg,
        r#"{"binding": "local", "duration": 1.0,
            "loop": {"placement": "error", "setpoint": 5.0, "pid": {"kp": 1.0}, "delta": 0.1}}"#,
    )
    .unwrap();
    let run = openlab(&["run", cfg.to_str().unwrap()]);
    assert!(run.status.success());
    let stdout = String::from_utf8(run.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 101);
    assert!(stdout.lines().nth(1).unwrap().starts_with("0,5,0,5,5,5,1"), "{stdout}");
}
