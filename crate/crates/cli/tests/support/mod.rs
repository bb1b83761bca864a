#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::Path;
use std::process::Stdio;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::io::{AsyncBufReadExt, BufReader};
use tokio::net::TcpStream;
use tokio::process::{Child, Command};
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

pub const BIN: &str = env!("CARGO_BIN_EXE_ptfa");
pub const ADMIN: &str = "acceptance-admin";

/// Service config with short sessions: `duration_ms` long, half-second ticks.
pub fn short_config(dir: &Path, duration_ms: u64, replies: &[&str]) -> std::path::PathBuf {
    let script = replies
        .iter()
        .map(|r| format!("{r:?}"))
        .collect::<Vec<_>>()
        .join(", ");
    let text = format!(
        "[scheduler]\n\
         tick_interval_ms = 500\n\
         session_duration_ms = {duration_ms}\n\
         phase_boundary_ms = {}\n\
         inactivity_threshold_ms = 1500\n\
         min_intervention_gap_ms = 1000\n\
         \n\
         [provider]\n\
         kind = \"scripted\"\n\
         script = [{script}]\n",
        duration_ms / 2
    );
    let path = dir.join("ptfa.toml");
    std::fs::write(&path, text).unwrap();
    path
}

pub struct Service {
    pub child: Child,
    pub addr: SocketAddr,
}

/// Starts `ptfa serve` on an ephemeral port and waits for its readiness line.
pub async fn spawn_service(config: &Path, data_dir: &Path) -> Service {
    let mut child = Command::new(BIN)
        .args(["serve", "--config"])
        .arg(config)
        .args(["--bind", "127.0.0.1:0", "--data-dir"])
        .arg(data_dir)
        .env("PTFA_ADMIN_TOKEN", ADMIN)
        .env("RUST_LOG", "warn")
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .kill_on_drop(true)
        .spawn()
        .expect("spawn ptfa serve");
    let stdout = child.stdout.take().unwrap();
    let mut lines = BufReader::new(stdout).lines();
    let line = tokio::time::timeout(Duration::from_secs(20), lines.next_line())
        .await
        .expect("readiness line in time")
        .unwrap()
        .expect("readiness line");
    let addr = line
        .rsplit("http://")
        .next()
        .and_then(|a| a.trim().parse().ok())
        .unwrap_or_else(|| panic!("unexpected readiness line {line:?}"));
    Service { child, addr }
}

pub async fn create_session(addr: SocketAddr, model: &str, group_size: usize) -> (String, Vec<String>) {
    let resp: Value = reqwest::Client::new()
        .post(format!("http://{addr}/sessions"))
        .bearer_auth(ADMIN)
        .json(&json!({"topic": 0, "model": model, "group_size": group_size}))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let id = resp["session_id"].as_str().expect("session id").to_string();
    let tokens = resp["tokens"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t.as_str().unwrap().to_string())
        .collect();
    (id, tokens)
}

pub async fn export(addr: SocketAddr, id: &str) -> (u16, String) {
    let resp = reqwest::Client::new()
        .get(format!("http://{addr}/sessions/{id}/export"))
        .bearer_auth(ADMIN)
        .send()
        .await
        .unwrap();
    (resp.status().as_u16(), resp.text().await.unwrap())
}

/// Polls until the session is closed and exported, or `limit` elapses.
pub async fn wait_for_export(addr: SocketAddr, id: &str, limit: Duration) -> Option<String> {
    let until = tokio::time::Instant::now() + limit;
    while tokio::time::Instant::now() < until {
        let (status, body) = export(addr, id).await;
        if status == 200 {
            return Some(body);
        }
        tokio::time::sleep(Duration::from_millis(200)).await;
    }
    None
}

pub struct WsClient {
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
}

impl WsClient {
    pub async fn connect(addr: SocketAddr) -> WsClient {
        let (ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/ws")).await.unwrap();
        WsClient { ws }
    }

    pub async fn send(&mut self, v: Value) {
        self.ws.send(Message::Text(v.to_string().into())).await.unwrap();
    }

    pub async fn join(&mut self, id: &str, token: &str) -> Value {
        self.send(json!({"type": "join", "session_id": id, "token": token})).await;
        self.recv().await.expect("joined envelope")
    }

    pub async fn post(&mut self, text: &str) {
        self.send(json!({"type": "post", "text": text})).await;
    }

    /// Next envelope, or `None` if the socket closes or stays silent for 15 s.
    pub async fn recv(&mut self) -> Option<Value> {
        loop {
            let msg = tokio::time::timeout(Duration::from_secs(15), self.ws.next()).await.ok()??.ok()?;
            if let Message::Text(t) = msg {
                return serde_json::from_str(t.as_str()).ok();
            }
        }
    }

    /// Everything received up to and including the first `kind` envelope.
    pub async fn recv_until(&mut self, kind: &str) -> Vec<Value> {
        let mut seen = Vec::new();
        while let Some(v) = self.recv().await {
            let done = v["type"] == kind;
            seen.push(v);
            if done {
                break;
            }
        }
        seen
    }
}
