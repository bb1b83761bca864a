#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use ptfa_core::clock::SystemClock;
use ptfa_core::facilitation::HatRegistry;
use ptfa_core::llm::{ContextBudget, Gateway, ScriptedProvider};
use ptfa_core::scheduler::SchedulerConfig;
use ptfa_core::store::Store;
use ptfa_server::{AppState, Hub};
use serde_json::{json, Value};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

pub const ADMIN: &str = "test-admin";

/// Six-second sessions with half-second ticks.
pub fn short_config() -> SchedulerConfig {
    SchedulerConfig {
        tick_interval_ms: 500,
        session_duration_ms: 6_000,
        phase_boundary_ms: 3_000,
        inactivity_threshold_ms: 1_500,
        min_intervention_gap_ms: 1_000,
        clock_scale: 1.0,
    }
}

pub struct Server {
    pub addr: SocketAddr,
    pub hub: Arc<Hub>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

pub async fn start(dir: &Path, cfg: SchedulerConfig, replies: &[&str]) -> Server {
    let provider = ScriptedProvider::new(replies.iter().map(|s| s.to_string())).unwrap();
    let gateway = Gateway::new(Arc::new(provider), ContextBudget::default());
    let hub = Hub::new(
        Store::open(dir).unwrap(),
        Arc::new(SystemClock::real_time()),
        gateway,
        cfg,
        HatRegistry::default(),
    );
    hub.recover().await.unwrap();
    let state = AppState {
        hub: hub.clone(),
        admin_token: Some(ADMIN.into()),
        default_group_size: 3,
    };
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    tokio::spawn(ptfa_server::serve(listener, state, async {
        let _ = rx.await;
    }));
    Server {
        addr,
        hub,
        shutdown: Some(tx),
    }
}

pub async fn create(addr: SocketAddr, body: Value) -> (u16, Value) {
    let resp = reqwest::Client::new()
        .post(format!("http://{addr}/sessions"))
        .bearer_auth(ADMIN)
        .json(&body)
        .send()
        .await
        .unwrap();
    (resp.status().as_u16(), resp.json().await.unwrap())
}

pub async fn get(addr: SocketAddr, path: &str) -> (u16, String) {
    let resp = reqwest::Client::new()
        .get(format!("http://{addr}{path}"))
        .bearer_auth(ADMIN)
        .send()
        .await
        .unwrap();
    (resp.status().as_u16(), resp.text().await.unwrap())
}

pub struct Client {
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
}

impl Client {
    pub async fn connect(addr: SocketAddr) -> Client {
        let (ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/ws")).await.unwrap();
        Client { ws }
    }

    pub async fn send(&mut self, v: Value) {
        self.ws.send(Message::Text(v.to_string().into())).await.unwrap();
    }

    pub async fn join(&mut self, session_id: &str, token: &str) -> Value {
        self.send(json!({"type": "join", "session_id": session_id, "token": token})).await;
        self.recv().await
    }

    pub async fn post(&mut self, text: &str) {
        self.send(json!({"type": "post", "text": text})).await;
    }

    /// Next envelope; panics after 10 s of silence.
    pub async fn recv(&mut self) -> Value {
        loop {
            let msg = tokio::time::timeout(Duration::from_secs(10), self.ws.next())
                .await
                .expect("envelope within 10 s")
                .expect("socket open")
                .expect("frame");
            if let Message::Text(t) = msg {
                return serde_json::from_str(t.as_str()).unwrap();
            }
        }
    }

    /// Reads until an envelope of `kind` arrives; returns everything read.
    pub async fn recv_until(&mut self, kind: &str) -> Vec<Value> {
        let mut seen = Vec::new();
        loop {
            let v = self.recv().await;
            let done = v["type"] == kind;
            seen.push(v);
            if done {
                return seen;
            }
        }
    }

    pub async fn close(mut self) {
        let _ = self.ws.close(None).await;
    }
}

pub fn seqs(envs: &[Value]) -> Vec<u64> {
    let mut out: Vec<u64> = envs.iter().filter_map(|v| v["seq"].as_u64()).collect();
    out.dedup();
    out
}
