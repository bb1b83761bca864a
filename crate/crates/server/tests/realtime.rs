mod common;

use std::collections::HashSet;

use common::{create, get, seqs, short_config, start, Client};
use ptfa_core::facilitation::BASELINE_MESSAGES;
use ptfa_core::scheduler::SchedulerConfig;
use serde_json::json;

#[tokio::test]
async fn create_hands_out_distinct_tokens() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(dir.path(), short_config(), &["Good"]).await;
    let (status, a) = create(srv.addr, json!({"topic": 0, "model": "1", "group_size": 3})).await;
    assert_eq!(status, 201);
    let (_, b) = create(srv.addr, json!({"topic": 1, "model": 1})).await;
    assert_ne!(a["session_id"], b["session_id"]);
    let tokens: HashSet<String> = a["tokens"]
        .as_array()
        .unwrap()
        .iter()
        .chain(b["tokens"].as_array().unwrap())
        .map(|t| t.as_str().unwrap().to_string())
        .collect();
    assert_eq!(tokens.len(), 6);

    let (status, err) = create(srv.addr, json!({"topic": 0, "model": "1", "group_size": 1})).await;
    assert_eq!((status, err["code"].as_str()), (400, Some("InvalidGroupSize")));
    let (status, err) = create(srv.addr, json!({"topic": 7, "model": "1"})).await;
    assert_eq!((status, err["code"].as_str()), (400, Some("InvalidTopic")));
}

#[tokio::test]
async fn admin_routes_need_the_token() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(dir.path(), short_config(), &["Good"]).await;
    let http = reqwest::Client::new();
    let resp = http
        .post(format!("http://{}/sessions", srv.addr))
        .json(&json!({"topic": 0, "model": "1"}))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status().as_u16(), 401);
    let resp = http
        .get(format!("http://{}/sessions/x/export", srv.addr))
        .bearer_auth("wrong")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status().as_u16(), 401);
}

#[tokio::test]
async fn join_rules() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(dir.path(), short_config(), &["Good"]).await;
    let (_, s) = create(srv.addr, json!({"topic": 0, "model": "1", "group_size": 2})).await;
    let id = s["session_id"].as_str().unwrap();
    let tokens: Vec<&str> = s["tokens"].as_array().unwrap().iter().map(|t| t.as_str().unwrap()).collect();

    let mut bad = Client::connect(srv.addr).await;
    assert_eq!(bad.join(id, "nope").await["code"], "TokenInvalid");
    assert_eq!(bad.join("missing", tokens[0]).await["code"], "UnknownSession");

    let mut a = Client::connect(srv.addr).await;
    let joined = a.join(id, tokens[0]).await;
    assert_eq!(joined["type"], "joined");
    assert_eq!(joined["participant_id"], "P1");
    assert_eq!(joined["topic"], "Please decide one activity that you would like to do together");
    assert_eq!(joined["elapsed_ms"], serde_json::Value::Null);

    a.post("too early").await;
    assert_eq!(a.recv().await["code"], "NotLive");

    let mut dup = Client::connect(srv.addr).await;
    assert_eq!(dup.join(id, tokens[0]).await["code"], "TokenReused");

    let mut b = Client::connect(srv.addr).await;
    assert_eq!(b.join(id, tokens[1]).await["participant_id"], "P2");

    let mut outsider = Client::connect(srv.addr).await;
    outsider.post("hello").await;
    assert_eq!(outsider.recv().await["code"], "NotJoined");

    b.post("").await;
    assert_eq!(b.recv().await["code"], "EmptyText");
    b.post(&"x".repeat(4_001)).await;
    assert_eq!(b.recv().await["code"], "TextTooLong");

    b.recv_until("session_end").await;
    let mut late = Client::connect(srv.addr).await;
    assert_eq!(late.join(id, tokens[0]).await["code"], "SessionClosed");
}

#[tokio::test]
async fn model0_opening_message_arrives_when_the_group_is_full() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SchedulerConfig {
        session_duration_ms: 1_200_000,
        phase_boundary_ms: 600_000,
        tick_interval_ms: 30_000,
        ..short_config()
    };
    let srv = start(dir.path(), cfg, &["Good"]).await;
    let (_, s) = create(srv.addr, json!({"topic": 1, "model": "0", "group_size": 2})).await;
    let id = s["session_id"].as_str().unwrap();
    let mut a = Client::connect(srv.addr).await;
    a.join(id, s["tokens"][0].as_str().unwrap()).await;
    let mut b = Client::connect(srv.addr).await;
    b.join(id, s["tokens"][1].as_str().unwrap()).await;
    for c in [&mut a, &mut b] {
        let f = c.recv().await;
        assert_eq!(f["type"], "facilitator");
        assert_eq!(f["seq"], 1);
        assert_eq!(f["ts_ms"], 0);
        assert_eq!(f["hat"], serde_json::Value::Null);
        assert_eq!(f["text"], BASELINE_MESSAGES[0].1);
    }
}

#[tokio::test]
async fn every_client_sees_the_same_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(dir.path(), short_config(), &["Try another angle.", "Good"]).await;
    let (_, s) = create(srv.addr, json!({"topic": 0, "model": "1", "group_size": 3})).await;
    let id = s["session_id"].as_str().unwrap().to_string();
    let tokens: Vec<String> = s["tokens"].as_array().unwrap().iter().map(|t| t.as_str().unwrap().into()).collect();

    let mut clients = Vec::new();
    for t in &tokens {
        let mut c = Client::connect(srv.addr).await;
        c.join(&id, t).await;
        clients.push(c);
    }
    let mut tasks = Vec::new();
    for (i, mut c) in clients.into_iter().enumerate() {
        tasks.push(tokio::spawn(async move {
            for n in 0..10 {
                c.post(&format!("client {i} message {n}")).await;
            }
            let seen = c.recv_until("session_end").await;
            (c, seen)
        }));
    }
    let mut logs = Vec::new();
    for t in tasks {
        let (c, seen) = t.await.unwrap();
        assert!(seen.iter().all(|v| v["type"] != "error"), "{seen:?}");
        logs.push(seqs(&seen));
        c.close().await;
    }
    let export = get(srv.addr, &format!("/sessions/{id}/export")).await.1;
    let n = export.lines().count() as u64;
    assert!(n >= 32, "30 posts, 2 phase records, plus facilitator posts");
    for log in &logs {
        assert_eq!(log, &(1..=n).collect::<Vec<_>>());
    }
}

#[tokio::test]
async fn rejoin_gets_a_snapshot_then_the_live_stream() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SchedulerConfig {
        session_duration_ms: 30_000,
        phase_boundary_ms: 15_000,
        ..short_config()
    };
    let srv = start(dir.path(), cfg, &["Good"]).await;
    let (_, s) = create(srv.addr, json!({"topic": 0, "model": "1", "group_size": 2})).await;
    let id = s["session_id"].as_str().unwrap();
    let (t1, t2) = (s["tokens"][0].as_str().unwrap(), s["tokens"][1].as_str().unwrap());
    let mut a = Client::connect(srv.addr).await;
    a.join(id, t1).await;
    let mut b = Client::connect(srv.addr).await;
    b.join(id, t2).await;
    a.post("first").await;
    assert_eq!(a.recv().await["seq"], 1);
    b.close().await;
    a.post("second").await;
    assert_eq!(a.recv().await["seq"], 2);
    tokio::time::sleep(std::time::Duration::from_millis(100)).await;

    let mut b = Client::connect(srv.addr).await;
    let joined = b.join(id, t2).await;
    assert_eq!(joined["participant_id"], "P2");
    assert!(joined["elapsed_ms"].as_u64().is_some());
    let snapshot = [b.recv().await, b.recv().await];
    assert_eq!(seqs(&snapshot), vec![1, 2]);
    assert_eq!(snapshot[1]["text"], "second");
    a.post("third").await;
    let live = b.recv().await;
    assert_eq!((live["seq"].as_u64(), live["author"].as_str()), (Some(3), Some("P1")));
}

#[tokio::test]
async fn survey_after_close() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(dir.path(), short_config(), &["Good"]).await;
    let (_, s) = create(srv.addr, json!({"topic": 1, "model": "1", "group_size": 2})).await;
    let id = s["session_id"].as_str().unwrap();
    let mut a = Client::connect(srv.addr).await;
    a.join(id, s["tokens"][0].as_str().unwrap()).await;
    let mut b = Client::connect(srv.addr).await;
    b.join(id, s["tokens"][1].as_str().unwrap()).await;

    a.send(json!({"type": "survey", "answers": [6, 5, 7]})).await;
    assert_eq!(a.recv().await["code"], "SessionNotClosed");
    assert_eq!(get(srv.addr, &format!("/sessions/{id}/export")).await.0, 409);

    a.recv_until("session_end").await;
    a.send(json!({"type": "survey", "answers": [6, 5, 8]})).await;
    assert_eq!(a.recv().await["code"], "OutOfRangeAnswer");
    a.send(json!({"type": "survey", "answers": [6, 5, 7]})).await;
    assert_eq!(a.recv().await, json!({"type": "survey_ack", "participant_id": "P1"}));
    a.send(json!({"type": "survey", "answers": [1, 1, 1]})).await;
    assert_eq!(a.recv().await["code"], "DuplicateResponse");

    let (status, body) = get(srv.addr, &format!("/sessions/{id}/survey")).await;
    assert_eq!(status, 200);
    assert_eq!(
        body,
        "{\"participant_id\":\"P1\",\"q_experience\":6,\"q_facilitator\":5,\"q_consensus\":7}\n"
    );
    let (status, export) = get(srv.addr, &format!("/sessions/{id}/export")).await;
    assert_eq!(status, 200);
    assert!(export.lines().last().unwrap().contains("\"phase\":\"closed\""));
    assert!(!export.contains(s["tokens"][0].as_str().unwrap()));
    assert!(dir.path().join(format!("session_{id}.jsonl")).exists());
}

#[tokio::test]
async fn restart_recovers_sessions_and_posts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SchedulerConfig {
        session_duration_ms: 3_000,
        phase_boundary_ms: 1_500,
        ..short_config()
    };
    let id;
    {
        let srv = start(dir.path(), cfg.clone(), &["Good"]).await;
        let (_, s) = create(srv.addr, json!({"topic": 0, "model": "1", "group_size": 2})).await;
        id = s["session_id"].as_str().unwrap().to_string();
        let mut a = Client::connect(srv.addr).await;
        a.join(&id, s["tokens"][0].as_str().unwrap()).await;
        let mut b = Client::connect(srv.addr).await;
        b.join(&id, s["tokens"][1].as_str().unwrap()).await;
        a.post("remember me").await;
        assert_eq!(a.recv().await["seq"], 1);
    }
    // The first instance is gone; its ticker may still run until the runtime
    // drops it, so the second instance gets a fresh directory copy.
    let copy = tempfile::tempdir().unwrap();
    for entry in std::fs::read_dir(dir.path()).unwrap() {
        let entry = entry.unwrap();
        std::fs::copy(entry.path(), copy.path().join(entry.file_name())).unwrap();
    }
    let srv = start(copy.path(), cfg, &["Good"]).await;
    let export = loop {
        let (status, body) = get(srv.addr, &format!("/sessions/{id}/export")).await;
        if status == 200 {
            break body;
        }
        tokio::time::sleep(std::time::Duration::from_millis(200)).await;
    };
    assert!(export.lines().next().unwrap().contains("remember me"));
}
