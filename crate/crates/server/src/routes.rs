//! HTTP and WebSocket surface.

use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use ptfa_core::model::{FacilitationModel, TopicId};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::broadcast;

use crate::hub::{Hub, HubError, Membership};
use crate::protocol::{ClientEnvelope, ErrorCode, ServerEnvelope};

#[derive(Clone)]
pub struct AppState {
    pub hub: Arc<Hub>,
    /// Bearer token for the admin routes; `None` disables them.
    pub admin_token: Option<Arc<str>>,
    pub default_group_size: usize,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/export", get(export))
        .route("/sessions/{id}/survey", get(survey))
        .route("/ws", get(ws_upgrade))
        .with_state(state)
}

fn error_response(status: StatusCode, code: &str, message: impl Into<String>) -> Response {
    (status, Json(json!({"code": code, "message": message.into()}))).into_response()
}

fn hub_error_response(e: HubError) -> Response {
    let status = match e {
        HubError::UnknownSession => StatusCode::NOT_FOUND,
        HubError::SessionNotClosed => StatusCode::CONFLICT,
        HubError::StorageUnavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
        HubError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    };
    let code = serde_json::to_value(e.code()).expect("codes serialize");
    (status, Json(json!({"code": code, "message": e.to_string()}))).into_response()
}

/// The rejection to send, if the request may not use admin routes.
fn rejection(state: &AppState, headers: &HeaderMap) -> Option<Response> {
    let Some(expected) = &state.admin_token else {
        return Some(error_response(StatusCode::FORBIDDEN, "AdminDisabled", "admin token is not configured"));
    };
    let presented = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    (presented != Some(&**expected))
        .then(|| error_response(StatusCode::UNAUTHORIZED, "Unauthorized", "missing or wrong admin token"))
}

#[derive(Deserialize)]
struct CreateBody {
    topic: Value,
    model: Value,
    group_size: Option<usize>,
}

fn parse_topic(v: &Value) -> Option<TopicId> {
    match v.as_u64()? {
        0 => Some(TopicId::Topic0),
        1 => Some(TopicId::Topic1),
        _ => None,
    }
}

fn parse_model(v: &Value) -> Option<FacilitationModel> {
    match v {
        Value::String(s) => s.parse().ok(),
        Value::Number(n) => n.to_string().parse().ok(),
        _ => None,
    }
}

async fn create_session(State(state): State<AppState>, headers: HeaderMap, body: Option<Json<CreateBody>>) -> Response {
    if let Some(resp) = rejection(&state, &headers) {
        return resp;
    }
    let Some(Json(body)) = body else {
        return error_response(StatusCode::BAD_REQUEST, "BadMessage", "expected a JSON body with topic and model");
    };
    let Some(topic) = parse_topic(&body.topic) else {
        return error_response(StatusCode::BAD_REQUEST, "InvalidTopic", "topic must be 0 or 1");
    };
    let Some(model) = parse_model(&body.model) else {
        return error_response(StatusCode::BAD_REQUEST, "InvalidModel", "model must be \"0\" or \"1\"");
    };
    let group_size = body.group_size.unwrap_or(state.default_group_size);
    match state.hub.create_session(topic, model, group_size).await {
        Ok(created) => (
            StatusCode::CREATED,
            Json(json!({
                "session_id": created.session_id,
                "topic": topic,
                "model": model,
                "group_size": group_size,
                "tokens": created.tokens,
            })),
        )
            .into_response(),
        Err(HubError::InvalidGroupSize(n)) => error_response(
            StatusCode::BAD_REQUEST,
            "InvalidGroupSize",
            format!("group size must be at least 2, got {n}"),
        ),
        Err(e) => hub_error_response(e),
    }
}

fn jsonl(body: String) -> Response {
    ([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response()
}

async fn export(State(state): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> Response {
    if let Some(resp) = rejection(&state, &headers) {
        return resp;
    }
    match state.hub.export(&id).await {
        Ok(body) => jsonl(body),
        Err(e) => hub_error_response(e),
    }
}

async fn survey(State(state): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> Response {
    if let Some(resp) = rejection(&state, &headers) {
        return resp;
    }
    match state.hub.survey_export(&id).await {
        Ok(body) => jsonl(body),
        Err(e) => hub_error_response(e),
    }
}

async fn ws_upgrade(State(state): State<AppState>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| connection(state.hub, socket))
}

async fn next_event(rx: &mut Option<broadcast::Receiver<ServerEnvelope>>) -> Result<ServerEnvelope, broadcast::error::RecvError> {
    match rx {
        Some(rx) => rx.recv().await,
        None => std::future::pending().await,
    }
}

async fn connection(hub: Arc<Hub>, socket: WebSocket) {
    let (mut sink, mut frames) = socket.split();
    let mut member: Option<Membership> = None;
    let mut stream: Option<broadcast::Receiver<ServerEnvelope>> = None;

    'conn: loop {
        let outgoing: Vec<ServerEnvelope> = tokio::select! {
            frame = frames.next() => match frame {
                Some(Ok(Message::Text(text))) => {
                    handle_frame(&hub, &mut member, &mut stream, text.as_str()).await
                }
                Some(Ok(Message::Binary(_))) => {
                    vec![ServerEnvelope::error(ErrorCode::BadMessage, "frames must be UTF-8 text")]
                }
                Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break 'conn,
                Some(Ok(_)) => continue,
            },
            event = next_event(&mut stream) => match event {
                Ok(env) => vec![env],
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    let msg = format!("connection fell {n} messages behind; rejoin to resync");
                    let _ = sink.send(Message::Text(ServerEnvelope::error(ErrorCode::Lagged, msg).to_text().into())).await;
                    break 'conn;
                }
                Err(broadcast::error::RecvError::Closed) => {
                    stream = None;
                    continue;
                }
            },
        };
        for env in outgoing {
            if sink.send(Message::Text(env.to_text().into())).await.is_err() {
                break 'conn;
            }
        }
    }
    if let Some(m) = member {
        hub.leave(&m).await;
    }
}

async fn handle_frame(
    hub: &Arc<Hub>,
    member: &mut Option<Membership>,
    stream: &mut Option<broadcast::Receiver<ServerEnvelope>>,
    text: &str,
) -> Vec<ServerEnvelope> {
    let envelope: ClientEnvelope = match serde_json::from_str(text) {
        Ok(env) => env,
        Err(e) => return vec![ServerEnvelope::error(ErrorCode::BadMessage, e.to_string())],
    };
    let result = match envelope {
        ClientEnvelope::Join { session_id, token } => {
            if member.is_some() {
                return vec![HubError::TokenReused.envelope()];
            }
            match hub.join(&session_id, &token).await {
                Ok(grant) => {
                    *member = Some(grant.membership);
                    *stream = Some(grant.stream);
                    return grant.greeting;
                }
                Err(e) => Err(e),
            }
        }
        ClientEnvelope::Post { text } => match member {
            // The post itself comes back through the broadcast stream.
            Some(m) => hub.submit_post(m, &text).await.map(|_| Vec::new()),
            None => Err(HubError::NotJoined),
        },
        ClientEnvelope::Survey { answers } => match member {
            Some(m) => hub.submit_survey(m, &answers).await.map(|()| {
                vec![ServerEnvelope::SurveyAck {
                    participant_id: m.participant.to_string(),
                }]
            }),
            None => Err(HubError::NotJoined),
        },
    };
    result.unwrap_or_else(|e| vec![e.envelope()])
}
