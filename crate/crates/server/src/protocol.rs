//! Wire format: one JSON object per WebSocket text frame.

use ptfa_core::model::{Author, Hat, Phase, Post};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientEnvelope {
    Join { session_id: String, token: String },
    Post { text: String },
    Survey { answers: Vec<i64> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerEnvelope {
    Joined {
        participant_id: String,
        topic: String,
        duration_ms: u64,
        /// Session time at the moment of joining; null until the group is full.
        elapsed_ms: Option<u64>,
    },
    Post {
        seq: u64,
        ts_ms: u64,
        author: String,
        text: String,
    },
    Facilitator {
        seq: u64,
        ts_ms: u64,
        hat: Option<Hat>,
        text: String,
    },
    Phase {
        seq: u64,
        phase: Phase,
        ts_ms: u64,
    },
    SessionEnd {
        seq: u64,
        ts_ms: u64,
    },
    SurveyAck {
        participant_id: String,
    },
    Error {
        code: ErrorCode,
        message: String,
    },
}

impl ServerEnvelope {
    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        ServerEnvelope::Error {
            code,
            message: message.into(),
        }
    }

    pub fn seq(&self) -> Option<u64> {
        match self {
            ServerEnvelope::Post { seq, .. }
            | ServerEnvelope::Facilitator { seq, .. }
            | ServerEnvelope::Phase { seq, .. }
            | ServerEnvelope::SessionEnd { seq, .. } => Some(*seq),
            _ => None,
        }
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("envelopes serialize")
    }
}

/// Envelopes for one transcript record. The closing record yields a
/// `phase` envelope followed by `session_end`; every other record yields one.
pub fn envelopes_for(post: &Post) -> Vec<ServerEnvelope> {
    let (seq, ts_ms) = (post.seq, post.ts_ms);
    match &post.author {
        Author::Participant(p) => vec![ServerEnvelope::Post {
            seq,
            ts_ms,
            author: p.to_string(),
            text: post.text.clone(),
        }],
        Author::Facilitator => vec![ServerEnvelope::Facilitator {
            seq,
            ts_ms,
            hat: post.hat,
            text: post.text.clone(),
        }],
        Author::System if post.phase == Phase::Closed => vec![
            ServerEnvelope::Phase {
                seq,
                phase: Phase::Closed,
                ts_ms,
            },
            ServerEnvelope::SessionEnd { seq, ts_ms },
        ],
        Author::System => vec![ServerEnvelope::Phase {
            seq,
            phase: post.phase,
            ts_ms,
        }],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorCode {
    BadMessage,
    UnknownSession,
    TokenInvalid,
    TokenReused,
    SessionClosed,
    NotLive,
    NotJoined,
    EmptyText,
    TextTooLong,
    SessionNotClosed,
    DuplicateResponse,
    OutOfRangeAnswer,
    StorageUnavailable,
    Lagged,
    Internal,
}

#[cfg(test)]
mod tests {
    use super::*;
    use ptfa_core::model::ParticipantId;

    fn post(author: Author, hat: Option<Hat>, phase: Phase) -> Post {
        Post {
            session_id: "s".into(),
            seq: 4,
            ts_ms: 1_000,
            author,
            hat,
            phase,
            text: "hello".into(),
        }
    }

    #[test]
    fn client_frames_parse() {
        let j: ClientEnvelope = serde_json::from_str(r#"{"type":"join","session_id":"S","token":"T"}"#).unwrap();
        assert_eq!(j, ClientEnvelope::Join { session_id: "S".into(), token: "T".into() });
        let s: ClientEnvelope = serde_json::from_str(r#"{"type":"survey","answers":[6,5,7]}"#).unwrap();
        assert_eq!(s, ClientEnvelope::Survey { answers: vec![6, 5, 7] });
        assert!(serde_json::from_str::<ClientEnvelope>(r#"{"type":"typing"}"#).is_err());
    }

    #[test]
    fn server_frames_have_documented_shape() {
        let p = envelopes_for(&post(Author::Participant(ParticipantId::numbered(2)), None, Phase::Divergent));
        assert_eq!(
            p[0].to_text(),
            r#"{"type":"post","seq":4,"ts_ms":1000,"author":"P2","text":"hello"}"#
        );
        let f = envelopes_for(&post(Author::Facilitator, Some(Hat::Green), Phase::Divergent));
        assert_eq!(
            f[0].to_text(),
            r#"{"type":"facilitator","seq":4,"ts_ms":1000,"hat":"green","text":"hello"}"#
        );
        let b = envelopes_for(&post(Author::Facilitator, None, Phase::Divergent));
        assert!(b[0].to_text().contains(r#""hat":null"#));
        let e = ServerEnvelope::error(ErrorCode::TokenReused, "x").to_text();
        assert_eq!(e, r#"{"type":"error","code":"TokenReused","message":"x"}"#);
    }

    #[test]
    fn closing_record_ends_the_session() {
        let c = envelopes_for(&post(Author::System, None, Phase::Closed));
        assert!(matches!(c[0], ServerEnvelope::Phase { phase: Phase::Closed, .. }));
        assert!(matches!(c[1], ServerEnvelope::SessionEnd { seq: 4, .. }));
        let a = envelopes_for(&post(Author::System, None, Phase::Convergent));
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].to_text(), r#"{"type":"phase","seq":4,"phase":"convergent","ts_ms":1000}"#);
    }
}
