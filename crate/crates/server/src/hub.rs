//! Live sessions and the operations clients perform on them.
//!
//! Each session has one mutex. Every mutation happens under it: journal
//! write, in-memory commit, then broadcast of every record not yet sent.
//! Broadcast order therefore equals seq order for every subscriber. The
//! ticker releases the lock while the hats are being evaluated.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use ptfa_core::clock::Clock;
use ptfa_core::facilitation::{decide_all, BaselineSchedule, HatRegistry};
use ptfa_core::llm::Gateway;
use ptfa_core::model::{
    FacilitationModel, ParticipantId, Session, SessionError, SessionHeader, SurveyResponse, TopicId,
};
use ptfa_core::scheduler::{SchedulerConfig, SessionRuntime, TickReport, TickStep};
use ptfa_core::store::{export_dataset, LogEntry, SessionLog, StorageError, Store, SurveyLog};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tokio::sync::{broadcast, Mutex};

use crate::protocol::{envelopes_for, ErrorCode, ServerEnvelope};

const BROADCAST_CAPACITY: usize = 4_096;

#[derive(Debug, Error)]
pub enum HubError {
    #[error("no such session")]
    UnknownSession,
    #[error("group size must be at least 2, got {0}")]
    InvalidGroupSize(usize),
    #[error("{0}")]
    InvalidRequest(String),
    #[error("token is not valid for this session")]
    TokenInvalid,
    #[error("token is already in use")]
    TokenReused,
    #[error("session is closed")]
    SessionClosed,
    #[error("session has not started yet")]
    NotLive,
    #[error("join a session first")]
    NotJoined,
    #[error("session is not closed yet")]
    SessionNotClosed,
    #[error("survey already submitted")]
    DuplicateResponse,
    #[error("{0}")]
    OutOfRangeAnswer(String),
    #[error("storage unavailable: {0}")]
    StorageUnavailable(String),
    #[error(transparent)]
    Post(SessionError),
    #[error("{0}")]
    Internal(String),
}

impl HubError {
    pub fn code(&self) -> ErrorCode {
        match self {
            HubError::UnknownSession => ErrorCode::UnknownSession,
            HubError::InvalidGroupSize(_) | HubError::InvalidRequest(_) => ErrorCode::BadMessage,
            HubError::TokenInvalid => ErrorCode::TokenInvalid,
            HubError::TokenReused => ErrorCode::TokenReused,
            HubError::SessionClosed => ErrorCode::SessionClosed,
            HubError::NotLive => ErrorCode::NotLive,
            HubError::NotJoined => ErrorCode::NotJoined,
            HubError::SessionNotClosed => ErrorCode::SessionNotClosed,
            HubError::DuplicateResponse => ErrorCode::DuplicateResponse,
            HubError::OutOfRangeAnswer(_) => ErrorCode::OutOfRangeAnswer,
            HubError::StorageUnavailable(_) => ErrorCode::StorageUnavailable,
            HubError::Post(SessionError::EmptyText) => ErrorCode::EmptyText,
            HubError::Post(SessionError::TextTooLong { .. }) => ErrorCode::TextTooLong,
            HubError::Post(SessionError::SessionClosed) => ErrorCode::SessionClosed,
            HubError::Post(_) | HubError::Internal(_) => ErrorCode::Internal,
        }
    }

    pub fn envelope(&self) -> ServerEnvelope {
        ServerEnvelope::error(self.code(), self.to_string())
    }
}

impl From<StorageError> for HubError {
    fn from(e: StorageError) -> Self {
        HubError::StorageUnavailable(e.to_string())
    }
}

impl From<SessionError> for HubError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Storage(s) => s.into(),
            other => HubError::Post(other),
        }
    }
}

fn token_key(token: &str) -> String {
    hex::encode(Sha256::digest(token.as_bytes()))
}

#[derive(Debug)]
struct Seat {
    key: String,
    participant: Option<ParticipantId>,
    conn: Option<u64>,
}

struct SessionInner {
    topic: TopicId,
    model: FacilitationModel,
    duration_ms: u64,
    seats: Vec<Seat>,
    runtime: Option<SessionRuntime>,
    log: SessionLog,
    broadcast_upto: u64,
    paused: bool,
    survey: Option<SurveyLog>,
}

impl SessionInner {
    fn is_closed(&self) -> bool {
        self.runtime.as_ref().is_some_and(SessionRuntime::is_closed)
    }

    /// Sends every committed record that has not been broadcast yet.
    fn flush(&mut self, tx: &broadcast::Sender<ServerEnvelope>) {
        let Some(rt) = &self.runtime else { return };
        for post in rt.session().posts().iter().filter(|p| p.seq > self.broadcast_upto) {
            for env in envelopes_for(post) {
                // No receivers is fine: nobody is connected right now.
                let _ = tx.send(env);
            }
        }
        self.broadcast_upto = rt.session().seq_counter();
    }
}

pub struct SessionHandle {
    id: String,
    tx: broadcast::Sender<ServerEnvelope>,
    inner: Mutex<SessionInner>,
}

impl SessionHandle {
    pub fn id(&self) -> &str {
        &self.id
    }
}

/// A connection's claim on a seat.
#[derive(Clone)]
pub struct Membership {
    pub handle: Arc<SessionHandle>,
    pub seat: usize,
    pub participant: ParticipantId,
    conn: u64,
}

pub struct JoinGrant {
    pub membership: Membership,
    /// `joined` followed by every record so far.
    pub greeting: Vec<ServerEnvelope>,
    /// Live stream of everything after the greeting.
    pub stream: broadcast::Receiver<ServerEnvelope>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CreatedSession {
    pub session_id: String,
    pub tokens: Vec<String>,
}

pub struct Hub {
    store: Store,
    clock: Arc<dyn Clock>,
    gateway: Gateway,
    scheduler: SchedulerConfig,
    hats: HatRegistry,
    sessions: RwLock<HashMap<String, Arc<SessionHandle>>>,
    next_conn: AtomicU64,
}

impl Hub {
    pub fn new(
        store: Store,
        clock: Arc<dyn Clock>,
        gateway: Gateway,
        scheduler: SchedulerConfig,
        hats: HatRegistry,
    ) -> Arc<Hub> {
        Arc::new(Hub {
            store,
            clock,
            gateway,
            scheduler,
            hats,
            sessions: RwLock::new(HashMap::new()),
            next_conn: AtomicU64::new(1),
        })
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    fn lookup(&self, id: &str) -> Result<Arc<SessionHandle>, HubError> {
        self.sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or(HubError::UnknownSession)
    }

    fn insert(&self, handle: Arc<SessionHandle>) {
        self.sessions
            .write()
            .expect("session map lock")
            .insert(handle.id.clone(), handle);
    }

    fn config_for(&self, duration_ms: u64) -> SchedulerConfig {
        SchedulerConfig {
            session_duration_ms: duration_ms,
            ..self.scheduler.clone()
        }
    }

    pub async fn create_session(
        &self,
        topic: TopicId,
        model: FacilitationModel,
        group_size: usize,
    ) -> Result<CreatedSession, HubError> {
        if group_size < 2 {
            return Err(HubError::InvalidGroupSize(group_size));
        }
        let duration_ms = self.scheduler.session_duration_ms;
        if model == FacilitationModel::Model0 {
            BaselineSchedule::published(duration_ms)
                .map_err(|e| HubError::InvalidRequest(format!("model 0 cannot run in this configuration: {e}")))?;
        }
        let session_id = uuid::Uuid::new_v4().simple().to_string();
        let tokens: Vec<String> = (0..group_size)
            .map(|_| hex::encode(rand::random::<[u8; 16]>()))
            .collect();
        let seat_keys: Vec<String> = tokens.iter().map(|t| token_key(t)).collect();
        let log = self.store.create(&LogEntry::Created {
            session_id: session_id.clone(),
            topic,
            model,
            group_size,
            duration_ms,
            seat_keys: seat_keys.clone(),
        })?;
        let inner = SessionInner {
            topic,
            model,
            duration_ms,
            seats: seat_keys
                .into_iter()
                .map(|key| Seat {
                    key,
                    participant: None,
                    conn: None,
                })
                .collect(),
            runtime: None,
            log,
            broadcast_upto: 0,
            paused: false,
            survey: None,
        };
        self.insert(Arc::new(SessionHandle {
            id: session_id.clone(),
            tx: broadcast::channel(BROADCAST_CAPACITY).0,
            inner: Mutex::new(inner),
        }));
        tracing::info!(session = %session_id, topic = topic.id(), ?model, group_size, "session created");
        Ok(CreatedSession { session_id, tokens })
    }

    pub async fn join(self: &Arc<Self>, session_id: &str, token: &str) -> Result<JoinGrant, HubError> {
        let handle = self.lookup(session_id)?;
        let mut guard = handle.inner.lock().await;
        let g = &mut *guard;
        if g.is_closed() {
            return Err(HubError::SessionClosed);
        }
        let key = token_key(token);
        let seat = g.seats.iter().position(|s| s.key == key).ok_or(HubError::TokenInvalid)?;
        let participant = match &g.seats[seat].participant {
            Some(_) if g.seats[seat].conn.is_some() => return Err(HubError::TokenReused),
            Some(p) => p.clone(),
            None => {
                let n = g.seats.iter().filter(|s| s.participant.is_some()).count() as u32 + 1;
                let p = ParticipantId::numbered(n);
                g.log.append(&LogEntry::Joined {
                    seat,
                    participant_id: p.clone(),
                })?;
                g.seats[seat].participant = Some(p.clone());
                p
            }
        };

        let mut started = false;
        if g.runtime.is_none() && g.seats.iter().all(|s| s.participant.is_some()) {
            let now = self.clock.now_ms();
            g.log.append(&LogEntry::Started { started_at_ms: now })?;
            let header = SessionHeader {
                session_id: handle.id.clone(),
                topic: g.topic,
                model: g.model,
                group_size: g.seats.len(),
                started_at_ms: now,
                duration_ms: g.duration_ms,
            };
            let session = Session::start(header)?;
            let runtime = SessionRuntime::new(session, self.config_for(g.duration_ms), self.hats.clone(), self.gateway.budget())
                .map_err(|e| HubError::Internal(e.to_string()))?;
            g.runtime = Some(runtime);
            started = true;
            tracing::info!(session = %handle.id, "group complete, session live");
        }

        let conn = self.next_conn.fetch_add(1, Ordering::Relaxed);
        g.seats[seat].conn = Some(conn);
        let stream = handle.tx.subscribe();
        let mut greeting = vec![ServerEnvelope::Joined {
            participant_id: participant.to_string(),
            topic: g.topic.prompt_text().to_string(),
            duration_ms: g.duration_ms,
            elapsed_ms: g
                .runtime
                .as_ref()
                .map(|rt| self.clock.now_ms().saturating_sub(rt.session().started_at_ms())),
        }];
        if let Some(rt) = &g.runtime {
            greeting.extend(rt.session().posts().iter().flat_map(envelopes_for));
        }
        drop(guard);
        if started {
            self.spawn_ticker(handle.clone());
        }
        Ok(JoinGrant {
            membership: Membership {
                handle,
                seat,
                participant,
                conn,
            },
            greeting,
            stream,
        })
    }

    /// Frees the seat for a later rejoin.
    pub async fn leave(&self, m: &Membership) {
        let mut g = m.handle.inner.lock().await;
        if g.seats[m.seat].conn == Some(m.conn) {
            g.seats[m.seat].conn = None;
        }
    }

    fn check_member(g: &SessionInner, m: &Membership) -> Result<(), HubError> {
        if g.seats.get(m.seat).and_then(|s| s.conn) == Some(m.conn) {
            Ok(())
        } else {
            Err(HubError::NotJoined)
        }
    }

    /// Appends and broadcasts a participant post; returns its seq.
    pub async fn submit_post(&self, m: &Membership, text: &str) -> Result<u64, HubError> {
        let mut guard = m.handle.inner.lock().await;
        let g = &mut *guard;
        Self::check_member(g, m)?;
        if g.paused {
            return Err(HubError::StorageUnavailable("session paused after a failed write".into()));
        }
        let rt = g.runtime.as_mut().ok_or(HubError::NotLive)?;
        let result = rt.participant_post(&m.participant, text, self.clock.now_ms(), &mut g.log);
        if let Err(SessionError::Storage(e)) = &result {
            tracing::error!(session = %m.handle.id, error = %e, "write failed, pausing session");
            g.paused = true;
        }
        g.flush(&m.handle.tx);
        Ok(result?.seq)
    }

    pub async fn submit_survey(&self, m: &Membership, answers: &[i64]) -> Result<(), HubError> {
        let mut guard = m.handle.inner.lock().await;
        let g = &mut *guard;
        Self::check_member(g, m)?;
        if !g.is_closed() {
            return Err(HubError::SessionNotClosed);
        }
        if answers.len() != 3 {
            return Err(HubError::OutOfRangeAnswer(format!("expected 3 answers, got {}", answers.len())));
        }
        let response = SurveyResponse::from_answers(m.participant.clone(), answers)
            .map_err(|e| HubError::OutOfRangeAnswer(e.to_string()))?;
        if g.survey.is_none() {
            g.survey = Some(SurveyLog::open(&self.store, &m.handle.id)?);
        }
        let survey = g.survey.as_mut().expect("opened above");
        if survey.responses().iter().any(|r| r.participant_id == m.participant) {
            return Err(HubError::DuplicateResponse);
        }
        survey.append(response)?;
        Ok(())
    }

    pub async fn export(&self, session_id: &str) -> Result<String, HubError> {
        let handle = self.lookup(session_id)?;
        let g = handle.inner.lock().await;
        match &g.runtime {
            Some(rt) if rt.is_closed() => {
                export_dataset(rt.session()).map_err(|e| HubError::Internal(e.to_string()))
            }
            _ => Err(HubError::SessionNotClosed),
        }
    }

    pub async fn survey_export(&self, session_id: &str) -> Result<String, HubError> {
        let handle = self.lookup(session_id)?;
        let mut g = handle.inner.lock().await;
        if g.survey.is_none() {
            g.survey = Some(SurveyLog::open(&self.store, session_id)?);
        }
        Ok(g.survey.as_ref().expect("opened above").to_jsonl())
    }

    fn spawn_ticker(self: &Arc<Self>, handle: Arc<SessionHandle>) {
        let hub = self.clone();
        tokio::spawn(async move { hub.run_ticker(handle).await });
    }

    async fn run_ticker(&self, handle: Arc<SessionHandle>) {
        let deadline = self.clock.wall_duration(self.scheduler.evaluation_deadline_ms());
        loop {
            let due = {
                let g = handle.inner.lock().await;
                match g.runtime.as_ref().and_then(SessionRuntime::next_due_ms) {
                    Some(due) => due,
                    None => break,
                }
            };
            self.clock.sleep_until(due).await;

            let pending = {
                let mut guard = handle.inner.lock().await;
                let g = &mut *guard;
                g.paused = false;
                let rt = g.runtime.as_mut().expect("ticker runs on started sessions");
                let step = rt.begin_tick(self.clock.now_ms(), &mut g.log);
                g.flush(&handle.tx);
                match step {
                    Ok(TickStep::Done(report)) => {
                        log_report(&handle.id, &report);
                        continue;
                    }
                    Ok(TickStep::Evaluate(pending)) => pending,
                    Err(e) => {
                        g.paused = matches!(e, SessionError::Storage(_));
                        drop(guard);
                        tracing::error!(session = %handle.id, error = %e, "tick failed");
                        tokio::time::sleep(Duration::from_millis(500)).await;
                        continue;
                    }
                }
            };

            let decisions = decide_all(&pending.requests, &self.gateway, deadline).await;

            let mut guard = handle.inner.lock().await;
            let g = &mut *guard;
            let rt = g.runtime.as_mut().expect("ticker runs on started sessions");
            let result = rt.finish_tick(pending, &decisions, self.clock.now_ms(), &mut g.log);
            g.flush(&handle.tx);
            match result {
                Ok(report) => log_report(&handle.id, &report),
                Err(e) => {
                    g.paused = matches!(e, SessionError::Storage(_));
                    tracing::error!(session = %handle.id, error = %e, "tick failed");
                }
            }
        }

        let g = handle.inner.lock().await;
        if let Some(rt) = &g.runtime {
            match self.store.write_export(rt.session()) {
                Ok(path) => tracing::info!(session = %handle.id, path = %path.display(), "session closed, dataset written"),
                Err(e) => tracing::error!(session = %handle.id, error = %e, "session closed, dataset export failed"),
            }
        }
    }

    /// Loads every session from the store. Sessions that were live resume
    /// their ticker; one whose time ran out while the service was down
    /// closes on its first tick.
    pub async fn recover(self: &Arc<Self>) -> Result<usize, StorageError> {
        let mut loaded = 0;
        for id in self.store.session_ids()? {
            match self.recover_one(&id) {
                Ok(handle) => {
                    let live = {
                        let g = handle.inner.lock().await;
                        g.runtime.as_ref().is_some_and(|rt| !rt.is_closed())
                    };
                    self.insert(handle.clone());
                    if live {
                        self.spawn_ticker(handle);
                    }
                    loaded += 1;
                }
                Err(e) => tracing::error!(session = %id, error = %e, "cannot recover session, skipping"),
            }
        }
        Ok(loaded)
    }

    fn recover_one(&self, id: &str) -> Result<Arc<SessionHandle>, HubError> {
        let (recovered, log) = self.store.recover(id)?;
        if recovered.torn_tail {
            tracing::warn!(session = %id, "discarded an incomplete final log line");
        }
        let Some(LogEntry::Created {
            topic,
            model,
            group_size,
            duration_ms,
            seat_keys,
            ..
        }) = recovered.entries.first().cloned()
        else {
            return Err(HubError::Internal("log does not start with a created entry".into()));
        };
        let mut seats: Vec<Seat> = seat_keys
            .into_iter()
            .map(|key| Seat {
                key,
                participant: None,
                conn: None,
            })
            .collect();
        for entry in &recovered.entries {
            if let LogEntry::Joined { seat, participant_id } = entry {
                let slot = seats
                    .get_mut(*seat)
                    .ok_or_else(|| HubError::Internal(format!("join for unknown seat {seat}")))?;
                slot.participant = Some(participant_id.clone());
            }
        }
        let runtime = match recovered.started_at_ms() {
            None => None,
            Some(started_at_ms) => {
                let header = SessionHeader {
                    session_id: id.to_string(),
                    topic,
                    model,
                    group_size,
                    started_at_ms,
                    duration_ms,
                };
                let posts = recovered.records().cloned().map(|r| r.into_post());
                let session = Session::replay(header, posts)?;
                let rt = SessionRuntime::new(session, self.config_for(duration_ms), self.hats.clone(), self.gateway.budget())
                    .map_err(|e| HubError::Internal(e.to_string()))?;
                Some(rt)
            }
        };
        let broadcast_upto = runtime.as_ref().map_or(0, |rt| rt.session().seq_counter());
        Ok(Arc::new(SessionHandle {
            id: id.to_string(),
            tx: broadcast::channel(BROADCAST_CAPACITY).0,
            inner: Mutex::new(SessionInner {
                topic,
                model,
                duration_ms,
                seats,
                runtime,
                log,
                broadcast_upto,
                paused: false,
                survey: None,
            }),
        }))
    }
}

fn log_report(session: &str, report: &TickReport) {
    tracing::debug!(
        session,
        tick = report.tick_index,
        phase = %report.phase,
        actions = ?report.actions,
        inactive = report.inactive,
        gate_open = ?report.gate_open,
        "tick"
    );
}
