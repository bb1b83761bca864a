//! Session lifecycle: decision ticks, phase changes, inactivity and the
//! minimum gap between interventions.
//!
//! [`SessionRuntime`] is the synchronous state machine; it never awaits.
//! A tick is split in two so a live service can release its session lock
//! while the hats are thinking:
//!
//! 1. [`SessionRuntime::begin_tick`] advances the phase, posts any due
//!    baseline message and, under Model1, snapshots the prompts.
//! 2. [`SessionRuntime::finish_tick`] takes the hat decisions, selects at
//!    most one and applies the rate gate.
//!
//! [`run_session`] drives a whole session against a clock and a script of
//! participant posts; simulations use it directly.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::facilitation::{
    assemble_prompt, baseline_message, decide_all, select_intervention, BaselineSchedule,
    HatDecision, HatRegistry, PromptContext, ScheduleError,
};
use crate::llm::{CompletionRequest, Gateway};
use crate::model::{
    Author, FacilitationModel, Hat, ParticipantId, Phase, Post, Session, SessionError,
};
use crate::store::Journal;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    pub tick_interval_ms: u64,
    pub session_duration_ms: u64,
    pub phase_boundary_ms: u64,
    pub inactivity_threshold_ms: u64,
    pub min_intervention_gap_ms: u64,
    pub clock_scale: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            tick_interval_ms: 30_000,
            session_duration_ms: 1_200_000,
            phase_boundary_ms: 600_000,
            inactivity_threshold_ms: 90_000,
            min_intervention_gap_ms: 60_000,
            clock_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid value for `{key}`: {reason}")]
pub struct InvalidConfig {
    pub key: String,
    pub reason: String,
}

impl InvalidConfig {
    pub fn new(key: impl Into<String>, reason: impl Into<String>) -> Self {
        InvalidConfig {
            key: key.into(),
            reason: reason.into(),
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<(), InvalidConfig> {
        if self.tick_interval_ms == 0 {
            return Err(InvalidConfig::new("scheduler.tick_interval_ms", "must be > 0"));
        }
        if self.session_duration_ms == 0 {
            return Err(InvalidConfig::new("scheduler.session_duration_ms", "must be > 0"));
        }
        if self.phase_boundary_ms >= self.session_duration_ms {
            return Err(InvalidConfig::new(
                "scheduler.phase_boundary_ms",
                "must be smaller than scheduler.session_duration_ms",
            ));
        }
        if !(self.clock_scale.is_finite() && self.clock_scale > 0.0) {
            return Err(InvalidConfig::new("scheduler.clock_scale", "must be a finite number > 0"));
        }
        Ok(())
    }

    /// Time the hats get on each tick: the interval minus two seconds,
    /// never less than half the interval.
    pub fn evaluation_deadline_ms(&self) -> u64 {
        self.tick_interval_ms
            .saturating_sub(2_000)
            .max(self.tick_interval_ms / 2)
    }

    /// Decision points in a complete session.
    pub fn decision_ticks(&self) -> u64 {
        self.session_duration_ms.div_ceil(self.tick_interval_ms)
    }
}

pub fn phase_of(elapsed_ms: u64, cfg: &SchedulerConfig) -> Phase {
    if elapsed_ms >= cfg.session_duration_ms {
        Phase::Closed
    } else if elapsed_ms >= cfg.phase_boundary_ms {
        Phase::Convergent
    } else {
        Phase::Divergent
    }
}

pub fn detect_inactivity(last_post_ts: u64, elapsed_ms: u64, cfg: &SchedulerConfig) -> bool {
    elapsed_ms.saturating_sub(last_post_ts) >= cfg.inactivity_threshold_ms
}

/// Whether a Model1 intervention may be posted now. `last_intervention_ms`
/// is the offset of the previous hat post, if any.
pub fn rate_gate(
    last_intervention_ms: Option<u64>,
    elapsed_ms: u64,
    cfg: &SchedulerConfig,
    inactive: bool,
) -> bool {
    inactive
        || last_intervention_ms
            .is_none_or(|last| elapsed_ms.saturating_sub(last) >= cfg.min_intervention_gap_ms)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TickAction {
    BaselinePosted,
    HatPosted { hat: Hat },
    InactivityPrompt,
    PhaseAnnounced { phase: Phase },
    SessionEnded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickReport {
    pub tick_index: u64,
    pub elapsed_ms: u64,
    pub phase: Phase,
    /// Empty when the tick changed nothing.
    pub actions: Vec<TickAction>,
    pub inactive: bool,
    /// Hats that answered with something other than the sentinel.
    pub responders: Vec<Hat>,
    /// Rate-gate verdict; `None` when no hat was evaluated.
    pub gate_open: Option<bool>,
}

impl TickReport {
    pub fn ended(&self) -> bool {
        self.actions.contains(&TickAction::SessionEnded)
    }

    pub fn hat_posted(&self) -> Option<Hat> {
        self.actions.iter().find_map(|a| match a {
            TickAction::HatPosted { hat } => Some(*hat),
            _ => None,
        })
    }
}

/// Model1 tick waiting for hat decisions.
#[derive(Debug, Clone)]
pub struct PendingTick {
    report: TickReport,
    pub requests: Vec<(Hat, CompletionRequest)>,
}

impl PendingTick {
    pub fn tick_index(&self) -> u64 {
        self.report.tick_index
    }
}

#[derive(Debug)]
pub enum TickStep {
    Done(TickReport),
    Evaluate(PendingTick),
}

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Config(#[from] InvalidConfig),
    #[error("session duration {session_ms} ms does not match scheduler duration {config_ms} ms")]
    DurationMismatch { session_ms: u64, config_ms: u64 },
}

/// One session plus the facilitation state that goes with it.
#[derive(Debug, Clone)]
pub struct SessionRuntime {
    session: Session,
    cfg: SchedulerConfig,
    hats: HatRegistry,
    baseline: Option<BaselineSchedule>,
    baseline_sent: BTreeSet<usize>,
    next_tick: u64,
    budget: crate::llm::ContextBudget,
}

impl SessionRuntime {
    /// Wraps a session that may already hold records (after recovery);
    /// baseline progress and the tick cursor are derived from them.
    pub fn new(
        session: Session,
        cfg: SchedulerConfig,
        hats: HatRegistry,
        budget: crate::llm::ContextBudget,
    ) -> Result<Self, RuntimeError> {
        cfg.validate()?;
        if session.duration_ms() != cfg.session_duration_ms {
            return Err(RuntimeError::DurationMismatch {
                session_ms: session.duration_ms(),
                config_ms: cfg.session_duration_ms,
            });
        }
        let baseline = match session.model() {
            FacilitationModel::Model0 => Some(BaselineSchedule::published(cfg.session_duration_ms)?),
            FacilitationModel::Model1 => None,
        };
        let sent = session.posts().iter().filter(|p| p.is_facilitator()).count();
        let next_tick = session
            .posts()
            .last()
            .map_or(0, |p| p.ts_ms / cfg.tick_interval_ms + 1);
        Ok(SessionRuntime {
            session,
            cfg,
            hats,
            baseline,
            baseline_sent: (0..sent).collect(),
            next_tick,
            budget,
        })
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.cfg
    }

    pub fn is_closed(&self) -> bool {
        self.session.phase() == Phase::Closed
    }

    /// Clock time of the next tick, or of the session end if that comes
    /// first. `None` once closed.
    pub fn next_due_ms(&self) -> Option<u64> {
        if self.is_closed() {
            return None;
        }
        let offset = (self.next_tick * self.cfg.tick_interval_ms).min(self.cfg.session_duration_ms);
        Some(self.session.started_at_ms() + offset)
    }

    fn advance_phase(&mut self, elapsed_ms: u64, now_ms: u64, journal: &mut dyn Journal) -> Result<Option<Phase>, SessionError> {
        let target = phase_of(elapsed_ms, &self.cfg);
        if target > self.session.phase() {
            self.session.enter_phase(target, now_ms, journal)?;
            return Ok(Some(target));
        }
        Ok(None)
    }

    fn last_participant_ts(&self) -> u64 {
        self.session
            .posts()
            .iter()
            .rev()
            .find(|p| p.participant().is_some())
            .map_or(0, |p| p.ts_ms)
    }

    fn interventions(&self) -> impl DoubleEndedIterator<Item = &Post> {
        self.session
            .posts()
            .iter()
            .filter(|p| p.is_facilitator() && p.hat.is_some())
    }

    /// Appends a participant post, announcing a phase change first if one
    /// is due.
    pub fn participant_post(
        &mut self,
        participant: &ParticipantId,
        text: &str,
        now_ms: u64,
        journal: &mut dyn Journal,
    ) -> Result<Post, SessionError> {
        crate::model::validate_text(text)?;
        if !self.session.participants().contains(participant) {
            return Err(SessionError::UnknownParticipant(participant.clone()));
        }
        let elapsed = self.session.elapsed_ms(now_ms)?;
        if self.is_closed() || phase_of(elapsed, &self.cfg) == Phase::Closed {
            return Err(SessionError::SessionClosed);
        }
        self.advance_phase(elapsed, now_ms, journal)?;
        self.session
            .append_post(Author::Participant(participant.clone()), None, text, now_ms, journal)
    }

    pub fn begin_tick(&mut self, now_ms: u64, journal: &mut dyn Journal) -> Result<TickStep, SessionError> {
        if self.is_closed() {
            return Err(SessionError::SessionClosed);
        }
        let elapsed = self.session.elapsed_ms(now_ms)?;
        let tick_index = elapsed / self.cfg.tick_interval_ms;
        self.next_tick = tick_index + 1;
        let mut report = TickReport {
            tick_index,
            elapsed_ms: elapsed,
            phase: self.session.phase(),
            actions: Vec::new(),
            inactive: false,
            responders: Vec::new(),
            gate_open: None,
        };
        if let Some(phase) = self.advance_phase(elapsed, now_ms, journal)? {
            report.actions.push(if phase == Phase::Closed {
                TickAction::SessionEnded
            } else {
                TickAction::PhaseAnnounced { phase }
            });
        }
        report.phase = self.session.phase();
        if self.is_closed() {
            return Ok(TickStep::Done(report));
        }
        let last_participant = self.last_participant_ts();
        report.inactive = detect_inactivity(last_participant, elapsed, &self.cfg);

        match self.session.model() {
            FacilitationModel::Model0 => {
                let schedule = self.baseline.as_ref().expect("model0 has a schedule");
                if let Some(text) = baseline_message(schedule, elapsed, &mut self.baseline_sent) {
                    let text = text.to_string();
                    self.session.append_post(Author::Facilitator, None, &text, now_ms, journal)?;
                    report.actions.push(TickAction::BaselinePosted);
                }
                Ok(TickStep::Done(report))
            }
            FacilitationModel::Model1 => {
                if report.inactive {
                    report.actions.push(TickAction::InactivityPrompt);
                }
                let ctx = PromptContext {
                    topic: self.session.topic(),
                    phase: self.session.phase(),
                    elapsed_ms: elapsed,
                    duration_ms: self.cfg.session_duration_ms,
                    quiet_for_ms: report.inactive.then(|| elapsed - last_participant),
                };
                let window = self.budget.window(self.session.posts());
                let requests = self
                    .hats
                    .iter()
                    .filter_map(|cfg| match assemble_prompt(cfg, window, &ctx, &self.budget) {
                        Ok(req) => Some((cfg.hat, req)),
                        Err(e) => {
                            tracing::warn!(hat = %cfg.hat, error = %e, "skipping hat this tick");
                            None
                        }
                    })
                    .collect();
                Ok(TickStep::Evaluate(PendingTick { report, requests }))
            }
        }
    }

    pub fn finish_tick(
        &mut self,
        pending: PendingTick,
        decisions: &[HatDecision],
        now_ms: u64,
        journal: &mut dyn Journal,
    ) -> Result<TickReport, SessionError> {
        let mut report = pending.report;
        report.responders = decisions
            .iter()
            .filter(|d| d.response().is_some())
            .map(|d| d.hat)
            .collect();
        let elapsed = self.session.elapsed_ms(now_ms)?;
        if self.is_closed() || phase_of(elapsed, &self.cfg) != report.phase {
            tracing::debug!(tick = report.tick_index, "discarding decisions that outlived their phase");
            return Ok(report);
        }
        let recent: Vec<Hat> = self.interventions().rev().take(2).filter_map(|p| p.hat).collect();
        let last = self.interventions().next_back().map(|p| p.ts_ms);
        let gate = rate_gate(last, elapsed, &self.cfg, report.inactive);
        report.gate_open = Some(gate);
        if let Some((hat, text)) = select_intervention(decisions, report.phase, &recent, &self.hats) {
            if gate {
                self.session
                    .append_post(Author::Facilitator, Some(hat), &text, now_ms, journal)?;
                report.actions.push(TickAction::HatPosted { hat });
            }
        }
        Ok(report)
    }
}

/// A participant post due at a fixed offset from session start.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedPost {
    pub offset_ms: u64,
    /// Zero-based seat; seat `i` posts as `P{i+1}`.
    pub participant: usize,
    pub text: String,
}

#[derive(Debug, Error)]
pub enum SchedulerError {
    #[error("clock moved backwards from {last_ms} to {now_ms}")]
    ClockRegression { now_ms: u64, last_ms: u64 },
    #[error(transparent)]
    Session(SessionError),
}

impl From<SessionError> for SchedulerError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::ClockRegression { now_ms, last_ms } => {
                SchedulerError::ClockRegression { now_ms, last_ms }
            }
            other => SchedulerError::Session(other),
        }
    }
}

struct Monotone<'a> {
    clock: &'a dyn Clock,
    last: u64,
}

impl Monotone<'_> {
    fn now(&mut self) -> Result<u64, SchedulerError> {
        let now = self.clock.now_ms();
        if now < self.last {
            return Err(SchedulerError::ClockRegression {
                now_ms: now,
                last_ms: self.last,
            });
        }
        self.last = now;
        Ok(now)
    }
}

/// Runs a started session to completion. Script entries must be sorted by
/// offset; at equal times the tick goes first. Returns one report per
/// decision tick followed by the closing report.
pub async fn run_session(
    runtime: &mut SessionRuntime,
    gateway: &Gateway,
    clock: &dyn Clock,
    script: &[ScriptedPost],
    journal: &mut dyn Journal,
) -> Result<Vec<TickReport>, SchedulerError> {
    let start = runtime.session().started_at_ms();
    let deadline = clock.wall_duration(runtime.config().evaluation_deadline_ms());
    let mut mono = Monotone {
        clock,
        last: clock.now_ms(),
    };
    let mut reports = Vec::new();
    let mut script = script.iter().peekable();

    while let Some(tick_due) = runtime.next_due_ms() {
        if let Some(entry) = script.next_if(|e| start + e.offset_ms < tick_due) {
            clock.sleep_until(start + entry.offset_ms).await;
            let now = mono.now()?;
            let who = ParticipantId::numbered(entry.participant as u32 + 1);
            runtime.participant_post(&who, &entry.text, now, journal)?;
            continue;
        }
        clock.sleep_until(tick_due).await;
        let now = mono.now()?;
        let report = match runtime.begin_tick(now, journal)? {
            TickStep::Done(report) => report,
            TickStep::Evaluate(pending) => {
                let decisions = decide_all(&pending.requests, gateway, deadline).await;
                let now = mono.now()?;
                runtime.finish_tick(pending, &decisions, now, journal)?
            }
        };
        tracing::debug!(tick = report.tick_index, actions = ?report.actions, "tick");
        reports.push(report);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::VirtualClock;
    use crate::llm::{ContextBudget, ScriptedProvider};
    use crate::model::{SessionHeader, TopicId};
    use crate::store::NoJournal;
    use async_trait::async_trait;
    use std::sync::atomic::{AtomicU64, Ordering};
    use std::sync::Arc;
    use std::time::Duration;

    fn runtime(model: FacilitationModel, cfg: SchedulerConfig) -> SessionRuntime {
        let session = Session::start(SessionHeader {
            session_id: "t".into(),
            topic: TopicId::Topic0,
            model,
            group_size: 3,
            started_at_ms: 0,
            duration_ms: cfg.session_duration_ms,
        })
        .unwrap();
        SessionRuntime::new(session, cfg, HatRegistry::default(), ContextBudget::default()).unwrap()
    }

    fn gateway(script: Vec<String>) -> Gateway {
        Gateway::new(Arc::new(ScriptedProvider::new(script).unwrap()), ContextBudget::default())
    }

    #[test]
    fn phase_boundaries() {
        let cfg = SchedulerConfig::default();
        assert_eq!(phase_of(0, &cfg), Phase::Divergent);
        assert_eq!(phase_of(599_999, &cfg), Phase::Divergent);
        assert_eq!(phase_of(600_000, &cfg), Phase::Convergent);
        assert_eq!(phase_of(1_199_999, &cfg), Phase::Convergent);
        assert_eq!(phase_of(1_200_000, &cfg), Phase::Closed);
    }

    #[test]
    fn inactivity_boundary() {
        let cfg = SchedulerConfig::default();
        assert!(detect_inactivity(10_000, 100_000, &cfg));
        assert!(!detect_inactivity(10_001, 100_000, &cfg));
        assert!(!detect_inactivity(0, 89_999, &cfg));
    }

    #[test]
    fn gate_cases() {
        let cfg = SchedulerConfig::default();
        assert!(!rate_gate(Some(100_000), 130_000, &cfg, false));
        assert!(rate_gate(Some(100_000), 160_000, &cfg, false));
        assert!(rate_gate(Some(100_000), 130_000, &cfg, true));
        assert!(rate_gate(None, 0, &cfg, false));
    }

    #[test]
    fn config_validation_names_the_key() {
        let cfg = SchedulerConfig {
            phase_boundary_ms: 1_200_000,
            ..Default::default()
        };
        assert_eq!(cfg.validate().unwrap_err().key, "scheduler.phase_boundary_ms");
        let cfg = SchedulerConfig {
            tick_interval_ms: 0,
            ..Default::default()
        };
        assert_eq!(cfg.validate().unwrap_err().key, "scheduler.tick_interval_ms");
        let cfg = SchedulerConfig {
            clock_scale: 0.0,
            ..Default::default()
        };
        assert_eq!(cfg.validate().unwrap_err().key, "scheduler.clock_scale");
        assert_eq!(SchedulerConfig::default().evaluation_deadline_ms(), 28_000);
        assert_eq!(SchedulerConfig::default().decision_ticks(), 40);
    }

    #[tokio::test]
    async fn forty_ticks_then_end() {
        let mut rt = runtime(FacilitationModel::Model1, SchedulerConfig::default());
        let gw = gateway(vec!["Good".into()]);
        let clock = VirtualClock::instant(0);
        let reports = run_session(&mut rt, &gw, &clock, &[], &mut NoJournal).await.unwrap();
        assert_eq!(reports.len(), 41);
        for (i, r) in reports[..40].iter().enumerate() {
            assert_eq!(r.tick_index, i as u64);
            assert_eq!(r.elapsed_ms, i as u64 * 30_000);
            assert!(!r.ended());
        }
        let last = reports.last().unwrap();
        assert!(last.ended());
        assert_eq!(last.elapsed_ms, 1_200_000);
        assert_eq!(last.tick_index, 40);
        assert!(rt.is_closed());
        assert!(rt.session().posts().iter().all(|p| !p.is_facilitator()));
    }

    #[tokio::test]
    async fn model0_posts_on_schedule() {
        let mut rt = runtime(FacilitationModel::Model0, SchedulerConfig::default());
        let gw = gateway(vec!["unused".into()]);
        let clock = VirtualClock::instant(0);
        let reports = run_session(&mut rt, &gw, &clock, &[], &mut NoJournal).await.unwrap();
        let posted: Vec<u64> = reports
            .iter()
            .filter(|r| r.actions.contains(&TickAction::BaselinePosted))
            .map(|r| r.elapsed_ms)
            .collect();
        assert_eq!(posted, [0, 600_000, 1_020_000]);
        let tick20 = &reports[20];
        assert_eq!(
            tick20.actions,
            [TickAction::PhaseAnnounced { phase: Phase::Convergent }, TickAction::BaselinePosted]
        );
    }

    #[tokio::test]
    async fn quiet_tick_with_abstaining_hats_posts_nothing() {
        let mut rt = runtime(FacilitationModel::Model1, SchedulerConfig::default());
        let gw = gateway(vec!["Good".into()]);
        let clock = VirtualClock::instant(0);
        let reports = run_session(&mut rt, &gw, &clock, &[], &mut NoJournal).await.unwrap();
        let quiet: Vec<_> = reports.iter().filter(|r| r.inactive).collect();
        assert_eq!(quiet.first().unwrap().elapsed_ms, 90_000);
        assert!(quiet.iter().all(|r| r.actions.contains(&TickAction::InactivityPrompt)));
        assert!(reports.iter().all(|r| r.hat_posted().is_none()));
    }

    #[tokio::test]
    async fn gate_blocks_back_to_back_responses() {
        let cfg = SchedulerConfig::default();
        let mut rt = runtime(FacilitationModel::Model1, cfg.clone());
        // Every hat answers on every tick; a participant talks every 20 s so
        // the inactivity waiver never applies.
        let gw = gateway((0..400).map(|i| format!("Suggestion {i}.")).collect());
        let script: Vec<ScriptedPost> = (1..60)
            .map(|i| ScriptedPost {
                offset_ms: i * 20_000,
                participant: (i % 3) as usize,
                text: format!("message {i}"),
            })
            .collect();
        let clock = VirtualClock::instant(0);
        let reports = run_session(&mut rt, &gw, &clock, &script, &mut NoJournal).await.unwrap();
        let hat_ts: Vec<u64> = rt
            .session()
            .posts()
            .iter()
            .filter(|p| p.hat.is_some())
            .map(|p| p.ts_ms)
            .collect();
        assert!(hat_ts.len() > 5);
        for w in hat_ts.windows(2) {
            assert!(w[1] - w[0] >= cfg.min_intervention_gap_ms);
        }
        assert!(reports.iter().any(|r| r.gate_open == Some(false) && !r.responders.is_empty()));
    }

    #[tokio::test]
    async fn anti_domination_rotates_hats() {
        let mut rt = runtime(FacilitationModel::Model1, SchedulerConfig::default());
        let gw = gateway((0..400).map(|i| format!("Point {i}.")).collect());
        let clock = VirtualClock::instant(0);
        run_session(&mut rt, &gw, &clock, &[], &mut NoJournal).await.unwrap();
        let hats: Vec<Hat> = rt.session().posts().iter().filter_map(|p| p.hat).collect();
        for w in hats.windows(3) {
            assert!(w[2] != w[0] && w[2] != w[1], "{hats:?}");
        }
        assert_eq!(&hats[..3], &[Hat::Green, Hat::Yellow, Hat::Red]);
    }

    struct Rewinding {
        now: AtomicU64,
    }

    #[async_trait]
    impl Clock for Rewinding {
        fn now_ms(&self) -> u64 {
            self.now.load(Ordering::SeqCst)
        }
        async fn sleep_until(&self, deadline_ms: u64) {
            // Jumps to the deadline, then once past the first tick falls back.
            let t = if deadline_ms >= 60_000 { 10_000 } else { deadline_ms };
            self.now.store(t, Ordering::SeqCst);
        }
        fn wall_duration(&self, ms: u64) -> Duration {
            Duration::from_millis(ms)
        }
    }

    #[tokio::test]
    async fn clock_regression_aborts() {
        let mut rt = runtime(FacilitationModel::Model0, SchedulerConfig::default());
        let gw = gateway(vec!["x".into()]);
        let clock = Rewinding { now: AtomicU64::new(0) };
        let err = run_session(&mut rt, &gw, &clock, &[], &mut NoJournal).await.unwrap_err();
        assert!(matches!(err, SchedulerError::ClockRegression { now_ms: 10_000, last_ms: 30_000 }));
    }

    #[test]
    fn late_participant_post_is_refused_and_phase_announced_first() {
        let mut rt = runtime(FacilitationModel::Model1, SchedulerConfig::default());
        let p = ParticipantId::numbered(1);
        rt.participant_post(&p, "early", 1_000, &mut NoJournal).unwrap();
        let post = rt.participant_post(&p, "after boundary", 600_500, &mut NoJournal).unwrap();
        assert_eq!(post.phase, Phase::Convergent);
        let posts = rt.session().posts();
        assert_eq!(posts[1].author, Author::System);
        assert_eq!(posts[1].phase, Phase::Convergent);
        assert!(matches!(
            rt.participant_post(&p, "too late", 1_200_000, &mut NoJournal),
            Err(SessionError::SessionClosed)
        ));
        assert!(matches!(
            rt.participant_post(&p, "  ", 700_000, &mut NoJournal),
            Err(SessionError::EmptyText)
        ));
    }

    #[test]
    fn resumed_runtime_continues_baseline() {
        let mut rt = runtime(FacilitationModel::Model0, SchedulerConfig::default());
        let TickStep::Done(_) = rt.begin_tick(0, &mut NoJournal).unwrap() else { panic!() };
        let session = rt.session().clone();
        let mut resumed = SessionRuntime::new(session, SchedulerConfig::default(), HatRegistry::default(), ContextBudget::default()).unwrap();
        assert_eq!(resumed.next_due_ms(), Some(30_000));
        let TickStep::Done(r) = resumed.begin_tick(610_000, &mut NoJournal).unwrap() else { panic!() };
        assert!(r.actions.contains(&TickAction::BaselinePosted));
        let texts: Vec<&str> = resumed.session().posts().iter().filter(|p| p.is_facilitator()).map(|p| p.text.as_str()).collect();
        assert_eq!(texts.len(), 2);
        assert!(texts[1].starts_with("You have already discussed it for 10 mins."));
    }

    #[test]
    fn jump_past_end_skips_convergent_announcement() {
        let mut rt = runtime(FacilitationModel::Model1, SchedulerConfig::default());
        let TickStep::Done(r) = rt.begin_tick(1_500_000, &mut NoJournal).unwrap() else { panic!() };
        assert_eq!(r.actions, [TickAction::SessionEnded]);
        assert_eq!(rt.session().posts().len(), 1);
        assert_eq!(rt.session().posts()[0].phase, Phase::Closed);
    }

    #[test]
    fn model0_needs_room_for_the_schedule() {
        let cfg = SchedulerConfig {
            session_duration_ms: 60_000,
            phase_boundary_ms: 30_000,
            tick_interval_ms: 5_000,
            ..Default::default()
        };
        let session = Session::start(SessionHeader {
            session_id: "t".into(),
            topic: TopicId::Topic0,
            model: FacilitationModel::Model0,
            group_size: 3,
            started_at_ms: 0,
            duration_ms: 60_000,
        })
        .unwrap();
        assert!(matches!(
            SessionRuntime::new(session, cfg, HatRegistry::default(), ContextBudget::default()),
            Err(RuntimeError::Schedule(_))
        ));
    }
}
