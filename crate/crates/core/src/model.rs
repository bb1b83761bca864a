//! Domain types shared across the service: hats, phases, topics, posts and
//! the session transcript that owns every ordering invariant.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::{Journal, StorageError};

/// Longest accepted post body, in characters.
pub const MAX_POST_CHARS: usize = 4_000;
pub const DEFAULT_GROUP_SIZE: usize = 3;
pub const DEFAULT_SESSION_DURATION_MS: u64 = 1_200_000;

const CONVERGENT_ANNOUNCEMENT: &str = "The discussion now moves to the convergent stage. \
Please compare the ideas you have so far and work towards one decision that everyone can agree on.";
const CLOSING_ANNOUNCEMENT: &str =
    "The discussion has ended. Thank you for taking part. Please complete the short survey.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hat {
    White,
    Red,
    Black,
    Yellow,
    Green,
    Blue,
}

impl Hat {
    /// Fixed evaluation order used for every tick.
    pub const ALL: [Hat; 6] = [
        Hat::White,
        Hat::Red,
        Hat::Black,
        Hat::Yellow,
        Hat::Green,
        Hat::Blue,
    ];

    /// Lowercase wire name.
    pub fn as_str(self) -> &'static str {
        match self {
            Hat::White => "white",
            Hat::Red => "red",
            Hat::Black => "black",
            Hat::Yellow => "yellow",
            Hat::Green => "green",
            Hat::Blue => "blue",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Hat::White => "White",
            Hat::Red => "Red",
            Hat::Black => "Black",
            Hat::Yellow => "Yellow",
            Hat::Green => "Green",
            Hat::Blue => "Blue",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Hat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Hat {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Hat::ALL
            .into_iter()
            .find(|h| h.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| ParseError::Hat(s.to_string()))
    }
}

/// Discussion stage. Ordered: a session only ever moves forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Divergent,
    Convergent,
    Closed,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Divergent => "divergent",
            Phase::Convergent => "convergent",
            Phase::Closed => "closed",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Model0 is the timed three-message baseline, Model1 the six-hat agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FacilitationModel {
    #[serde(rename = "0")]
    Model0,
    #[serde(rename = "1")]
    Model1,
}

impl FacilitationModel {
    pub fn as_str(self) -> &'static str {
        match self {
            FacilitationModel::Model0 => "0",
            FacilitationModel::Model1 => "1",
        }
    }

    pub fn from_index(i: u8) -> Result<Self, ParseError> {
        match i {
            0 => Ok(FacilitationModel::Model0),
            1 => Ok(FacilitationModel::Model1),
            other => Err(ParseError::Model(other.to_string())),
        }
    }
}

impl FromStr for FacilitationModel {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "0" => Ok(FacilitationModel::Model0),
            "1" => Ok(FacilitationModel::Model1),
            other => Err(ParseError::Model(other.to_string())),
        }
    }
}

/// One of the two study topics. Serialized as its integer id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum TopicId {
    Topic0,
    Topic1,
}

impl TopicId {
    pub fn id(self) -> u8 {
        match self {
            TopicId::Topic0 => 0,
            TopicId::Topic1 => 1,
        }
    }

    pub fn prompt_text(self) -> &'static str {
        match self {
            TopicId::Topic0 => "Please decide one activity that you would like to do together",
            TopicId::Topic1 => "Please decide one film that you would like to watch together",
        }
    }
}

impl TryFrom<u8> for TopicId {
    type Error = ParseError;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(TopicId::Topic0),
            1 => Ok(TopicId::Topic1),
            other => Err(ParseError::Topic(other.to_string())),
        }
    }
}

impl From<TopicId> for u8 {
    fn from(t: TopicId) -> u8 {
        t.id()
    }
}

/// Anonymous per-session label, `P1` .. `Pn`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ParticipantId(u32);

impl ParticipantId {
    /// `n` is 1-based.
    pub fn numbered(n: u32) -> Self {
        assert!(n >= 1, "participant numbers start at 1");
        ParticipantId(n)
    }

    pub fn number(&self) -> u32 {
        self.0
    }
}

impl fmt::Display for ParticipantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.0)
    }
}

impl FromStr for ParticipantId {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.strip_prefix('P')
            .filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()) && !d.starts_with('0'))
            .and_then(|d| d.parse::<u32>().ok())
            .map(ParticipantId)
            .ok_or_else(|| ParseError::Participant(s.to_string()))
    }
}

impl TryFrom<String> for ParticipantId {
    type Error = ParseError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ParticipantId> for String {
    fn from(p: ParticipantId) -> String {
        p.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Author {
    Participant(ParticipantId),
    Facilitator,
    System,
}

impl fmt::Display for Author {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Author::Participant(p) => p.fmt(f),
            Author::Facilitator => f.write_str("FACILITATOR"),
            Author::System => f.write_str("SYSTEM"),
        }
    }
}

impl FromStr for Author {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "FACILITATOR" => Ok(Author::Facilitator),
            "SYSTEM" => Ok(Author::System),
            other => other.parse().map(Author::Participant),
        }
    }
}

impl TryFrom<String> for Author {
    type Error = ParseError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Author> for String {
    fn from(a: Author) -> String {
        a.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("unknown hat {0:?}")]
    Hat(String),
    #[error("unknown facilitation model {0:?} (expected 0 or 1)")]
    Model(String),
    #[error("unknown topic {0:?} (expected 0 or 1)")]
    Topic(String),
    #[error("invalid participant id {0:?} (expected P1, P2, ...)")]
    Participant(String),
    #[error("likert answer {0} outside 1..=7")]
    Likert(i64),
}

/// One transcript entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub session_id: String,
    pub seq: u64,
    pub ts_ms: u64,
    pub author: Author,
    pub hat: Option<Hat>,
    pub phase: Phase,
    pub text: String,
}

impl Post {
    pub fn is_facilitator(&self) -> bool {
        self.author == Author::Facilitator
    }

    pub fn participant(&self) -> Option<&ParticipantId> {
        match &self.author {
            Author::Participant(p) => Some(p),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("session is closed")]
    SessionClosed,
    #[error("post text is empty")]
    EmptyText,
    #[error("post text is {len} characters, the limit is {max}")]
    TextTooLong { len: usize, max: usize },
    #[error("hat attribution does not match author {author} under model {model}")]
    HatMismatch { author: String, model: &'static str },
    #[error("facilitator text is an abstention sentinel")]
    SentinelText,
    #[error("{0} is not a participant of this session")]
    UnknownParticipant(ParticipantId),
    #[error("clock moved backwards: {now_ms} ms is before {last_ms} ms")]
    ClockRegression { now_ms: u64, last_ms: u64 },
    #[error("phase cannot move from {from} to {to}")]
    PhaseRegression { from: Phase, to: Phase },
    #[error("group size must be at least 1")]
    EmptyGroup,
    #[error("replayed record {seq} does not match: {reason}")]
    ReplayMismatch { seq: u64, reason: String },
    #[error(transparent)]
    Storage(#[from] StorageError),
}

/// Static description of a session, fixed at start.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub session_id: String,
    pub topic: TopicId,
    pub model: FacilitationModel,
    pub group_size: usize,
    pub started_at_ms: u64,
    pub duration_ms: u64,
}

/// A live (or finished) discussion room and its ordered transcript.
///
/// All mutation goes through `&mut self`; callers serialize access per
/// session. Every record is handed to the journal before it becomes part
/// of the in-memory log, so a failed write never consumes a sequence number.
#[derive(Debug, Clone)]
pub struct Session {
    header: SessionHeader,
    participants: Vec<ParticipantId>,
    phase: Phase,
    seq_counter: u64,
    posts: Vec<Post>,
}

impl Session {
    pub fn start(header: SessionHeader) -> Result<Self, SessionError> {
        if header.group_size == 0 {
            return Err(SessionError::EmptyGroup);
        }
        let participants = (1..=header.group_size as u32)
            .map(ParticipantId::numbered)
            .collect();
        Ok(Session {
            header,
            participants,
            phase: Phase::Divergent,
            seq_counter: 0,
            posts: Vec::new(),
        })
    }

    /// Rebuilds a session by pushing every record back through the append
    /// path. Fails if the records are not exactly what the append path would
    /// have produced.
    pub fn replay<I>(header: SessionHeader, records: I) -> Result<Self, SessionError>
    where
        I: IntoIterator<Item = Post>,
    {
        let mut session = Session::start(header)?;
        let mut journal = crate::store::NoJournal;
        for rec in records {
            let now = session.header.started_at_ms + rec.ts_ms;
            let produced = match (&rec.author, rec.phase) {
                (Author::System, phase) if phase > session.phase => session
                    .enter_phase(phase, now, &mut journal)?
                    .ok_or_else(|| SessionError::ReplayMismatch {
                        seq: rec.seq,
                        reason: "phase change produced no record".into(),
                    })?,
                _ => {
                    if rec.phase != session.phase {
                        return Err(SessionError::ReplayMismatch {
                            seq: rec.seq,
                            reason: format!("phase {} while session is {}", rec.phase, session.phase),
                        });
                    }
                    session.append_post(rec.author.clone(), rec.hat, &rec.text, now, &mut journal)?
                }
            };
            if produced != rec {
                return Err(SessionError::ReplayMismatch {
                    seq: rec.seq,
                    reason: format!("expected {rec:?}, rebuilt {produced:?}"),
                });
            }
        }
        Ok(session)
    }

    pub fn header(&self) -> &SessionHeader {
        &self.header
    }

    pub fn id(&self) -> &str {
        &self.header.session_id
    }

    pub fn topic(&self) -> TopicId {
        self.header.topic
    }

    pub fn model(&self) -> FacilitationModel {
        self.header.model
    }

    pub fn participants(&self) -> &[ParticipantId] {
        &self.participants
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn started_at_ms(&self) -> u64 {
        self.header.started_at_ms
    }

    pub fn duration_ms(&self) -> u64 {
        self.header.duration_ms
    }

    pub fn seq_counter(&self) -> u64 {
        self.seq_counter
    }

    pub fn posts(&self) -> &[Post] {
        &self.posts
    }

    pub fn last_ts_ms(&self) -> u64 {
        self.posts.last().map_or(0, |p| p.ts_ms)
    }

    /// Offset of `now_ms` from session start. Rejects a clock reading that
    /// precedes the start or the newest record.
    pub fn elapsed_ms(&self, now_ms: u64) -> Result<u64, SessionError> {
        let floor = self.header.started_at_ms + self.last_ts_ms();
        if now_ms < floor {
            return Err(SessionError::ClockRegression {
                now_ms,
                last_ms: floor,
            });
        }
        Ok(now_ms - self.header.started_at_ms)
    }

    /// Appends a participant, facilitator or system post in the current phase.
    pub fn append_post(
        &mut self,
        author: Author,
        hat: Option<Hat>,
        text: &str,
        now_ms: u64,
        journal: &mut dyn Journal,
    ) -> Result<Post, SessionError> {
        if self.phase == Phase::Closed {
            return Err(SessionError::SessionClosed);
        }
        self.check_author(&author, hat)?;
        let text = validate_text(text)?;
        if author == Author::Facilitator && crate::facilitation::is_sentinel(text) {
            return Err(SessionError::SentinelText);
        }
        self.push(author, hat, text.to_string(), now_ms, journal)
    }

    /// Moves the session forward to `phase` and records the announcement.
    /// Returns `None` if the session is already in that phase.
    pub fn enter_phase(
        &mut self,
        phase: Phase,
        now_ms: u64,
        journal: &mut dyn Journal,
    ) -> Result<Option<Post>, SessionError> {
        if phase == self.phase {
            return Ok(None);
        }
        if phase < self.phase {
            return Err(SessionError::PhaseRegression {
                from: self.phase,
                to: phase,
            });
        }
        let text = match phase {
            Phase::Convergent => CONVERGENT_ANNOUNCEMENT,
            Phase::Closed => CLOSING_ANNOUNCEMENT,
            Phase::Divergent => unreachable!("divergent is the initial phase"),
        };
        let previous = self.phase;
        self.phase = phase;
        match self.push(Author::System, None, text.to_string(), now_ms, journal) {
            Ok(post) => Ok(Some(post)),
            Err(e) => {
                self.phase = previous;
                Err(e)
            }
        }
    }

    fn check_author(&self, author: &Author, hat: Option<Hat>) -> Result<(), SessionError> {
        let ok = match author {
            Author::Participant(p) => {
                if !self.participants.contains(p) {
                    return Err(SessionError::UnknownParticipant(p.clone()));
                }
                hat.is_none()
            }
            Author::Facilitator => hat.is_some() == (self.header.model == FacilitationModel::Model1),
            Author::System => hat.is_none(),
        };
        if ok {
            Ok(())
        } else {
            Err(SessionError::HatMismatch {
                author: author.to_string(),
                model: self.header.model.as_str(),
            })
        }
    }

    fn push(
        &mut self,
        author: Author,
        hat: Option<Hat>,
        text: String,
        now_ms: u64,
        journal: &mut dyn Journal,
    ) -> Result<Post, SessionError> {
        let ts_ms = self.elapsed_ms(now_ms)?;
        let post = Post {
            session_id: self.header.session_id.clone(),
            seq: self.seq_counter + 1,
            ts_ms,
            author,
            hat,
            phase: self.phase,
            text,
        };
        journal.record(&self.header, &post)?;
        self.seq_counter = post.seq;
        self.posts.push(post.clone());
        Ok(post)
    }
}

/// Trims and length-checks post text.
pub fn validate_text(text: &str) -> Result<&str, SessionError> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(SessionError::EmptyText);
    }
    let len = trimmed.chars().count();
    if len > MAX_POST_CHARS {
        return Err(SessionError::TextTooLong {
            len,
            max: MAX_POST_CHARS,
        });
    }
    Ok(trimmed)
}

/// Which verbal anchor set a survey item uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LikertScale {
    Satisfaction,
    Agreement,
}

impl LikertScale {
    /// Anchors from 1 (most negative) to 7 (most positive).
    pub fn anchors(self) -> [&'static str; 7] {
        match self {
            LikertScale::Satisfaction => [
                "Very Unsatisfied",
                "Unsatisfied",
                "Somewhat Unsatisfied",
                "Neutral",
                "Somewhat Satisfied",
                "Satisfied",
                "Very Satisfied",
            ],
            LikertScale::Agreement => [
                "Strongly Disagree",
                "Disagree",
                "Somewhat Disagree",
                "Neutral",
                "Somewhat Agree",
                "Agree",
                "Strongly Agree",
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct Likert7(u8);

impl Likert7 {
    pub fn new(v: i64) -> Result<Self, ParseError> {
        if (1..=7).contains(&v) {
            Ok(Likert7(v as u8))
        } else {
            Err(ParseError::Likert(v))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn label(self, scale: LikertScale) -> &'static str {
        scale.anchors()[self.0 as usize - 1]
    }
}

impl TryFrom<i64> for Likert7 {
    type Error = ParseError;

    fn try_from(v: i64) -> Result<Self, Self::Error> {
        Likert7::new(v)
    }
}

impl From<Likert7> for u8 {
    fn from(l: Likert7) -> u8 {
        l.0
    }
}

/// Survey questions, in the order answers are submitted.
pub const SURVEY_QUESTIONS: [(&str, LikertScale); 3] = [
    (
        "How would you rate the user experience of the platform?",
        LikertScale::Satisfaction,
    ),
    (
        "How would you rate the extent to which the facilitator in the discussion helped consensus decision-making?",
        LikertScale::Agreement,
    ),
    (
        "Do you agree with the consensus reached in this discussion?",
        LikertScale::Agreement,
    ),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyResponse {
    pub participant_id: ParticipantId,
    pub q_experience: Likert7,
    pub q_facilitator: Likert7,
    pub q_consensus: Likert7,
}

impl SurveyResponse {
    pub fn from_answers(participant_id: ParticipantId, answers: &[i64]) -> Result<Self, ParseError> {
        let get = |i: usize| Likert7::new(answers.get(i).copied().unwrap_or(0));
        Ok(SurveyResponse {
            participant_id,
            q_experience: get(0)?,
            q_facilitator: get(1)?,
            q_consensus: get(2)?,
        })
    }

    pub fn labels(&self) -> [&'static str; 3] {
        [
            self.q_experience.label(SURVEY_QUESTIONS[0].1),
            self.q_facilitator.label(SURVEY_QUESTIONS[1].1),
            self.q_consensus.label(SURVEY_QUESTIONS[2].1),
        ]
    }
}
