//! Durable storage and dataset export.
//!
//! Each session has an append-only log `log_<id>.jsonl` holding lifecycle
//! entries and every transcript record; `sessions.idx` lists the logs.
//! Every line is synced to disk before `append` returns, so an acknowledged
//! record survives a crash. Exports are plain JSON lines, one
//! [`DatasetRecord`] per line, in sequence order.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    Author, FacilitationModel, Hat, Phase, Post, Session, SessionHeader, SurveyResponse, TopicId,
};

const INDEX_FILE: &str = "sessions.idx";

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("storage unavailable: {0}")]
    Unavailable(String),
    #[error("record {seq} of session {session_id} already written")]
    Conflict { session_id: String, seq: u64 },
    #[error("{file}:{line}: {message}")]
    Corrupt {
        file: String,
        line: usize,
        message: String,
    },
    #[error("session {0} already exists")]
    Exists(String),
}

impl From<io::Error> for StorageError {
    fn from(e: io::Error) -> Self {
        StorageError::Unavailable(e.to_string())
    }
}

/// Destination for transcript records. Called before a record is committed
/// to the in-memory log.
pub trait Journal: Send {
    fn record(&mut self, header: &SessionHeader, post: &Post) -> Result<(), StorageError>;
}

/// Journal that keeps nothing, for purely in-memory sessions.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoJournal;

impl Journal for NoJournal {
    fn record(&mut self, _: &SessionHeader, _: &Post) -> Result<(), StorageError> {
        Ok(())
    }
}

/// One exported transcript line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub session_id: String,
    pub seq: u64,
    pub ts_ms: u64,
    pub author_id: Author,
    pub hat: Option<Hat>,
    pub phase: Phase,
    pub model: FacilitationModel,
    pub topic_id: TopicId,
    pub text: String,
}

impl DatasetRecord {
    pub fn from_post(header: &SessionHeader, post: &Post) -> Self {
        DatasetRecord {
            session_id: post.session_id.clone(),
            seq: post.seq,
            ts_ms: post.ts_ms,
            author_id: post.author.clone(),
            hat: post.hat,
            phase: post.phase,
            model: header.model,
            topic_id: header.topic,
            text: post.text.clone(),
        }
    }

    pub fn into_post(self) -> Post {
        Post {
            session_id: self.session_id,
            seq: self.seq,
            ts_ms: self.ts_ms,
            author: self.author_id,
            hat: self.hat,
            phase: self.phase,
            text: self.text,
        }
    }

    /// Hat present exactly on Model1 facilitator records.
    pub fn hat_consistent(&self) -> bool {
        self.hat.is_some()
            == (self.author_id == Author::Facilitator && self.model == FacilitationModel::Model1)
    }
}

/// Line of a session log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEntry {
    Created {
        session_id: String,
        topic: TopicId,
        model: FacilitationModel,
        group_size: usize,
        duration_ms: u64,
        /// Digests of the join credentials; never the credentials themselves.
        seat_keys: Vec<String>,
    },
    Joined {
        seat: usize,
        participant_id: crate::model::ParticipantId,
    },
    Started {
        started_at_ms: u64,
    },
    Post(DatasetRecord),
}

/// Append-only, fsync-per-line log of one session.
#[derive(Debug)]
pub struct SessionLog {
    session_id: String,
    path: PathBuf,
    file: File,
    last_seq: u64,
}

impl SessionLog {
    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, entry: &LogEntry) -> Result<(), StorageError> {
        if let LogEntry::Post(rec) = entry {
            if rec.seq <= self.last_seq {
                return Err(StorageError::Conflict {
                    session_id: rec.session_id.clone(),
                    seq: rec.seq,
                });
            }
        }
        let mut line = serde_json::to_vec(entry).expect("log entries serialize");
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        if let LogEntry::Post(rec) = entry {
            self.last_seq = rec.seq;
        }
        Ok(())
    }
}

impl Journal for SessionLog {
    fn record(&mut self, header: &SessionHeader, post: &Post) -> Result<(), StorageError> {
        self.append(&LogEntry::Post(DatasetRecord::from_post(header, post)))
    }
}

/// Everything read back from one session log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecoveredLog {
    pub entries: Vec<LogEntry>,
    /// Set when an unterminated final line was discarded.
    pub torn_tail: bool,
}

impl RecoveredLog {
    pub fn records(&self) -> impl Iterator<Item = &DatasetRecord> {
        self.entries.iter().filter_map(|e| match e {
            LogEntry::Post(r) => Some(r),
            _ => None,
        })
    }

    pub fn started_at_ms(&self) -> Option<u64> {
        self.entries.iter().find_map(|e| match e {
            LogEntry::Started { started_at_ms } => Some(*started_at_ms),
            _ => None,
        })
    }
}

/// Directory holding session logs, survey files and exports.
#[derive(Debug, Clone)]
pub struct Store {
    dir: PathBuf,
}

impl Store {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StorageError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Store { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn log_path(&self, session_id: &str) -> PathBuf {
        self.dir.join(format!("log_{session_id}.jsonl"))
    }

    pub fn survey_path(&self, session_id: &str) -> PathBuf {
        self.dir.join(format!("survey_{session_id}.jsonl"))
    }

    pub fn export_path(&self, session_id: &str) -> PathBuf {
        export_file_name(&self.dir, session_id)
    }

    /// Creates the log with its `created` entry and registers it in the index.
    pub fn create(&self, created: &LogEntry) -> Result<SessionLog, StorageError> {
        let LogEntry::Created { session_id, .. } = created else {
            panic!("Store::create needs a Created entry");
        };
        let path = self.log_path(session_id);
        let file = OpenOptions::new()
            .append(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| match e.kind() {
                io::ErrorKind::AlreadyExists => StorageError::Exists(session_id.clone()),
                _ => e.into(),
            })?;
        let mut log = SessionLog {
            session_id: session_id.clone(),
            path,
            file,
            last_seq: 0,
        };
        log.append(created)?;
        let mut index = OpenOptions::new()
            .append(true)
            .create(true)
            .open(self.dir.join(INDEX_FILE))?;
        index.write_all(format!("{session_id}\n").as_bytes())?;
        index.sync_data()?;
        sync_dir(&self.dir);
        Ok(log)
    }

    /// Session ids in creation order.
    pub fn session_ids(&self) -> Result<Vec<String>, StorageError> {
        let path = self.dir.join(INDEX_FILE);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        Ok(text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .filter(|id| self.log_path(id).exists())
            .map(String::from)
            .collect())
    }

    /// Reads a session log back and reopens it for appending. A final line
    /// without its newline was never acknowledged; it is cut off.
    pub fn recover(&self, session_id: &str) -> Result<(RecoveredLog, SessionLog), StorageError> {
        let path = self.log_path(session_id);
        let bytes = fs::read(&path)?;
        let complete = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
        let torn_tail = complete < bytes.len();
        if torn_tail {
            let f = OpenOptions::new().write(true).open(&path)?;
            f.set_len(complete as u64)?;
            f.sync_all()?;
        }
        let file_name = path.display().to_string();
        let mut entries = Vec::new();
        for (i, line) in bytes[..complete].split(|b| *b == b'\n').enumerate() {
            if line.is_empty() {
                continue;
            }
            let entry: LogEntry = serde_json::from_slice(line).map_err(|e| StorageError::Corrupt {
                file: file_name.clone(),
                line: i + 1,
                message: e.to_string(),
            })?;
            entries.push(entry);
        }
        let last_seq = entries
            .iter()
            .filter_map(|e| match e {
                LogEntry::Post(r) => Some(r.seq),
                _ => None,
            })
            .max()
            .unwrap_or(0);
        let file = OpenOptions::new().append(true).open(&path)?;
        Ok((
            RecoveredLog { entries, torn_tail },
            SessionLog {
                session_id: session_id.to_string(),
                path,
                file,
                last_seq,
            },
        ))
    }

    /// Writes `session_<id>.jsonl` for a closed session and returns its path.
    pub fn write_export(&self, session: &Session) -> Result<PathBuf, ExportError> {
        write_export(&self.dir, session)
    }
}

#[cfg(unix)]
fn sync_dir(dir: &Path) {
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
}

#[cfg(not(unix))]
fn sync_dir(_dir: &Path) {}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("session {0} is not closed")]
    SessionNotClosed(String),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn export_file_name(dir: &Path, session_id: &str) -> PathBuf {
    dir.join(format!("session_{session_id}.jsonl"))
}

/// Serializes records as JSON lines, LF-terminated.
pub fn records_to_jsonl<'a, I>(records: I) -> String
where
    I: IntoIterator<Item = &'a DatasetRecord>,
{
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

/// Dataset export of a closed session.
pub fn export_dataset(session: &Session) -> Result<String, ExportError> {
    if session.phase() != Phase::Closed {
        return Err(ExportError::SessionNotClosed(session.id().to_string()));
    }
    let records: Vec<DatasetRecord> = session
        .posts()
        .iter()
        .map(|p| DatasetRecord::from_post(session.header(), p))
        .collect();
    Ok(records_to_jsonl(&records))
}

pub fn write_export(dir: &Path, session: &Session) -> Result<PathBuf, ExportError> {
    let body = export_dataset(session)?;
    let path = export_file_name(dir, session.id());
    fs::write(&path, body)?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct SchemaViolation {
    pub line: usize,
    pub message: String,
}

/// Parses an export, checking schema, per-session order and hat rules.
pub fn parse_dataset(text: &str) -> Result<Vec<DatasetRecord>, SchemaViolation> {
    let mut out: Vec<DatasetRecord> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DatasetRecord = serde_json::from_str(line).map_err(|e| SchemaViolation {
            line: line_no,
            message: e.to_string(),
        })?;
        if !rec.hat_consistent() {
            return Err(SchemaViolation {
                line: line_no,
                message: format!("hat {:?} not allowed for {} under model {}", rec.hat, rec.author_id, rec.model.as_str()),
            });
        }
        if rec.text.trim().is_empty() {
            return Err(SchemaViolation {
                line: line_no,
                message: "empty text".into(),
            });
        }
        if let Some(prev) = out.last().filter(|p| p.session_id == rec.session_id) {
            if rec.seq <= prev.seq || rec.ts_ms < prev.ts_ms {
                return Err(SchemaViolation {
                    line: line_no,
                    message: format!("record seq {} ts {} out of order", rec.seq, rec.ts_ms),
                });
            }
        }
        out.push(rec);
    }
    Ok(out)
}

/// Durable per-session survey file, `survey_<id>.jsonl`.
#[derive(Debug)]
pub struct SurveyLog {
    file: File,
    responses: Vec<SurveyResponse>,
}

impl SurveyLog {
    pub fn open(store: &Store, session_id: &str) -> Result<Self, StorageError> {
        let path = store.survey_path(session_id);
        let mut responses = Vec::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str(&line) {
                    Ok(r) => responses.push(r),
                    Err(e) => {
                        return Err(StorageError::Corrupt {
                            file: path.display().to_string(),
                            line: i + 1,
                            message: e.to_string(),
                        })
                    }
                }
            }
        }
        let file = OpenOptions::new().append(true).create(true).open(&path)?;
        Ok(SurveyLog { file, responses })
    }

    pub fn responses(&self) -> &[SurveyResponse] {
        &self.responses
    }

    pub fn append(&mut self, response: SurveyResponse) -> Result<(), StorageError> {
        let mut line = serde_json::to_vec(&response).expect("survey serializes");
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        self.responses.push(response);
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.responses {
            out.push_str(&serde_json::to_string(r).expect("survey serializes"));
            out.push('\n');
        }
        out
    }
}
