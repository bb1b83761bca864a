//! Offline replay of a scripted session on virtual time.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::clock::VirtualClock;
use crate::facilitation::HatRegistry;
use crate::llm::Gateway;
use crate::model::{validate_text, FacilitationModel, Session, SessionError, SessionHeader, TopicId};
use crate::scheduler::{run_session, RuntimeError, SchedulerConfig, SchedulerError, ScriptedPost, SessionRuntime, TickReport};
use crate::store::{export_dataset, ExportError, NoJournal};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("script line {line}{}: {reason}", offset_ms.map(|o| format!(" (offset {o} ms)")).unwrap_or_default())]
pub struct BadScript {
    pub line: usize,
    pub offset_ms: Option<u64>,
    pub reason: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptLine {
    offset_ms: u64,
    participant: usize,
    text: String,
}

/// Parses a JSON-lines participant script. Blank lines are skipped.
/// Entries must be in non-decreasing offset order.
pub fn parse_script(text: &str, group_size: usize, duration_ms: u64) -> Result<Vec<ScriptedPost>, BadScript> {
    let mut out: Vec<ScriptedPost> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let entry: ScriptLine = serde_json::from_str(raw).map_err(|e| BadScript {
            line,
            offset_ms: None,
            reason: e.to_string(),
        })?;
        let bad = |reason: String| BadScript {
            line,
            offset_ms: Some(entry.offset_ms),
            reason,
        };
        if entry.offset_ms >= duration_ms {
            return Err(bad(format!("offset is not inside the {duration_ms} ms session")));
        }
        if entry.participant >= group_size {
            return Err(bad(format!(
                "participant {} out of range for a group of {group_size}",
                entry.participant
            )));
        }
        if let Some(prev) = out.last() {
            if entry.offset_ms < prev.offset_ms {
                return Err(bad(format!("offset goes back from {} ms", prev.offset_ms)));
            }
        }
        validate_text(&entry.text).map_err(|e| bad(e.to_string()))?;
        out.push(ScriptedPost {
            offset_ms: entry.offset_ms,
            participant: entry.participant,
            text: entry.text,
        });
    }
    Ok(out)
}

/// Parses a scripted-provider reply file: one JSON string per line.
pub fn parse_responses(text: &str) -> Result<Vec<String>, BadScript> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str::<String>(l).map_err(|e| BadScript {
                line: i + 1,
                offset_ms: None,
                reason: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SimulationSpec {
    pub session_id: String,
    pub topic: TopicId,
    pub model: FacilitationModel,
    pub group_size: usize,
    pub scheduler: SchedulerConfig,
    pub hats: HatRegistry,
    /// Virtual-time speed-up against the wall clock; `None` runs as fast as possible.
    pub pacing: Option<f64>,
}

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct SimulationOutcome {
    pub session: Session,
    pub reports: Vec<TickReport>,
}

impl SimulationOutcome {
    pub fn export_jsonl(&self) -> Result<String, ExportError> {
        export_dataset(&self.session)
    }

    pub fn tick_log_jsonl(&self) -> String {
        tick_log_jsonl(&self.reports)
    }

    /// Writes `session_<id>.jsonl` and `ticks_<id>.jsonl` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(PathBuf, PathBuf), SimulationError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| SimulationError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let id = self.session.id();
        let export = crate::store::export_file_name(dir, id);
        std::fs::write(&export, self.export_jsonl()?).map_err(io(&export))?;
        let ticks = dir.join(format!("ticks_{id}.jsonl"));
        std::fs::write(&ticks, self.tick_log_jsonl()).map_err(io(&ticks))?;
        Ok((export, ticks))
    }
}

pub fn tick_log_jsonl(reports: &[TickReport]) -> String {
    reports
        .iter()
        .map(|r| serde_json::to_string(r).expect("tick report serializes") + "\n")
        .collect()
}

/// Runs one full session against `gateway`, starting at virtual time 0.
pub async fn simulate(
    spec: &SimulationSpec,
    script: &[ScriptedPost],
    gateway: &Gateway,
) -> Result<SimulationOutcome, SimulationError> {
    let header = SessionHeader {
        session_id: spec.session_id.clone(),
        topic: spec.topic,
        model: spec.model,
        group_size: spec.group_size,
        started_at_ms: 0,
        duration_ms: spec.scheduler.session_duration_ms,
    };
    let session = Session::start(header)?;
    let mut runtime = SessionRuntime::new(session, spec.scheduler.clone(), spec.hats.clone(), gateway.budget())?;
    let clock = VirtualClock::new(0, spec.pacing);
    let reports = run_session(&mut runtime, gateway, &clock, script, &mut NoJournal).await?;
    Ok(SimulationOutcome {
        session: runtime.session().clone(),
        reports,
    })
}
