//! Transcript metrics over dataset exports.
//!
//! A word is a maximal run of non-whitespace characters. System records
//! (phase announcements, session end) are platform events and are not
//! counted as posts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::ops::Add;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Author, FacilitationModel, Hat, Phase};
use crate::store::{parse_dataset, DatasetRecord};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TranscriptMetrics {
    pub sessions: u64,
    pub total_posts: u64,
    pub total_words: u64,
    pub facilitator_posts: u64,
    pub facilitator_words: u64,
    pub posts_per_hat: BTreeMap<Hat, u64>,
    /// Keyed `<session_id>/<author_id>`; the facilitator appears as
    /// `<session_id>/FACILITATOR`.
    pub words_per_participant: BTreeMap<String, u64>,
    pub interventions_per_phase: BTreeMap<Phase, u64>,
    /// Gaps between consecutive facilitator posts, Model1 sessions only.
    pub intervention_gap_count: u64,
    pub intervention_gap_sum_ms: u64,
    pub max_intervention_gap_ms: u64,
    pub mean_intervention_gap_ms: Option<f64>,
}

impl TranscriptMetrics {
    fn refresh_mean(&mut self) {
        self.mean_intervention_gap_ms = (self.intervention_gap_count > 0)
            .then(|| self.intervention_gap_sum_ms as f64 / self.intervention_gap_count as f64);
    }

    pub fn participant_posts(&self) -> u64 {
        self.total_posts - self.facilitator_posts
    }

    /// Aligned two-column text rendering of the same numbers as the JSON form.
    pub fn to_table(&self) -> String {
        let mut rows: Vec<(String, String)> = vec![
            ("sessions".into(), self.sessions.to_string()),
            ("total_posts".into(), self.total_posts.to_string()),
            ("total_words".into(), self.total_words.to_string()),
            ("facilitator_posts".into(), self.facilitator_posts.to_string()),
            ("facilitator_words".into(), self.facilitator_words.to_string()),
        ];
        for (hat, n) in &self.posts_per_hat {
            rows.push((format!("posts_per_hat.{hat}"), n.to_string()));
        }
        for (who, n) in &self.words_per_participant {
            rows.push((format!("words_per_participant.{who}"), n.to_string()));
        }
        for (phase, n) in &self.interventions_per_phase {
            rows.push((format!("interventions_per_phase.{phase}"), n.to_string()));
        }
        rows.push(("intervention_gap_count".into(), self.intervention_gap_count.to_string()));
        rows.push(("intervention_gap_sum_ms".into(), self.intervention_gap_sum_ms.to_string()));
        rows.push(("max_intervention_gap_ms".into(), self.max_intervention_gap_ms.to_string()));
        rows.push((
            "mean_intervention_gap_ms".into(),
            self.mean_intervention_gap_ms
                .map_or_else(|| "-".to_string(), |m| m.to_string()),
        ));
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$}  {v:>12}");
        }
        out
    }
}

fn merge<K: Ord>(mut a: BTreeMap<K, u64>, b: BTreeMap<K, u64>) -> BTreeMap<K, u64> {
    for (k, v) in b {
        *a.entry(k).or_default() += v;
    }
    a
}

/// Field-wise sum for disjoint session sets; the maximum gap combines by max.
impl Add for TranscriptMetrics {
    type Output = TranscriptMetrics;

    fn add(self, rhs: TranscriptMetrics) -> TranscriptMetrics {
        let mut m = TranscriptMetrics {
            sessions: self.sessions + rhs.sessions,
            total_posts: self.total_posts + rhs.total_posts,
            total_words: self.total_words + rhs.total_words,
            facilitator_posts: self.facilitator_posts + rhs.facilitator_posts,
            facilitator_words: self.facilitator_words + rhs.facilitator_words,
            posts_per_hat: merge(self.posts_per_hat, rhs.posts_per_hat),
            words_per_participant: merge(self.words_per_participant, rhs.words_per_participant),
            interventions_per_phase: merge(self.interventions_per_phase, rhs.interventions_per_phase),
            intervention_gap_count: self.intervention_gap_count + rhs.intervention_gap_count,
            intervention_gap_sum_ms: self.intervention_gap_sum_ms + rhs.intervention_gap_sum_ms,
            max_intervention_gap_ms: self.max_intervention_gap_ms.max(rhs.max_intervention_gap_ms),
            mean_intervention_gap_ms: None,
        };
        m.refresh_mean();
        m
    }
}

pub fn word_count(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// Metrics over already-parsed records (any number of sessions).
pub fn metrics_for_records(records: &[DatasetRecord]) -> TranscriptMetrics {
    let mut m = TranscriptMetrics::default();
    let mut sessions = BTreeSet::new();
    let mut last_intervention: BTreeMap<&str, u64> = BTreeMap::new();
    for r in records {
        sessions.insert(r.session_id.as_str());
        if r.author_id == Author::System {
            continue;
        }
        let words = word_count(&r.text);
        m.total_posts += 1;
        m.total_words += words;
        *m.words_per_participant
            .entry(format!("{}/{}", r.session_id, r.author_id))
            .or_default() += words;
        if r.author_id != Author::Facilitator {
            continue;
        }
        m.facilitator_posts += 1;
        m.facilitator_words += words;
        *m.interventions_per_phase.entry(r.phase).or_default() += 1;
        if let Some(hat) = r.hat {
            *m.posts_per_hat.entry(hat).or_default() += 1;
        }
        if r.model == FacilitationModel::Model1 {
            if let Some(prev) = last_intervention.insert(&r.session_id, r.ts_ms) {
                let gap = r.ts_ms.saturating_sub(prev);
                m.intervention_gap_count += 1;
                m.intervention_gap_sum_ms += gap;
                m.max_intervention_gap_ms = m.max_intervention_gap_ms.max(gap);
            }
        }
    }
    m.sessions = sessions.len() as u64;
    m.refresh_mean();
    m
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{file}:{line}: schema violation: {message}")]
pub struct MetricsError {
    pub file: String,
    pub line: usize,
    pub message: String,
}

/// Metrics over a set of export files given as `(name, contents)`.
/// Input order does not matter.
pub fn compute_metrics<N, B>(files: &[(N, B)]) -> Result<TranscriptMetrics, MetricsError>
where
    N: AsRef<str>,
    B: AsRef<[u8]>,
{
    let mut total = TranscriptMetrics::default();
    for (name, bytes) in files {
        let text = std::str::from_utf8(bytes.as_ref()).map_err(|e| MetricsError {
            file: name.as_ref().to_string(),
            line: 0,
            message: format!("not UTF-8: {e}"),
        })?;
        let records = parse_dataset(text).map_err(|v| MetricsError {
            file: name.as_ref().to_string(),
            line: v.line,
            message: v.message,
        })?;
        total = total + metrics_for_records(&records);
    }
    Ok(total)
}
