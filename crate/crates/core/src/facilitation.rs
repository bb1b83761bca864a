//! The two facilitators.
//!
//! Model1 runs six hat agents. On every tick each hat gets the same
//! transcript window, its own role prompt and situational guidance, and
//! either answers or abstains with the `Good` sentinel. At most one answer
//! is chosen per tick, by phase priority with a rule that stops a single
//! hat from taking every turn.
//!
//! Model0 posts three fixed messages at fixed offsets.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use futures::future::join_all;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{CompletionRequest, ContextBudget, ContextMessage, Gateway, LlmError, DEFAULT_TEMPERATURE, DEFAULT_TIMEOUT_MS};
use crate::model::{Author, Hat, Phase, Post, TopicId};

/// Longest facilitator post, in characters.
pub const MAX_OUTPUT_CHARS: usize = 500;

const SENTINEL: &str = "good";

/// True iff `text` is the abstention token: `good`, any case, optionally
/// followed by one period, surrounded by any whitespace.
pub fn is_sentinel(text: &str) -> bool {
    let t = text.trim();
    let t = t.strip_suffix('.').unwrap_or(t);
    t.eq_ignore_ascii_case(SENTINEL)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HatAgentConfig {
    pub hat: Hat,
    pub role_name: String,
    /// Role, background and objectives. `{topic}` is replaced by the
    /// session's topic question.
    pub macro_prompt: String,
    pub situational_templates: Vec<String>,
    pub divergent_priority: u8,
    pub convergent_priority: u8,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegistryError {
    #[error("hat {0} configured more than once")]
    Duplicate(Hat),
    #[error("hat {0} is missing")]
    Missing(Hat),
    #[error("{phase} priorities must be a permutation of 1..=6, got {got:?}")]
    Priorities { phase: Phase, got: Vec<u8> },
    #[error("hat {hat}: temperature {value} outside [0, 2]")]
    Temperature { hat: Hat, value: f64 },
    #[error("hat {0}: macro prompt is empty")]
    EmptyPrompt(Hat),
}

/// All six hat agents, validated.
#[derive(Debug, Clone, PartialEq)]
pub struct HatRegistry {
    configs: Vec<HatAgentConfig>,
}

impl HatRegistry {
    pub fn new(configs: Vec<HatAgentConfig>) -> Result<Self, RegistryError> {
        let mut slots: [Option<HatAgentConfig>; 6] = Default::default();
        for cfg in configs {
            let slot = &mut slots[cfg.hat.index()];
            if slot.is_some() {
                return Err(RegistryError::Duplicate(cfg.hat));
            }
            if !(0.0..=2.0).contains(&cfg.temperature) {
                return Err(RegistryError::Temperature {
                    hat: cfg.hat,
                    value: cfg.temperature,
                });
            }
            if cfg.macro_prompt.trim().is_empty() {
                return Err(RegistryError::EmptyPrompt(cfg.hat));
            }
            *slot = Some(cfg);
        }
        let mut configs = Vec::with_capacity(6);
        for (hat, slot) in Hat::ALL.into_iter().zip(slots) {
            configs.push(slot.ok_or(RegistryError::Missing(hat))?);
        }
        for phase in [Phase::Divergent, Phase::Convergent] {
            let got: Vec<u8> = configs.iter().map(|c| priority_in(c, phase)).collect();
            let mut sorted = got.clone();
            sorted.sort_unstable();
            if sorted != [1, 2, 3, 4, 5, 6] {
                return Err(RegistryError::Priorities { phase, got });
            }
        }
        Ok(HatRegistry { configs })
    }

    pub fn get(&self, hat: Hat) -> &HatAgentConfig {
        &self.configs[hat.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = &HatAgentConfig> {
        self.configs.iter()
    }

    /// Rank of `hat` in `phase`, 1 = most preferred. Closed uses the
    /// convergent table (nothing is selected after close anyway).
    pub fn priority(&self, hat: Hat, phase: Phase) -> u8 {
        priority_in(self.get(hat), phase)
    }

    pub fn into_configs(self) -> Vec<HatAgentConfig> {
        self.configs
    }
}

impl Default for HatRegistry {
    fn default() -> Self {
        HatRegistry::new(default_hat_configs()).expect("built-in hat table is valid")
    }
}

fn priority_in(cfg: &HatAgentConfig, phase: Phase) -> u8 {
    match phase {
        Phase::Divergent => cfg.divergent_priority,
        Phase::Convergent | Phase::Closed => cfg.convergent_priority,
    }
}

const OBJECTIVES: &str = "Across every intervention your objectives are to guide the participants \
towards a consensus on the question, keep the discussion balanced so that every participant is heard, \
and keep each contribution clear, short and relevant.";

/// The shipped hat table. Situational templates are the published examples,
/// byte for byte.
pub fn default_hat_configs() -> Vec<HatAgentConfig> {
    let mk = |hat: Hat, role: &str, focus: &str, template: &str, div: u8, conv: u8| HatAgentConfig {
        hat,
        role_name: role.to_string(),
        macro_prompt: format!(
            "You are the {role} facilitator in a small online text discussion. \
The participants have been asked: \"{{topic}}\". \
You take the {role} perspective of the Six Thinking Hats method. {focus} {OBJECTIVES}"
        ),
        situational_templates: vec![template.to_string()],
        divergent_priority: div,
        convergent_priority: conv,
        temperature: DEFAULT_TEMPERATURE,
    };
    vec![
        mk(
            Hat::White,
            "White Hat",
            "You deal only in facts and information, without interpretation. \
Step in when the group needs objective information or when someone states something as fact without support.",
            "Could you clarify the exact figures or facts related to this issue? Here's what we know so far: [insert relevant data].",
            4,
            3,
        ),
        mk(
            Hat::Red,
            "Red Hat",
            "You voice feelings, hunches and gut reactions, which need no justification. \
Step in briefly when the conversation touches on how people feel about an option.",
            "This feels like an emotional moment. How are we feeling about this issue right now?",
            3,
            5,
        ),
        mk(
            Hat::Black,
            "Black Hat",
            "You are the cautious critic. Point out risks, weaknesses and flaws the group may be overlooking, \
so that possible negative outcomes are weighed.",
            "Have we considered the potential downsides? Here's a risk we might be overlooking: [insert risk].",
            5,
            2,
        ),
        mk(
            Hat::Yellow,
            "Yellow Hat",
            "You are the constructive optimist. Highlight the benefits and advantages of the ideas on the table, \
especially when the discussion needs encouragement.",
            "Looking at the bright side, this idea offers some exciting opportunities we shouldn\u{2019}t overlook.",
            2,
            4,
        ),
        mk(
            Hat::Green,
            "Green Hat",
            "You bring creativity. Offer new ideas or alternative approaches when the conversation stalls \
or would benefit from a fresh option.",
            "What if we approached this from a different angle? Here\u{2019}s an idea to consider: [insert new idea].",
            1,
            6,
        ),
        mk(
            Hat::Blue,
            "Blue Hat",
            "You manage the thinking process itself. Give the discussion structure and direction, \
keep it on track, and make sure every perspective has been considered.",
            "It seems like we\u{2019}re getting off track. Maybe we should focus on this key point: [insert key point].",
            6,
            1,
        ),
    ]
}

/// Situation a prompt is assembled for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptContext {
    pub topic: TopicId,
    pub phase: Phase,
    pub elapsed_ms: u64,
    pub duration_ms: u64,
    /// Set when the participants have been silent past the inactivity
    /// threshold; holds the length of the silence.
    pub quiet_for_ms: Option<u64>,
}

/// Minute arithmetic for the time clause: whole minutes elapsed (floor),
/// minutes remaining rounded up.
pub fn time_clause(elapsed_ms: u64, duration_ms: u64) -> String {
    let elapsed = elapsed_ms / 60_000;
    let total = duration_ms.div_ceil(60_000);
    let remaining = duration_ms.saturating_sub(elapsed_ms).div_ceil(60_000);
    let unit = if remaining == 1 { "minute remains" } else { "minutes remain" };
    format!("Time: {elapsed} of {total} minutes have elapsed; {remaining} {unit}.")
}

fn phase_directive(phase: Phase) -> &'static str {
    match phase {
        Phase::Divergent => "Current stage: divergent (idea generation). \
Help the group put forward and explore as many ideas as possible; do not push for a decision yet.",
        Phase::Convergent => "Current stage: convergent (consensus formation). \
Help the group compare the ideas already on the table and settle on one that everyone accepts. \
Do not ask for new ideas. If the group has already agreed, do not reopen the question.",
        Phase::Closed => "The discussion has ended.",
    }
}

/// Display label for a transcript author as the model sees it.
pub fn speaker_label(post: &Post) -> String {
    match (&post.author, post.hat) {
        (Author::Participant(p), _) => p.to_string(),
        (Author::Facilitator, Some(h)) => format!("Facilitator ({} Hat)", h.title()),
        (Author::Facilitator, None) => "Facilitator".into(),
        (Author::System, _) => "System".into(),
    }
}

/// Builds one hat's request: macro prompt, then phase, time, optional
/// re-engagement, situational guidance and the abstention rule.
pub fn assemble_prompt(
    cfg: &HatAgentConfig,
    window: &[Post],
    ctx: &PromptContext,
    budget: &ContextBudget,
) -> Result<CompletionRequest, LlmError> {
    if ctx.phase == Phase::Closed {
        return Err(LlmError::InvalidRequest("no prompts are assembled after the session closes".into()));
    }
    let mut sys = cfg.macro_prompt.replace("{topic}", ctx.topic.prompt_text());
    sys.push_str("\n\n");
    sys.push_str(phase_directive(ctx.phase));
    sys.push('\n');
    sys.push_str(&time_clause(ctx.elapsed_ms, ctx.duration_ms));
    if let Some(quiet) = ctx.quiet_for_ms {
        sys.push_str(&format!(
            "\nThe participants have posted nothing for {} seconds. Re-engage them with a targeted \
suggestion or ask someone to elaborate on an earlier point.",
            quiet / 1_000
        ));
    }
    sys.push_str("\n\nWhen you intervene, write at most two short sentences addressed to the group, \
in the spirit of this example:");
    for t in &cfg.situational_templates {
        sys.push_str("\n- \"");
        sys.push_str(t);
        sys.push('"');
    }
    sys.push_str("\nReplace any bracketed slot with content drawn from the discussion; never output brackets.");
    sys.push_str(
        "\n\nIf the discussion is progressing well and no intervention is needed right now, \
reply with exactly one word: Good",
    );

    let messages: Vec<ContextMessage> = window
        .iter()
        .map(|p| ContextMessage {
            speaker: speaker_label(p),
            text: p.text.clone(),
        })
        .collect();
    budget.check(&messages)?;
    Ok(CompletionRequest {
        system_prompt: sys,
        messages,
        max_output_chars: MAX_OUTPUT_CHARS,
        temperature: cfg.temperature,
        timeout_ms: DEFAULT_TIMEOUT_MS,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "detail")]
pub enum Abstention {
    Sentinel,
    EmptyReply,
    Failed(String),
    Late,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Respond(String),
    Abstain(Abstention),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HatDecision {
    pub hat: Hat,
    pub outcome: Outcome,
    pub latency_ms: u64,
}

impl HatDecision {
    pub fn abstain(hat: Hat, why: Abstention) -> Self {
        HatDecision {
            hat,
            outcome: Outcome::Abstain(why),
            latency_ms: 0,
        }
    }

    pub fn respond(hat: Hat, text: impl Into<String>) -> Self {
        HatDecision {
            hat,
            outcome: Outcome::Respond(text.into()),
            latency_ms: 0,
        }
    }

    pub fn response(&self) -> Option<&str> {
        match &self.outcome {
            Outcome::Respond(t) => Some(t),
            Outcome::Abstain(_) => None,
        }
    }
}

/// Cuts `text` to at most `max_chars` characters, ending on a sentence
/// boundary when one exists inside the limit, else on a word boundary.
pub fn truncate_sentences(text: &str, max_chars: usize) -> String {
    let text = text.trim();
    if text.chars().count() <= max_chars {
        return text.to_string();
    }
    let cut = text
        .char_indices()
        .nth(max_chars)
        .map_or(text.len(), |(i, _)| i);
    let head = &text[..cut];
    let next_is_space = text[cut..].chars().next().is_none_or(char::is_whitespace);
    let sentence_end = head
        .char_indices()
        .rev()
        .find(|&(i, c)| {
            matches!(c, '.' | '!' | '?') && {
                let after = i + c.len_utf8();
                head[after..]
                    .chars()
                    .next()
                    .map_or(next_is_space, char::is_whitespace)
            }
        })
        .map(|(i, c)| i + c.len_utf8());
    if let Some(end) = sentence_end {
        return head[..end].trim_end().to_string();
    }
    let word_end = if next_is_space {
        head.len()
    } else {
        head.rfind(char::is_whitespace).unwrap_or(head.len())
    };
    head[..word_end].trim_end().to_string()
}

/// Sends one assembled request and folds every failure into an abstention.
pub async fn decide(hat: Hat, req: &CompletionRequest, gateway: &Gateway) -> HatDecision {
    let started = Instant::now();
    let outcome = match gateway.complete(req).await {
        Ok(res) if is_sentinel(&res.text) => Outcome::Abstain(Abstention::Sentinel),
        Ok(res) => {
            let text = truncate_sentences(&res.text, req.max_output_chars);
            if text.is_empty() {
                Outcome::Abstain(Abstention::EmptyReply)
            } else if is_sentinel(&text) {
                Outcome::Abstain(Abstention::Sentinel)
            } else {
                Outcome::Respond(text)
            }
        }
        Err(e) => {
            tracing::warn!(hat = %hat, error = %e, "hat evaluation failed, abstaining");
            Outcome::Abstain(Abstention::Failed(e.to_string()))
        }
    };
    HatDecision {
        hat,
        outcome,
        latency_ms: started.elapsed().as_millis() as u64,
    }
}

/// Assembles and evaluates a single hat.
pub async fn evaluate_hat(
    cfg: &HatAgentConfig,
    window: &[Post],
    ctx: &PromptContext,
    gateway: &Gateway,
) -> HatDecision {
    match assemble_prompt(cfg, window, ctx, &gateway.budget()) {
        Ok(req) => decide(cfg.hat, &req, gateway).await,
        Err(e) => {
            tracing::warn!(hat = %cfg.hat, error = %e, "prompt assembly failed, abstaining");
            HatDecision::abstain(cfg.hat, Abstention::Failed(e.to_string()))
        }
    }
}

/// Evaluates every request concurrently. Anything not finished by
/// `deadline` counts as a late abstention. Requests are started in slice
/// order, so a scripted provider is consumed in that order.
pub async fn decide_all(
    requests: &[(Hat, CompletionRequest)],
    gateway: &Gateway,
    deadline: Duration,
) -> Vec<HatDecision> {
    join_all(requests.iter().map(|(hat, req)| async move {
        tokio::time::timeout(deadline, decide(*hat, req, gateway))
            .await
            .unwrap_or_else(|_| HatDecision::abstain(*hat, Abstention::Late))
    }))
    .await
}

/// Picks at most one answer. Hats behind either of the two most recent
/// interventions rank after every other responder; ties inside each group
/// are broken by phase priority.
pub fn select_intervention(
    decisions: &[HatDecision],
    phase: Phase,
    recent: &[Hat],
    registry: &HatRegistry,
) -> Option<(Hat, String)> {
    let recent: Vec<Hat> = recent.iter().rev().take(2).copied().collect();
    decisions
        .iter()
        .filter_map(|d| d.response().map(|t| (d.hat, t)))
        .min_by_key(|(hat, _)| (recent.contains(hat), registry.priority(*hat, phase)))
        .map(|(hat, text)| (hat, text.to_string()))
}

/// Published baseline messages, posted at 0, 10 and 17 minutes.
pub const BASELINE_MESSAGES: [(u64, &str); 3] = [
    (
        0,
        "Hi all, our goal today is to reach a consensus on the question posed at the end of the discussion. Please start by generating ideas.",
    ),
    (
        600_000,
        "You have already discussed it for 10 mins. This is a good time for you to reconsider the ideas that you have already had.",
    ),
    (
        1_020_000,
        "There are only 3 minutes left, if you haven\u{2019}t reached a consensus yet, please make a decision as soon as possible.",
    ),
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error("baseline schedule needs exactly 3 entries, got {0}")]
    Count(usize),
    #[error("baseline offsets must strictly increase")]
    Order,
    #[error("baseline offset {offset_ms} ms is outside the {duration_ms} ms session")]
    OutOfRange { offset_ms: u64, duration_ms: u64 },
    #[error("baseline message {0} is empty")]
    Empty(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineSchedule {
    entries: Vec<(u64, String)>,
}

impl BaselineSchedule {
    pub fn new(entries: Vec<(u64, String)>, duration_ms: u64) -> Result<Self, ScheduleError> {
        if entries.len() != 3 {
            return Err(ScheduleError::Count(entries.len()));
        }
        if entries.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(ScheduleError::Order);
        }
        for (i, (offset_ms, text)) in entries.iter().enumerate() {
            if *offset_ms >= duration_ms {
                return Err(ScheduleError::OutOfRange {
                    offset_ms: *offset_ms,
                    duration_ms,
                });
            }
            if text.trim().is_empty() {
                return Err(ScheduleError::Empty(i));
            }
        }
        Ok(BaselineSchedule { entries })
    }

    pub fn published(duration_ms: u64) -> Result<Self, ScheduleError> {
        BaselineSchedule::new(
            BASELINE_MESSAGES.iter().map(|(o, t)| (*o, t.to_string())).collect(),
            duration_ms,
        )
    }

    pub fn entries(&self) -> &[(u64, String)] {
        &self.entries
    }
}

/// Returns the first unsent entry that is due, marking it sent.
pub fn baseline_message<'a>(
    schedule: &'a BaselineSchedule,
    elapsed_ms: u64,
    sent: &mut BTreeSet<usize>,
) -> Option<&'a str> {
    let (i, (_, text)) = schedule
        .entries
        .iter()
        .enumerate()
        .find(|(i, (offset, _))| !sent.contains(i) && *offset <= elapsed_ms)?;
    sent.insert(i);
    Some(text)
}
