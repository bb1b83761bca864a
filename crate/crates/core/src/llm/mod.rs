//! Chat-completion boundary.
//!
//! Everything nondeterministic about talking to a language model sits
//! behind [`ChatProvider`]. The [`Gateway`] adds the checks that must hold
//! whichever provider is configured: the context budget is enforced before
//! any call is made, and no call outlives its timeout.

mod openai;
mod scripted;

use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Post;

pub use openai::{OpenAiCompatible, API_KEY_ENV};
pub use scripted::ScriptedProvider;

pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_TIMEOUT_MS: u64 = 20_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextMessage {
    pub speaker: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system_prompt: String,
    /// Transcript excerpt, oldest first.
    pub messages: Vec<ContextMessage>,
    pub max_output_chars: usize,
    pub temperature: f64,
    pub timeout_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionResult {
    /// Raw provider text. May be an abstention sentinel; the gateway does
    /// not interpret it.
    pub text: String,
    pub latency_ms: u64,
    pub provider_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("provider did not answer within {0} ms")]
    Timeout(u64),
    #[error("provider returned status {status}: {body}")]
    ProviderError { status: u16, body: String },
    #[error("no API credential configured (set {API_KEY_ENV})")]
    CredentialMissing,
    #[error("context of {messages} messages / {chars} chars exceeds budget of {max_messages} / {max_chars}")]
    ContextOverflow {
        messages: usize,
        chars: usize,
        max_messages: usize,
        max_chars: usize,
    },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport failure: {0}")]
    Transport(String),
}

#[async_trait]
pub trait ChatProvider: Send + Sync {
    fn id(&self) -> &str;

    async fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError>;
}

/// Upper bound on how much transcript is sent with each request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextBudget {
    pub max_messages: usize,
    pub max_chars: usize,
}

impl Default for ContextBudget {
    fn default() -> Self {
        ContextBudget {
            max_messages: 60,
            max_chars: 12_000,
        }
    }
}

impl ContextBudget {
    /// Longest suffix of `posts` that fits the budget.
    pub fn window<'a>(&self, posts: &'a [Post]) -> &'a [Post] {
        let mut chars = 0;
        let mut start = posts.len();
        for (i, p) in posts.iter().enumerate().rev() {
            let n = p.text.chars().count();
            if posts.len() - i > self.max_messages || chars + n > self.max_chars {
                break;
            }
            chars += n;
            start = i;
        }
        &posts[start..]
    }

    pub fn check(&self, messages: &[ContextMessage]) -> Result<(), LlmError> {
        let chars: usize = messages.iter().map(|m| m.text.chars().count()).sum();
        if messages.len() > self.max_messages || chars > self.max_chars {
            return Err(LlmError::ContextOverflow {
                messages: messages.len(),
                chars,
                max_messages: self.max_messages,
                max_chars: self.max_chars,
            });
        }
        Ok(())
    }
}

#[derive(Clone)]
pub struct Gateway {
    provider: Arc<dyn ChatProvider>,
    budget: ContextBudget,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("provider", &self.provider.id())
            .field("budget", &self.budget)
            .finish()
    }
}

impl Gateway {
    pub fn new(provider: Arc<dyn ChatProvider>, budget: ContextBudget) -> Self {
        Gateway { provider, budget }
    }

    pub fn budget(&self) -> ContextBudget {
        self.budget
    }

    pub fn provider_id(&self) -> &str {
        self.provider.id()
    }

    pub async fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        self.budget.check(&req.messages)?;
        if !(0.0..=2.0).contains(&req.temperature) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                req.temperature
            )));
        }
        let started = Instant::now();
        let text = tokio::time::timeout(
            Duration::from_millis(req.timeout_ms),
            self.provider.complete(req),
        )
        .await
        .map_err(|_| LlmError::Timeout(req.timeout_ms))??;
        Ok(CompletionResult {
            text,
            latency_ms: started.elapsed().as_millis() as u64,
            provider_id: self.provider.id().to_string(),
        })
    }
}
