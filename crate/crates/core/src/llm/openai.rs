use std::time::Duration;

use async_trait::async_trait;
use serde::Deserialize;
use serde_json::json;

use super::{ChatProvider, CompletionRequest, LlmError};

/// Environment variable holding the provider credential.
pub const API_KEY_ENV: &str = "PTFA_API_KEY";

const BODY_EXCERPT_CHARS: usize = 200;

/// Client for any endpoint speaking the OpenAI chat-completions protocol.
pub struct OpenAiCompatible {
    client: reqwest::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
}

impl std::fmt::Debug for OpenAiCompatible {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpenAiCompatible")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl OpenAiCompatible {
    pub fn new(base_url: &str, model: &str, api_key: Option<String>) -> Self {
        OpenAiCompatible {
            client: reqwest::Client::builder()
                .connect_timeout(Duration::from_secs(10))
                .build()
                .expect("http client"),
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            model: model.to_string(),
            api_key: api_key.filter(|k| !k.trim().is_empty()),
        }
    }

    /// Reads the credential from [`API_KEY_ENV`].
    pub fn from_env(base_url: &str, model: &str) -> Self {
        OpenAiCompatible::new(base_url, model, std::env::var(API_KEY_ENV).ok())
    }

    fn body(&self, req: &CompletionRequest) -> serde_json::Value {
        let mut messages = vec![json!({"role": "system", "content": req.system_prompt})];
        if req.messages.is_empty() {
            messages.push(json!({"role": "user", "content": "(no messages have been posted yet)"}));
        }
        for m in &req.messages {
            messages.push(json!({"role": "user", "content": format!("{}: {}", m.speaker, m.text)}));
        }
        json!({
            "model": self.model,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": (req.max_output_chars / 2).max(16),
        })
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

#[async_trait]
impl ChatProvider for OpenAiCompatible {
    fn id(&self) -> &str {
        &self.model
    }

    async fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        let key = self.api_key.as_deref().ok_or(LlmError::CredentialMissing)?;
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(key)
            .timeout(Duration::from_millis(req.timeout_ms))
            .json(&self.body(req))
            .send()
            .await
            .map_err(|e| {
                if e.is_timeout() {
                    LlmError::Timeout(req.timeout_ms)
                } else {
                    LlmError::Transport(e.to_string())
                }
            })?;
        let status = resp.status();
        let text = resp
            .text()
            .await
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(LlmError::ProviderError {
                status: status.as_u16(),
                body: text.chars().take(BODY_EXCERPT_CHARS).collect(),
            });
        }
        let parsed: ChatResponse = serde_json::from_str(&text).map_err(|e| LlmError::ProviderError {
            status: status.as_u16(),
            body: format!("unparseable response: {e}"),
        })?;
        Ok(parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default())
    }
}
