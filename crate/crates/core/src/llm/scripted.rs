use std::collections::VecDeque;
use std::sync::Mutex;

use async_trait::async_trait;

use super::{ChatProvider, CompletionRequest, LlmError};

const EXHAUSTED_REPLY: &str = "Good";

/// Replays a fixed list of replies, one per call, then abstains forever.
#[derive(Debug)]
pub struct ScriptedProvider {
    queue: Mutex<VecDeque<String>>,
    calls: Mutex<usize>,
}

impl ScriptedProvider {
    pub fn new<I, S>(script: I) -> Result<Self, LlmError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let queue: VecDeque<String> = script.into_iter().map(Into::into).collect();
        if queue.is_empty() {
            return Err(LlmError::InvalidRequest("scripted provider needs at least one reply".into()));
        }
        Ok(ScriptedProvider {
            queue: Mutex::new(queue),
            calls: Mutex::new(0),
        })
    }

    pub fn calls(&self) -> usize {
        *self.calls.lock().unwrap()
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().unwrap().len()
    }
}

#[async_trait]
impl ChatProvider for ScriptedProvider {
    fn id(&self) -> &str {
        "scripted"
    }

    async fn complete(&self, _req: &CompletionRequest) -> Result<String, LlmError> {
        *self.calls.lock().unwrap() += 1;
        Ok(self
            .queue
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| EXHAUSTED_REPLY.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{ContextBudget, Gateway};
    use std::sync::Arc;

    fn req() -> CompletionRequest {
        CompletionRequest {
            system_prompt: String::new(),
            messages: vec![],
            max_output_chars: 500,
            temperature: 0.7,
            timeout_ms: 1_000,
        }
    }

    #[tokio::test]
    async fn pops_then_abstains() {
        let p = ScriptedProvider::new(["A", "B"]).unwrap();
        let mut out = Vec::new();
        for _ in 0..3 {
            out.push(p.complete(&req()).await.unwrap());
        }
        assert_eq!(out, ["A", "B", "Good"]);
        assert_eq!(p.calls(), 3);
    }

    #[test]
    fn empty_script_is_rejected() {
        assert!(ScriptedProvider::new(Vec::<String>::new()).is_err());
    }

    #[tokio::test]
    async fn forty_entries_consumed_in_order() {
        let script: Vec<String> = (0..40).map(|i| format!("reply {i}")).collect();
        let gw = Gateway::new(
            Arc::new(ScriptedProvider::new(script.clone()).unwrap()),
            ContextBudget::default(),
        );
        for (i, expected) in script.iter().enumerate() {
            let r = gw.complete(&req()).await.unwrap();
            assert_eq!(&r.text, expected, "call {i}");
            assert_eq!(r.provider_id, "scripted");
        }
        assert_eq!(gw.complete(&req()).await.unwrap().text, "Good");
    }
}
