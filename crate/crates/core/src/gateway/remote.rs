use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{GatewayError, LanguageModel, PromptBundle};
use crate::http::{post_json, RetryPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub retry: RetryPolicy,
}

/// Chat-completion client. The request is
/// `{model, messages: [{role, content}], max_tokens, temperature}`; the reply
/// text is read from `choices[0].message.content`, `content[0].text`, or a
/// top-level `text`, whichever is present.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    config: RemoteConfig,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        Self { config }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    pub fn request_body(&self, prompt: &PromptBundle, max_new_tokens: usize) -> Value {
        let mut messages = Vec::new();
        let system = prompt.system_text();
        if !system.is_empty() {
            messages.push(json!({"role": "system", "content": system}));
        }
        messages.push(json!({"role": "user", "content": prompt.user_text()}));
        json!({
            "model": self.config.model,
            "messages": messages,
            "max_tokens": max_new_tokens,
            "temperature": self.config.temperature,
        })
    }
}

fn extract_text(resp: &Value) -> Option<String> {
    resp.pointer("/choices/0/message/content")
        .or_else(|| resp.pointer("/content/0/text"))
        .or_else(|| resp.get("text"))
        .and_then(Value::as_str)
        .map(str::to_string)
}

impl LanguageModel for RemoteBackend {
    fn complete(
        &self,
        prompt: &PromptBundle,
        max_new_tokens: Option<usize>,
    ) -> Result<String, GatewayError> {
        let limit = max_new_tokens.ok_or(GatewayError::MissingLimit)?;
        let body = self.request_body(prompt, limit);
        let resp = post_json(
            &self.config.endpoint,
            self.config.api_key.as_deref(),
            &body,
            &self.config.retry,
        )?;
        extract_text(&resp).ok_or_else(|| {
            GatewayError::Malformed(format!(
                "no generated text in {}",
                resp.to_string().chars().take(200).collect::<String>()
            ))
        })
    }
}
