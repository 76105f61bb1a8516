use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{excerpt, map_reqwest, BackendError, RetryPolicy};
use crate::prompts::{fingerprint, PromptRole};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRequest {
    /// Template id; first fingerprint component. Never sent on the wire.
    pub template: String,
    /// Salient variables; remaining fingerprint components.
    pub salient: Vec<String>,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Empty means "client default".
    pub model: String,
}

impl ModelRequest {
    pub fn new(role: PromptRole, salient: Vec<String>, prompt: String) -> Self {
        ModelRequest {
            template: role.id().to_string(),
            salient,
            messages: vec![ChatMessage::user(prompt)],
            temperature: 0.0,
            max_tokens: 512,
            model: String::new(),
        }
    }

    pub fn with_model(mut self, model: &str) -> Self {
        self.model = model.to_string();
        self
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(&self.template, &self.salient)
    }

    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl Usage {
    pub fn new(prompt_tokens: u64, completion_tokens: u64) -> Self {
        Usage {
            prompt_tokens,
            completion_tokens,
        }
    }

    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelReply {
    pub text: String,
    pub usage: Usage,
    /// The model explicitly declined; `text` is empty.
    pub refusal: bool,
}

pub trait ModelHandle: Send + Sync {
    fn complete(&self, req: &ModelRequest) -> Result<ModelReply, BackendError>;
}

/// Client for OpenAI-compatible `/v1/chat/completions` endpoints.
pub struct OpenAiClient {
    base_url: String,
    api_key: Option<String>,
    model: String,
    client: reqwest::blocking::Client,
    retry: RetryPolicy,
}

impl OpenAiClient {
    pub fn new(base_url: &str, api_key: Option<String>, model: &str) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(OpenAiClient {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            model: model.to_string(),
            client,
            retry: RetryPolicy::default(),
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Reads `LLM_BASE_URL`, `LLM_API_KEY` and `LLM_MODEL`.
    pub fn from_env() -> Result<Self, BackendError> {
        let base = std::env::var("LLM_BASE_URL")
            .map_err(|_| BackendError::Config("LLM_BASE_URL is not set".into()))?;
        let key = std::env::var("LLM_API_KEY").ok();
        let model = std::env::var("LLM_MODEL").unwrap_or_default();
        Self::new(&base, key, &model)
    }

    pub fn endpoint(&self) -> String {
        format!("{}/v1/chat/completions", self.base_url)
    }

    pub fn request_body(&self, req: &ModelRequest) -> Value {
        let model = if req.model.is_empty() {
            &self.model
        } else {
            &req.model
        };
        json!({
            "model": model,
            "messages": req.messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        })
    }

    pub fn parse_reply(body: &str) -> Result<ModelReply, BackendError> {
        let value: Value = serde_json::from_str(body).map_err(|e| BackendError::Parse {
            path: "$".into(),
            message: e.to_string(),
        })?;
        let message = value
            .get("choices")
            .and_then(|c| c.get(0))
            .and_then(|c| c.get("message"))
            .ok_or_else(|| BackendError::Parse {
                path: "choices[0].message".into(),
                message: "missing".into(),
            })?;
        let (text, refusal) = match message.get("content") {
            Some(Value::String(s)) => (s.clone(), false),
            Some(Value::Null) | None if message.get("refusal").is_some_and(|r| !r.is_null()) => {
                (String::new(), true)
            }
            _ => {
                return Err(BackendError::Parse {
                    path: "choices[0].message.content".into(),
                    message: "expected a string".into(),
                })
            }
        };
        let count = |field: &str| {
            value
                .get("usage")
                .and_then(|u| u.get(field))
                .and_then(Value::as_u64)
                .ok_or_else(|| BackendError::Parse {
                    path: format!("usage.{field}"),
                    message: "expected a non-negative integer".into(),
                })
        };
        Ok(ModelReply {
            text,
            usage: Usage::new(count("prompt_tokens")?, count("completion_tokens")?),
            refusal,
        })
    }
}

impl ModelHandle for OpenAiClient {
    fn complete(&self, req: &ModelRequest) -> Result<ModelReply, BackendError> {
        let body = self.request_body(req);
        let text = self.retry.run(|| {
            let mut builder = self.client.post(self.endpoint()).json(&body);
            if let Some(key) = &self.api_key {
                builder = builder.bearer_auth(key);
            }
            let resp = builder.send().map_err(map_reqwest)?;
            let status = resp.status();
            let text = resp.text().map_err(map_reqwest)?;
            if status.as_u16() >= 400 {
                return Err(BackendError::Http {
                    status: status.as_u16(),
                    body: excerpt(&text),
                });
            }
            Ok(text)
        })?;
        Self::parse_reply(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_body_matches_golden() {
        let client = OpenAiClient::new("http://localhost:8000/", None, "qwen3-8b").unwrap();
        let req = ModelRequest::new(PromptRole::Sufficiency, vec!["Q1".into()], "Is it enough?".into());
        let golden = r#"{"max_tokens":512,"messages":[{"content":"Is it enough?","role":"user"}],"model":"qwen3-8b","temperature":0.0}"#;
        assert_eq!(client.request_body(&req).to_string(), golden);
        assert_eq!(client.endpoint(), "http://localhost:8000/v1/chat/completions");
        assert_eq!(req.fingerprint(), "sufficiency:Q1");
    }

    #[test]
    fn parses_content_and_usage() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"YES"}}],"usage":{"prompt_tokens":120,"completion_tokens":1}}"#;
        let reply = OpenAiClient::parse_reply(body).unwrap();
        assert_eq!(reply.text, "YES");
        assert_eq!(reply.usage, Usage::new(120, 1));
        assert!(!reply.refusal);
    }

    #[test]
    fn malformed_replies_name_the_path() {
        let cases = [
            ("not json", "$"),
            (r#"{"choices":[]}"#, "choices[0].message"),
            (r#"{"choices":[{"message":{"content":5}}]}"#, "choices[0].message.content"),
            (r#"{"choices":[{"message":{"content":"x"}}],"usage":{"prompt_tokens":1}}"#, "usage.completion_tokens"),
        ];
        for (body, expected) in cases {
            match OpenAiClient::parse_reply(body) {
                Err(BackendError::Parse { path, .. }) => assert_eq!(path, expected, "{body}"),
                other => panic!("{body}: {other:?}"),
            }
        }
    }

    #[test]
    fn refusal_is_flagged() {
        let body = r#"{"choices":[{"message":{"content":null,"refusal":"no"}}],"usage":{"prompt_tokens":3,"completion_tokens":0}}"#;
        let reply = OpenAiClient::parse_reply(body).unwrap();
        assert!(reply.refusal);
        assert!(reply.text.is_empty());
    }
}
