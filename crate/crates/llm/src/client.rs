use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::{ClientError, EndpointConfig, TokenCounterMode};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message { role: "system".into(), content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message { role: "user".into(), content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message { role: "assistant".into(), content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub tokens: u64,
}

/// Counting semaphore over in-flight requests.
struct Gate {
    free: Mutex<usize>,
    cond: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cond.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cond.notify_one();
    }
}

/// Blocking chat-completions client, shareable across threads.
pub struct ChatClient {
    config: EndpointConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
    gate: Gate,
}

fn approximate_tokens(messages: &[Message], text: &str) -> u64 {
    let chars: usize = messages.iter().map(|m| m.content.chars().count()).sum::<usize>() + text.chars().count();
    chars.div_ceil(4) as u64
}

impl ChatClient {
    pub fn new(config: EndpointConfig) -> Result<Self, ClientError> {
        config.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.request_timeout()))
            .http_status_as_error(false)
            .build()
            .into();
        let api_key = match config.api_key_env_var.as_str() {
            "" => None,
            name => Some(std::env::var(name).map_err(|_| ClientError::Config(format!("environment variable {name} is not set")))?),
        };
        let slots = config.max_in_flight;
        Ok(ChatClient { config, agent, api_key, gate: Gate { free: Mutex::new(slots), cond: Condvar::new() } })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    /// One completion, retrying transport failures and 5xx responses up to
    /// `max_retries` times.
    pub fn complete(&self, messages: &[Message], temperature: f64) -> Result<Completion, ClientError> {
        let body = json!({
            "model": self.config.model_name,
            "messages": messages,
            "temperature": temperature,
        })
        .to_string();
        let mut last = ClientError::Transport("no attempt made".into());
        for _ in 0..=self.config.max_retries {
            match self.attempt(&body) {
                Ok(value) => return self.completion(messages, &value),
                Err(err @ (ClientError::Transport(_) | ClientError::Status { code: 500.., .. })) => last = err,
                Err(err) => return Err(err),
            }
        }
        Err(last)
    }

    fn attempt(&self, body: &str) -> Result<serde_json::Value, ClientError> {
        let _permit = self.gate.acquire();
        let mut request = self.agent.post(self.config.endpoint_url()).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", format!("Bearer {key}"));
        }
        let response = request.send(body).map_err(|e| ClientError::Transport(e.to_string()))?;
        let code = response.status().as_u16();
        let text = response.into_body().read_to_string().map_err(|e| ClientError::Transport(e.to_string()))?;
        if code >= 300 {
            return Err(ClientError::Status { code, body: text.chars().take(200).collect() });
        }
        serde_json::from_str(&text).map_err(|e| ClientError::Protocol(format!("response is not JSON: {e}")))
    }

    fn completion(&self, messages: &[Message], value: &serde_json::Value) -> Result<Completion, ClientError> {
        let text = value
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .ok_or_else(|| ClientError::Protocol("missing choices[0].message.content".into()))?
            .to_string();
        let usage = value.pointer("/usage/total_tokens").and_then(|v| v.as_u64());
        let tokens = match (self.config.token_counter_mode, usage) {
            (TokenCounterMode::FromResponseUsage, Some(n)) => n,
            _ => approximate_tokens(messages, &text),
        };
        Ok(Completion { text, tokens })
    }
}
