use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::ClientError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenCounterMode {
    /// `usage.total_tokens` from the response, estimated when missing.
    #[default]
    FromResponseUsage,
    /// Four characters per token over prompt and completion.
    Approximate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    /// Server root; requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key. Empty sends no
    /// `Authorization` header.
    pub api_key_env_var: String,
    /// Sampling temperature for policy and world-model requests, in `[0, 2]`.
    pub sampling_diversity: f64,
    /// Temperature for the conditional generator.
    pub generator_diversity: f64,
    pub request_timeout_ms: u64,
    /// Extra attempts after a failed request or an unparsable action.
    pub max_retries: u32,
    pub token_counter_mode: TokenCounterMode,
    /// Bound on concurrent requests through one client.
    pub max_in_flight: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model_name: "default".into(),
            api_key_env_var: String::new(),
            sampling_diversity: 1.0,
            generator_diversity: 0.3,
            request_timeout_ms: 60_000,
            max_retries: 2,
            token_counter_mode: TokenCounterMode::default(),
            max_in_flight: 8,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), ClientError> {
        let rest = self
            .base_url
            .strip_prefix("http://")
            .or_else(|| self.base_url.strip_prefix("https://"))
            .ok_or_else(|| ClientError::Config(format!("base_url `{}` must start with http:// or https://", self.base_url)))?;
        if rest.is_empty() || rest.starts_with('/') {
            return Err(ClientError::Config(format!("base_url `{}` has no host", self.base_url)));
        }
        for (name, v) in [("sampling_diversity", self.sampling_diversity), ("generator_diversity", self.generator_diversity)] {
            if !(0.0..=2.0).contains(&v) {
                return Err(ClientError::Config(format!("{name} must be in [0, 2]")));
            }
        }
        if self.request_timeout_ms == 0 {
            return Err(ClientError::Config("request_timeout_ms must be positive".into()));
        }
        if self.max_in_flight == 0 {
            return Err(ClientError::Config("max_in_flight must be at least 1".into()));
        }
        Ok(())
    }

    pub fn request_timeout(&self) -> Duration {
        Duration::from_millis(self.request_timeout_ms)
    }

    pub fn endpoint_url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}
