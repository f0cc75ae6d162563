//! HTTP JSON completion backend.
//!
//! Speaks the minimal completion protocol documented in
//! `docs/FORMATS.md`: POST a JSON body `{model, prompt, max_tokens,
//! temperature, stop}` and read back `{text}`. This is the de facto
//! interoperability surface of hosted and local inference servers, so any
//! fine-tuned checkpoint can be served behind it.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::gateway::{BackendError, GenerationBackend, GenerationRequest};

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
    stop: &'a [String],
}

#[derive(Deserialize)]
struct CompletionResponse {
    text: String,
}

/// Client for a remote completion endpoint.
pub struct HttpBackend {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self::with_timeout(endpoint, model, Duration::from_secs(60))
    }

    pub fn with_timeout(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        timeout: Duration,
    ) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build();
        HttpBackend {
            agent: config.into(),
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: None,
        }
    }

    /// Sets a bearer token sent as the Authorization header.
    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }

    /// Reads the bearer token from the named environment variable, if set.
    pub fn with_api_key_from_env(mut self, var: &str) -> Self {
        self.api_key = std::env::var(var).ok();
        self
    }
}

fn classify(err: ureq::Error) -> BackendError {
    match err {
        ureq::Error::StatusCode(code) if code == 429 || code >= 500 => {
            BackendError::Transient(format!("server returned HTTP {code}"))
        }
        ureq::Error::StatusCode(code) => {
            BackendError::Permanent(format!("server returned HTTP {code}"))
        }
        ureq::Error::Timeout(_) => BackendError::Transient("request timed out".into()),
        ureq::Error::ConnectionFailed => BackendError::Transient("connection failed".into()),
        ureq::Error::HostNotFound => BackendError::Transient("host not found".into()),
        ureq::Error::Io(e) => BackendError::Transient(format!("transport error: {e}")),
        ureq::Error::Json(e) => BackendError::Permanent(format!("malformed response: {e}")),
        other => BackendError::Permanent(other.to_string()),
    }
}

impl GenerationBackend for HttpBackend {
    fn complete(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        let body = CompletionRequest {
            model: &self.model,
            prompt: &request.prompt,
            max_tokens: request.max_new_tokens,
            temperature: request.temperature,
            stop: &request.stop_sequences,
        };

        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = req.send_json(&body).map_err(classify)?;
        let parsed: CompletionResponse = response.body_mut().read_json().map_err(classify)?;
        Ok(parsed.text)
    }

    fn name(&self) -> &str {
        "http"
    }
}
