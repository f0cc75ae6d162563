//! Uniform text-generation interface.
//!
//! Two backends implement [`GenerationBackend`]: a remote inference
//! service speaking a minimal HTTP JSON completion protocol
//! ([`HttpBackend`]) and a deterministic scripted stand-in
//! ([`ScriptedModel`]). [`Gateway`] wraps either with a retry policy for
//! transient transport failures. Prompt rendering and `<RET>` detection
//! live in [`prompt`] and here.

mod http;
mod prompt;
mod scripted;

pub use http::HttpBackend;
pub use prompt::{
    render_context_prompt, render_context_prompt_budgeted, render_direct_prompt,
    render_parametric_prompt, PromptKind, CONTEXT_SEPARATOR, CONTEXT_TEMPLATE_PREFIX,
    DIRECT_TEMPLATE_PREFIX, PARAMETRIC_TEMPLATE_PREFIX,
};
pub use scripted::{ContextAnswerSource, ScriptedModel};

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The sentinel a model emits to ask for retrieval.
pub const RET_TOKEN: &str = "<RET>";

/// True iff the generation, after whitespace trim, begins with the
/// literal `<RET>`. Prefix match, not substring: an answer that merely
/// mentions the token is not a retrieval request.
pub fn detect_ret(generation: &str) -> bool {
    generation.trim().starts_with(RET_TOKEN)
}

/// Strips a leading `<RET>` (post-trim) from a generation, returning the
/// remainder. Used when retrieval comes up empty and the first-stage
/// output has to stand as the answer.
pub fn strip_ret_prefix(generation: &str) -> &str {
    let trimmed = generation.trim();
    trimmed
        .strip_prefix(RET_TOKEN)
        .map(str::trim)
        .unwrap_or(trimmed)
}

/// One completion request. Temperature stays 0 for all evaluation runs
/// so generations are deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_new_tokens: u32,
    pub temperature: f64,
    pub stop_sequences: Vec<String>,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        GenerationRequest {
            prompt: prompt.into(),
            max_new_tokens: 64,
            temperature: 0.0,
            stop_sequences: Vec::new(),
        }
    }

    pub fn with_max_new_tokens(mut self, max_new_tokens: u32) -> Self {
        self.max_new_tokens = max_new_tokens;
        self
    }
}

/// Backend-level failure, split by whether a retry can help.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendError {
    /// Connection refused, timeout, 5xx: worth retrying.
    Transient(String),
    /// Malformed response, 4xx, protocol violation: retrying is useless.
    Permanent(String),
}

impl std::fmt::Display for BackendError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BackendError::Transient(msg) => write!(f, "transient: {msg}"),
            BackendError::Permanent(msg) => write!(f, "permanent: {msg}"),
        }
    }
}

/// A shareable handle that turns a prompt into a completion.
pub trait GenerationBackend: Send + Sync {
    fn complete(&self, request: &GenerationRequest) -> std::result::Result<String, BackendError>;

    fn name(&self) -> &str {
        "backend"
    }
}

/// Retry budget for transient transport failures, with exponential
/// backoff between attempts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            backoff_ms: 100,
        }
    }
}

/// A completion plus how many retries it took to get it.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub text: String,
    pub retries: u32,
}

/// A backend plus its retry policy; the handle the pipeline generates
/// through. Clones share the backend.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn GenerationBackend>,
    retry: RetryPolicy,
}

impl Gateway {
    pub fn new(backend: impl GenerationBackend + 'static) -> Self {
        Gateway {
            backend: Arc::new(backend),
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    /// Runs one completion, retrying transient failures up to the
    /// configured budget. Permanent failures surface immediately.
    pub fn generate(&self, request: &GenerationRequest) -> Result<Generation> {
        let mut retries = 0;
        loop {
            match self.backend.complete(request) {
                Ok(text) => return Ok(Generation { text, retries }),
                Err(BackendError::Permanent(msg)) => {
                    return Err(Error::backend(None, msg));
                }
                Err(BackendError::Transient(msg)) => {
                    if retries >= self.retry.max_retries {
                        return Err(Error::backend(
                            None,
                            format!("{msg} (after {retries} retries)"),
                        ));
                    }
                    let backoff = self.retry.backoff_ms << retries.min(16);
                    std::thread::sleep(Duration::from_millis(backoff));
                    retries += 1;
                }
            }
        }
    }
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.name())
            .field("retry", &self.retry)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    #[test]
    fn detect_ret_is_prefix_match_after_trim() {
        assert!(detect_ret("<RET>"));
        assert!(detect_ret("  <RET> please"));
        assert!(!detect_ret("The answer is <RET>-shaped"));
        assert!(!detect_ret("<ret>"));
        assert!(!detect_ret(""));
    }

    #[test]
    fn strip_ret_prefix_leaves_plain_answers_alone() {
        assert_eq!(strip_ret_prefix("<RET>"), "");
        assert_eq!(strip_ret_prefix(" <RET> maybe Paris"), "maybe Paris");
        assert_eq!(strip_ret_prefix("Paris"), "Paris");
    }

    struct FlakyBackend {
        fail_first: u32,
        calls: AtomicU32,
    }

    impl GenerationBackend for FlakyBackend {
        fn complete(&self, _: &GenerationRequest) -> std::result::Result<String, BackendError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.fail_first {
                Err(BackendError::Transient("connection reset".into()))
            } else {
                Ok("ok".into())
            }
        }
    }

    #[test]
    fn transient_failures_are_retried() {
        let gateway = Gateway::new(FlakyBackend {
            fail_first: 2,
            calls: AtomicU32::new(0),
        })
        .with_retry(RetryPolicy {
            max_retries: 3,
            backoff_ms: 1,
        });
        let generation = gateway.generate(&GenerationRequest::new("q")).unwrap();
        assert_eq!(generation.text, "ok");
        assert_eq!(generation.retries, 2);
    }

    #[test]
    fn retry_budget_exhaustion_is_an_error() {
        let gateway = Gateway::new(FlakyBackend {
            fail_first: 10,
            calls: AtomicU32::new(0),
        })
        .with_retry(RetryPolicy {
            max_retries: 2,
            backoff_ms: 1,
        });
        let err = gateway.generate(&GenerationRequest::new("q")).unwrap_err();
        assert!(err.to_string().contains("after 2 retries"), "{err}");
    }

    struct BrokenBackend;

    impl GenerationBackend for BrokenBackend {
        fn complete(&self, _: &GenerationRequest) -> std::result::Result<String, BackendError> {
            Err(BackendError::Permanent("malformed response".into()))
        }
    }

    #[test]
    fn permanent_failures_do_not_retry() {
        let gateway = Gateway::new(BrokenBackend).with_retry(RetryPolicy {
            max_retries: 5,
            backoff_ms: 1,
        });
        let err = gateway.generate(&GenerationRequest::new("q")).unwrap_err();
        assert!(err.to_string().contains("malformed response"));
    }
}
