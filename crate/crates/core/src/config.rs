//! Run configuration file (TOML).
//!
//! One file carries the backend selection, the match policy, and the run
//! knobs; commands take the sections they need. Credentials never live
//! in the file: the `api_key_env` field names an environment variable to
//! read at startup. Field-by-field documentation is in
//! `docs/FORMATS.md`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::databuilder::{MissingPassagePolicy, ProbePromptMode};
use crate::error::{Error, Result};
use crate::gateway::{Gateway, HttpBackend, RetryPolicy, ScriptedModel};
use crate::normalize::{MatchMode, MatchPolicy};
use crate::pipeline::{FailurePolicy, RunOptions};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Scripted,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// HTTP: completion endpoint URL.
    #[serde(default)]
    pub endpoint: Option<String>,
    /// HTTP: model name sent with every request.
    #[serde(default)]
    pub model: Option<String>,
    /// HTTP: environment variable holding the bearer token.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    /// Scripted: path to the model spec JSON, relative to this file.
    #[serde(default)]
    pub script: Option<PathBuf>,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

fn default_api_key_env() -> String {
    "AQA_API_KEY".to_string()
}

fn default_timeout_secs() -> u64 {
    60
}

fn default_max_retries() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    100
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Scripted,
            endpoint: None,
            model: None,
            api_key_env: default_api_key_env(),
            timeout_secs: default_timeout_secs(),
            script: None,
            max_retries: default_max_retries(),
            backoff_ms: default_backoff_ms(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub mode: MatchMode,
    pub case_fold: bool,
    pub strip_articles: bool,
    pub strip_punctuation: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        let policy = MatchPolicy::default();
        PolicyConfig {
            mode: policy.mode,
            case_fold: policy.case_fold,
            strip_articles: policy.strip_articles,
            strip_punctuation: policy.strip_punctuation,
        }
    }
}

impl From<PolicyConfig> for MatchPolicy {
    fn from(config: PolicyConfig) -> Self {
        MatchPolicy {
            mode: config.mode,
            case_fold: config.case_fold,
            strip_articles: config.strip_articles,
            strip_punctuation: config.strip_punctuation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub k: usize,
    pub max_new_tokens: u32,
    pub context_budget: usize,
    pub workers: usize,
    pub failure_policy: FailurePolicy,
    pub probe_prompt: ProbePromptMode,
    pub missing_passage: MissingPassagePolicy,
}

impl Default for RunSection {
    fn default() -> Self {
        let opts = RunOptions::default();
        RunSection {
            k: opts.k,
            max_new_tokens: opts.max_new_tokens,
            context_budget: opts.context_budget,
            workers: opts.workers,
            failure_policy: opts.failure_policy,
            probe_prompt: ProbePromptMode::default(),
            missing_passage: MissingPassagePolicy::default(),
        }
    }
}

/// The whole configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub backend: BackendConfig,
    pub policy: PolicyConfig,
    pub run: RunSection,
    /// Directory of the file this config was loaded from; resolves the
    /// scripted model path.
    #[serde(skip)]
    base_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok(config)
    }

    pub fn policy(&self) -> MatchPolicy {
        self.policy.clone().into()
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            k: self.run.k,
            max_new_tokens: self.run.max_new_tokens,
            context_budget: self.run.context_budget,
            failure_policy: self.run.failure_policy,
            workers: self.run.workers,
            threshold: None,
        }
    }

    /// Builds the configured gateway. Scripted model paths resolve
    /// relative to the config file.
    pub fn gateway(&self) -> Result<Gateway> {
        let retry = RetryPolicy {
            max_retries: self.backend.max_retries,
            backoff_ms: self.backend.backoff_ms,
        };
        match self.backend.kind {
            BackendKind::Scripted => {
                let script = self.backend.script.as_ref().ok_or_else(|| {
                    Error::Config("scripted backend requires a `script` path".into())
                })?;
                let path = if script.is_absolute() {
                    script.clone()
                } else {
                    self.base_dir.join(script)
                };
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let model: ScriptedModel = serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                Ok(Gateway::new(model).with_retry(retry))
            }
            BackendKind::Http => {
                let endpoint = self.backend.endpoint.as_ref().ok_or_else(|| {
                    Error::Config("http backend requires an `endpoint`".into())
                })?;
                let model = self.backend.model.clone().unwrap_or_default();
                let backend =
                    HttpBackend::with_timeout(endpoint, model, Duration::from_secs(self.backend.timeout_secs))
                        .with_api_key_from_env(&self.backend.api_key_env);
                Ok(Gateway::new(backend).with_retry(retry))
            }
        }
    }
}
