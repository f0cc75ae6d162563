//! Deterministic scripted backend.
//!
//! Stands in for a fine-tuned model so every pipeline path can be tested
//! without a GPU. The model is a pure function of its configuration: it
//! recognizes the three prompt templates, extracts the question, and
//! answers from its maps. Question keys are matched case-insensitively
//! with collapsed whitespace.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datamodel::QARecord;
use crate::gateway::prompt::{
    CONTEXT_SEPARATOR, CONTEXT_TEMPLATE_PREFIX, DIRECT_TEMPLATE_PREFIX, PARAMETRIC_TEMPLATE_PREFIX,
};
use crate::gateway::{BackendError, GenerationBackend, GenerationRequest, RET_TOKEN};

/// Where the scripted model gets its answer in the context stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextAnswerSource {
    /// Answer with the first registered gold span that occurs in the
    /// provided context; the unknown text when none does. This makes
    /// "retrieval rescues the question" equivalent to "the retrieved
    /// passage contains a gold span".
    CopyGoldSpan,
    /// Always answer with this fixed text.
    FixedText(String),
}

fn default_unknown_text() -> String {
    "unknown".to_string()
}

/// A scripted test double for a generation backend.
///
/// - Parametric prompts: answer from `knowledge`, or `<RET>` when
///   `ret_on_unknown` is set (otherwise `unknown_text`).
/// - Direct and bare prompts: answer from `knowledge`, then
///   `direct_fallback`, then `unknown_text`. No `<RET>` is ever emitted
///   for prompts that do not offer it.
/// - Context prompts: per `context_answer_source`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "ScriptedModelSpec")]
pub struct ScriptedModel {
    pub knowledge: BTreeMap<String, String>,
    pub direct_fallback: BTreeMap<String, String>,
    pub gold_spans: BTreeMap<String, Vec<String>>,
    pub ret_on_unknown: bool,
    pub context_answer_source: ContextAnswerSource,
    pub unknown_text: String,
}

/// On-disk shape; keys are normalized on load.
#[derive(Deserialize)]
struct ScriptedModelSpec {
    #[serde(default)]
    knowledge: BTreeMap<String, String>,
    #[serde(default)]
    direct_fallback: BTreeMap<String, String>,
    #[serde(default)]
    gold_spans: BTreeMap<String, Vec<String>>,
    #[serde(default = "default_true")]
    ret_on_unknown: bool,
    #[serde(default = "default_context_source")]
    context_answer_source: ContextAnswerSource,
    #[serde(default = "default_unknown_text")]
    unknown_text: String,
}

fn default_true() -> bool {
    true
}

fn default_context_source() -> ContextAnswerSource {
    ContextAnswerSource::CopyGoldSpan
}

impl From<ScriptedModelSpec> for ScriptedModel {
    fn from(spec: ScriptedModelSpec) -> Self {
        let norm_map = |m: BTreeMap<String, String>| {
            m.into_iter().map(|(k, v)| (question_key(&k), v)).collect()
        };
        ScriptedModel {
            knowledge: norm_map(spec.knowledge),
            direct_fallback: norm_map(spec.direct_fallback),
            gold_spans: spec
                .gold_spans
                .into_iter()
                .map(|(k, v)| (question_key(&k), v))
                .collect(),
            ret_on_unknown: spec.ret_on_unknown,
            context_answer_source: spec.context_answer_source,
            unknown_text: spec.unknown_text,
        }
    }
}

impl Default for ScriptedModel {
    fn default() -> Self {
        ScriptedModel {
            knowledge: BTreeMap::new(),
            direct_fallback: BTreeMap::new(),
            gold_spans: BTreeMap::new(),
            ret_on_unknown: true,
            context_answer_source: ContextAnswerSource::CopyGoldSpan,
            unknown_text: default_unknown_text(),
        }
    }
}

/// Lookup key for a question: lowercased with collapsed whitespace.
fn question_key(question: &str) -> String {
    question
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

impl ScriptedModel {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a question the model knows the answer to.
    pub fn know(mut self, question: &str, answer: &str) -> Self {
        self.knowledge
            .insert(question_key(question), answer.to_string());
        self
    }

    /// Registers an answer used only for direct-style prompts when the
    /// main knowledge misses; models a lucky parametric guess.
    pub fn know_direct_fallback(mut self, question: &str, answer: &str) -> Self {
        self.direct_fallback
            .insert(question_key(question), answer.to_string());
        self
    }

    /// Registers the spans the context stage may copy for a question.
    pub fn with_spans(mut self, question: &str, spans: &[&str]) -> Self {
        self.gold_spans.insert(
            question_key(question),
            spans.iter().map(|s| s.to_string()).collect(),
        );
        self
    }

    /// Registers every record's gold answers as copyable context spans.
    pub fn with_record_spans(mut self, records: &[QARecord]) -> Self {
        for record in records {
            self.gold_spans
                .insert(question_key(&record.question), record.answers.clone());
        }
        self
    }

    /// Marks a set of records as known, answering with the first gold
    /// answer of each.
    pub fn knowing_records(mut self, records: &[QARecord]) -> Self {
        for record in records {
            self.knowledge
                .insert(question_key(&record.question), record.answers[0].clone());
        }
        self
    }

    pub fn with_ret_on_unknown(mut self, ret_on_unknown: bool) -> Self {
        self.ret_on_unknown = ret_on_unknown;
        self
    }

    pub fn with_context_source(mut self, source: ContextAnswerSource) -> Self {
        self.context_answer_source = source;
        self
    }

    pub fn with_unknown_text(mut self, text: &str) -> Self {
        self.unknown_text = text.to_string();
        self
    }

    fn answer_parametric(&self, question: &str) -> String {
        match self.knowledge.get(&question_key(question)) {
            Some(answer) => answer.clone(),
            None if self.ret_on_unknown => RET_TOKEN.to_string(),
            None => self.unknown_text.clone(),
        }
    }

    fn answer_direct(&self, question: &str) -> String {
        let key = question_key(question);
        self.knowledge
            .get(&key)
            .or_else(|| self.direct_fallback.get(&key))
            .cloned()
            .unwrap_or_else(|| self.unknown_text.clone())
    }

    fn answer_with_context(&self, question: &str, context: &str) -> String {
        match &self.context_answer_source {
            ContextAnswerSource::FixedText(text) => text.clone(),
            ContextAnswerSource::CopyGoldSpan => {
                let haystack = context.to_lowercase();
                self.gold_spans
                    .get(&question_key(question))
                    .and_then(|spans| {
                        spans
                            .iter()
                            .find(|span| haystack.contains(&span.to_lowercase()))
                    })
                    .cloned()
                    .unwrap_or_else(|| self.unknown_text.clone())
            }
        }
    }
}

/// The prompt shapes the scripted model understands.
enum ParsedPrompt<'a> {
    Parametric { question: &'a str },
    Context { question: &'a str, context: &'a str },
    Direct { question: &'a str },
    /// Anything else is treated as a bare question (zero-shot probe).
    Bare { question: &'a str },
}

fn parse_prompt(prompt: &str) -> ParsedPrompt<'_> {
    if let Some(rest) = prompt.strip_prefix(CONTEXT_TEMPLATE_PREFIX) {
        // Split on the first separator; questions containing ", C: "
        // would be ambiguous, which the fixtures avoid.
        if let Some(pos) = rest.find(CONTEXT_SEPARATOR) {
            return ParsedPrompt::Context {
                question: &rest[..pos],
                context: &rest[pos + CONTEXT_SEPARATOR.len()..],
            };
        }
    }
    if let Some(question) = prompt.strip_prefix(PARAMETRIC_TEMPLATE_PREFIX) {
        return ParsedPrompt::Parametric { question };
    }
    if let Some(question) = prompt.strip_prefix(DIRECT_TEMPLATE_PREFIX) {
        return ParsedPrompt::Direct { question };
    }
    ParsedPrompt::Bare { question: prompt }
}

impl GenerationBackend for ScriptedModel {
    fn complete(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        Ok(match parse_prompt(&request.prompt) {
            ParsedPrompt::Parametric { question } => self.answer_parametric(question),
            ParsedPrompt::Context { question, context } => {
                self.answer_with_context(question, context)
            }
            ParsedPrompt::Direct { question } | ParsedPrompt::Bare { question } => {
                self.answer_direct(question)
            }
        })
    }

    fn name(&self) -> &str {
        "scripted"
    }
}
