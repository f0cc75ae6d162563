//! The three prompt templates, rendered byte-exactly.
//!
//! The parametric and context templates are the training-time prompts;
//! changing a single character breaks the contract with any model tuned
//! on them, which is why rendering is pure substitution and the templates
//! are pinned by golden tests. The direct template is the never-retrieve
//! variant with the `<RET>` clause dropped so the baseline is not
//! contaminated by the retrieval option.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// First-stage prompt: answer or signal for retrieval.
pub const PARAMETRIC_TEMPLATE_PREFIX: &str =
    "Answer the question Q. If you need help answer <RET> to get the context. Q: ";

/// Second-stage prompt prefix; the question and context are joined by
/// [`CONTEXT_SEPARATOR`].
pub const CONTEXT_TEMPLATE_PREFIX: &str = "Answer the question Q given the context C. Q: ";

pub const CONTEXT_SEPARATOR: &str = ", C: ";

/// Direct prompt used by the never-retrieve configuration.
pub const DIRECT_TEMPLATE_PREFIX: &str = "Answer the question Q. Q: ";

/// Which of the two training-time templates an instance uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Parametric,
    Context,
}

/// Renders the first-stage prompt. Pure substitution: the question is
/// embedded verbatim, newlines and all.
pub fn render_parametric_prompt(question: &str) -> Result<String> {
    if question.trim().is_empty() {
        return Err(Error::InvalidPrompt("empty question".into()));
    }
    Ok(format!("{PARAMETRIC_TEMPLATE_PREFIX}{question}"))
}

/// Renders the second-stage prompt with the full context.
pub fn render_context_prompt(question: &str, context: &str) -> Result<String> {
    if question.trim().is_empty() {
        return Err(Error::InvalidPrompt("empty question".into()));
    }
    if context.trim().is_empty() {
        return Err(Error::InvalidPrompt("empty context".into()));
    }
    Ok(format!(
        "{CONTEXT_TEMPLATE_PREFIX}{question}{CONTEXT_SEPARATOR}{context}"
    ))
}

/// Renders the second-stage prompt with the context suffix-truncated to
/// `max_context_tokens` whitespace tokens. Returns the prompt and whether
/// truncation happened. Token counting is whitespace-based by design; no
/// model tokenizer is consulted.
pub fn render_context_prompt_budgeted(
    question: &str,
    context: &str,
    max_context_tokens: usize,
) -> Result<(String, bool)> {
    let (context, truncated) = truncate_tokens(context, max_context_tokens);
    Ok((render_context_prompt(question, context)?, truncated))
}

/// Renders the never-retrieve prompt (no `<RET>` clause offered).
pub fn render_direct_prompt(question: &str) -> Result<String> {
    if question.trim().is_empty() {
        return Err(Error::InvalidPrompt("empty question".into()));
    }
    Ok(format!("{DIRECT_TEMPLATE_PREFIX}{question}"))
}

/// Cuts `text` after its `budget`-th whitespace token, preserving the
/// original spacing of the kept prefix.
fn truncate_tokens(text: &str, budget: usize) -> (&str, bool) {
    let mut tokens = 0;
    let mut in_token = false;
    for (i, ch) in text.char_indices() {
        if ch.is_whitespace() {
            in_token = false;
        } else if !in_token {
            in_token = true;
            tokens += 1;
            if tokens > budget {
                return (text[..i].trim_end(), true);
            }
        }
    }
    (text, false)
}
