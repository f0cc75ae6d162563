//! Answer normalization and correctness judgment.
//!
//! The evaluation literature says "exact match" but rarely pins down the
//! normalization. [`MatchPolicy`] makes the rule explicit and
//! configurable, and every report echoes the policy it was produced
//! under so results are self-describing.

use serde::{Deserialize, Serialize};
use unicode_general_category::{get_general_category, GeneralCategory};

/// How a generation is compared against the gold answer set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Normalized generation must equal some normalized gold answer.
    /// The three normalization flags are ignored in this mode; only
    /// whitespace collapsing and trimming apply.
    StrictExact,
    /// Some normalized gold answer must occur as a substring of the
    /// normalized generation.
    NormalizedContainment,
}

/// Normalization and comparison policy for answer judging.
///
/// The default is containment with all normalization flags on, which is
/// the established convention for open-domain QA: free-form generations
/// rarely equal gold strings byte-for-byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchPolicy {
    pub mode: MatchMode,
    pub case_fold: bool,
    pub strip_articles: bool,
    pub strip_punctuation: bool,
}

impl Default for MatchPolicy {
    fn default() -> Self {
        MatchPolicy {
            mode: MatchMode::NormalizedContainment,
            case_fold: true,
            strip_articles: true,
            strip_punctuation: true,
        }
    }
}

impl MatchPolicy {
    pub fn strict() -> Self {
        MatchPolicy {
            mode: MatchMode::StrictExact,
            ..Default::default()
        }
    }
}

/// Punctuation for stripping purposes: Unicode general categories P and S.
fn is_punctuation(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
            | GeneralCategory::MathSymbol
            | GeneralCategory::CurrencySymbol
            | GeneralCategory::ModifierSymbol
            | GeneralCategory::OtherSymbol
    )
}

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Applies the policy's normalization steps in order: case fold,
/// punctuation removal, whole-word article removal, then whitespace
/// collapse and trim (always).
///
/// Under [`MatchMode::StrictExact`] the three flags are ignored and only
/// the collapse/trim step applies.
pub fn normalize_answer(text: &str, policy: &MatchPolicy) -> String {
    let flags_active = policy.mode == MatchMode::NormalizedContainment;

    let mut s = if flags_active && policy.case_fold {
        text.to_lowercase()
    } else {
        text.to_string()
    };

    if flags_active && policy.strip_punctuation {
        s.retain(|c| !is_punctuation(c));
    }

    if flags_active && policy.strip_articles {
        s = s
            .split_whitespace()
            .filter(|word| !ARTICLES.contains(word))
            .collect::<Vec<_>>()
            .join(" ");
    }

    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Judges a generation against the gold answer set under the policy.
///
/// There is no fuzzy matching: a near-miss like a typo is incorrect.
pub fn is_correct(generation: &str, gold_answers: &[String], policy: &MatchPolicy) -> bool {
    let generation = normalize_answer(generation, policy);
    gold_answers.iter().any(|gold| {
        let gold = normalize_answer(gold, policy);
        match policy.mode {
            MatchMode::StrictExact => generation == gold,
            MatchMode::NormalizedContainment => generation.contains(&gold),
        }
    })
}
