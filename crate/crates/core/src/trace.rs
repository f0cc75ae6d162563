//! Per-question inference traces.
//!
//! A trace is the full record of one inference: the decision, both
//! generations, the retrieved passage if any, and correctness. Traces
//! carry the gold answers and popularity of their source record so a
//! trace file is self-sufficient: `eval` can re-judge it under any policy
//! without the original dataset.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which inference configuration produced a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Configuration {
    Adaptive,
    Never,
    Always,
    Popularity,
}

impl std::fmt::Display for Configuration {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Configuration::Adaptive => "adaptive",
            Configuration::Never => "never",
            Configuration::Always => "always",
            Configuration::Popularity => "popularity",
        };
        f.write_str(name)
    }
}

impl std::str::FromStr for Configuration {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "adaptive" => Ok(Configuration::Adaptive),
            "never" => Ok(Configuration::Never),
            "always" => Ok(Configuration::Always),
            "popularity" => Ok(Configuration::Popularity),
            other => Err(format!(
                "unknown configuration {other:?} (expected adaptive, never, always, or popularity)"
            )),
        }
    }
}

/// Whether a question was answered from parametric memory or after
/// retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Direct,
    Retrieve,
}

/// Anomalies observed while producing a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceFlag {
    /// The retrieved context was cut to the token budget.
    TruncatedContext,
    /// The second stage emitted `<RET>` again; its output stands verbatim.
    SecondStageRet,
    /// At least one generation needed transport retries.
    BackendRetried,
    /// The model asked for retrieval but nothing scored above zero.
    EmptyRetrieval,
    /// A backend failure survived retries; the trace is not scored.
    Failed,
}

/// The retrieved passage that entered the second-stage prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedPassage {
    pub passage_id: String,
    pub score: f64,
}

/// Full record of one inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerTrace {
    pub question_id: String,
    pub question: String,
    pub gold_answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub popularity: Option<u64>,
    pub configuration: Configuration,
    pub decision: Decision,
    pub first_generation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieved: Option<RetrievedPassage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second_generation: Option<String>,
    pub final_answer: String,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub flags: BTreeSet<TraceFlag>,
}

impl AnswerTrace {
    pub fn is_failed(&self) -> bool {
        self.flags.contains(&TraceFlag::Failed)
    }

    pub fn decided_retrieve(&self) -> bool {
        self.decision == Decision::Retrieve
    }
}

/// Writes traces as line-delimited JSON. Output is byte-stable for a
/// given trace list.
pub fn save_traces(traces: &[AnswerTrace], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for trace in traces {
        serde_json::to_writer(&mut out, trace).expect("trace serializes");
        out.push(b'\n');
    }
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn load_traces(path: impl AsRef<Path>) -> Result<Vec<AnswerTrace>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut traces = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let trace: AnswerTrace = serde_json::from_str(&line)
            .map_err(|e| Error::malformed(path, idx + 1, e.to_string()))?;
        traces.push(trace);
    }
    Ok(traces)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_trace() -> AnswerTrace {
        AnswerTrace {
            question_id: "q1".into(),
            question: "Who wrote Hamlet?".into(),
            gold_answers: vec!["Shakespeare".into()],
            popularity: Some(100),
            configuration: Configuration::Adaptive,
            decision: Decision::Retrieve,
            first_generation: "<RET>".into(),
            retrieved: Some(RetrievedPassage {
                passage_id: "p1".into(),
                score: 1.5,
            }),
            second_generation: Some("Shakespeare".into()),
            final_answer: "Shakespeare".into(),
            correct: true,
            flags: BTreeSet::new(),
        }
    }

    #[test]
    fn traces_round_trip_through_the_file_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traces.jsonl");
        let traces = vec![sample_trace()];
        save_traces(&traces, &path).unwrap();
        assert_eq!(load_traces(&path).unwrap(), traces);
    }

    #[test]
    fn saving_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        let traces = vec![sample_trace(), sample_trace()];
        save_traces(&traces, &a).unwrap();
        save_traces(&traces, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }
}
