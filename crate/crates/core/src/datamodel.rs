//! Core QA records, passage corpora, and the line-delimited loaders.
//!
//! Every loader maps its source schema into the generic interchange shape
//! `{id, question, answers, passage?, popularity?}` so the rest of the
//! harness only ever sees [`QARecord`]. Field names for all four schemas
//! are pinned in `docs/FORMATS.md`.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One question with its gold answer set, optional gold passage, and
/// optional popularity score (page views of the subject entity).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QARecord {
    pub id: String,
    pub question: String,
    pub answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub popularity: Option<u64>,
}

impl QARecord {
    /// Checks the record invariants: non-empty question after trim and a
    /// non-empty gold answer set.
    fn validate(&self) -> std::result::Result<(), String> {
        if self.question.trim().is_empty() {
            return Err("empty question".to_string());
        }
        if self.answers.is_empty() {
            return Err("empty gold answer set".to_string());
        }
        Ok(())
    }
}

/// A retrievable text unit. `id` must be unique within a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub body: String,
}

/// Aggregate shape of a QA dataset: counts and mean word lengths.
///
/// `mean_words_per_answer` averages over the first gold answer of each
/// record; words are whitespace-delimited after trimming.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub question_count: usize,
    pub mean_words_per_question: f64,
    pub mean_words_per_answer: f64,
}

/// Input schema variants accepted by [`load_qa_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schema {
    Nq,
    Squad,
    Popqa,
    Generic,
}

impl std::str::FromStr for Schema {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "nq" => Ok(Schema::Nq),
            "squad" => Ok(Schema::Squad),
            "popqa" => Ok(Schema::Popqa),
            "generic" => Ok(Schema::Generic),
            other => Err(format!(
                "unknown schema {other:?} (expected nq, squad, popqa, or generic)"
            )),
        }
    }
}

#[derive(Deserialize)]
struct NqLine {
    #[serde(default)]
    id: Option<String>,
    question: String,
    answer: Vec<String>,
}

#[derive(Deserialize)]
struct SquadSpan {
    text: String,
}

#[derive(Deserialize)]
struct SquadLine {
    #[serde(default)]
    id: Option<String>,
    question: String,
    answers: Vec<SquadSpan>,
    context: String,
}

#[derive(Deserialize)]
struct PopqaLine {
    id: serde_json::Value,
    question: String,
    possible_answers: serde_json::Value,
    #[serde(default)]
    s_pop: Option<u64>,
}

/// Loads a line-delimited QA dataset in the named schema.
///
/// Records are returned in file order. A record violating the
/// [`QARecord`] invariants is an error naming the offending line, never a
/// silent drop, and nothing is returned on partial failure.
pub fn load_qa_dataset(path: impl AsRef<Path>, schema: Schema) -> Result<Vec<QARecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);

    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_line(&line, schema, line_no)
            .map_err(|msg| Error::malformed(path, line_no, msg))?;
        record
            .validate()
            .map_err(|msg| Error::malformed(path, line_no, format!("{msg} at line {line_no}")))?;
        records.push(record);
    }

    if records.is_empty() {
        return Err(Error::EmptyDataset { path: path.into() });
    }
    Ok(records)
}

fn parse_line(line: &str, schema: Schema, line_no: usize) -> std::result::Result<QARecord, String> {
    match schema {
        Schema::Generic => serde_json::from_str(line).map_err(|e| e.to_string()),
        Schema::Nq => {
            let raw: NqLine = serde_json::from_str(line).map_err(|e| e.to_string())?;
            Ok(QARecord {
                id: raw.id.unwrap_or_else(|| format!("nq-{line_no}")),
                question: raw.question,
                answers: raw.answer,
                passage: None,
                popularity: None,
            })
        }
        Schema::Squad => {
            let raw: SquadLine = serde_json::from_str(line).map_err(|e| e.to_string())?;
            // Multiple annotated spans collapse into the answer set,
            // first occurrence first, duplicates dropped.
            let mut answers: Vec<String> = Vec::new();
            for span in raw.answers {
                if !answers.contains(&span.text) {
                    answers.push(span.text);
                }
            }
            Ok(QARecord {
                id: raw.id.unwrap_or_else(|| format!("squad-{line_no}")),
                question: raw.question,
                answers,
                passage: Some(raw.context),
                popularity: None,
            })
        }
        Schema::Popqa => {
            let raw: PopqaLine = serde_json::from_str(line).map_err(|e| e.to_string())?;
            let id = match raw.id {
                serde_json::Value::String(s) => s,
                serde_json::Value::Number(n) => n.to_string(),
                other => return Err(format!("id must be a string or number, got {other}")),
            };
            let answers = parse_possible_answers(&raw.possible_answers)?;
            Ok(QARecord {
                id,
                question: raw.question,
                answers,
                passage: None,
                popularity: raw.s_pop,
            })
        }
    }
}

/// PopQA ships `possible_answers` either as a JSON array or as a string
/// containing a JSON array; both are accepted.
fn parse_possible_answers(value: &serde_json::Value) -> std::result::Result<Vec<String>, String> {
    let as_list = |v: &serde_json::Value| -> std::result::Result<Vec<String>, String> {
        v.as_array()
            .ok_or_else(|| "possible_answers is not a list".to_string())?
            .iter()
            .map(|a| {
                a.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| "possible_answers entry is not a string".to_string())
            })
            .collect()
    };
    match value {
        serde_json::Value::String(s) => {
            let inner: serde_json::Value = serde_json::from_str(s)
                .map_err(|e| format!("possible_answers string is not valid JSON: {e}"))?;
            as_list(&inner)
        }
        other => as_list(other),
    }
}

/// Writes records back out in the generic schema, one object per line.
/// `load_qa_dataset(save_generic(r), Generic)` round-trips exactly.
pub fn save_generic(records: &[QARecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for record in records {
        serde_json::to_writer(&mut out, record).expect("QARecord serializes");
        out.push(b'\n');
    }
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Loads a passage corpus from a line-delimited `{id, title?, body}` file.
pub fn load_passages(path: impl AsRef<Path>) -> Result<Vec<Passage>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);

    let mut passages = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let passage: Passage = serde_json::from_str(&line)
            .map_err(|e| Error::malformed(path, line_no, e.to_string()))?;
        if passage.body.is_empty() {
            return Err(Error::malformed(path, line_no, "empty passage body"));
        }
        passages.push(passage);
    }
    Ok(passages)
}

fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Mean question/answer word lengths over a record list.
///
/// Answer length is measured on the first gold answer of each record.
pub fn compute_stats(records: &[QARecord]) -> Result<DatasetStats> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = records.len() as f64;
    let question_words: usize = records.iter().map(|r| word_count(&r.question)).sum();
    let answer_words: usize = records.iter().map(|r| word_count(&r.answers[0])).sum();
    Ok(DatasetStats {
        question_count: records.len(),
        mean_words_per_question: question_words as f64 / n,
        mean_words_per_answer: answer_words as f64 / n,
    })
}
