//! Training-set construction.
//!
//! The builder probes the base model zero-shot on every question to
//! discover what its parametric memory already covers, then emits one
//! parametric instance per known question and a `<RET>`-target parametric
//! instance plus a context instance per unknown question. The exported
//! file is what a fine-tuning run consumes; fine-tuning itself is out of
//! scope here.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::datamodel::QARecord;
use crate::error::{Error, Result};
use crate::exec;
use crate::gateway::{
    render_context_prompt, render_parametric_prompt, Gateway, GenerationRequest, PromptKind,
    RET_TOKEN,
};
use crate::normalize::{is_correct, MatchPolicy};

/// Which prompt the zero-shot probe sends. The bare question is the
/// default; the parametric template is available as a switch and the
/// manifest records which one produced the partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProbePromptMode {
    #[default]
    Bare,
    Parametric,
}

/// What to do with an unknown record that has no gold passage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MissingPassagePolicy {
    /// Drop the record from the training set (with a warning); the
    /// manifest counts how many were dropped.
    #[default]
    Skip,
    Error,
}

/// Result of probing one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub question_id: String,
    pub model_answer: String,
    /// Correctness of the probe answer under the configured policy.
    pub known: bool,
}

/// One `(prompt, target)` pair of the training file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingInstance {
    pub kind: PromptKind,
    pub prompt: String,
    #[serde(rename = "output")]
    pub target: String,
    #[serde(rename = "question_id")]
    pub source_question_id: String,
}

/// Build metadata written as the first line of the training file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub policy: MatchPolicy,
    pub probe_prompt: ProbePromptMode,
    pub question_count: usize,
    pub known_count: usize,
    pub unknown_count: usize,
    pub skipped_missing_passage: usize,
    pub instance_count: usize,
    pub parametric_count: usize,
    pub context_count: usize,
    /// `unknown_count / question_count`: the fraction of questions whose
    /// parametric instance targets `<RET>`.
    pub unknown_fraction: f64,
}

/// On-disk probe cache, one `{question_id, answer}` line per probed
/// question. Entries are appended as probes complete so an interrupted
/// build resumes without re-querying the backend.
pub struct ProbeCache {
    path: PathBuf,
    answers: BTreeMap<String, String>,
}

impl ProbeCache {
    /// Opens (or creates) the cache file and loads existing entries.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let mut answers = BTreeMap::new();
        if path.exists() {
            let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
            for (idx, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheLine = serde_json::from_str(&line)
                    .map_err(|e| Error::malformed(&path, idx + 1, e.to_string()))?;
                answers.insert(entry.question_id, entry.answer);
            }
        }
        Ok(ProbeCache { path, answers })
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    question_id: String,
    answer: String,
}

/// Zero-shot probe of the backend on every record, order-aligned with the
/// input. A backend failure that survives retries is an error naming the
/// question; it is never recorded as "unknown".
pub fn probe_model(
    records: &[QARecord],
    gateway: &Gateway,
    policy: &MatchPolicy,
    mode: ProbePromptMode,
    workers: usize,
) -> Result<Vec<ProbeOutcome>> {
    probe_with_cache(records, gateway, policy, mode, workers, None)
}

/// Like [`probe_model`], but answers already in the cache are reused and
/// fresh answers are appended to it as they arrive.
pub fn probe_model_cached(
    records: &[QARecord],
    gateway: &Gateway,
    policy: &MatchPolicy,
    mode: ProbePromptMode,
    workers: usize,
    cache: &mut ProbeCache,
) -> Result<Vec<ProbeOutcome>> {
    probe_with_cache(records, gateway, policy, mode, workers, Some(cache))
}

fn probe_with_cache(
    records: &[QARecord],
    gateway: &Gateway,
    policy: &MatchPolicy,
    mode: ProbePromptMode,
    workers: usize,
    cache: Option<&mut ProbeCache>,
) -> Result<Vec<ProbeOutcome>> {
    let (cached, writer) = match &cache {
        Some(cache) => {
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&cache.path)
                .map_err(|e| Error::io(&cache.path, e))?;
            (
                cache.answers.clone(),
                Some((Mutex::new(file), cache.path.clone())),
            )
        }
        None => (BTreeMap::new(), None),
    };

    let outcomes = exec::try_map(records, workers, |record| {
        let answer = match cached.get(&record.id) {
            Some(answer) => answer.clone(),
            None => {
                let prompt = match mode {
                    ProbePromptMode::Bare => record.question.clone(),
                    ProbePromptMode::Parametric => render_parametric_prompt(&record.question)?,
                };
                let generation = gateway
                    .generate(&GenerationRequest::new(prompt))
                    .map_err(|e| attach_question(e, &record.id))?;
                if let Some((file, path)) = &writer {
                    let line = serde_json::to_string(&CacheLine {
                        question_id: record.id.clone(),
                        answer: generation.text.clone(),
                    })
                    .expect("cache line serializes");
                    let mut file = file.lock().expect("cache writer lock");
                    writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
                    file.flush().map_err(|e| Error::io(path, e))?;
                }
                generation.text
            }
        };
        Ok(ProbeOutcome {
            question_id: record.id.clone(),
            known: is_correct(&answer, &record.answers, policy),
            model_answer: answer,
        })
    })?;

    if let Some(cache) = cache {
        for outcome in &outcomes {
            cache
                .answers
                .insert(outcome.question_id.clone(), outcome.model_answer.clone());
        }
    }
    Ok(outcomes)
}

fn attach_question(err: Error, question_id: &str) -> Error {
    match err {
        Error::Backend { message, .. } => Error::Backend {
            question_id: Some(question_id.to_string()),
            message,
        },
        other => other,
    }
}

/// Output of [`build_adapt_dataset`]: the instances plus the partition
/// counts the manifest needs.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltDataset {
    pub instances: Vec<TrainingInstance>,
    pub known_count: usize,
    pub unknown_count: usize,
    pub skipped_missing_passage: usize,
}

impl BuiltDataset {
    pub fn manifest(&self, policy: &MatchPolicy, probe_prompt: ProbePromptMode) -> TrainingManifest {
        let parametric = self
            .instances
            .iter()
            .filter(|i| i.kind == PromptKind::Parametric)
            .count();
        let question_count = self.known_count + self.unknown_count;
        TrainingManifest {
            policy: *policy,
            probe_prompt,
            question_count,
            known_count: self.known_count,
            unknown_count: self.unknown_count,
            skipped_missing_passage: self.skipped_missing_passage,
            instance_count: self.instances.len(),
            parametric_count: parametric,
            context_count: self.instances.len() - parametric,
            unknown_fraction: if question_count == 0 {
                0.0
            } else {
                self.unknown_count as f64 / question_count as f64
            },
        }
    }
}

/// Turns the probe partition into training instances.
///
/// Known record: one parametric instance targeting the first gold
/// answer. Unknown record: a parametric instance targeting `<RET>`
/// followed by a context instance embedding the gold passage. Output
/// order is record order with per-record instances adjacent.
pub fn build_adapt_dataset(
    records: &[QARecord],
    outcomes: &[ProbeOutcome],
    missing_passage: MissingPassagePolicy,
) -> Result<BuiltDataset> {
    if records.len() != outcomes.len() {
        return Err(Error::Config(format!(
            "{} records but {} probe outcomes",
            records.len(),
            outcomes.len()
        )));
    }

    let mut instances = Vec::new();
    let mut known_count = 0;
    let mut unknown_count = 0;
    let mut skipped = 0;

    for (record, outcome) in records.iter().zip(outcomes) {
        if record.id != outcome.question_id {
            return Err(Error::Config(format!(
                "probe outcomes misaligned: record {:?} paired with outcome {:?}",
                record.id, outcome.question_id
            )));
        }

        let parametric_prompt = render_parametric_prompt(&record.question)?;
        if outcome.known {
            known_count += 1;
            instances.push(TrainingInstance {
                kind: PromptKind::Parametric,
                prompt: parametric_prompt,
                target: record.answers[0].clone(),
                source_question_id: record.id.clone(),
            });
        } else {
            unknown_count += 1;
            let Some(passage) = record.passage.as_deref() else {
                match missing_passage {
                    MissingPassagePolicy::Error => {
                        return Err(Error::MissingPassage {
                            id: record.id.clone(),
                        })
                    }
                    MissingPassagePolicy::Skip => {
                        eprintln!(
                            "warning: skipping unknown record {:?}: no gold passage",
                            record.id
                        );
                        skipped += 1;
                        continue;
                    }
                }
            };
            instances.push(TrainingInstance {
                kind: PromptKind::Parametric,
                prompt: parametric_prompt,
                target: RET_TOKEN.to_string(),
                source_question_id: record.id.clone(),
            });
            instances.push(TrainingInstance {
                kind: PromptKind::Context,
                prompt: render_context_prompt(&record.question, passage)?,
                target: record.answers[0].clone(),
                source_question_id: record.id.clone(),
            });
        }
    }

    Ok(BuiltDataset {
        instances,
        known_count,
        unknown_count,
        skipped_missing_passage: skipped,
    })
}

#[derive(Serialize, Deserialize)]
struct ManifestLine {
    manifest: TrainingManifest,
}

/// Writes the training file: the manifest line first, then one
/// `{kind, prompt, output, question_id}` line per instance. Byte-stable
/// for identical input.
pub fn export_training_file(
    instances: &[TrainingInstance],
    manifest: &TrainingManifest,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    serde_json::to_writer(
        &mut out,
        &ManifestLine {
            manifest: manifest.clone(),
        },
    )
    .expect("manifest serializes");
    out.push(b'\n');
    for instance in instances {
        serde_json::to_writer(&mut out, instance).expect("instance serializes");
        out.push(b'\n');
    }
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Reads a training file back; the exact inverse of
/// [`export_training_file`].
pub fn load_training_file(
    path: impl AsRef<Path>,
) -> Result<(TrainingManifest, Vec<TrainingInstance>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();

    let manifest_line = match lines.next() {
        Some(line) => line.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::EmptyDataset { path: path.into() }),
    };
    let manifest: ManifestLine = serde_json::from_str(&manifest_line)
        .map_err(|e| Error::malformed(path, 1, format!("missing manifest line: {e}")))?;

    let mut instances = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let instance: TrainingInstance = serde_json::from_str(&line)
            .map_err(|e| Error::malformed(path, idx + 2, e.to_string()))?;
        instances.push(instance);
    }
    if instances.is_empty() {
        eprintln!("warning: {} contains a manifest but no instances", path.display());
    }
    Ok((manifest.manifest, instances))
}
