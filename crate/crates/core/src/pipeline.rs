//! Inference configurations and the decision analysis.
//!
//! The adaptive path is the two-stage protocol: prompt with the
//! parametric template, and if the model answers `<RET>`, retrieve the
//! top passage and prompt again with the context template. The never and
//! always paths are the fixed baselines. All paths produce
//! [`AnswerTrace`]s and are pure functions of their inputs when the
//! backend is deterministic.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::datamodel::QARecord;
use crate::error::{Error, Result};
use crate::exec;
use crate::gateway::{
    detect_ret, render_context_prompt_budgeted, render_direct_prompt, render_parametric_prompt,
    strip_ret_prefix, Gateway, GenerationRequest,
};
use crate::normalize::{is_correct, MatchPolicy};
use crate::popularity::{answer_popularity, PopThreshold};
use crate::report::{fmt_pct, EvalReport};
use crate::retriever::Retriever;
use crate::trace::{AnswerTrace, Configuration, Decision, RetrievedPassage, TraceFlag};

/// What to do when a single trace fails after retries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FailurePolicy {
    /// Stop the run and surface the error.
    #[default]
    Abort,
    /// Keep going; the trace is flagged failed and excluded from scoring.
    Skip,
}

/// Knobs shared by every run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Passages to retrieve; only the top one enters the prompt.
    pub k: usize,
    pub max_new_tokens: u32,
    /// Whitespace-token budget for retrieved context.
    pub context_budget: usize,
    pub failure_policy: FailurePolicy,
    /// Worker pool width; 0 means the default. Bounds in-flight
    /// generation requests.
    pub workers: usize,
    /// Popularity threshold; required by the popularity configuration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<PopThreshold>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            k: 1,
            max_new_tokens: 64,
            context_budget: 256,
            failure_policy: FailurePolicy::Abort,
            workers: 0,
            threshold: None,
        }
    }
}

fn request(prompt: String, opts: &RunOptions) -> GenerationRequest {
    GenerationRequest::new(prompt).with_max_new_tokens(opts.max_new_tokens)
}

fn base_trace(record: &QARecord, configuration: Configuration) -> AnswerTrace {
    AnswerTrace {
        question_id: record.id.clone(),
        question: record.question.clone(),
        gold_answers: record.answers.clone(),
        popularity: record.popularity,
        configuration,
        decision: Decision::Direct,
        first_generation: String::new(),
        retrieved: None,
        second_generation: None,
        final_answer: String::new(),
        correct: false,
        flags: BTreeSet::new(),
    }
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

/// Two-stage adaptive inference for one record.
///
/// When the model asks for retrieval but nothing in the corpus overlaps
/// the question, no vacuous context prompt is sent; the first generation
/// minus the `<RET>` prefix stands as the answer and the trace is
/// flagged.
pub fn answer_adaptive<R: Retriever + ?Sized>(
    record: &QARecord,
    gateway: &Gateway,
    retriever: &R,
    policy: &MatchPolicy,
    opts: &RunOptions,
) -> Result<AnswerTrace> {
    let mut trace = base_trace(record, Configuration::Adaptive);

    let prompt = render_parametric_prompt(&record.question)?;
    let first = gateway
        .generate(&request(prompt, opts))
        .map_err(|e| attach_question(e, &record.id))?;
    if first.retries > 0 {
        trace.flags.insert(TraceFlag::BackendRetried);
    }
    trace.first_generation = first.text.clone();

    if !detect_ret(&first.text) {
        trace.decision = Decision::Direct;
        trace.final_answer = first.text;
        trace.correct = is_correct(&trace.final_answer, &record.answers, policy);
        return Ok(trace);
    }

    trace.decision = Decision::Retrieve;
    let result = retriever.retrieve(&record.question, opts.k)?;
    let Some((passage_id, score)) = result.top().cloned() else {
        trace.flags.insert(TraceFlag::EmptyRetrieval);
        trace.final_answer = strip_ret_prefix(&first.text).to_string();
        trace.correct = is_correct(&trace.final_answer, &record.answers, policy);
        return Ok(trace);
    };

    let passage = retriever
        .passage(&passage_id)
        .ok_or_else(|| Error::UnknownPassage {
            id: passage_id.clone(),
        })?;
    let (context_prompt, truncated) =
        render_context_prompt_budgeted(&record.question, &passage.body, opts.context_budget)?;
    if truncated {
        trace.flags.insert(TraceFlag::TruncatedContext);
    }

    let second = gateway
        .generate(&request(context_prompt, opts))
        .map_err(|e| attach_question(e, &record.id))?;
    if second.retries > 0 {
        trace.flags.insert(TraceFlag::BackendRetried);
    }
    if detect_ret(&second.text) {
        // The protocol has no third stage; the output stands verbatim.
        trace.flags.insert(TraceFlag::SecondStageRet);
    }

    trace.retrieved = Some(RetrievedPassage { passage_id, score });
    trace.final_answer = second.text.clone();
    trace.second_generation = Some(second.text);
    trace.correct = is_correct(&trace.final_answer, &record.answers, policy);
    Ok(trace)
}

/// Never-retrieve baseline: one direct prompt, no `<RET>` clause offered.
pub fn answer_never(
    record: &QARecord,
    gateway: &Gateway,
    policy: &MatchPolicy,
    opts: &RunOptions,
) -> Result<AnswerTrace> {
    let mut trace = base_trace(record, Configuration::Never);

    let prompt = render_direct_prompt(&record.question)?;
    let generation = gateway
        .generate(&request(prompt, opts))
        .map_err(|e| attach_question(e, &record.id))?;
    if generation.retries > 0 {
        trace.flags.insert(TraceFlag::BackendRetried);
    }

    trace.decision = Decision::Direct;
    trace.first_generation = generation.text.clone();
    trace.final_answer = generation.text;
    trace.correct = is_correct(&trace.final_answer, &record.answers, policy);
    Ok(trace)
}

/// Always-retrieve baseline: retrieve first, then the context prompt.
/// When retrieval comes up empty the path falls back to the direct
/// prompt and the trace records a direct decision plus the flag.
pub fn answer_always<R: Retriever + ?Sized>(
    record: &QARecord,
    gateway: &Gateway,
    retriever: &R,
    policy: &MatchPolicy,
    opts: &RunOptions,
) -> Result<AnswerTrace> {
    let mut trace = base_trace(record, Configuration::Always);

    let result = retriever.retrieve(&record.question, opts.k)?;
    let Some((passage_id, score)) = result.top().cloned() else {
        trace.flags.insert(TraceFlag::EmptyRetrieval);
        let prompt = render_direct_prompt(&record.question)?;
        let generation = gateway
            .generate(&request(prompt, opts))
            .map_err(|e| attach_question(e, &record.id))?;
        if generation.retries > 0 {
            trace.flags.insert(TraceFlag::BackendRetried);
        }
        trace.decision = Decision::Direct;
        trace.first_generation = generation.text.clone();
        trace.final_answer = generation.text;
        trace.correct = is_correct(&trace.final_answer, &record.answers, policy);
        return Ok(trace);
    };

    let passage = retriever
        .passage(&passage_id)
        .ok_or_else(|| Error::UnknownPassage {
            id: passage_id.clone(),
        })?;
    let (context_prompt, truncated) =
        render_context_prompt_budgeted(&record.question, &passage.body, opts.context_budget)?;
    if truncated {
        trace.flags.insert(TraceFlag::TruncatedContext);
    }

    let generation = gateway
        .generate(&request(context_prompt, opts))
        .map_err(|e| attach_question(e, &record.id))?;
    if generation.retries > 0 {
        trace.flags.insert(TraceFlag::BackendRetried);
    }
    if detect_ret(&generation.text) {
        trace.flags.insert(TraceFlag::SecondStageRet);
    }

    trace.decision = Decision::Retrieve;
    trace.retrieved = Some(RetrievedPassage { passage_id, score });
    trace.final_answer = generation.text.clone();
    trace.second_generation = Some(generation.text);
    trace.correct = is_correct(&trace.final_answer, &record.answers, policy);
    Ok(trace)
}

/// The traces and the report of one benchmark run.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRun {
    pub traces: Vec<AnswerTrace>,
    pub report: EvalReport,
}

fn failed_trace(record: &QARecord, configuration: Configuration) -> AnswerTrace {
    let mut trace = base_trace(record, configuration);
    trace.flags.insert(TraceFlag::Failed);
    trace
}

/// Runs one configuration over a record list, one trace per record in
/// input order, and aggregates the report.
///
/// `retriever` may be `None` only for the never configuration, which by
/// definition makes no retrieval calls.
pub fn run_benchmark<R: Retriever + Sync + ?Sized>(
    records: &[QARecord],
    configuration: Configuration,
    gateway: &Gateway,
    retriever: Option<&R>,
    policy: &MatchPolicy,
    opts: &RunOptions,
) -> Result<BenchmarkRun> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }

    // Configuration problems abort up front; only per-record failures
    // reach the failure policy.
    if configuration != Configuration::Never && retriever.is_none() {
        return Err(Error::Config(format!(
            "the {configuration} configuration requires an index"
        )));
    }
    if configuration == Configuration::Popularity && opts.threshold.is_none() {
        return Err(Error::Config(
            "the popularity configuration requires a threshold".into(),
        ));
    }

    let answer_one = |record: &QARecord| -> Result<AnswerTrace> {
        match configuration {
            Configuration::Adaptive => {
                answer_adaptive(record, gateway, retriever.expect("checked"), policy, opts)
            }
            Configuration::Never => answer_never(record, gateway, policy, opts),
            Configuration::Always => {
                answer_always(record, gateway, retriever.expect("checked"), policy, opts)
            }
            Configuration::Popularity => answer_popularity(
                record,
                opts.threshold.expect("checked"),
                gateway,
                retriever.expect("checked"),
                policy,
                opts,
            ),
        }
    };

    let traces = match opts.failure_policy {
        FailurePolicy::Abort => exec::try_map(records, opts.workers, answer_one)?,
        FailurePolicy::Skip => exec::map(records, opts.workers, |record| {
            answer_one(record).unwrap_or_else(|err| {
                eprintln!("warning: question {:?} failed: {err}", record.id);
                failed_trace(record, configuration)
            })
        }),
    };

    let report = EvalReport::from_traces(&traces, policy)?;
    Ok(BenchmarkRun { traces, report })
}

/// The 2x2 cross-tabulation of the adaptive model's retrieval decision
/// against answering with and without context.
///
/// Cells are absent when their subset is empty. The counterfactual cells
/// come from re-prompting: forced-direct reuses the never prompt,
/// forced-retrieve reuses the always path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTable {
    pub total: usize,
    pub ret_count: usize,
    pub noret_count: usize,
    pub ret_fraction: f64,
    pub ret_with_context_acc: Option<f64>,
    pub ret_without_context_acc: Option<f64>,
    pub noret_with_context_acc: Option<f64>,
    pub noret_without_context_acc: Option<f64>,
}

impl DecisionTable {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<12} {:>18} {:>18} {:>18} {:>18}\n",
            "RET usage", "RET acc w/ ctx", "RET acc w/o ctx", "no-RET acc w/ ctx", "no-RET acc w/o ctx"
        ));
        out.push_str(&format!(
            "{:<12} {:>18} {:>18} {:>18} {:>18}\n",
            fmt_pct(Some(self.ret_fraction)),
            fmt_pct(self.ret_with_context_acc),
            fmt_pct(self.ret_without_context_acc),
            fmt_pct(self.noret_with_context_acc),
            fmt_pct(self.noret_without_context_acc),
        ));
        out
    }
}

/// Backend handles for the decision analysis. The counterfactual cells
/// can use separately trained never/always models; by default all three
/// share one backend.
#[derive(Clone)]
pub struct DecisionBackends {
    pub adaptive: Gateway,
    pub forced_direct: Gateway,
    pub forced_retrieve: Gateway,
}

impl DecisionBackends {
    pub fn single(gateway: Gateway) -> Self {
        DecisionBackends {
            adaptive: gateway.clone(),
            forced_direct: gateway.clone(),
            forced_retrieve: gateway,
        }
    }
}

/// Partitions records by the adaptive model's decision and fills the
/// four accuracy cells, re-prompting each subset for its counterfactual.
pub fn decision_analysis<R: Retriever + Sync + ?Sized>(
    records: &[QARecord],
    backends: &DecisionBackends,
    retriever: &R,
    policy: &MatchPolicy,
    opts: &RunOptions,
) -> Result<DecisionTable> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }

    let run = run_benchmark(
        records,
        Configuration::Adaptive,
        &backends.adaptive,
        Some(retriever),
        policy,
        opts,
    )?;

    let mut ret_subset: Vec<&QARecord> = Vec::new();
    let mut noret_subset: Vec<&QARecord> = Vec::new();
    let mut ret_observed = 0usize;
    let mut noret_observed = 0usize;
    for (record, trace) in records.iter().zip(&run.traces) {
        if trace.is_failed() {
            continue;
        }
        match trace.decision {
            Decision::Retrieve => {
                ret_subset.push(record);
                if trace.correct {
                    ret_observed += 1;
                }
            }
            Decision::Direct => {
                noret_subset.push(record);
                if trace.correct {
                    noret_observed += 1;
                }
            }
        }
    }

    let scored = ret_subset.len() + noret_subset.len();
    if scored == 0 {
        return Err(Error::EmptyInput);
    }

    let mean_correct = |traces: &[AnswerTrace]| {
        let scored: Vec<&AnswerTrace> = traces.iter().filter(|t| !t.is_failed()).collect();
        (!scored.is_empty()).then(|| {
            scored.iter().filter(|t| t.correct).count() as f64 / scored.len() as f64
        })
    };

    // Counterfactual cells: forced-direct over the RET subset,
    // forced-retrieve over the no-RET subset.
    let ret_without_context_acc = if ret_subset.is_empty() {
        None
    } else {
        let traces = exec::try_map(&ret_subset, opts.workers, |record| {
            answer_never(record, &backends.forced_direct, policy, opts)
        })?;
        mean_correct(&traces)
    };
    let noret_with_context_acc = if noret_subset.is_empty() {
        None
    } else {
        let traces = exec::try_map(&noret_subset, opts.workers, |record| {
            answer_always(record, &backends.forced_retrieve, retriever, policy, opts)
        })?;
        mean_correct(&traces)
    };

    Ok(DecisionTable {
        total: scored,
        ret_count: ret_subset.len(),
        noret_count: noret_subset.len(),
        ret_fraction: ret_subset.len() as f64 / scored as f64,
        ret_with_context_acc: (!ret_subset.is_empty())
            .then(|| ret_observed as f64 / ret_subset.len() as f64),
        ret_without_context_acc,
        noret_with_context_acc,
        noret_without_context_acc: (!noret_subset.is_empty())
            .then(|| noret_observed as f64 / noret_subset.len() as f64),
    })
}
