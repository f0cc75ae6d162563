//! Aggregate metrics and report rendering.
//!
//! Traces flagged as failed are excluded from every denominator: a
//! transport failure must never be scored as a wrong answer. Reports echo
//! the policy they were computed under so they are self-describing.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datamodel::QARecord;
use crate::error::{Error, Result};
use crate::normalize::{is_correct, MatchPolicy};
use crate::trace::{AnswerTrace, Configuration, Decision};

/// Exact-match accuracy over the scored (non-failed) traces, re-judged
/// under the given policy.
pub fn accuracy(traces: &[AnswerTrace], policy: &MatchPolicy) -> Result<f64> {
    if traces.is_empty() {
        return Err(Error::EmptyInput);
    }
    let scored: Vec<&AnswerTrace> = traces.iter().filter(|t| !t.is_failed()).collect();
    if scored.is_empty() {
        return Err(Error::EmptyInput);
    }
    let correct = scored
        .iter()
        .filter(|t| is_correct(&t.final_answer, &t.gold_answers, policy))
        .count();
    Ok(correct as f64 / scored.len() as f64)
}

/// Fraction of scored traces whose decision was to retrieve.
pub fn ret_usage(traces: &[AnswerTrace]) -> Result<f64> {
    if traces.is_empty() {
        return Err(Error::EmptyInput);
    }
    let scored: Vec<&AnswerTrace> = traces.iter().filter(|t| !t.is_failed()).collect();
    if scored.is_empty() {
        return Err(Error::EmptyInput);
    }
    let retrieving = scored.iter().filter(|t| t.decided_retrieve()).count();
    Ok(retrieving as f64 / scored.len() as f64)
}

/// One histogram bucket: `[lower, upper)`, with `upper = None` meaning
/// unbounded. Fractions are absent for empty buckets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBucket {
    pub lower: u64,
    pub upper: Option<u64>,
    pub count: usize,
    pub ret_fraction: Option<f64>,
    pub accuracy: Option<f64>,
}

/// Retrieval-decision fractions per popularity interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopularityHistogram {
    pub buckets: Vec<HistogramBucket>,
    /// Traces whose record had no popularity score; excluded from buckets.
    pub missing_popularity: usize,
}

/// Interior bucket boundaries: `k` edges make `k+1` contiguous buckets
/// `[0, e1), [e1, e2), ..., [ek, unbounded)`, so every popularity value
/// lands somewhere. Edges must be strictly increasing.
pub fn popularity_histogram(
    traces: &[AnswerTrace],
    records: &[QARecord],
    edges: &[u64],
) -> Result<PopularityHistogram> {
    let popularity: BTreeMap<&str, Option<u64>> = records
        .iter()
        .map(|r| (r.id.as_str(), r.popularity))
        .collect();
    let resolved: Vec<(Option<u64>, &AnswerTrace)> = traces
        .iter()
        .map(|t| {
            let pop = popularity
                .get(t.question_id.as_str())
                .copied()
                .unwrap_or(t.popularity);
            (pop, t)
        })
        .collect();
    histogram_over(&resolved, edges, None)
}

/// Same histogram computed from the popularity carried in the traces
/// themselves; what `report` uses when no dataset file is at hand.
pub fn popularity_histogram_from_traces(
    traces: &[AnswerTrace],
    edges: &[u64],
) -> Result<PopularityHistogram> {
    let resolved: Vec<(Option<u64>, &AnswerTrace)> =
        traces.iter().map(|t| (t.popularity, t)).collect();
    histogram_over(&resolved, edges, None)
}

/// When `policy` is given, bucket accuracy re-judges each final answer;
/// otherwise the trace's recorded correctness is trusted.
fn histogram_over(
    traces: &[(Option<u64>, &AnswerTrace)],
    edges: &[u64],
    policy: Option<&MatchPolicy>,
) -> Result<PopularityHistogram> {
    if !edges.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Config(
            "histogram edges must be strictly increasing".into(),
        ));
    }

    struct Cell {
        count: usize,
        retrieving: usize,
        correct: usize,
    }
    let mut cells: Vec<Cell> = (0..edges.len() + 1)
        .map(|_| Cell {
            count: 0,
            retrieving: 0,
            correct: 0,
        })
        .collect();

    let mut missing = 0;
    for (pop, trace) in traces {
        if trace.is_failed() {
            continue;
        }
        let Some(pop) = pop else {
            missing += 1;
            continue;
        };
        let idx = edges.partition_point(|&e| e <= *pop);
        let cell = &mut cells[idx];
        cell.count += 1;
        if trace.decided_retrieve() {
            cell.retrieving += 1;
        }
        let correct = match policy {
            Some(policy) => is_correct(&trace.final_answer, &trace.gold_answers, policy),
            None => trace.correct,
        };
        if correct {
            cell.correct += 1;
        }
    }

    let buckets = cells
        .iter()
        .enumerate()
        .map(|(i, cell)| HistogramBucket {
            lower: if i == 0 { 0 } else { edges[i - 1] },
            upper: edges.get(i).copied(),
            count: cell.count,
            ret_fraction: (cell.count > 0).then(|| cell.retrieving as f64 / cell.count as f64),
            accuracy: (cell.count > 0).then(|| cell.correct as f64 / cell.count as f64),
        })
        .collect();

    Ok(PopularityHistogram {
        buckets,
        missing_popularity: missing,
    })
}

/// Default histogram edges: powers of 10 spanning the observed
/// popularity range. Long-tailed page-view counts look flat on a linear
/// scale, so log bucketing is the default.
pub fn default_histogram_edges(pops: impl IntoIterator<Item = u64>) -> Vec<u64> {
    let max = pops.into_iter().max().unwrap_or(0);
    let mut edges = Vec::new();
    let mut edge = 10u64;
    while edge <= max {
        edges.push(edge);
        match edge.checked_mul(10) {
            Some(next) => edge = next,
            None => break,
        }
    }
    edges
}

/// Per-configuration aggregate metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub configuration: Configuration,
    pub total: usize,
    pub scored: usize,
    pub failed: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
    pub retrieve_decisions: usize,
    pub ret_usage: Option<f64>,
    pub empty_retrievals: usize,
    pub retried: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub popularity: Option<PopularityHistogram>,
}

/// Observed accuracy of each decision subset of an adaptive run. Unlike
/// the full decision analysis it needs no counterfactual re-prompts, so
/// it can be recomputed from a trace file alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedDecisionSplit {
    pub retrieve_count: usize,
    pub direct_count: usize,
    pub retrieve_accuracy: Option<f64>,
    pub direct_accuracy: Option<f64>,
}

/// Aggregate evaluation report: per-configuration metrics under one
/// policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: MatchPolicy,
    pub total_traces: usize,
    pub configurations: Vec<ConfigSummary>,
}

impl EvalReport {
    /// Builds the report by re-judging every trace under `policy`. This
    /// is the single aggregation path: `run` and `eval` both go through
    /// it, so a report recomputed from a trace file matches the one
    /// produced at run time.
    pub fn from_traces(traces: &[AnswerTrace], policy: &MatchPolicy) -> Result<EvalReport> {
        if traces.is_empty() {
            return Err(Error::EmptyInput);
        }

        let mut groups: BTreeMap<Configuration, Vec<&AnswerTrace>> = BTreeMap::new();
        for trace in traces {
            groups.entry(trace.configuration).or_default().push(trace);
        }

        let configurations = groups
            .into_iter()
            .map(|(configuration, group)| summarize(configuration, &group, policy))
            .collect();

        Ok(EvalReport {
            policy: *policy,
            total_traces: traces.len(),
            configurations,
        })
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "policy: {} (case_fold={}, strip_articles={}, strip_punctuation={})\n",
            match self.policy.mode {
                crate::normalize::MatchMode::StrictExact => "strict_exact",
                crate::normalize::MatchMode::NormalizedContainment => "normalized_containment",
            },
            self.policy.case_fold,
            self.policy.strip_articles,
            self.policy.strip_punctuation
        ));
        out.push_str(&format!(
            "{:<14} {:>8} {:>8} {:>8} {:>10} {:>10}\n",
            "configuration", "total", "scored", "failed", "accuracy", "ir_usage"
        ));
        for c in &self.configurations {
            out.push_str(&format!(
                "{:<14} {:>8} {:>8} {:>8} {:>10} {:>10}\n",
                c.configuration.to_string(),
                c.total,
                c.scored,
                c.failed,
                fmt_pct(c.accuracy),
                fmt_pct(c.ret_usage),
            ));
        }
        out
    }
}

fn summarize(
    configuration: Configuration,
    group: &[&AnswerTrace],
    policy: &MatchPolicy,
) -> ConfigSummary {
    let scored: Vec<&&AnswerTrace> = group.iter().filter(|t| !t.is_failed()).collect();
    let correct = scored
        .iter()
        .filter(|t| is_correct(&t.final_answer, &t.gold_answers, policy))
        .count();
    let retrieve_decisions = scored.iter().filter(|t| t.decided_retrieve()).count();
    let empty_retrievals = group
        .iter()
        .filter(|t| t.flags.contains(&crate::trace::TraceFlag::EmptyRetrieval))
        .count();
    let retried = group
        .iter()
        .filter(|t| t.flags.contains(&crate::trace::TraceFlag::BackendRetried))
        .count();

    let popularity = if scored.iter().any(|t| t.popularity.is_some()) {
        let edges = default_histogram_edges(scored.iter().filter_map(|t| t.popularity));
        let resolved: Vec<(Option<u64>, &AnswerTrace)> =
            group.iter().map(|t| (t.popularity, *t)).collect();
        histogram_over(&resolved, &edges, Some(policy)).ok()
    } else {
        None
    };

    ConfigSummary {
        configuration,
        total: group.len(),
        scored: scored.len(),
        failed: group.len() - scored.len(),
        correct,
        accuracy: (!scored.is_empty()).then(|| correct as f64 / scored.len() as f64),
        retrieve_decisions,
        ret_usage: (!scored.is_empty()).then(|| retrieve_decisions as f64 / scored.len() as f64),
        empty_retrievals,
        retried,
        popularity,
    }
}

/// Splits adaptive traces by their observed decision and reports the
/// accuracy of each subset.
pub fn observed_decision_split(
    traces: &[AnswerTrace],
    policy: &MatchPolicy,
) -> ObservedDecisionSplit {
    let scored: Vec<&AnswerTrace> = traces.iter().filter(|t| !t.is_failed()).collect();
    let (retrieve, direct): (Vec<&AnswerTrace>, Vec<&AnswerTrace>) = scored
        .into_iter()
        .partition(|t| t.decision == Decision::Retrieve);

    let acc = |subset: &[&AnswerTrace]| {
        (!subset.is_empty()).then(|| {
            subset
                .iter()
                .filter(|t| is_correct(&t.final_answer, &t.gold_answers, policy))
                .count() as f64
                / subset.len() as f64
        })
    };

    ObservedDecisionSplit {
        retrieve_count: retrieve.len(),
        direct_count: direct.len(),
        retrieve_accuracy: acc(&retrieve),
        direct_accuracy: acc(&direct),
    }
}

pub(crate) fn fmt_pct(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{:.2}%", v * 100.0),
        None => "-".to_string(),
    }
}
