//! Popularity-threshold baseline.
//!
//! Questions whose subject popularity (page views) falls strictly below
//! a threshold take the retrieval path; the rest answer directly. The
//! threshold is tuned by an exhaustive sweep over the popularity values
//! observed in a dev split: dev accuracy is a step function that only
//! changes at observed values, so the sweep is exact.

use std::collections::BTreeMap;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::datamodel::QARecord;
use crate::error::{Error, Result};
use crate::gateway::Gateway;
use crate::normalize::MatchPolicy;
use crate::pipeline::{answer_always, answer_never, run_benchmark, RunOptions};
use crate::report::fmt_pct;
use crate::retriever::Retriever;
use crate::trace::{AnswerTrace, Configuration};

/// A popularity cutoff. `Finite(t)` retrieves when popularity < t;
/// `Unbounded` always retrieves (the +infinity sentinel).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PopThreshold {
    Finite(u64),
    Unbounded,
}

impl PopThreshold {
    /// Strict comparison: a popularity equal to the threshold answers
    /// directly.
    pub fn retrieves(&self, popularity: u64) -> bool {
        match self {
            PopThreshold::Finite(t) => popularity < *t,
            PopThreshold::Unbounded => true,
        }
    }
}

impl std::fmt::Display for PopThreshold {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PopThreshold::Finite(t) => write!(f, "{t}"),
            PopThreshold::Unbounded => write!(f, "unbounded"),
        }
    }
}

impl Serialize for PopThreshold {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            PopThreshold::Finite(t) => serializer.serialize_u64(*t),
            PopThreshold::Unbounded => serializer.serialize_str("unbounded"),
        }
    }
}

impl<'de> Deserialize<'de> for PopThreshold {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(deserializer)?;
        match value {
            serde_json::Value::Number(n) => n
                .as_u64()
                .map(PopThreshold::Finite)
                .ok_or_else(|| D::Error::custom("threshold must be a non-negative integer")),
            serde_json::Value::String(s) if s == "unbounded" => Ok(PopThreshold::Unbounded),
            other => Err(D::Error::custom(format!(
                "threshold must be a number or \"unbounded\", got {other}"
            ))),
        }
    }
}

impl std::str::FromStr for PopThreshold {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "unbounded" {
            return Ok(PopThreshold::Unbounded);
        }
        s.parse::<u64>()
            .map(PopThreshold::Finite)
            .map_err(|e| format!("invalid threshold {s:?}: {e}"))
    }
}

/// Deterministic shuffle-then-split. The dev set takes the first
/// `floor(ratio * n)` records of the shuffled order; dev and test are
/// disjoint and exhaustive.
pub fn split_dev_test(
    records: &[QARecord],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<QARecord>, Vec<QARecord>)> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!(
            "split ratio must be in (0, 1), got {ratio}"
        )));
    }
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled: Vec<QARecord> = records.to_vec();
    shuffled.shuffle(&mut rng);
    let dev_size = (ratio * records.len() as f64).floor() as usize;
    let test = shuffled.split_off(dev_size);
    Ok((shuffled, test))
}

/// One point of the sweep curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: PopThreshold,
    pub dev_accuracy: f64,
    /// Fraction of dev questions retrieving under this threshold.
    pub ir_usage: f64,
}

/// Result of the threshold sweep over a dev split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSweep {
    /// Sorted candidate thresholds: 0, every observed popularity value,
    /// and the unbounded sentinel.
    pub candidates: Vec<PopThreshold>,
    /// Dev accuracy and IR usage at each candidate, aligned with
    /// `candidates`.
    pub curve: Vec<SweepPoint>,
    pub best_threshold: PopThreshold,
    pub best_accuracy: f64,
    pub ir_usage_at_best: f64,
    pub dev_size: usize,
}

impl ThresholdSweep {
    pub fn accuracy_at(&self, threshold: PopThreshold) -> Option<f64> {
        self.curve
            .iter()
            .find(|p| p.threshold == threshold)
            .map(|p| p.dev_accuracy)
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<16} {:>12} {:>12}\n",
            "threshold", "dev_acc", "ir_usage"
        ));
        for point in &self.curve {
            out.push_str(&format!(
                "{:<16} {:>12} {:>12}\n",
                point.threshold.to_string(),
                fmt_pct(Some(point.dev_accuracy)),
                fmt_pct(Some(point.ir_usage)),
            ));
        }
        out.push_str(&format!(
            "best: {} (dev accuracy {}, IR usage {})\n",
            self.best_threshold,
            fmt_pct(Some(self.best_accuracy)),
            fmt_pct(Some(self.ir_usage_at_best)),
        ));
        out
    }
}

/// Exhaustive sweep over candidate thresholds.
///
/// The correctness maps are precomputed by running the never and always
/// paths once per dev record, so the sweep multiplies no backend calls.
/// At threshold `t`, a record counts as correct if `popularity < t`
/// selects its retrieved outcome and otherwise its direct outcome. Ties
/// in dev accuracy break toward the larger threshold.
pub fn sweep_threshold(
    dev: &[QARecord],
    direct_correct: &BTreeMap<String, bool>,
    retrieved_correct: &BTreeMap<String, bool>,
) -> Result<ThresholdSweep> {
    if dev.is_empty() {
        return Err(Error::EmptyInput);
    }

    let mut rows = Vec::with_capacity(dev.len());
    for record in dev {
        let popularity = record.popularity.ok_or_else(|| Error::MissingPopularity {
            id: record.id.clone(),
        })?;
        let direct = *direct_correct
            .get(&record.id)
            .ok_or_else(|| Error::MissingCorrectness {
                id: record.id.clone(),
            })?;
        let retrieved =
            *retrieved_correct
                .get(&record.id)
                .ok_or_else(|| Error::MissingCorrectness {
                    id: record.id.clone(),
                })?;
        rows.push((popularity, direct, retrieved));
    }

    let mut candidates: Vec<PopThreshold> = vec![PopThreshold::Finite(0)];
    candidates.extend(rows.iter().map(|(p, _, _)| PopThreshold::Finite(*p)));
    candidates.push(PopThreshold::Unbounded);
    candidates.sort();
    candidates.dedup();

    let curve: Vec<SweepPoint> = candidates
        .iter()
        .map(|&threshold| {
            let mut correct = 0;
            let mut retrieving = 0;
            for (pop, direct, retrieved) in &rows {
                if threshold.retrieves(*pop) {
                    retrieving += 1;
                    correct += *retrieved as usize;
                } else {
                    correct += *direct as usize;
                }
            }
            SweepPoint {
                threshold,
                dev_accuracy: correct as f64 / rows.len() as f64,
                ir_usage: retrieving as f64 / rows.len() as f64,
            }
        })
        .collect();

    // Argmax with ties toward the larger threshold: scanning in ascending
    // order, a tie replaces the incumbent.
    let best = curve
        .iter()
        .fold(None, |best: Option<SweepPoint>, &point| match best {
            Some(b) if point.dev_accuracy < b.dev_accuracy => Some(b),
            _ => Some(point),
        })
        .expect("candidates are non-empty");

    Ok(ThresholdSweep {
        candidates,
        curve,
        best_threshold: best.threshold,
        best_accuracy: best.dev_accuracy,
        ir_usage_at_best: best.ir_usage,
        dev_size: rows.len(),
    })
}

/// Threshold-gated inference for one record: below the threshold the
/// always path runs, otherwise the never path. The trace is tagged with
/// the popularity configuration either way.
pub fn answer_popularity<R: Retriever + ?Sized>(
    record: &QARecord,
    threshold: PopThreshold,
    gateway: &Gateway,
    retriever: &R,
    policy: &MatchPolicy,
    opts: &RunOptions,
) -> Result<AnswerTrace> {
    let popularity = record.popularity.ok_or_else(|| Error::MissingPopularity {
        id: record.id.clone(),
    })?;
    let mut trace = if threshold.retrieves(popularity) {
        answer_always(record, gateway, retriever, policy, opts)?
    } else {
        answer_never(record, gateway, policy, opts)?
    };
    trace.configuration = Configuration::Popularity;
    Ok(trace)
}

/// Runs the never and always paths once over the dev split and returns
/// the two id-keyed correctness maps the sweep consumes.
pub fn correctness_maps<R: Retriever + Sync + ?Sized>(
    dev: &[QARecord],
    gateway: &Gateway,
    retriever: &R,
    policy: &MatchPolicy,
    opts: &RunOptions,
) -> Result<(BTreeMap<String, bool>, BTreeMap<String, bool>)> {
    let never = run_benchmark(dev, Configuration::Never, gateway, None::<&R>, policy, opts)?;
    let always = run_benchmark(
        dev,
        Configuration::Always,
        gateway,
        Some(retriever),
        policy,
        opts,
    )?;
    let to_map = |traces: &[AnswerTrace]| {
        traces
            .iter()
            .map(|t| (t.question_id.clone(), t.correct))
            .collect()
    };
    Ok((to_map(&never.traces), to_map(&always.traces)))
}
