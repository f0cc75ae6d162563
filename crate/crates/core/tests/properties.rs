//! Property tests for the algebraic invariants.

use proptest::prelude::*;

use aqa_core::databuilder::{build_adapt_dataset, MissingPassagePolicy, ProbeOutcome};
use aqa_core::datamodel::{compute_stats, load_qa_dataset, save_generic, QARecord, Schema};
use aqa_core::gateway::{detect_ret, render_context_prompt, render_parametric_prompt, PromptKind};
use aqa_core::normalize::{is_correct, normalize_answer, MatchMode, MatchPolicy};
use aqa_core::popularity::{sweep_threshold, PopThreshold};
use aqa_core::report::{accuracy, ret_usage};
use aqa_core::trace::{AnswerTrace, Configuration, Decision};

fn arb_policy() -> impl Strategy<Value = MatchPolicy> {
    (
        prop_oneof![
            Just(MatchMode::StrictExact),
            Just(MatchMode::NormalizedContainment)
        ],
        any::<bool>(),
        any::<bool>(),
        any::<bool>(),
    )
        .prop_map(|(mode, case_fold, strip_articles, strip_punctuation)| MatchPolicy {
            mode,
            case_fold,
            strip_articles,
            strip_punctuation,
        })
}

proptest! {
    #[test]
    fn normalize_is_idempotent(text in "\\PC{0,80}", policy in arb_policy()) {
        let once = normalize_answer(&text, &policy);
        let twice = normalize_answer(&once, &policy);
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn correctness_is_invariant_under_gold_permutation(
        generation in "\\PC{0,40}",
        mut golds in proptest::collection::vec("\\PC{1,20}", 1..6),
        policy in arb_policy(),
    ) {
        let before = is_correct(&generation, &golds, &policy);
        golds.reverse();
        prop_assert_eq!(is_correct(&generation, &golds, &policy), before);
    }

    #[test]
    fn strict_correctness_implies_containment_correctness(
        generation in "\\PC{0,40}",
        golds in proptest::collection::vec("\\PC{1,20}", 1..4),
    ) {
        let strict = MatchPolicy::strict();
        let containment = MatchPolicy::default();
        if is_correct(&generation, &golds, &strict) {
            prop_assert!(is_correct(&generation, &golds, &containment));
        }
    }

    #[test]
    fn metrics_are_bounded_and_permutation_invariant(
        outcomes in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..40),
    ) {
        let traces: Vec<AnswerTrace> = outcomes
            .iter()
            .enumerate()
            .map(|(i, (correct, retrieve))| AnswerTrace {
                question_id: format!("q{i}"),
                question: format!("q{i}?"),
                gold_answers: vec!["gold".to_string()],
                popularity: None,
                configuration: Configuration::Adaptive,
                decision: if *retrieve { Decision::Retrieve } else { Decision::Direct },
                first_generation: String::new(),
                retrieved: None,
                second_generation: None,
                final_answer: if *correct { "gold".into() } else { "nope".into() },
                correct: *correct,
                flags: Default::default(),
            })
            .collect();
        let policy = MatchPolicy::default();

        let acc = accuracy(&traces, &policy).unwrap();
        let usage = ret_usage(&traces).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc));
        prop_assert!((0.0..=1.0).contains(&usage));

        let mut reversed = traces.clone();
        reversed.reverse();
        prop_assert_eq!(accuracy(&reversed, &policy).unwrap(), acc);
        prop_assert_eq!(ret_usage(&reversed).unwrap(), usage);
    }

    #[test]
    fn generic_schema_round_trips(
        records in proptest::collection::vec(
            (
                "[a-z0-9]{1,8}",
                "\\PC{1,30}",
                proptest::collection::vec("\\PC{1,10}", 1..4),
                proptest::option::of("\\PC{1,30}"),
                proptest::option::of(any::<u64>()),
            ),
            1..20,
        )
    ) {
        let records: Vec<QARecord> = records
            .into_iter()
            .enumerate()
            .map(|(i, (id, question, answers, passage, popularity))| QARecord {
                id: format!("{id}-{i}"),
                // Guarantee the question survives the trim invariant.
                question: format!("q {question}"),
                answers,
                passage,
                popularity,
            })
            .collect();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("round.jsonl");
        save_generic(&records, &path).unwrap();
        let reloaded = load_qa_dataset(&path, Schema::Generic).unwrap();
        prop_assert_eq!(reloaded, records);
    }

    #[test]
    fn stats_count_equals_record_count(
        questions in proptest::collection::vec("\\PC{1,40}", 1..30),
    ) {
        let records: Vec<QARecord> = questions
            .iter()
            .enumerate()
            .map(|(i, q)| QARecord {
                id: format!("q{i}"),
                question: format!("q {q}"),
                answers: vec!["a".to_string()],
                passage: None,
                popularity: None,
            })
            .collect();
        let stats = compute_stats(&records).unwrap();
        prop_assert_eq!(stats.question_count, records.len());
        prop_assert!(stats.mean_words_per_question >= 0.0);
    }

    #[test]
    fn partition_identity_holds_for_any_probe_split(
        known_mask in proptest::collection::vec(any::<bool>(), 1..200),
    ) {
        let records: Vec<QARecord> = known_mask
            .iter()
            .enumerate()
            .map(|(i, _)| QARecord {
                id: format!("q{i}"),
                question: format!("question {i}?"),
                answers: vec![format!("answer{i}")],
                passage: Some(format!("passage mentioning answer{i}")),
                popularity: None,
            })
            .collect();
        let outcomes: Vec<ProbeOutcome> = known_mask
            .iter()
            .enumerate()
            .map(|(i, known)| ProbeOutcome {
                question_id: format!("q{i}"),
                model_answer: if *known { format!("answer{i}") } else { "??".into() },
                known: *known,
            })
            .collect();

        let built = build_adapt_dataset(&records, &outcomes, MissingPassagePolicy::Error).unwrap();
        let known = known_mask.iter().filter(|k| **k).count();
        let unknown = known_mask.len() - known;
        prop_assert_eq!(built.instances.len(), known + 2 * unknown);

        // Every <RET> parametric instance has a context sibling for the
        // same question, adjacent in the output, and vice versa.
        let ret_ids: Vec<&str> = built
            .instances
            .iter()
            .filter(|i| i.kind == PromptKind::Parametric && i.target == "<RET>")
            .map(|i| i.source_question_id.as_str())
            .collect();
        let ctx_ids: Vec<&str> = built
            .instances
            .iter()
            .filter(|i| i.kind == PromptKind::Context)
            .map(|i| i.source_question_id.as_str())
            .collect();
        prop_assert_eq!(&ret_ids, &ctx_ids);
        prop_assert_eq!(ret_ids.len(), unknown);

        // No context instance for a known question.
        for instance in &built.instances {
            if instance.kind == PromptKind::Context {
                let idx: usize = instance.source_question_id[1..].parse().unwrap();
                prop_assert!(!known_mask[idx]);
            }
        }
    }

    #[test]
    fn rendered_parametric_prompts_never_trigger_detection(question in "\\PC{1,60}") {
        prop_assume!(!question.trim().is_empty());
        let prompt = render_parametric_prompt(&question).unwrap();
        prop_assert!(!detect_ret(&prompt));
    }

    #[test]
    fn renders_are_injective_in_the_question(
        q1 in "\\PC{1,30}", q2 in "\\PC{1,30}", context in "\\PC{1,30}",
    ) {
        prop_assume!(!q1.trim().is_empty() && !q2.trim().is_empty());
        prop_assume!(!context.trim().is_empty());
        prop_assume!(q1 != q2);
        prop_assert_ne!(
            render_parametric_prompt(&q1).unwrap(),
            render_parametric_prompt(&q2).unwrap()
        );
        prop_assert_ne!(
            render_context_prompt(&q1, &context).unwrap(),
            render_context_prompt(&q2, &context).unwrap()
        );
    }

    #[test]
    fn sweep_ir_usage_is_monotone_and_tuned_beats_sentinels(
        rows in proptest::collection::vec((0u64..10_000, any::<bool>(), any::<bool>()), 1..40),
    ) {
        let dev: Vec<QARecord> = rows
            .iter()
            .enumerate()
            .map(|(i, (pop, _, _))| QARecord {
                id: format!("q{i}"),
                question: format!("question {i}?"),
                answers: vec!["x".to_string()],
                passage: None,
                popularity: Some(*pop),
            })
            .collect();
        let direct = rows
            .iter()
            .enumerate()
            .map(|(i, (_, d, _))| (format!("q{i}"), *d))
            .collect();
        let retrieved = rows
            .iter()
            .enumerate()
            .map(|(i, (_, _, r))| (format!("q{i}"), *r))
            .collect();

        let sweep = sweep_threshold(&dev, &direct, &retrieved).unwrap();

        // IR usage never decreases as the threshold grows.
        for pair in sweep.curve.windows(2) {
            prop_assert!(pair[0].ir_usage <= pair[1].ir_usage);
        }

        // The tuned threshold beats both fixed strategies on dev.
        let never = sweep.accuracy_at(PopThreshold::Finite(0)).unwrap();
        let always = sweep.accuracy_at(PopThreshold::Unbounded).unwrap();
        prop_assert!(sweep.best_accuracy >= never.max(always));
    }

    #[test]
    fn sweep_partition_is_scale_invariant(
        rows in proptest::collection::vec((0u64..1000, any::<bool>(), any::<bool>()), 1..30),
        scale in 2u64..50,
    ) {
        let mk_dev = |mult: u64| -> Vec<QARecord> {
            rows.iter()
                .enumerate()
                .map(|(i, (pop, _, _))| QARecord {
                    id: format!("q{i}"),
                    question: format!("question {i}?"),
                    answers: vec!["x".to_string()],
                    passage: None,
                    popularity: Some(pop * mult),
                })
                .collect()
        };
        let direct: std::collections::BTreeMap<String, bool> = rows
            .iter()
            .enumerate()
            .map(|(i, (_, d, _))| (format!("q{i}"), *d))
            .collect();
        let retrieved: std::collections::BTreeMap<String, bool> = rows
            .iter()
            .enumerate()
            .map(|(i, (_, _, r))| (format!("q{i}"), *r))
            .collect();

        let base = sweep_threshold(&mk_dev(1), &direct, &retrieved).unwrap();
        let scaled = sweep_threshold(&mk_dev(scale), &direct, &retrieved).unwrap();

        // The induced retrieve/direct partition of dev is identical.
        let partition = |sweep: &aqa_core::popularity::ThresholdSweep, dev: &[QARecord]| {
            dev.iter()
                .map(|r| sweep.best_threshold.retrieves(r.popularity.unwrap()))
                .collect::<Vec<bool>>()
        };
        prop_assert_eq!(
            partition(&base, &mk_dev(1)),
            partition(&scaled, &mk_dev(scale))
        );
        prop_assert_eq!(base.best_accuracy, scaled.best_accuracy);
        prop_assert_eq!(base.ir_usage_at_best, scaled.ir_usage_at_best);
    }
}
