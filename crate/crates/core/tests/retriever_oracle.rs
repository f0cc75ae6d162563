//! Brute-force oracle checks for the retriever.
//!
//! The oracle recomputes everything from the raw passages with its own
//! tokenizer and its own formula evaluation; it never touches the
//! inverted index. Agreement is exact: contributions are summed in the
//! same query-term order, so scores must match to 1e-12 and the ranking
//! must match including the tie rule.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use aqa_core::datamodel::Passage;
use aqa_core::retriever::{
    build_index, bm25_score, retrieve_top_k, save_index, load_index, Bm25Params, IndexedCorpus,
};

fn passage(id: &str, body: &str) -> Passage {
    Passage {
        id: id.to_string(),
        title: None,
        body: body.to_string(),
    }
}

/// Oracle-side tokenizer, written separately from the production one.
fn oracle_tokenize(text: &str) -> Vec<String> {
    let mut terms = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            for lower in c.to_lowercase() {
                current.push(lower);
            }
        } else if !current.is_empty() {
            terms.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        terms.push(current);
    }
    terms
}

/// Recomputes every passage's score for a query directly from raw text,
/// then full-sorts with the tie rule: score descending, id ascending.
fn oracle_rank(passages: &[Passage], query: &str, params: Bm25Params) -> Vec<(String, f64)> {
    let query_terms = oracle_tokenize(query);
    let n = passages.len() as f64;

    let token_lists: BTreeMap<&str, Vec<String>> = passages
        .iter()
        .map(|p| (p.id.as_str(), oracle_tokenize(&p.body)))
        .collect();
    let avg_len =
        token_lists.values().map(|t| t.len() as f64).sum::<f64>() / passages.len() as f64;

    let df = |term: &str| -> f64 {
        token_lists
            .values()
            .filter(|tokens| tokens.iter().any(|t| t == term))
            .count() as f64
    };

    let mut ranked: Vec<(String, f64)> = Vec::new();
    for p in passages {
        let tokens = &token_lists[p.id.as_str()];
        let len = tokens.len() as f64;
        let mut score = 0.0;
        for term in &query_terms {
            let tf = tokens.iter().filter(|t| *t == term).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let idf = ((n - df(term) + 0.5) / (df(term) + 0.5) + 1.0).ln();
            let norm = tf * (params.k1 + 1.0)
                / (tf + params.k1 * (1.0 - params.b + params.b * len / avg_len));
            score += idf * norm;
        }
        if score > 0.0 {
            ranked.push((p.id.clone(), score));
        }
    }
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}

fn assert_rankings_match(actual: &[(String, f64)], expected: &[(String, f64)], context: &str) {
    assert_eq!(
        actual.len(),
        expected.len(),
        "{context}: result lengths differ"
    );
    for ((a_id, a_score), (e_id, e_score)) in actual.iter().zip(expected) {
        assert_eq!(a_id, e_id, "{context}: order differs");
        assert!(
            (a_score - e_score).abs() <= 1e-12,
            "{context}: score {a_score} vs {e_score} for {a_id}"
        );
    }
}

fn random_corpus(rng: &mut ChaCha8Rng, max_passages: usize) -> Vec<Passage> {
    let vocab: Vec<String> = (0..30).map(|i| format!("w{i}")).collect();
    let count = rng.gen_range(1..=max_passages);
    (0..count)
        .map(|i| {
            let len = rng.gen_range(3..=40);
            let body: Vec<&str> = (0..len)
                .map(|_| vocab[rng.gen_range(0..vocab.len())].as_str())
                .collect();
            passage(&format!("p{i:03}"), &body.join(" "))
        })
        .collect()
}

fn random_query(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(1..=8);
    (0..len)
        .map(|_| {
            if rng.gen_bool(0.1) {
                // Occasionally a term the corpus cannot contain.
                format!("zz{}", rng.gen_range(0..5))
            } else {
                format!("w{}", rng.gen_range(0..35))
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

#[test]
fn randomized_corpora_match_the_oracle_for_all_k() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let params = Bm25Params::default();

    for corpus_no in 0..100 {
        let passages = random_corpus(&mut rng, 50);
        let index = build_index(passages.clone()).unwrap();
        for query_no in 0..20 {
            let query = random_query(&mut rng);
            let expected = oracle_rank(&passages, &query, params);
            for k in [1usize, 3, passages.len()] {
                let actual = retrieve_top_k(&index, &query, k).unwrap();
                let top: Vec<(String, f64)> =
                    expected.iter().take(k).cloned().collect();
                assert_rankings_match(
                    &actual.ranked,
                    &top,
                    &format!("corpus {corpus_no}, query {query_no} ({query:?}), k={k}"),
                );
            }
        }
    }
}

#[test]
fn per_passage_scores_match_the_oracle_on_a_toy_corpus() {
    let passages = vec![
        passage("a", "the cat sat on the mat"),
        passage("b", "a dog chased the cat"),
        passage("c", "mat weaving is an ancient craft"),
        passage("d", "dogs and cats and dogs"),
        passage("e", "entirely unrelated text here"),
    ];
    let index = build_index(passages.clone()).unwrap();
    let params = Bm25Params::default();

    for query in ["the cat", "dogs", "mat craft", "cat cat", "nothing shared"] {
        let oracle = oracle_rank(&passages, query, params);
        let by_id: BTreeMap<&str, f64> = oracle.iter().map(|(id, s)| (id.as_str(), *s)).collect();
        for p in &passages {
            let terms = oracle_tokenize(query);
            let score = bm25_score(&index, &terms, &p.id).unwrap();
            let expected = by_id.get(p.id.as_str()).copied().unwrap_or(0.0);
            assert!(
                (score - expected).abs() <= 1e-12,
                "query {query:?}, passage {}: {score} vs {expected}",
                p.id
            );
        }
    }
}

#[test]
fn index_statistics_match_an_independent_recount() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let passages = (0..1000)
        .map(|i| {
            let len = rng.gen_range(1..=30);
            let body: Vec<String> = (0..len)
                .map(|_| format!("v{}", rng.gen_range(0..200)))
                .collect();
            passage(&format!("p{i:04}"), &body.join(" "))
        })
        .collect::<Vec<_>>();
    let index = build_index(passages.clone()).unwrap();

    assert_eq!(index.doc_count, 1000);
    assert_eq!(index.doc_lengths.len(), 1000);
    assert_eq!(index.passages.len(), 1000);

    // Recount postings from the raw passages.
    let mut postings: BTreeMap<String, BTreeMap<String, u32>> = BTreeMap::new();
    let mut total_len = 0u64;
    for p in &passages {
        let tokens = oracle_tokenize(&p.body);
        total_len += tokens.len() as u64;
        assert_eq!(index.doc_lengths[&p.id], tokens.len() as u32);
        for t in tokens {
            *postings.entry(t).or_default().entry(p.id.clone()).or_insert(0) += 1;
        }
    }
    assert!((index.avg_doc_length - total_len as f64 / 1000.0).abs() < 1e-12);

    assert_eq!(index.postings.len(), postings.len());
    for (term, by_doc) in postings {
        let expected: Vec<(String, u32)> = by_doc.into_iter().collect();
        assert_eq!(index.postings[&term], expected, "postings for {term:?}");
        // Sorted by passage id.
        let list = &index.postings[&term];
        assert!(list.windows(2).all(|w| w[0].0 < w[1].0));
    }
}

#[test]
fn rebuild_under_permuted_input_order_is_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut passages = random_corpus(&mut rng, 40);
    let index = build_index(passages.clone()).unwrap();

    for _ in 0..5 {
        passages.shuffle(&mut rng);
        let rebuilt = build_index(passages.clone()).unwrap();
        assert_eq!(index, rebuilt);
        let query = random_query(&mut rng);
        assert_eq!(
            retrieve_top_k(&index, &query, 10).unwrap(),
            retrieve_top_k(&rebuilt, &query, 10).unwrap()
        );
    }
}

#[test]
fn irrelevant_append_keeps_retrieval_membership_and_oracle_agreement() {
    // N and the average length shift with any append, so absolute scores
    // move; what holds is that the zero-overlap passage never enters the
    // result and the full ranking still matches the oracle.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let params = Bm25Params::default();
    for _ in 0..20 {
        let mut passages = random_corpus(&mut rng, 20);
        let query = random_query(&mut rng);
        let index = build_index(passages.clone()).unwrap();
        let before = retrieve_top_k(&index, &query, passages.len()).unwrap();

        passages.push(passage("zzz-irrelevant", "qqq rrr sss ttt uuu"));
        let index = build_index(passages.clone()).unwrap();
        let after = retrieve_top_k(&index, &query, passages.len()).unwrap();

        let ids = |r: &aqa_core::retriever::RetrievalResult| {
            let mut v: Vec<String> = r.ranked.iter().map(|(id, _)| id.clone()).collect();
            v.sort();
            v
        };
        assert_eq!(ids(&before), ids(&after));
        assert!(!after.ranked.iter().any(|(id, _)| id == "zzz-irrelevant"));
        assert_rankings_match(&after.ranked, &oracle_rank(&passages, &query, params), "post-append");
    }
}

#[test]
fn full_term_coverage_outscores_a_missing_term_at_equal_length() {
    let passages = vec![
        passage("full", "alpha beta gamma delta"),
        passage("partial", "alpha beta gamma filler"),
        passage("noise", "one two three four"),
    ];
    let index = build_index(passages).unwrap();
    let result = retrieve_top_k(&index, "alpha beta gamma delta", 3).unwrap();
    assert_eq!(result.ranked[0].0, "full");
    assert!(result.ranked[0].1 > result.ranked[1].1);
    assert_eq!(result.ranked[1].0, "partial");
}

#[test]
fn saved_and_loaded_index_retrieves_identically() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let passages = random_corpus(&mut rng, 30);
    let index = build_index(passages).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("probe.idx");
    save_index(&index, &path).unwrap();
    let loaded: IndexedCorpus = load_index(&path).unwrap();

    for _ in 0..10 {
        let query = random_query(&mut rng);
        assert_eq!(
            retrieve_top_k(&index, &query, 5).unwrap(),
            retrieve_top_k(&loaded, &query, 5).unwrap(),
            "query {query:?}"
        );
    }
}
