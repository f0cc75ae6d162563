//! Sparse BM25 retrieval: tokenizer, inverted index, top-k query, and
//! binary index persistence.
//!
//! The index sits behind the [`Retriever`] trait, which is the seam the
//! rest of the harness retrieves through; a dense engine could be plugged
//! in there without touching the pipeline. The tokenizer is deliberately
//! minimal: case fold, split on non-alphanumeric boundaries, no stemming,
//! no stop words.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datamodel::Passage;
use crate::error::{Error, Result};

/// BM25 constants: `k1` controls term-frequency saturation, `b` controls
/// document-length normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

/// Ranked retrieval output: `(passage id, score)` pairs, scores
/// non-increasing, ties broken by ascending passage id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub ranked: Vec<(String, f64)>,
}

impl RetrievalResult {
    pub fn top(&self) -> Option<&(String, f64)> {
        self.ranked.first()
    }

    pub fn is_empty(&self) -> bool {
        self.ranked.is_empty()
    }
}

/// The retrieval seam: a question in, a ranked passage list out.
pub trait Retriever {
    fn retrieve(&self, question: &str, k: usize) -> Result<RetrievalResult>;
    fn passage(&self, id: &str) -> Option<&Passage>;
}

/// Lowercases and splits on non-alphanumeric boundaries, dropping empty
/// terms. Deterministic; no stemming or stop words.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Immutable inverted index over a passage corpus.
///
/// All maps are ordered so the index is independent of insertion order
/// and serializes byte-stably. Postings lists are sorted by passage id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedCorpus {
    pub postings: BTreeMap<String, Vec<(String, u32)>>,
    pub doc_lengths: BTreeMap<String, u32>,
    pub doc_count: usize,
    pub avg_doc_length: f64,
    pub passages: BTreeMap<String, Passage>,
    pub params: Bm25Params,
}

impl IndexedCorpus {
    /// An index over nothing. Queries against it error; only useful as a
    /// persistence edge case.
    pub fn empty() -> Self {
        IndexedCorpus {
            postings: BTreeMap::new(),
            doc_lengths: BTreeMap::new(),
            doc_count: 0,
            avg_doc_length: 0.0,
            passages: BTreeMap::new(),
            params: Bm25Params::default(),
        }
    }

    fn term_frequency(&self, term: &str, passage_id: &str) -> u32 {
        self.postings
            .get(term)
            .and_then(|list| {
                list.binary_search_by(|(id, _)| id.as_str().cmp(passage_id))
                    .ok()
                    .map(|i| list[i].1)
            })
            .unwrap_or(0)
    }

    fn idf(&self, term: &str) -> f64 {
        let df = self.postings.get(term).map_or(0, Vec::len) as f64;
        let n = self.doc_count as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }
}

/// Builds the inverted index over a passage corpus.
///
/// The result is independent of input order. Duplicate ids and empty
/// corpora are errors.
pub fn build_index(passages: impl IntoIterator<Item = Passage>) -> Result<IndexedCorpus> {
    build_index_with(passages, Bm25Params::default())
}

pub fn build_index_with(
    passages: impl IntoIterator<Item = Passage>,
    params: Bm25Params,
) -> Result<IndexedCorpus> {
    let mut store: BTreeMap<String, Passage> = BTreeMap::new();
    for passage in passages {
        if store.contains_key(&passage.id) {
            return Err(Error::DuplicatePassage { id: passage.id });
        }
        store.insert(passage.id.clone(), passage);
    }
    if store.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let mut postings: BTreeMap<String, BTreeMap<String, u32>> = BTreeMap::new();
    let mut doc_lengths: BTreeMap<String, u32> = BTreeMap::new();
    for (id, passage) in &store {
        let terms = tokenize(&passage.body);
        doc_lengths.insert(id.clone(), terms.len() as u32);
        for term in terms {
            *postings
                .entry(term)
                .or_default()
                .entry(id.clone())
                .or_insert(0) += 1;
        }
    }

    let doc_count = store.len();
    let total_len: u64 = doc_lengths.values().map(|&l| l as u64).sum();
    Ok(IndexedCorpus {
        postings: postings
            .into_iter()
            .map(|(term, by_doc)| (term, by_doc.into_iter().collect()))
            .collect(),
        doc_lengths,
        doc_count,
        avg_doc_length: total_len as f64 / doc_count as f64,
        passages: store,
        params,
    })
}

/// BM25 score of one passage for a query term list.
///
/// Per term: `IDF(t) * tf*(k1+1) / (tf + k1*(1 - b + b*len/avglen))` with
/// `IDF(t) = ln((N - df + 0.5)/(df + 0.5) + 1)`. The +1 inside the log
/// keeps every contribution positive, so a zero score means no term
/// overlap. Terms absent from the passage contribute 0; a repeated query
/// term contributes once per occurrence.
pub fn bm25_score(index: &IndexedCorpus, query_terms: &[String], passage_id: &str) -> Result<f64> {
    let len = *index
        .doc_lengths
        .get(passage_id)
        .ok_or_else(|| Error::UnknownPassage {
            id: passage_id.to_string(),
        })? as f64;

    let Bm25Params { k1, b } = index.params;
    let mut score = 0.0;
    for term in query_terms {
        let tf = index.term_frequency(term, passage_id) as f64;
        if tf == 0.0 {
            continue;
        }
        let norm = tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / index.avg_doc_length));
        score += index.idf(term) * norm;
    }
    Ok(score)
}

/// The `k` highest-scoring passages for `tokenize(question)`.
///
/// Zero-scoring passages are excluded, so the result may be shorter than
/// `k` or empty. Ordering is deterministic: score descending, then
/// passage id ascending.
pub fn retrieve_top_k(index: &IndexedCorpus, question: &str, k: usize) -> Result<RetrievalResult> {
    if index.doc_count == 0 {
        return Err(Error::EmptyCorpus);
    }
    let query_terms = tokenize(question);

    // Accumulate per-passage contributions in query-term order so sums
    // are bit-identical to bm25_score's own accumulation.
    let Bm25Params { k1, b } = index.params;
    let mut scores: BTreeMap<&str, f64> = BTreeMap::new();
    for term in &query_terms {
        if let Some(list) = index.postings.get(term) {
            let idf = index.idf(term);
            for (id, tf) in list {
                let len = index.doc_lengths[id] as f64;
                let tf = *tf as f64;
                let norm =
                    tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / index.avg_doc_length));
                *scores.entry(id.as_str()).or_insert(0.0) += idf * norm;
            }
        }
    }

    let mut ranked: Vec<(String, f64)> = scores
        .into_iter()
        .filter(|&(_, score)| score > 0.0)
        .map(|(id, score)| (id.to_string(), score))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);
    Ok(RetrievalResult { ranked })
}

impl Retriever for IndexedCorpus {
    fn retrieve(&self, question: &str, k: usize) -> Result<RetrievalResult> {
        retrieve_top_k(self, question, k)
    }

    fn passage(&self, id: &str) -> Option<&Passage> {
        self.passages.get(id)
    }
}

const INDEX_MAGIC: &[u8; 4] = b"AQIX";
const INDEX_VERSION: u32 = 1;

/// Writes the index as a binary file: magic, version tag, length-prefixed
/// payload, SHA-256 checksum of the payload.
pub fn save_index(index: &IndexedCorpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let payload = serde_json::to_vec(index).expect("index serializes");
    let mut bytes = Vec::with_capacity(payload.len() + 48);
    bytes.extend_from_slice(INDEX_MAGIC);
    bytes.extend_from_slice(&INDEX_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&payload);
    bytes.extend_from_slice(&Sha256::digest(&payload));
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_index(path: impl AsRef<Path>) -> Result<IndexedCorpus> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = std::io::BufReader::new(file);

    let corrupt = || Error::IndexChecksum { path: path.into() };

    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic).map_err(|_| corrupt())?;
    if &magic != INDEX_MAGIC {
        return Err(corrupt());
    }

    let mut version = [0u8; 4];
    reader.read_exact(&mut version).map_err(|_| corrupt())?;
    let version = u32::from_le_bytes(version);
    if version != INDEX_VERSION {
        return Err(Error::IndexVersion {
            path: path.into(),
            expected: INDEX_VERSION,
            found: version,
        });
    }

    let mut len = [0u8; 8];
    reader.read_exact(&mut len).map_err(|_| corrupt())?;
    let len = u64::from_le_bytes(len) as usize;

    let mut payload = vec![0u8; len];
    reader.read_exact(&mut payload).map_err(|_| corrupt())?;
    let mut checksum = [0u8; 32];
    reader.read_exact(&mut checksum).map_err(|_| corrupt())?;
    if Sha256::digest(&payload).as_slice() != checksum {
        return Err(corrupt());
    }

    serde_json::from_slice(&payload).map_err(|_| corrupt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn passage(id: &str, body: &str) -> Passage {
        Passage {
            id: id.to_string(),
            title: None,
            body: body.to_string(),
        }
    }

    #[test]
    fn tokenize_folds_and_splits_on_boundaries() {
        assert_eq!(
            tokenize("The Eiffel Tower, 1889."),
            vec!["the", "eiffel", "tower", "1889"]
        );
        assert_eq!(tokenize(""), Vec::<String>::new());
        assert_eq!(
            tokenize("state-of-the-art"),
            vec!["state", "of", "the", "art"]
        );
    }

    #[test]
    fn single_passage_counts() {
        let index = build_index([passage("p1", "a b a")]).unwrap();
        assert_eq!(index.postings["a"], vec![("p1".to_string(), 2)]);
        assert_eq!(index.postings["b"], vec![("p1".to_string(), 1)]);
        assert_eq!(index.avg_doc_length, 3.0);
        assert_eq!(index.doc_count, 1);
    }

    #[test]
    fn duplicate_id_errors_naming_the_id() {
        let err = build_index([passage("p1", "a"), passage("p1", "b")]).unwrap_err();
        assert!(err.to_string().contains("p1"), "{err}");
    }

    #[test]
    fn zero_passages_error() {
        assert!(matches!(build_index([]), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn hand_evaluated_score() {
        // Single doc "a b a", query ["a"]: N=1, df=1, tf=2, len=avglen=3.
        // idf = ln(0.5/1.5 + 1) = ln(4/3); norm = 2*2.2/(2+1.2) = 1.375.
        let index = build_index([passage("p1", "a b a")]).unwrap();
        let score = bm25_score(&index, &["a".to_string()], "p1").unwrap();
        let expected = (4.0f64 / 3.0).ln() * 1.375;
        assert!((score - expected).abs() < 1e-12, "{score} vs {expected}");
    }

    #[test]
    fn absent_terms_contribute_zero() {
        let index = build_index([passage("p1", "a b a")]).unwrap();
        let score = bm25_score(&index, &["z".to_string(), "q".to_string()], "p1").unwrap();
        assert_eq!(score, 0.0);
    }

    #[test]
    fn unknown_passage_errors() {
        let index = build_index([passage("p1", "a")]).unwrap();
        assert!(matches!(
            bm25_score(&index, &["a".to_string()], "nope"),
            Err(Error::UnknownPassage { .. })
        ));
    }

    #[test]
    fn top_k_exact_single_match() {
        let index = build_index([passage("p1", "eiffel tower"), passage("p2", "trafalgar square")])
            .unwrap();
        let result = retrieve_top_k(&index, "where is the eiffel tower", 1).unwrap();
        assert_eq!(result.ranked.len(), 1);
        assert_eq!(result.ranked[0].0, "p1");
    }

    #[test]
    fn no_term_overlap_gives_empty_result() {
        let index = build_index([passage("p1", "alpha beta")]).unwrap();
        let result = retrieve_top_k(&index, "gamma delta", 3).unwrap();
        assert!(result.is_empty());
    }

    #[test]
    fn query_on_empty_index_errors() {
        let err = retrieve_top_k(&IndexedCorpus::empty(), "anything", 1).unwrap_err();
        assert!(matches!(err, Error::EmptyCorpus));
    }

    #[test]
    fn persistence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.idx");
        let index = build_index([passage("p1", "a b a"), passage("p2", "b c")]).unwrap();
        save_index(&index, &path).unwrap();
        let loaded = load_index(&path).unwrap();
        assert_eq!(index, loaded);
    }

    #[test]
    fn truncated_file_is_a_checksum_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.idx");
        let index = build_index([passage("p1", "a b a")]).unwrap();
        save_index(&index, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
        assert!(matches!(
            load_index(&path),
            Err(Error::IndexChecksum { .. })
        ));
    }

    #[test]
    fn version_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.idx");
        let index = build_index([passage("p1", "a")]).unwrap();
        save_index(&index, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_index(&path),
            Err(Error::IndexVersion { found: 99, .. })
        ));
    }

    #[test]
    fn empty_index_round_trips_and_still_rejects_queries() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.idx");
        save_index(&IndexedCorpus::empty(), &path).unwrap();
        let loaded = load_index(&path).unwrap();
        assert_eq!(loaded.doc_count, 0);
        assert!(matches!(
            retrieve_top_k(&loaded, "q", 1),
            Err(Error::EmptyCorpus)
        ));
    }
}
