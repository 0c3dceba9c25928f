//! Keyword (BM25) and exact cosine-similarity indexes over leaf sections.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Section, SectionId};
use crate::gateway::{Embedder, GatewayError};
use crate::tools::{make_snippet, DEFAULT_SNIPPET_WIDTH};

/// Dimension of the hashed test embedder.
pub const DEFAULT_EMBED_DIM: usize = 64;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("corpus has no leaf section with indexable tokens")]
    EmptyCorpus,
    #[error("vector dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero vector for {0}")]
    ZeroVector(String),
    #[error("embedding failed for {context}: {source}")]
    Embedding {
        context: String,
        #[source]
        source: GatewayError,
    },
    #[error("cannot embed text without tokens")]
    NoTokens,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub section_id: SectionId,
    pub score: f64,
    pub snippet: String,
}

/// Score descending, then section ID ascending.
pub fn rank_order(a: &(SectionId, f64), b: &(SectionId, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// Robertson IDF with the +1 inside the logarithm, never negative.
pub fn bm25_idf(n_docs: usize, df: usize) -> f64 {
    let (n, df) = (n_docs as f64, df as f64);
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

#[derive(Debug, Clone)]
pub struct KeywordIndex {
    postings: HashMap<String, Vec<(SectionId, u32)>>,
    doc_lengths: BTreeMap<SectionId, usize>,
    avg_doc_length: f64,
    params: Bm25Params,
    leaves: BTreeMap<SectionId, Section>,
}

impl KeywordIndex {
    /// Indexes every leaf section's heading and text.
    pub fn build(corpus: &Corpus, params: Bm25Params) -> Result<Self, RetrievalError> {
        let mut postings: HashMap<String, Vec<(SectionId, u32)>> = HashMap::new();
        let mut doc_lengths = BTreeMap::new();
        let mut leaves = BTreeMap::new();
        let mut total = 0usize;

        for leaf in corpus.leaves() {
            let tokens = tokenize(&leaf.searchable_text());
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in &tokens {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push((leaf.id.clone(), count));
            }
            total += tokens.len();
            doc_lengths.insert(leaf.id.clone(), tokens.len());
            leaves.insert(leaf.id.clone(), leaf.clone());
        }
        if total == 0 {
            return Err(RetrievalError::EmptyCorpus);
        }
        let avg_doc_length = total as f64 / doc_lengths.len() as f64;
        Ok(Self {
            postings,
            doc_lengths,
            avg_doc_length,
            params,
            leaves,
        })
    }

    pub fn n_docs(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn vocabulary_size(&self) -> usize {
        self.postings.len()
    }

    pub fn doc_length(&self, id: &SectionId) -> Option<usize> {
        self.doc_lengths.get(id).copied()
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn indexed_ids(&self) -> impl Iterator<Item = &SectionId> {
        self.doc_lengths.keys()
    }

    /// Raw `(id, score)` pairs for every section with a positive score, ranked.
    pub fn score(&self, query: &str) -> Vec<(SectionId, f64)> {
        let Bm25Params { k1, b } = self.params;
        let mut scores: HashMap<&SectionId, f64> = HashMap::new();
        for term in tokenize(query) {
            let Some(list) = self.postings.get(&term) else {
                continue;
            };
            let idf = bm25_idf(self.n_docs(), list.len());
            for (id, tf) in list {
                let tf = f64::from(*tf);
                let dl = self.doc_lengths[id] as f64;
                let norm = k1 * (1.0 - b + b * dl / self.avg_doc_length);
                *scores.entry(id).or_default() += idf * tf * (k1 + 1.0) / (tf + norm);
            }
        }
        let mut ranked: Vec<(SectionId, f64)> = scores
            .into_iter()
            .filter(|(_, s)| *s > 0.0)
            .map(|(id, s)| (id.clone(), s))
            .collect();
        ranked.sort_by(rank_order);
        ranked
    }

    pub fn search(&self, query: &str, k: usize) -> Vec<SearchHit> {
        self.search_with_width(query, k, DEFAULT_SNIPPET_WIDTH)
    }

    pub fn search_with_width(&self, query: &str, k: usize, snippet_width: usize) -> Vec<SearchHit> {
        let query_tokens = tokenize(query);
        self.score(query)
            .into_iter()
            .take(k)
            .map(|(id, score)| {
                let snippet = make_snippet(&self.leaves[&id], &query_tokens, snippet_width);
                SearchHit {
                    section_id: id,
                    score,
                    snippet,
                }
            })
            .collect()
    }
}

pub fn build_keyword_index(corpus: &Corpus, params: Bm25Params) -> Result<KeywordIndex, RetrievalError> {
    KeywordIndex::build(corpus, params)
}

pub fn keyword_search(index: &KeywordIndex, query: &str, k: usize) -> Vec<SearchHit> {
    index.search(query, k)
}

/// FNV-1a, stable across platforms and runs.
pub fn stable_hash64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn normalize(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let norm = l2_norm(&v);
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Some(v)
}

/// Hashed bag-of-tokens embedding. Each token's hash picks a slot
/// (`hash mod d`) and a sign (even hash adds, odd subtracts).
pub fn embed_deterministic(text: &str, dim: usize) -> Result<Vec<f64>, RetrievalError> {
    assert!(dim >= 8, "embedding dimension must be at least 8");
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(RetrievalError::NoTokens);
    }
    let mut v = vec![0.0; dim];
    for t in &tokens {
        let h = stable_hash64(t.as_bytes());
        let slot = (h % dim as u64) as usize;
        v[slot] += if h.is_multiple_of(2) { 1.0 } else { -1.0 };
    }
    normalize(v).ok_or_else(|| RetrievalError::ZeroVector(format!("text {text:?}")))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone)]
pub struct VectorIndex {
    vectors: BTreeMap<SectionId, Vec<f64>>,
    dimension: usize,
    leaves: BTreeMap<SectionId, Section>,
}

impl VectorIndex {
    /// Embeds every leaf section (heading + text) and stores unit vectors.
    pub fn build(corpus: &Corpus, embedder: &dyn Embedder) -> Result<Self, RetrievalError> {
        let mut vectors = BTreeMap::new();
        let mut leaves = BTreeMap::new();
        let mut dimension = None;
        for leaf in corpus.leaves() {
            let raw = embedder
                .embed(&leaf.searchable_text())
                .map_err(|source| RetrievalError::Embedding {
                    context: format!("section {}", leaf.id),
                    source,
                })?;
            let expected = *dimension.get_or_insert(raw.len());
            if raw.len() != expected {
                return Err(RetrievalError::DimensionMismatch {
                    expected,
                    got: raw.len(),
                });
            }
            let unit = normalize(raw).ok_or_else(|| RetrievalError::ZeroVector(leaf.id.to_string()))?;
            vectors.insert(leaf.id.clone(), unit);
            leaves.insert(leaf.id.clone(), leaf.clone());
        }
        let dimension = dimension.ok_or(RetrievalError::EmptyCorpus)?;
        if dimension == 0 {
            return Err(RetrievalError::ZeroVector("empty embedding".into()));
        }
        Ok(Self {
            vectors,
            dimension,
            leaves,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vector(&self, id: &SectionId) -> Option<&[f64]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    pub fn ids(&self) -> impl Iterator<Item = &SectionId> {
        self.vectors.keys()
    }

    /// Exhaustive cosine ranking of every stored vector.
    pub fn score(&self, query: &[f64]) -> Result<Vec<(SectionId, f64)>, RetrievalError> {
        if query.len() != self.dimension {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dimension,
                got: query.len(),
            });
        }
        let qn = l2_norm(query);
        if qn == 0.0 {
            return Err(RetrievalError::ZeroVector("query".into()));
        }
        let mut ranked: Vec<(SectionId, f64)> = self
            .vectors
            .iter()
            .map(|(id, v)| (id.clone(), dot(query, v) / qn))
            .collect();
        ranked.sort_by(rank_order);
        Ok(ranked)
    }

    pub fn search(&self, query: &[f64], k: usize) -> Result<Vec<SearchHit>, RetrievalError> {
        self.search_with_snippets(query, k, &[], DEFAULT_SNIPPET_WIDTH)
    }

    pub fn search_with_snippets(
        &self,
        query: &[f64],
        k: usize,
        query_tokens: &[String],
        snippet_width: usize,
    ) -> Result<Vec<SearchHit>, RetrievalError> {
        Ok(self
            .score(query)?
            .into_iter()
            .take(k)
            .map(|(id, score)| SearchHit {
                snippet: make_snippet(&self.leaves[&id], query_tokens, snippet_width),
                section_id: id,
                score,
            })
            .collect())
    }
}

pub fn build_vector_index(corpus: &Corpus, embedder: &dyn Embedder) -> Result<VectorIndex, RetrievalError> {
    VectorIndex::build(corpus, embedder)
}

pub fn vector_search(index: &VectorIndex, query: &[f64], k: usize) -> Result<Vec<SearchHit>, RetrievalError> {
    index.search(query, k)
}
