//! Multi-turn legal search agent environment.
//!
//! A hierarchical corpus of court judgments is exposed to a policy through
//! three tools (keyword search, semantic search, read by ID). Rollouts are
//! scored with banded rewards and group-relative advantages, and evaluated
//! with optional forced-answer turn restrictions.

pub mod baseline;
pub mod corpus;
pub mod eval;
pub mod gateway;
pub mod policies;
pub mod protocol;
pub mod retrieval;
pub mod reward;
pub mod rollout;
pub mod tools;

/// The small corpus and dataset shipped for offline runs and tests.
pub mod fixtures {
    use std::sync::Arc;

    use crate::corpus::Corpus;
    use crate::gateway::StubEmbedder;
    use crate::retrieval::Bm25Params;
    use crate::reward::QAItem;
    use crate::rollout::Environment;

    pub const CORPUS_XML: &str = include_str!("../fixtures/corpus.xml");
    pub const DATASET_JSONL: &str = include_str!("../fixtures/dataset.jsonl");

    pub fn corpus() -> Corpus {
        Corpus::from_xml(CORPUS_XML.as_bytes()).expect("fixture corpus parses")
    }

    pub fn dataset() -> Vec<QAItem> {
        crate::eval::load_dataset(DATASET_JSONL.as_bytes(), &corpus()).expect("fixture dataset loads")
    }

    /// Fixture corpus with default BM25 parameters and the stub embedder.
    pub fn environment() -> Environment {
        Environment::build(corpus(), Arc::new(StubEmbedder::default()), Bm25Params::default())
            .expect("fixture indexes build")
    }
}
