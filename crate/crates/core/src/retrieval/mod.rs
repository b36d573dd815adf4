//! Corpus ingestion and top-k passage retrieval.

mod bm25;
mod corpus;
mod dense;

use std::cmp::Ordering;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use bm25::{build_bm25_index, Bm25Index, Bm25Params};
pub use corpus::{ingest_corpus, CorpusStore, Document};
pub use dense::{build_dense_index, DenseIndex, Shard, DEFAULT_SHARDS};

use crate::embed::{EmbedError, Embedder};

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("line {line}: duplicate document id {id:?}")]
    DuplicateId { id: String, line: usize },

    #[error("embedding document {id:?} failed: {source}")]
    DocumentEmbedding {
        id: String,
        #[source]
        source: EmbedError,
    },

    #[error("embedding query failed: {0}")]
    QueryEmbedding(#[source] EmbedError),

    #[error("document {id:?} embeds to the zero vector")]
    ZeroVector { id: String },

    #[error("expected dimension {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("index file {path}: {message}")]
    IndexFile { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub id: String,
    pub score: f64,
}

/// Orders by descending score, then ascending id.
pub(crate) fn rank_order(a: &ScoredDoc, b: &ScoredDoc) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id))
}

/// Top-k result. Scores are non-increasing; equal scores are ordered by
/// ascending document id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedDocs {
    pub entries: Vec<ScoredDoc>,
    pub k: usize,
}

impl RankedDocs {
    pub(crate) fn from_unsorted(mut entries: Vec<ScoredDoc>, k: usize) -> Self {
        entries.sort_by(rank_order);
        entries.truncate(k);
        Self { entries, k }
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Anything that can turn a query into ranked passages from a corpus.
pub trait Retriever: Send + Sync {
    fn retrieve(&self, query: &str, k: usize) -> Result<RankedDocs, RetrievalError>;

    fn document(&self, id: &str) -> Option<&Document>;
}

pub struct DenseRetriever {
    store: Arc<CorpusStore>,
    index: DenseIndex,
    embedder: Arc<dyn Embedder>,
}

impl DenseRetriever {
    pub fn new(store: Arc<CorpusStore>, index: DenseIndex, embedder: Arc<dyn Embedder>) -> Self {
        Self {
            store,
            index,
            embedder,
        }
    }
}

impl Retriever for DenseRetriever {
    fn retrieve(&self, query: &str, k: usize) -> Result<RankedDocs, RetrievalError> {
        self.index.search(query, self.embedder.as_ref(), k)
    }

    fn document(&self, id: &str) -> Option<&Document> {
        self.store.get(id)
    }
}

pub struct Bm25Retriever {
    store: Arc<CorpusStore>,
    index: Bm25Index,
}

impl Bm25Retriever {
    pub fn new(store: Arc<CorpusStore>) -> Self {
        let index = build_bm25_index(&store);
        Self { store, index }
    }
}

impl Retriever for Bm25Retriever {
    fn retrieve(&self, query: &str, k: usize) -> Result<RankedDocs, RetrievalError> {
        Ok(self.index.search(query, k))
    }

    fn document(&self, id: &str) -> Option<&Document> {
        self.store.get(id)
    }
}
