//! Okapi BM25 over an in-memory inverted index.
//!
//! score(d) = Σ_t idf(t) · tf·(k1+1) / (tf + k1·(1 − b + b·|d|/avgdl)),
//! idf(t) = ln((N − df + 0.5)/(df + 0.5) + 1), summed over the distinct
//! query terms. A document is indexed as its title followed by its text.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{CorpusStore, RankedDocs, ScoredDoc};
use crate::embed::word_tokens;

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

#[derive(Debug, Clone, Default)]
pub struct Bm25Index {
    params: Bm25Params,
    ids: Vec<String>,
    doc_lens: Vec<usize>,
    avg_len: f64,
    /// term → (doc position, term frequency), doc positions ascending
    postings: HashMap<String, Vec<(usize, u32)>>,
}

pub fn build_bm25_index(store: &CorpusStore) -> Bm25Index {
    Bm25Index::build(store, Bm25Params::default())
}

impl Bm25Index {
    pub fn build(store: &CorpusStore, params: Bm25Params) -> Self {
        let mut index = Bm25Index {
            params,
            ..Default::default()
        };
        for (pos, doc) in store.documents().iter().enumerate() {
            let mut tf: HashMap<String, u32> = HashMap::new();
            let mut len = 0;
            for tok in word_tokens(&doc.title).chain(word_tokens(&doc.text)) {
                *tf.entry(tok).or_default() += 1;
                len += 1;
            }
            for (term, count) in tf {
                index.postings.entry(term).or_default().push((pos, count));
            }
            index.ids.push(doc.id.clone());
            index.doc_lens.push(len);
        }
        if !index.ids.is_empty() {
            index.avg_len = index.doc_lens.iter().sum::<usize>() as f64 / index.ids.len() as f64;
        }
        index
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn doc_len(&self, pos: usize) -> usize {
        self.doc_lens[pos]
    }

    pub fn term_frequency(&self, term: &str, pos: usize) -> u32 {
        self.postings
            .get(term)
            .and_then(|p| {
                p.binary_search_by_key(&pos, |(d, _)| *d)
                    .ok()
                    .map(|i| p[i].1)
            })
            .unwrap_or(0)
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.ids.len() as f64;
        let df = df as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// Documents without any query term score zero and are left out.
    pub fn search(&self, query: &str, k: usize) -> RankedDocs {
        let terms: BTreeSet<String> = word_tokens(query).collect();
        let Bm25Params { k1, b } = self.params;
        let mut scores: HashMap<usize, f64> = HashMap::new();
        for term in &terms {
            let Some(postings) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(postings.len());
            for &(pos, tf) in postings {
                let tf = f64::from(tf);
                let norm = 1.0 - b + b * self.doc_lens[pos] as f64 / self.avg_len;
                *scores.entry(pos).or_default() += idf * tf * (k1 + 1.0) / (tf + k1 * norm);
            }
        }
        let entries = scores
            .into_iter()
            .filter(|(_, s)| *s > 0.0)
            .map(|(pos, score)| ScoredDoc {
                id: self.ids[pos].clone(),
                score,
            })
            .collect();
        RankedDocs::from_unsorted(entries, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::Document;

    fn store(docs: &[(&str, &str)]) -> CorpusStore {
        CorpusStore::from_documents(
            docs.iter()
                .map(|(id, text)| Document::new(*id, "", *text))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn tokenization_counts() {
        let idx = build_bm25_index(&store(&[("d", "A a, a!")]));
        assert_eq!(idx.term_frequency("a", 0), 3);
        assert_eq!(idx.doc_len(0), 3);
    }

    #[test]
    fn empty_corpus() {
        let idx = build_bm25_index(&CorpusStore::default());
        assert!(idx.is_empty());
        assert!(idx.search("x", 5).is_empty());
    }

    #[test]
    fn average_length() {
        let idx = build_bm25_index(&store(&[("a", "x y"), ("b", "x y z w")]));
        assert_eq!(idx.avg_len(), 3.0);
    }

    #[test]
    fn containment() {
        let idx = build_bm25_index(&store(&[("d1", "x"), ("d2", "y")]));
        let res = idx.search("x", 5);
        assert_eq!(res.ids().collect::<Vec<_>>(), ["d1"]);
    }

    #[test]
    fn empty_query() {
        let idx = build_bm25_index(&store(&[("d1", "x")]));
        assert!(idx.search("", 5).is_empty());
        assert!(idx.search(" ,; ", 5).is_empty());
    }

    #[test]
    fn ties_by_id() {
        let idx = build_bm25_index(&store(&[("b", "x"), ("a", "x"), ("c", "y")]));
        assert_eq!(idx.search("x", 5).ids().collect::<Vec<_>>(), ["a", "b"]);
    }
}
