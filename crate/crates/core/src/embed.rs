//! Text embedding providers.
//!
//! Two providers ship: a deterministic feature-hashing embedder that needs no
//! model, and a client for a remote endpoint that accepts a JSON array of
//! strings and answers with an array of equal-length float arrays.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::http::{post_json, RetryPolicy, TransportError};

#[derive(Debug, Clone, thiserror::Error)]
pub enum EmbedError {
    #[error(transparent)]
    Transport(#[from] TransportError),

    #[error("embedding response malformed: {0}")]
    Malformed(String),

    #[error("expected {expected} vectors, got {got}")]
    Count { expected: usize, got: usize },

    #[error("expected dimension {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError>;

    fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        let mut out = self.embed_batch(&[text])?;
        out.pop().ok_or(EmbedError::Count {
            expected: 1,
            got: 0,
        })
    }
}

/// Splits on non-alphanumeric boundaries and lowercases.
pub fn word_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Bag-of-words feature hashing, L2-normalized. Identical text always maps to
/// the identical vector; texts without any word map to a fixed sentinel
/// bucket so no output is the zero vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashEmbedder {
    dimension: usize,
}

impl HashEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension }
    }

    fn vector(&self, text: &str) -> Vec<f32> {
        let mut counts = vec![0f64; self.dimension];
        let mut any = false;
        for tok in word_tokens(text) {
            any = true;
            counts[(fnv1a(tok.as_bytes()) % self.dimension as u64) as usize] += 1.0;
        }
        if !any {
            counts[(fnv1a(b"") % self.dimension as u64) as usize] = 1.0;
        }
        let norm = counts.iter().map(|x| x * x).sum::<f64>().sqrt();
        counts.into_iter().map(|x| (x / norm) as f32).collect()
    }
}

impl Embedder for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

/// Produces zero-length vectors. Useful when only graph structure matters.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullEmbedder;

impl Embedder for NullEmbedder {
    fn dimension(&self) -> usize {
        0
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError> {
        Ok(vec![Vec::new(); texts.len()])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteEmbedderConfig {
    pub endpoint: String,
    pub dimension: usize,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default)]
    pub retry: RetryPolicy,
}

#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    config: RemoteEmbedderConfig,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteEmbedderConfig) -> Self {
        Self { config }
    }
}

impl Embedder for RemoteEmbedder {
    fn dimension(&self) -> usize {
        self.config.dimension
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let body = Value::from(texts.iter().map(|t| Value::from(*t)).collect::<Vec<_>>());
        let resp = post_json(
            &self.config.endpoint,
            self.config.api_key.as_deref(),
            &body,
            &self.config.retry,
        )?;
        let rows: Vec<Vec<f32>> =
            serde_json::from_value(resp).map_err(|e| EmbedError::Malformed(e.to_string()))?;
        if rows.len() != texts.len() {
            return Err(EmbedError::Count {
                expected: texts.len(),
                got: rows.len(),
            });
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != self.config.dimension) {
            return Err(EmbedError::Dimension {
                expected: self.config.dimension,
                got: bad.len(),
            });
        }
        Ok(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_embedding_is_unit_and_stable() {
        let e = HashEmbedder::new(64);
        let a = e.embed("Tomas Alfredson directed it").unwrap();
        let b = e.embed("tomas ALFREDSON directed, it!").unwrap();
        assert_eq!(a, b);
        let norm: f32 = a.iter().map(|x| x * x).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn empty_text_is_not_zero() {
        let v = HashEmbedder::new(8).embed("  ,, ").unwrap();
        assert!(v.iter().any(|x| *x != 0.0));
    }

    #[test]
    fn null_embedder_shapes() {
        let v = NullEmbedder.embed_batch(&["a", "b"]).unwrap();
        assert_eq!(v, vec![Vec::<f32>::new(), Vec::new()]);
    }
}
