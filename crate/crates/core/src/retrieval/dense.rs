//! Sharded exact inner-product search over unit-normalized embeddings.
//!
//! Documents are dealt to shards round-robin in ingestion order. A search
//! takes the top-k of every shard and merges them under the global ranking
//! order, which yields exactly the unsharded top-k.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{rank_order, CorpusStore, RankedDocs, RetrievalError, ScoredDoc};
use crate::embed::Embedder;
use crate::graph::f32s_to_le_bytes;

pub const DEFAULT_SHARDS: usize = 5;
const EMBED_BATCH: usize = 64;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Shard {
    pub ids: Vec<String>,
    /// Row-major, `ids.len() × dimension`.
    pub rows: Vec<f32>,
}

impl Shard {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize, dimension: usize) -> &[f32] {
        &self.rows[i * dimension..(i + 1) * dimension]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    shards: Vec<Shard>,
    dimension: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    dimension: usize,
    num_shards: usize,
    rows: Vec<usize>,
}

pub(crate) fn normalized(mut v: Vec<f32>) -> Option<Vec<f32>> {
    let norm = v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    v.iter_mut()
        .for_each(|x| *x = (f64::from(*x) / norm) as f32);
    Some(v)
}

/// Inner product accumulated in f64 in storage order.
pub(crate) fn inner(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| f64::from(*x) * f64::from(*y))
        .sum()
}

pub fn build_dense_index(
    store: &CorpusStore,
    embed: &dyn Embedder,
    num_shards: usize,
) -> Result<DenseIndex, RetrievalError> {
    assert!(num_shards >= 1, "num_shards must be at least 1");
    let dimension = embed.dimension();
    let mut shards = vec![Shard::default(); num_shards];

    let docs = store.documents();
    for (batch_no, batch) in docs.chunks(EMBED_BATCH).enumerate() {
        let texts: Vec<String> = batch.iter().map(|d| d.passage()).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let vectors = match embed.embed_batch(&refs) {
            Ok(v) => v,
            Err(batch_err) => {
                for (doc, text) in batch.iter().zip(&refs) {
                    if let Err(source) = embed.embed(text) {
                        return Err(RetrievalError::DocumentEmbedding {
                            id: doc.id.clone(),
                            source,
                        });
                    }
                }
                return Err(RetrievalError::DocumentEmbedding {
                    id: batch[0].id.clone(),
                    source: batch_err,
                });
            }
        };
        for (j, (doc, v)) in batch.iter().zip(vectors).enumerate() {
            if v.len() != dimension {
                return Err(RetrievalError::Dimension {
                    expected: dimension,
                    got: v.len(),
                });
            }
            let v =
                normalized(v).ok_or_else(|| RetrievalError::ZeroVector { id: doc.id.clone() })?;
            let shard = &mut shards[(batch_no * EMBED_BATCH + j) % num_shards];
            shard.ids.push(doc.id.clone());
            shard.rows.extend(v);
        }
    }
    Ok(DenseIndex { shards, dimension })
}

impl DenseIndex {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn shards(&self) -> &[Shard] {
        &self.shards
    }

    pub fn num_shards(&self) -> usize {
        self.shards.len()
    }

    pub fn len(&self) -> usize {
        self.shards.iter().map(Shard::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn search(
        &self,
        query: &str,
        embed: &dyn Embedder,
        k: usize,
    ) -> Result<RankedDocs, RetrievalError> {
        if self.is_empty() {
            return Ok(RankedDocs {
                entries: Vec::new(),
                k,
            });
        }
        let q = embed.embed(query).map_err(RetrievalError::QueryEmbedding)?;
        if q.len() != self.dimension {
            return Err(RetrievalError::Dimension {
                expected: self.dimension,
                got: q.len(),
            });
        }
        // a query with no signal matches nothing better than anything else
        let q = normalized(q).unwrap_or_else(|| vec![0.0; self.dimension]);
        Ok(self.search_vector(&q, k))
    }

    /// `query` must already be unit-normalized.
    pub fn search_vector(&self, query: &[f32], k: usize) -> RankedDocs {
        let mut merged = Vec::with_capacity(k * self.shards.len());
        for shard in &self.shards {
            let mut local: Vec<ScoredDoc> = (0..shard.len())
                .map(|i| ScoredDoc {
                    id: shard.ids[i].clone(),
                    score: inner(query, shard.row(i, self.dimension)),
                })
                .collect();
            local.sort_by(rank_order);
            local.truncate(k);
            merged.extend(local);
        }
        RankedDocs::from_unsorted(merged, k)
    }

    /// Writes `index.json` plus, per shard, `shard-<i>.ids` (one JSON string
    /// per line) and `shard-<i>.f32` (an ASCII header line
    /// `f32 rows=<n> dim=<d>` followed by little-endian row-major floats).
    pub fn save(&self, dir: &Path) -> Result<(), RetrievalError> {
        fs::create_dir_all(dir)?;
        let manifest = Manifest {
            dimension: self.dimension,
            num_shards: self.shards.len(),
            rows: self.shards.iter().map(Shard::len).collect(),
        };
        fs::write(
            dir.join("index.json"),
            serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        )?;
        for (i, shard) in self.shards.iter().enumerate() {
            let mut ids = fs::File::create(dir.join(format!("shard-{i}.ids")))?;
            for id in &shard.ids {
                writeln!(
                    ids,
                    "{}",
                    serde_json::to_string(id).expect("string serializes")
                )?;
            }
            let mut bytes =
                format!("f32 rows={} dim={}\n", shard.len(), self.dimension).into_bytes();
            bytes.extend(f32s_to_le_bytes(&shard.rows));
            fs::write(dir.join(format!("shard-{i}.f32")), bytes)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, RetrievalError> {
        let manifest_path = dir.join("index.json");
        let bad = |path: &Path, message: String| RetrievalError::IndexFile {
            path: path.display().to_string(),
            message,
        };
        let manifest: Manifest = serde_json::from_slice(&fs::read(&manifest_path)?)
            .map_err(|e| bad(&manifest_path, e.to_string()))?;
        if manifest.rows.len() != manifest.num_shards {
            return Err(bad(
                &manifest_path,
                "row counts do not match shard count".into(),
            ));
        }

        let mut shards = Vec::with_capacity(manifest.num_shards);
        for (i, &rows) in manifest.rows.iter().enumerate() {
            let ids_path = dir.join(format!("shard-{i}.ids"));
            let mut ids = Vec::with_capacity(rows);
            for line in BufReader::new(fs::File::open(&ids_path)?).lines() {
                let line = line?;
                if line.is_empty() {
                    continue;
                }
                ids.push(serde_json::from_str(&line).map_err(|e| bad(&ids_path, e.to_string()))?);
            }

            let mat_path = dir.join(format!("shard-{i}.f32"));
            let bytes = fs::read(&mat_path)?;
            let nl = bytes
                .iter()
                .position(|b| *b == b'\n')
                .ok_or_else(|| bad(&mat_path, "missing header".into()))?;
            let header = String::from_utf8_lossy(&bytes[..nl]);
            let expected_header = format!("f32 rows={rows} dim={}", manifest.dimension);
            if header != expected_header {
                return Err(bad(
                    &mat_path,
                    format!("header {header:?}, expected {expected_header:?}"),
                ));
            }
            let body = &bytes[nl + 1..];
            if ids.len() != rows || body.len() != rows * manifest.dimension * 4 {
                return Err(bad(&mat_path, "size does not match header".into()));
            }
            let data = body
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            shards.push(Shard { ids, rows: data });
        }
        Ok(Self {
            shards,
            dimension: manifest.dimension,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashEmbedder;
    use crate::retrieval::Document;

    fn corpus(n: usize) -> CorpusStore {
        CorpusStore::from_documents(
            (0..n)
                .map(|i| {
                    Document::new(
                        format!("d{i:02}"),
                        format!("title {i}"),
                        format!("body text number {i}"),
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn round_robin_sizes() {
        let e = HashEmbedder::new(16);
        let idx = build_dense_index(&corpus(10), &e, 5).unwrap();
        let sizes: Vec<_> = idx.shards().iter().map(Shard::len).collect();
        assert_eq!(sizes, [2, 2, 2, 2, 2]);
        let idx = build_dense_index(&corpus(1), &e, 5).unwrap();
        let sizes: Vec<_> = idx.shards().iter().map(Shard::len).collect();
        assert_eq!(sizes, [1, 0, 0, 0, 0]);
    }

    #[test]
    fn rows_are_unit() {
        let idx = build_dense_index(&corpus(7), &HashEmbedder::new(16), 3).unwrap();
        for s in idx.shards() {
            for i in 0..s.len() {
                let n = inner(s.row(i, 16), s.row(i, 16)).sqrt();
                assert!((n - 1.0).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn self_query_ranks_first() {
        let store = corpus(20);
        let e = HashEmbedder::new(64);
        let idx = build_dense_index(&store, &e, 5).unwrap();
        let target = store.get("d07").unwrap().passage();
        let res = idx.search(&target, &e, 3).unwrap();
        assert_eq!(res.entries[0].id, "d07");
        assert!((res.entries[0].score - 1.0).abs() < 1e-6);
    }

    #[test]
    fn k_clamped_to_corpus() {
        let e = HashEmbedder::new(16);
        let idx = build_dense_index(&corpus(20), &e, 5).unwrap();
        assert_eq!(idx.search("body", &e, 100).unwrap().len(), 20);
    }

    #[test]
    fn empty_index_empty_result() {
        let e = HashEmbedder::new(16);
        let idx = build_dense_index(&CorpusStore::default(), &e, 5).unwrap();
        assert!(idx.search("anything", &e, 5).unwrap().is_empty());
    }

    #[test]
    fn save_load_round_trip() {
        let e = HashEmbedder::new(16);
        let idx = build_dense_index(&corpus(11), &e, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        idx.save(dir.path()).unwrap();
        let back = DenseIndex::load(dir.path()).unwrap();
        assert_eq!(back, idx);
        assert_eq!(
            back.search("number 3", &e, 5).unwrap(),
            idx.search("number 3", &e, 5).unwrap()
        );
    }
}
