//! Question-specific knowledge graph.
//!
//! Each iteration's triples become a [`SubGraph`] whose nodes and edges carry
//! embeddings. The [`QuestionGraph`] keeps every subgraph in iteration order
//! (the encoder consumes them one by one) and maintains deduplicated union
//! views of entities and `(source, predicate, target)` edges.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use indexmap::{IndexMap, IndexSet};
use serde::{Deserialize, Serialize};

use crate::embed::{EmbedError, Embedder};
use crate::triples::Triple;

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("failed to embed {text:?}: {source}")]
    Embedding {
        text: String,
        #[source]
        source: EmbedError,
    },

    #[error("embedding for {text:?} has dimension {got}, expected {expected}")]
    Dimension {
        text: String,
        expected: usize,
        got: usize,
    },

    #[error("subgraph from iteration {got} cannot be merged at position {expected}")]
    IterationMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub entity: String,
    pub embedding: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: String,
    pub predicate: String,
    pub target: String,
    pub embedding: Vec<f32>,
}

/// Graph form of one iteration's triples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub source_iteration: usize,
    pub dimension: usize,
}

impl SubGraph {
    pub fn empty(source_iteration: usize, dimension: usize) -> Self {
        Self {
            nodes: Vec::new(),
            edges: Vec::new(),
            source_iteration,
            dimension,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

fn embed_all(embed: &dyn Embedder, texts: &[&str]) -> Result<Vec<Vec<f32>>, GraphError> {
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    let vectors = match embed.embed_batch(texts) {
        Ok(v) => v,
        Err(batch_err) => {
            // Find the text that broke the batch so the error is actionable.
            for text in texts {
                if let Err(source) = embed.embed(text) {
                    return Err(GraphError::Embedding {
                        text: text.to_string(),
                        source,
                    });
                }
            }
            return Err(GraphError::Embedding {
                text: texts.join(" | "),
                source: batch_err,
            });
        }
    };
    if vectors.len() != texts.len() {
        return Err(GraphError::Embedding {
            text: texts.join(" | "),
            source: EmbedError::Count {
                expected: texts.len(),
                got: vectors.len(),
            },
        });
    }
    let expected = embed.dimension();
    for (text, v) in texts.iter().zip(&vectors) {
        if v.len() != expected {
            return Err(GraphError::Dimension {
                text: text.to_string(),
                expected,
                got: v.len(),
            });
        }
    }
    Ok(vectors)
}

/// One node per distinct entity text, one edge per triple. Nodes are
/// embedded from their entity text and edges from their predicate text.
pub fn build_subgraph(
    triples: &[Triple],
    embed: &dyn Embedder,
    iteration: usize,
) -> Result<SubGraph, GraphError> {
    let mut entities: IndexSet<&str> = IndexSet::new();
    let mut predicates: IndexSet<&str> = IndexSet::new();
    for t in triples {
        entities.insert(t.subject());
        entities.insert(t.object());
        predicates.insert(t.predicate());
    }

    let entity_list: Vec<&str> = entities.iter().copied().collect();
    let predicate_list: Vec<&str> = predicates.iter().copied().collect();
    let entity_vecs = embed_all(embed, &entity_list)?;
    let predicate_vecs: IndexMap<&str, Vec<f32>> = predicate_list
        .iter()
        .copied()
        .zip(embed_all(embed, &predicate_list)?)
        .collect();

    let nodes = entity_list
        .iter()
        .zip(entity_vecs)
        .map(|(e, v)| Node {
            entity: e.to_string(),
            embedding: v,
        })
        .collect();
    let edges = triples
        .iter()
        .map(|t| Edge {
            source: t.subject().to_string(),
            predicate: t.predicate().to_string(),
            target: t.object().to_string(),
            embedding: predicate_vecs[t.predicate()].clone(),
        })
        .collect();

    Ok(SubGraph {
        nodes,
        edges,
        source_iteration: iteration,
        dimension: embed.dimension(),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub edges: usize,
    pub subgraphs: usize,
}

pub type EdgeKey = (String, String, String);

/// The evolving graph for one question.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QuestionGraph {
    subgraphs: Vec<SubGraph>,
    union_nodes: IndexSet<String>,
    union_edges: IndexSet<EdgeKey>,
}

impl QuestionGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `sub` and extends the union views. The subgraph must come from
    /// the next iteration in sequence.
    pub fn merge(&mut self, sub: SubGraph) -> Result<(), GraphError> {
        if sub.source_iteration != self.subgraphs.len() {
            return Err(GraphError::IterationMismatch {
                expected: self.subgraphs.len(),
                got: sub.source_iteration,
            });
        }
        for n in &sub.nodes {
            if !self.union_nodes.contains(&n.entity) {
                self.union_nodes.insert(n.entity.clone());
            }
        }
        for e in &sub.edges {
            self.union_edges
                .insert((e.source.clone(), e.predicate.clone(), e.target.clone()));
        }
        self.subgraphs.push(sub);
        Ok(())
    }

    pub fn subgraphs(&self) -> &[SubGraph] {
        &self.subgraphs
    }

    pub fn union_nodes(&self) -> &IndexSet<String> {
        &self.union_nodes
    }

    pub fn union_edges(&self) -> &IndexSet<EdgeKey> {
        &self.union_edges
    }

    pub fn stats(&self) -> GraphStats {
        GraphStats {
            nodes: self.union_nodes.len(),
            edges: self.union_edges.len(),
            subgraphs: self.subgraphs.len(),
        }
    }

    /// Flattens the per-subgraph elements into index-addressed arrays.
    pub fn export(&self) -> GraphExport {
        let mut out = GraphExport::default();
        for sub in &self.subgraphs {
            let node_start = out.nodes.len();
            let edge_start = out.edges.len();
            let local: IndexMap<&str, usize> = sub
                .nodes
                .iter()
                .enumerate()
                .map(|(i, n)| (n.entity.as_str(), node_start + i))
                .collect();
            out.nodes.extend(sub.nodes.iter().map(|n| n.entity.clone()));
            out.edges.extend(sub.edges.iter().map(|e| ExportEdge {
                source: local[e.source.as_str()],
                predicate: e.predicate.clone(),
                target: local[e.target.as_str()],
            }));
            out.subgraphs.push(SubgraphRange {
                iteration: sub.source_iteration,
                nodes: [node_start, out.nodes.len()],
                edges: [edge_start, out.edges.len()],
            });
        }
        out
    }

    /// Row-major f32 embeddings in [`GraphExport`] order: every node row,
    /// then every edge row.
    pub fn embedding_matrix(&self) -> (EmbeddingHeader, Vec<f32>) {
        let dimension = self.subgraphs.first().map_or(0, |s| s.dimension);
        let mut data = Vec::new();
        let mut nodes = 0;
        let mut edges = 0;
        for sub in &self.subgraphs {
            for n in &sub.nodes {
                data.extend_from_slice(&n.embedding);
                nodes += 1;
            }
        }
        for sub in &self.subgraphs {
            for e in &sub.edges {
                data.extend_from_slice(&e.embedding);
                edges += 1;
            }
        }
        (
            EmbeddingHeader {
                dimension,
                nodes,
                edges,
            },
            data,
        )
    }

    /// Writes the embedding matrix as little-endian f32 to `path` and the
    /// header as JSON to `path` + `.hdr`.
    pub fn write_embeddings(&self, path: &Path) -> io::Result<()> {
        let (header, data) = self.embedding_matrix();
        fs::write(path, f32s_to_le_bytes(&data))?;
        let mut hdr = PathBuf::from(path);
        hdr.as_mut_os_string().push(".hdr");
        fs::write(hdr, serde_json::to_string_pretty(&header)?)
    }
}

pub(crate) fn f32s_to_le_bytes(data: &[f32]) -> Vec<u8> {
    data.iter().flat_map(|x| x.to_le_bytes()).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphExport {
    pub nodes: Vec<String>,
    pub edges: Vec<ExportEdge>,
    pub subgraphs: Vec<SubgraphRange>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportEdge {
    pub source: usize,
    pub predicate: String,
    pub target: usize,
}

/// Half-open `[start, end)` ranges into the exported arrays.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgraphRange {
    pub iteration: usize,
    pub nodes: [usize; 2],
    pub edges: [usize; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingHeader {
    pub dimension: usize,
    pub nodes: usize,
    pub edges: usize,
}
