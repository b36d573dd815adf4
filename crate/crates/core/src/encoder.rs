//! Forward-pass graph encoder.
//!
//! Each subgraph is encoded on its own with attention-weighted message
//! passing, the subgraph vectors are mean-pooled into one graph token, and an
//! affine projector maps the token into the consumer's space. No training
//! happens here; per-layer weights are either identity or loaded from a file.
//!
//! Accumulation always runs over elements sorted by text, so the output does
//! not depend on storage order and repeated calls are bit-identical.

use std::cmp::Ordering;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::graph::{f32s_to_le_bytes, QuestionGraph, SubGraph};

const NORM_EPS: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("expected dimension {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("edge endpoint {0:?} is not a node of the subgraph")]
    DanglingEdge(String),

    #[error("weight file: {0}")]
    WeightFile(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

/// `y = W·x + b` with `W` stored row-major as `output × input`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub input: usize,
    pub output: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Affine {
    pub fn new(
        input: usize,
        output: usize,
        weight: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self, EncoderError> {
        if weight.len() != input * output {
            return Err(EncoderError::Dimension {
                expected: input * output,
                got: weight.len(),
            });
        }
        if bias.len() != output {
            return Err(EncoderError::Dimension {
                expected: output,
                got: bias.len(),
            });
        }
        Ok(Self {
            input,
            output,
            weight,
            bias,
        })
    }

    pub fn identity(dimension: usize) -> Self {
        let mut weight = vec![0.0; dimension * dimension];
        for i in 0..dimension {
            weight[i * dimension + i] = 1.0;
        }
        Self {
            input: dimension,
            output: dimension,
            weight,
            bias: vec![0.0; dimension],
        }
    }

    pub fn apply(&self, x: &[f32]) -> Result<Vec<f32>, EncoderError> {
        if x.len() != self.input {
            return Err(EncoderError::Dimension {
                expected: self.input,
                got: x.len(),
            });
        }
        Ok(self
            .apply_f64(&x.iter().map(|v| f64::from(*v)).collect::<Vec<_>>())
            .into_iter()
            .map(|v| v as f32)
            .collect())
    }

    fn apply_f64(&self, x: &[f64]) -> Vec<f64> {
        (0..self.output)
            .map(|r| {
                let row = &self.weight[r * self.input..(r + 1) * self.input];
                row.iter()
                    .zip(x)
                    .map(|(w, v)| f64::from(*w) * v)
                    .sum::<f64>()
                    + f64::from(self.bias[r])
            })
            .collect()
    }

    /// Reads a projector file: ASCII header `affine input=<D> output=<O>`
    /// followed by `O·D` weights then `O` biases as little-endian f32.
    pub fn load(path: &Path) -> Result<Self, EncoderError> {
        let bytes = fs::read(path)?;
        let (header, body) = split_header(&bytes)?;
        let fields = header_fields(header, "affine")?;
        let input = field(&fields, "input")?;
        let output = field(&fields, "output")?;
        let floats = le_bytes_to_f32s(body, output * input + output)?;
        let (w, b) = floats.split_at(output * input);
        Affine::new(input, output, w.to_vec(), b.to_vec())
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut bytes =
            format!("affine input={} output={}\n", self.input, self.output).into_bytes();
        bytes.extend(f32s_to_le_bytes(&self.weight));
        bytes.extend(f32s_to_le_bytes(&self.bias));
        fs::write(path, bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub layers: usize,
    pub dimension: usize,
    pub attention_scale: f64,
    /// One square map per layer applied to aggregated messages. Empty means
    /// identity for every layer.
    #[serde(default)]
    pub layer_weights: Vec<Affine>,
}

impl EncoderParams {
    pub fn new(dimension: usize) -> Self {
        Self::with_layers(dimension, 3)
    }

    pub fn with_layers(dimension: usize, layers: usize) -> Self {
        assert!(dimension >= 1, "encoder dimension must be at least 1");
        Self {
            layers,
            dimension,
            attention_scale: 1.0 / (dimension as f64).sqrt(),
            layer_weights: Vec::new(),
        }
    }

    /// Reads a weight file: ASCII header `encoder layers=<L> dim=<D>` then,
    /// per layer, `D·D` weights and `D` biases as little-endian f32.
    pub fn load(path: &Path) -> Result<Self, EncoderError> {
        let bytes = fs::read(path)?;
        let (header, body) = split_header(&bytes)?;
        let fields = header_fields(header, "encoder")?;
        let layers = field(&fields, "layers")?;
        let dim = field(&fields, "dim")?;
        if dim == 0 {
            return Err(EncoderError::WeightFile("dim must be at least 1".into()));
        }
        let per_layer = dim * dim + dim;
        let floats = le_bytes_to_f32s(body, layers * per_layer)?;
        let mut params = Self::with_layers(dim, layers);
        for chunk in floats.chunks(per_layer) {
            let (w, b) = chunk.split_at(dim * dim);
            params
                .layer_weights
                .push(Affine::new(dim, dim, w.to_vec(), b.to_vec())?);
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut bytes =
            format!("encoder layers={} dim={}\n", self.layers, self.dimension).into_bytes();
        for l in 0..self.layers {
            let a = self
                .layer_weights
                .get(l)
                .cloned()
                .unwrap_or_else(|| Affine::identity(self.dimension));
            bytes.extend(f32s_to_le_bytes(&a.weight));
            bytes.extend(f32s_to_le_bytes(&a.bias));
        }
        fs::write(path, bytes)
    }
}

fn split_header(bytes: &[u8]) -> Result<(&str, &[u8]), EncoderError> {
    let nl = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| EncoderError::WeightFile("missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| EncoderError::WeightFile("header is not UTF-8".into()))?;
    Ok((header, &bytes[nl + 1..]))
}

fn header_fields<'a>(header: &'a str, kind: &str) -> Result<Vec<(&'a str, &'a str)>, EncoderError> {
    let mut parts = header.split_whitespace();
    if parts.next() != Some(kind) {
        return Err(EncoderError::WeightFile(format!(
            "expected a {kind} header, got {header:?}"
        )));
    }
    parts
        .map(|p| {
            p.split_once('=')
                .ok_or_else(|| EncoderError::WeightFile(format!("bad header field {p:?}")))
        })
        .collect()
}

fn field(fields: &[(&str, &str)], name: &str) -> Result<usize, EncoderError> {
    let raw = fields
        .iter()
        .find(|(k, _)| *k == name)
        .map(|(_, v)| *v)
        .ok_or_else(|| EncoderError::WeightFile(format!("missing header field {name}")))?;
    raw.parse()
        .map_err(|_| EncoderError::WeightFile(format!("header field {name}={raw} is not a count")))
}

fn le_bytes_to_f32s(body: &[u8], expected: usize) -> Result<Vec<f32>, EncoderError> {
    if body.len() != expected * 4 {
        return Err(EncoderError::WeightFile(format!(
            "expected {} bytes of weights, found {}",
            expected * 4,
            body.len()
        )));
    }
    Ok(body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Fixed-dimension vector summarizing a question graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphToken {
    pub vector: Vec<f32>,
}

impl GraphToken {
    pub fn is_finite(&self) -> bool {
        self.vector.iter().all(|x| x.is_finite())
    }
}

fn cmp_f32s(a: &[f32], b: &[f32]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| a.len().cmp(&b.len()))
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_EPS);
    v.iter_mut().for_each(|x| *x /= norm);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Message passing over one subgraph followed by a mean over node states.
///
/// Per layer, a node with incoming edges `(u, r, v)` becomes
/// `normalize(h_v + W·Σ α_u (h_u + h_r))` where `α` is the softmax over the
/// node's incoming edges of `h_v·h_u · attention_scale`. Nodes with no
/// incoming edge keep their state. An empty subgraph encodes to zeros.
pub fn encode_subgraph(sub: &SubGraph, params: &EncoderParams) -> Result<Vec<f32>, EncoderError> {
    let dim = params.dimension;
    if sub.nodes.is_empty() {
        return Ok(vec![0.0; dim]);
    }
    let vectors = sub
        .nodes
        .iter()
        .map(|n| &n.embedding)
        .chain(sub.edges.iter().map(|e| &e.embedding));
    for v in vectors {
        if v.len() != dim {
            return Err(EncoderError::Dimension {
                expected: dim,
                got: v.len(),
            });
        }
    }

    let mut nodes: Vec<_> = sub.nodes.iter().collect();
    nodes.sort_by(|a, b| {
        a.entity
            .cmp(&b.entity)
            .then_with(|| cmp_f32s(&a.embedding, &b.embedding))
    });
    let index_of = |entity: &str| -> Result<usize, EncoderError> {
        nodes
            .binary_search_by(|n| n.entity.as_str().cmp(entity))
            .map_err(|_| EncoderError::DanglingEdge(entity.to_string()))
    };

    // incoming[v] = (source index, edge embedding), sorted by source then predicate
    let mut incoming: Vec<Vec<(usize, &str, &[f32])>> = vec![Vec::new(); nodes.len()];
    for e in &sub.edges {
        let u = index_of(&e.source)?;
        let v = index_of(&e.target)?;
        incoming[v].push((u, e.predicate.as_str(), &e.embedding));
    }
    for list in &mut incoming {
        list.sort_by(|a, b| {
            a.0.cmp(&b.0)
                .then_with(|| a.1.cmp(b.1))
                .then_with(|| cmp_f32s(a.2, b.2))
        });
    }

    let mut state: Vec<Vec<f64>> = nodes
        .iter()
        .map(|n| n.embedding.iter().map(|x| f64::from(*x)).collect())
        .collect();

    for layer in 0..params.layers {
        let weights = params.layer_weights.get(layer);
        let mut next = state.clone();
        for (v, edges) in incoming.iter().enumerate() {
            if edges.is_empty() {
                continue;
            }
            let scores: Vec<f64> = edges
                .iter()
                .map(|(u, _, _)| dot(&state[v], &state[*u]) * params.attention_scale)
                .collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let total: f64 = exps.iter().sum();

            let mut message = vec![0.0; dim];
            for ((u, _, rel), w) in edges.iter().zip(&exps) {
                let alpha = w / total;
                for (k, m) in message.iter_mut().enumerate() {
                    *m += alpha * (state[*u][k] + f64::from(rel[k]));
                }
            }
            if let Some(a) = weights {
                message = a.apply_f64(&message);
            }
            let h = &mut next[v];
            for (x, m) in h.iter_mut().zip(&message) {
                *x += m;
            }
            normalize(h);
        }
        state = next;
    }

    let n = state.len() as f64;
    let mut mean = vec![0.0f64; dim];
    for h in &state {
        for (m, x) in mean.iter_mut().zip(h) {
            *m += x;
        }
    }
    Ok(mean.into_iter().map(|x| (x / n) as f32).collect())
}

/// Arithmetic mean of the per-subgraph encodings; zeros for an empty graph.
pub fn encode_question_graph(
    graph: &QuestionGraph,
    params: &EncoderParams,
) -> Result<GraphToken, EncoderError> {
    let encoded = graph
        .subgraphs()
        .iter()
        .map(|s| encode_subgraph(s, params))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GraphToken {
        vector: mean_pool(&encoded, params.dimension),
    })
}

pub fn mean_pool(vectors: &[Vec<f32>], dimension: usize) -> Vec<f32> {
    if vectors.is_empty() {
        return vec![0.0; dimension];
    }
    let mut sum = vec![0.0f64; dimension];
    for v in vectors {
        for (s, x) in sum.iter_mut().zip(v) {
            *s += f64::from(*x);
        }
    }
    let n = vectors.len() as f64;
    sum.into_iter().map(|s| (s / n) as f32).collect()
}

pub fn project(token: &GraphToken, projector: &Affine) -> Result<Vec<f32>, EncoderError> {
    projector.apply(&token.vector)
}
