//! Text-to-triples sources: a model behind the gateway, or triples
//! precomputed offline and looked up by passage id.

use std::collections::HashMap;
use std::fs;
use std::io::{self, BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::gateway::{render_extraction_prompt, GatewayError, LanguageModel, PromptTemplates};
use crate::retrieval::Document;
use crate::triples::{parse_triples_with_diagnostics, ParseDiagnostics, TripleList};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub title: String,
    pub text: String,
}

impl Passage {
    pub fn content(&self) -> String {
        if self.title.is_empty() {
            self.text.clone()
        } else {
            format!("{}\n{}", self.title, self.text)
        }
    }
}

impl From<&Document> for Passage {
    fn from(d: &Document) -> Self {
        Self {
            id: Some(d.id.clone()),
            title: d.title.clone(),
            text: d.text.clone(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExtractError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),

    #[error("no precomputed triples for passage {0:?}")]
    MissingSidecar(String),

    #[error("{path}: {message}")]
    SidecarFile { path: String, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub trait TripleSource: Send + Sync {
    fn extract(&self, passage: &Passage) -> Result<(TripleList, ParseDiagnostics), ExtractError>;
}

/// Prompts a model with the extraction template and parses its reply.
pub struct GatewayExtractor<M> {
    model: M,
    templates: PromptTemplates,
    max_new_tokens: Option<usize>,
}

impl<M: LanguageModel> GatewayExtractor<M> {
    pub fn new(model: M, templates: PromptTemplates, max_new_tokens: Option<usize>) -> Self {
        Self {
            model,
            templates,
            max_new_tokens,
        }
    }
}

impl<M: LanguageModel> TripleSource for GatewayExtractor<M> {
    fn extract(&self, passage: &Passage) -> Result<(TripleList, ParseDiagnostics), ExtractError> {
        let prompt = render_extraction_prompt(&passage.content(), &self.templates);
        let reply = self.model.complete(&prompt, self.max_new_tokens)?;
        Ok(parse_triples_with_diagnostics(&reply))
    }
}

/// Triples computed ahead of time, keyed by passage id.
#[derive(Debug, Clone, Default)]
pub struct SidecarTriples {
    by_id: HashMap<String, TripleList>,
}

impl SidecarTriples {
    pub fn from_map(by_id: HashMap<String, TripleList>) -> Self {
        Self { by_id }
    }

    /// Pairs line `n` of a passages file (JSON records with an `id`) with
    /// line `n` of a triples file (one serialized triple list per line).
    pub fn load(passages: &Path, triples: &Path) -> Result<Self, ExtractError> {
        let bad = |path: &Path, message: String| ExtractError::SidecarFile {
            path: path.display().to_string(),
            message,
        };
        let ids: Vec<String> = BufReader::new(fs::File::open(passages)?)
            .lines()
            .enumerate()
            .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
            .map(|(i, line)| {
                let line = line?;
                let rec: Passage = serde_json::from_str(&line)
                    .map_err(|e| bad(passages, format!("line {}: {e}", i + 1)))?;
                rec.id
                    .ok_or_else(|| bad(passages, format!("line {}: missing id", i + 1)))
            })
            .collect::<Result<_, ExtractError>>()?;
        let lines: Vec<String> = fs::read_to_string(triples)?
            .lines()
            .map(str::to_string)
            .collect();
        if lines.len() != ids.len() {
            return Err(bad(
                triples,
                format!("{} triple lines for {} passages", lines.len(), ids.len()),
            ));
        }
        let by_id = ids
            .into_iter()
            .zip(lines)
            .map(|(id, line)| (id, crate::triples::parse_triples(&line)))
            .collect();
        Ok(Self { by_id })
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}

impl TripleSource for SidecarTriples {
    fn extract(&self, passage: &Passage) -> Result<(TripleList, ParseDiagnostics), ExtractError> {
        let id = passage.id.as_deref().unwrap_or_default();
        self.by_id
            .get(id)
            .cloned()
            .map(|t| (t, ParseDiagnostics::default()))
            .ok_or_else(|| ExtractError::MissingSidecar(id.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ScriptedBackend;

    #[test]
    fn gateway_extraction_parses_reply() {
        let model = ScriptedBackend::new(["(S> A| P> r| O> B), (S> broken"]);
        let ex = GatewayExtractor::new(&model, PromptTemplates::default(), Some(256));
        let p = Passage {
            id: None,
            title: "T".into(),
            text: "A r B.".into(),
        };
        let (triples, diag) = ex.extract(&p).unwrap();
        assert_eq!(triples.len(), 1);
        assert_eq!(diag.skipped_spans, 1);
        assert!(model.prompts()[0].question.contains("T\nA r B."));
    }

    #[test]
    fn sidecar_pairs_lines() {
        let dir = tempfile::tempdir().unwrap();
        let passages = dir.path().join("p.jsonl");
        let triples = dir.path().join("t.txt");
        fs::write(
            &passages,
            "{\"id\":\"a\",\"title\":\"\",\"text\":\"x\"}\n{\"id\":\"b\",\"title\":\"\",\"text\":\"y\"}\n",
        )
        .unwrap();
        fs::write(&triples, "(S> A| P> r| O> B)\n\n").unwrap();
        let side = SidecarTriples::load(&passages, &triples).unwrap();
        let get = |id: &str| {
            side.extract(&Passage {
                id: Some(id.into()),
                title: String::new(),
                text: String::new(),
            })
        };
        assert_eq!(get("a").unwrap().0.len(), 1);
        assert!(get("b").unwrap().0.is_empty());
        assert!(matches!(get("c"), Err(ExtractError::MissingSidecar(_))));

        fs::write(&triples, "(S> A| P> r| O> B)\n").unwrap();
        assert!(SidecarTriples::load(&passages, &triples).is_err());
    }
}
