//! Triple wire format.
//!
//! Extracted facts travel between stages as text of the form
//! `(S> subject| P> predicate| O> object)`, with consecutive triples joined
//! by `", "`. Parsing is total: malformed spans are skipped and tallied,
//! never fatal.

use std::collections::HashSet;
use std::fmt;
use std::ops::Deref;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Which slot of a triple an error refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripleField {
    Subject,
    Predicate,
    Object,
}

impl fmt::Display for TripleField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TripleField::Subject => "subject",
            TripleField::Predicate => "predicate",
            TripleField::Object => "object",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TripleError {
    #[error("{field} is empty")]
    EmptyField { field: TripleField },

    #[error("{field} contains a triple marker: {value:?}")]
    MarkerInField { field: TripleField, value: String },

    #[error("object has an unmatched closing parenthesis: {value:?}")]
    UnbalancedObject { value: String },
}

fn subject_marker() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\(\s*S\s*>").unwrap())
}

fn predicate_marker() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\|\s*P\s*>").unwrap())
}

fn object_marker() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\|\s*O\s*>").unwrap())
}

fn has_marker(value: &str) -> bool {
    subject_marker().is_match(value)
        || predicate_marker().is_match(value)
        || object_marker().is_match(value)
}

/// True when some prefix of `value` closes more parentheses than it opens.
/// Such an object would terminate its triple early on the way back in.
fn closes_early(value: &str) -> bool {
    let mut depth: i64 = 0;
    for c in value.chars() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth < 0 {
                    return true;
                }
            }
            _ => {}
        }
    }
    false
}

/// One subject-predicate-object fact.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawTriple", into = "RawTriple")]
pub struct Triple {
    subject: String,
    predicate: String,
    object: String,
}

#[derive(Serialize, Deserialize)]
struct RawTriple {
    subject: String,
    predicate: String,
    object: String,
}

impl TryFrom<RawTriple> for Triple {
    type Error = TripleError;

    fn try_from(raw: RawTriple) -> Result<Self, Self::Error> {
        Triple::new(raw.subject, raw.predicate, raw.object)
    }
}

impl From<Triple> for RawTriple {
    fn from(t: Triple) -> Self {
        RawTriple {
            subject: t.subject,
            predicate: t.predicate,
            object: t.object,
        }
    }
}

impl Triple {
    /// Builds a triple from trimmed fields, rejecting anything the wire
    /// format cannot carry.
    pub fn new(
        subject: impl AsRef<str>,
        predicate: impl AsRef<str>,
        object: impl AsRef<str>,
    ) -> Result<Self, TripleError> {
        let fields = [
            (TripleField::Subject, subject.as_ref().trim()),
            (TripleField::Predicate, predicate.as_ref().trim()),
            (TripleField::Object, object.as_ref().trim()),
        ];
        for (field, value) in fields {
            if value.is_empty() {
                return Err(TripleError::EmptyField { field });
            }
            if has_marker(value) {
                return Err(TripleError::MarkerInField {
                    field,
                    value: value.to_string(),
                });
            }
        }
        if closes_early(fields[2].1) {
            return Err(TripleError::UnbalancedObject {
                value: fields[2].1.to_string(),
            });
        }
        Ok(Triple {
            subject: fields[0].1.to_string(),
            predicate: fields[1].1.to_string(),
            object: fields[2].1.to_string(),
        })
    }

    pub fn subject(&self) -> &str {
        &self.subject
    }

    pub fn predicate(&self) -> &str {
        &self.predicate
    }

    pub fn object(&self) -> &str {
        &self.object
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(S> {}| P> {}| O> {})",
            self.subject, self.predicate, self.object
        )
    }
}

/// Ordered triples, in the order they appeared in the source text.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TripleList(Vec<Triple>);

impl TripleList {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    pub fn push(&mut self, triple: Triple) {
        self.0.push(triple);
    }

    pub fn extend(&mut self, other: TripleList) {
        self.0.extend(other.0);
    }

    pub fn into_inner(self) -> Vec<Triple> {
        self.0
    }

    /// Wire form; infallible because every element was validated on
    /// construction.
    pub fn to_wire(&self) -> String {
        self.0
            .iter()
            .map(Triple::to_string)
            .collect::<Vec<_>>()
            .join(", ")
    }
}

impl Deref for TripleList {
    type Target = [Triple];

    fn deref(&self) -> &[Triple] {
        &self.0
    }
}

impl From<Vec<Triple>> for TripleList {
    fn from(v: Vec<Triple>) -> Self {
        Self(v)
    }
}

impl FromIterator<Triple> for TripleList {
    fn from_iter<I: IntoIterator<Item = Triple>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

impl IntoIterator for TripleList {
    type Item = Triple;
    type IntoIter = std::vec::IntoIter<Triple>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.into_iter()
    }
}

impl<'a> IntoIterator for &'a TripleList {
    type Item = &'a Triple;
    type IntoIter = std::slice::Iter<'a, Triple>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Tally of spans that opened a triple but could not be read as one.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseDiagnostics {
    pub skipped_spans: usize,
}

/// Parses every `(S> … | P> … | O> …)` span in `text`, ignoring the rest.
pub fn parse_triples(text: &str) -> TripleList {
    parse_triples_with_diagnostics(text).0
}

pub fn parse_triples_with_diagnostics(text: &str) -> (TripleList, ParseDiagnostics) {
    let mut out = TripleList::new();
    let mut diag = ParseDiagnostics::default();

    let starts: Vec<(usize, usize)> = subject_marker()
        .find_iter(text)
        .map(|m| (m.start(), m.end()))
        .collect();

    for (idx, &(_, body_start)) in starts.iter().enumerate() {
        let span_end = starts.get(idx + 1).map_or(text.len(), |next| next.0);
        let span = &text[body_start..span_end];
        match parse_span(span) {
            Some(triple) => out.push(triple),
            None => diag.skipped_spans += 1,
        }
    }

    if diag.skipped_spans > 0 {
        log::debug!("skipped {} malformed triple spans", diag.skipped_spans);
    }
    (out, diag)
}

/// `span` starts right after the subject marker and runs to the next one.
fn parse_span(span: &str) -> Option<Triple> {
    let p = predicate_marker().find(span)?;
    let rest = &span[p.end()..];
    let o = object_marker().find(rest)?;
    let subject = &span[..p.start()];
    let predicate = &rest[..o.start()];
    let object_region = &rest[o.end()..];
    let close = object_close(object_region)?;
    Triple::new(subject, predicate, &object_region[..close]).ok()
}

/// Byte offset of the parenthesis closing the triple: the first `)` that
/// balances the opening `(S>`, falling back to the last `)` in the region.
fn object_close(region: &str) -> Option<usize> {
    let mut depth = 1i64;
    for (i, c) in region.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    region.rfind(')')
}

/// Emits the wire form of `triples`. Every element is re-validated so that
/// a hand-built list cannot smuggle markers through.
pub fn serialize_triples(triples: &[Triple]) -> Result<String, TripleError> {
    let mut parts = Vec::with_capacity(triples.len());
    for t in triples {
        Triple::new(&t.subject, &t.predicate, &t.object)?;
        parts.push(t.to_string());
    }
    Ok(parts.join(", "))
}

/// Keeps the first occurrence of every exact (subject, predicate, object).
pub fn dedupe(triples: &[Triple]) -> TripleList {
    let mut seen = HashSet::new();
    triples
        .iter()
        .filter(|t| seen.insert(*t))
        .cloned()
        .collect()
}
