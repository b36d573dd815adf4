use std::collections::HashMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use super::RetrievalError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
}

impl Document {
    pub fn new(id: impl Into<String>, title: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            title: title.into(),
            text: text.into(),
        }
    }

    /// The text a document is embedded and extracted from: `title\ntext`.
    pub fn passage(&self) -> String {
        format!("{}\n{}", self.title, self.text)
    }
}

/// Documents in ingestion order, addressable by id.
#[derive(Debug, Clone, Default)]
pub struct CorpusStore {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
}

impl CorpusStore {
    pub fn from_documents(docs: Vec<Document>) -> Result<Self, RetrievalError> {
        let mut store = Self::default();
        for (i, doc) in docs.into_iter().enumerate() {
            store.insert(doc, i + 1)?;
        }
        Ok(store)
    }

    fn insert(&mut self, doc: Document, line: usize) -> Result<(), RetrievalError> {
        if self.by_id.contains_key(&doc.id) {
            return Err(RetrievalError::DuplicateId { id: doc.id, line });
        }
        self.by_id.insert(doc.id.clone(), self.docs.len());
        self.docs.push(doc);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|i| &self.docs[*i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }
}

/// Reads one JSON record `{id, title, text}` per line. Blank lines are
/// skipped; line numbers in errors are 1-based.
pub fn ingest_corpus<R: BufRead>(reader: R) -> Result<CorpusStore, RetrievalError> {
    let mut store = CorpusStore::default();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| RetrievalError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| RetrievalError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        store.insert(doc, line_no)?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_lines() {
        let src = r#"{"id":"a","title":"A","text":"x"}
{"id":"b","title":"B","text":"y"}
{"id":"c","title":"C","text":"z"}
"#;
        let store = ingest_corpus(src.as_bytes()).unwrap();
        assert_eq!(store.len(), 3);
        assert_eq!(store.documents()[1].id, "b");
        assert_eq!(store.get("c").unwrap().text, "z");
    }

    #[test]
    fn empty_stream() {
        assert!(ingest_corpus("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn duplicate_cites_line() {
        let src = "{\"id\":\"a\",\"title\":\"\",\"text\":\"x\"}\n{\"id\":\"a\",\"title\":\"\",\"text\":\"y\"}\n";
        match ingest_corpus(src.as_bytes()) {
            Err(RetrievalError::DuplicateId { id, line }) => {
                assert_eq!(id, "a");
                assert_eq!(line, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_cites_line() {
        let src = "{\"id\":\"a\",\"text\":\"x\"}\nnot json\n";
        assert!(matches!(
            ingest_corpus(src.as_bytes()),
            Err(RetrievalError::Malformed { line: 2, .. })
        ));
    }
}
