//! Plan grammar and the subquery-triples history block.
//!
//! The planner model answers with one of three labels: `[NO_RETRIEVAL]`
//! (only legal before any retrieval), `[SUBQ] <subquery>`, or `[SUFFICIENT]`.
//! History is rendered as alternating `[SUBQ] q` / `Retrieved Graph
//! Information: g` lines closed by `Question: Q`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::retrieval::RankedDocs;
use crate::triples::TripleList;

pub const LABEL_NO_RETRIEVAL: &str = "[NO_RETRIEVAL]";
pub const LABEL_SUBQ: &str = "[SUBQ]";
pub const LABEL_SUFFICIENT: &str = "[SUFFICIENT]";
pub const GRAPH_INFO_PREFIX: &str = "Retrieved Graph Information: ";
pub const QUESTION_PREFIX: &str = "Question: ";

/// Default history budget in whitespace tokens.
pub const DEFAULT_TOKEN_BUDGET: usize = 2500;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "subquery", rename_all = "snake_case")]
pub enum Plan {
    NoRetrieval,
    SubQ(String),
    Sufficient,
}

impl fmt::Display for Plan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Plan::NoRetrieval => f.write_str(LABEL_NO_RETRIEVAL),
            Plan::SubQ(q) => write!(f, "{LABEL_SUBQ} {q}"),
            Plan::Sufficient => f.write_str(LABEL_SUFFICIENT),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error("no plan label in model output {0:?}")]
    Unparseable(String),

    #[error("[SUBQ] label without a subquery")]
    EmptySubquery,

    #[error("[NO_RETRIEVAL] is only valid before the first retrieval")]
    InvalidTransition,
}

/// Reads the first label token in `text`. Prose around the label is
/// tolerated; a subquery runs from the label to the end of its line.
pub fn parse_plan(text: &str, first_iteration: bool) -> Result<Plan, PlanError> {
    let labels = [LABEL_NO_RETRIEVAL, LABEL_SUBQ, LABEL_SUFFICIENT];
    let first = labels
        .iter()
        .filter_map(|l| text.find(l).map(|pos| (pos, *l)))
        .min_by_key(|(pos, _)| *pos);

    match first {
        None => Err(PlanError::Unparseable(text.to_string())),
        Some((_, LABEL_NO_RETRIEVAL)) => {
            if first_iteration {
                Ok(Plan::NoRetrieval)
            } else {
                Err(PlanError::InvalidTransition)
            }
        }
        Some((_, LABEL_SUFFICIENT)) => Ok(Plan::Sufficient),
        Some((pos, _)) => {
            let rest = &text[pos + LABEL_SUBQ.len()..];
            let line = rest.lines().next().unwrap_or("").trim();
            if line.is_empty() {
                Err(PlanError::EmptySubquery)
            } else {
                Ok(Plan::SubQ(line.to_string()))
            }
        }
    }
}

/// One retrieve-structure step of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub subquery: String,
    pub retrieved: RankedDocs,
    pub passages: Vec<String>,
    pub triples: TripleList,
    #[serde(default)]
    pub skipped_triple_spans: usize,
    pub plan_after: Option<Plan>,
}

fn whitespace_tokens(s: &str) -> usize {
    s.split_whitespace().count()
}

fn pair_lines(subquery: &str, triples: &TripleList) -> [String; 2] {
    [
        format!("{LABEL_SUBQ} {subquery}"),
        format!("{GRAPH_INFO_PREFIX}{}", triples.to_wire()),
    ]
}

/// History lines for `pairs`, without the question line, after dropping the
/// oldest pairs until the block plus `question_line` fits in `budget`
/// whitespace tokens. `None` disables truncation.
fn history_lines(
    pairs: &[(&str, &TripleList)],
    question_line: &str,
    budget: Option<usize>,
) -> Vec<String> {
    let rendered: Vec<[String; 2]> = pairs.iter().map(|(q, g)| pair_lines(q, g)).collect();
    let mut start = 0;
    if let Some(budget) = budget {
        let costs: Vec<usize> = rendered
            .iter()
            .map(|[a, b]| whitespace_tokens(a) + whitespace_tokens(b))
            .collect();
        let mut total: usize = costs.iter().sum::<usize>() + whitespace_tokens(question_line);
        while start < rendered.len() && total > budget {
            total -= costs[start];
            start += 1;
        }
    }
    rendered[start..]
        .iter()
        .flat_map(|p| p.iter().cloned())
        .collect()
}

pub fn question_line(question: &str) -> String {
    format!("{QUESTION_PREFIX}{question}")
}

/// History block without the trailing question line; empty when there is
/// nothing to show.
pub fn history_context(
    records: &[IterationRecord],
    question: &str,
    budget: Option<usize>,
) -> String {
    let pairs: Vec<(&str, &TripleList)> = records
        .iter()
        .map(|r| (r.subquery.as_str(), &r.triples))
        .collect();
    history_lines(&pairs, &question_line(question), budget).join("\n")
}

/// Full history block ending with `Question: {question}`.
pub fn format_history(
    pairs: &[(&str, &TripleList)],
    question: &str,
    budget: Option<usize>,
) -> String {
    let q = question_line(question);
    let mut lines = history_lines(pairs, &q, budget);
    lines.push(q);
    lines.join("\n")
}

pub fn assemble_history(
    records: &[IterationRecord],
    question: &str,
    budget: Option<usize>,
) -> String {
    let pairs: Vec<(&str, &TripleList)> = records
        .iter()
        .map(|r| (r.subquery.as_str(), &r.triples))
        .collect();
    format_history(&pairs, question, budget)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::triples::parse_triples;

    fn record(q: &str, triples: &str) -> IterationRecord {
        IterationRecord {
            subquery: q.into(),
            retrieved: RankedDocs::default(),
            passages: vec![],
            triples: parse_triples(triples),
            skipped_triple_spans: 0,
            plan_after: None,
        }
    }

    #[test]
    fn labels() {
        assert_eq!(parse_plan("[NO_RETRIEVAL]", true), Ok(Plan::NoRetrieval));
        assert_eq!(
            parse_plan(
                "[SUBQ] Who directed the film Tinker Tailor Soldier Spy?",
                false
            ),
            Ok(Plan::SubQ(
                "Who directed the film Tinker Tailor Soldier Spy?".into()
            ))
        );
        assert_eq!(parse_plan("[SUFFICIENT]", false), Ok(Plan::Sufficient));
    }

    #[test]
    fn grammar_errors() {
        assert!(matches!(
            parse_plan("I think we are done", false),
            Err(PlanError::Unparseable(_))
        ));
        assert_eq!(
            parse_plan("[SUBQ]   ", false),
            Err(PlanError::EmptySubquery)
        );
        assert_eq!(
            parse_plan("[SUBQ]\nWho is X?", false),
            Err(PlanError::EmptySubquery)
        );
        assert_eq!(
            parse_plan("[NO_RETRIEVAL]", false),
            Err(PlanError::InvalidTransition)
        );
    }

    #[test]
    fn chatty_output() {
        assert_eq!(
            parse_plan(
                "Sure. Label: [SUBQ] Who is Tomas Alfredson?\nBecause...",
                false
            ),
            Ok(Plan::SubQ("Who is Tomas Alfredson?".into()))
        );
        assert_eq!(
            parse_plan("ok [SUFFICIENT] not [SUBQ] x", false),
            Ok(Plan::Sufficient)
        );
    }

    #[test]
    fn display_inverts_parse() {
        for p in [
            Plan::NoRetrieval,
            Plan::SubQ("who?".into()),
            Plan::Sufficient,
        ] {
            assert_eq!(parse_plan(&p.to_string(), true), Ok(p));
        }
    }

    #[test]
    fn empty_history() {
        assert_eq!(assemble_history(&[], "Q", None), "Question: Q");
        assert_eq!(history_context(&[], "Q", None), "");
    }

    #[test]
    fn one_record() {
        let h = assemble_history(&[record("q0", "(S> A| P> r| O> B)")], "Q", None);
        assert_eq!(
            h,
            "[SUBQ] q0\nRetrieved Graph Information: (S> A| P> r| O> B)\nQuestion: Q"
        );
    }

    #[test]
    fn truncation_drops_oldest() {
        let recs = [
            record("first subquery", "(S> A| P> r| O> B)"),
            record("second subquery", "(S> C| P> s| O> D)"),
        ];
        // each record costs 3 + 9 = 12 tokens, the question line 2
        assert_eq!(assemble_history(&recs, "Q", Some(26)).lines().count(), 5);
        let h = assemble_history(&recs, "Q", Some(25));
        assert_eq!(h.lines().count(), 3);
        assert!(h.starts_with("[SUBQ] second subquery"));
        assert_eq!(assemble_history(&recs, "Q", Some(1)), "Question: Q");
    }
}
