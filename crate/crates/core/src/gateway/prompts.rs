//! Prompt templates and renderers.
//!
//! The planning and answering instructions, the task instruction rows, and
//! the document-filter and subquery-generation prompts are fixed text and
//! must stay byte-stable; golden files under `tests/golden/` pin them.
//! Few-shot exemplar blocks and the extraction instruction vary by task and
//! load from files.

use std::fs;
use std::io;
use std::path::Path;

use super::PromptBundle;
use crate::planner::{history_context, question_line, IterationRecord};

pub const INST_PLAN: &str = "You are a planner to determine if the question can be answered with current information and output the appropriate label as well as the subquery if needed.
Output [NO_RETRIEVAL] if the question can be directly answered with the question itself without any retrieval.
Output [SUBQ] with an subquery for retrieval if still needs a subquery.
Output [SUFFICIENT] if the question can be answered with the provided information.";

pub const INST_ANS: &str = "You are an answerer given a question and retrieved graph information.
Each [SUBQ] is a subquery we generated through reasoning for the question. The retrieved graph information follows each [SUBQ] is relevant graph information we retrieved to answer the subquery.
[NO_RETRIEVAL] means the question can be answered with the question itself without any retrieval.
The main question starts with \"Question: \". Please answer the question, with subqueries and retrieved graph information if they are helpful.";

pub const ARC_C_INSTRUCTION: &str = "Which is true? Output A, B, C, or D.";
pub const PUBHEALTH_INSTRUCTION: &str =
    "Is statement 'true' or 'false'? Only output 'true' or 'false'.";
pub const ASQA_INSTRUCTION: &str = "Answer the following question. The question may be ambiguous and have multiple correct answers, and in that case, you have to provide a long-form answer including all correct answers. [Long Form]";
pub const ELI5_INSTRUCTION: &str = "Provide a paragraph-length response using simple words to answer the following question. [Long Form]";

pub const FILTER_INSTRUCTION: &str = r#"Identify which documents are HELPFUL to answer the question. Output only the document numbers separated by commas.

Examples:

Example 1 (Some documents are not helpful):
Question: What nationality was James Henry Miller's wife?
Supporting docs:
1. Margaret "Peggy" Seeger (born June 17, 1935) is an American folksinger. She is also well known in Britain, where she has lived for more than 30 years, and was married to the singer and songwriter Ewan MacColl until his death in 1989.
2. Seeger's father was Charles Seeger (1886-1979), an important folklorist and musicologist; her mother was Seeger's second wife, Ruth Porter Crawford.
3. James Henry Miller, better known by his stage name Ewan MacColl, was an English folk singer and songwriter.
Output: 1,3
Explanation: Only docs 1 and 3 are helpful - doc 1 shows Peggy Seeger (who is American) was married to Ewan MacColl, and doc 3 confirms Ewan MacColl is James Henry Miller. Doc 2 about Seeger's parents is not helpful.

Example 2 (All documents are helpful):
Question: The Oberoi family is part of a hotel company that has a head office in what city?
Supporting docs:
1. The Oberoi family is an Indian family that is famous for its involvement in hotels, namely through The Oberoi Group.
2. The Oberoi Group is a hotel company with its head office in Delhi.
Output: 1,2
Explanation: Both docs are helpful - doc 1 links the Oberoi family to The Oberoi Group, and doc 2 provides the head office location."#;

const FILTER_TAIL: &str = "Output only the helpful document numbers separated by commas:";

const SUBQUERY_HEAD: &str = "Given this main question and a supporting document, generate a simple sub-query (a question) that will help retrieve information from the document to answer the main question.";

const SUBQUERY_TAIL: &str = "Write ONE clear and specific question that:
1. Can be answered using ONLY this document
2. Helps retrieve information needed for the main question
3. Is direct and focused on key information from this document

Write only the question, without any explanations or formatting.";

pub const DEFAULT_EXTRACTION_INSTRUCTION: &str =
    "Extract the factual knowledge in the passage as triples.
Write every triple as (S> subject| P> predicate| O> object) and separate triples with \", \".
Rules:
- Extract as many meaningful relationships as the passage supports.
- Keep entity names exactly as cased in the passage.
- Never use pronouns as subjects or objects; name the entity.
- Make each predicate a short, explicit relation.
- Output only the triples.";

/// Task-dependent prompt material loaded at startup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub plan_exemplars: Option<String>,
    pub answer_exemplars: Option<String>,
    pub extraction_instruction: String,
    pub extraction_exemplars: Option<String>,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            plan_exemplars: None,
            answer_exemplars: None,
            extraction_instruction: DEFAULT_EXTRACTION_INSTRUCTION.to_string(),
            extraction_exemplars: None,
        }
    }
}

impl PromptTemplates {
    /// Reads whichever of `plan_exemplars.txt`, `answer_exemplars.txt`,
    /// `extraction.txt` and `extraction_exemplars.txt` exist in `dir`.
    pub fn load_dir(dir: &Path) -> io::Result<Self> {
        let read = |name: &str| -> io::Result<Option<String>> {
            let path = dir.join(name);
            if path.exists() {
                Ok(Some(fs::read_to_string(path)?.trim_end().to_string()))
            } else {
                Ok(None)
            }
        };
        let mut t = Self {
            plan_exemplars: read("plan_exemplars.txt")?,
            answer_exemplars: read("answer_exemplars.txt")?,
            extraction_exemplars: read("extraction_exemplars.txt")?,
            ..Self::default()
        };
        if let Some(inst) = read("extraction.txt")? {
            t.extraction_instruction = inst;
        }
        Ok(t)
    }
}

/// How the final answer should be asked for.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AnswerStyle {
    pub long_form: bool,
    /// Task instruction row appended to the answering instruction. A
    /// long-form request without one uses [`ELI5_INSTRUCTION`].
    pub task_instruction: Option<String>,
    pub exemplars: Option<String>,
}

pub fn render_plan_prompt(
    history: &[IterationRecord],
    question: &str,
    budget: Option<usize>,
    exemplars: Option<&str>,
) -> PromptBundle {
    PromptBundle {
        instruction: INST_PLAN.to_string(),
        context: history_context(history, question, budget),
        question: question_line(question),
        exemplars: exemplars.map(str::to_string),
    }
}

pub fn render_answer_prompt(
    history: &[IterationRecord],
    question: &str,
    style: &AnswerStyle,
    budget: Option<usize>,
) -> PromptBundle {
    let mut instruction = INST_ANS.to_string();
    let row = match (&style.task_instruction, style.long_form) {
        (Some(row), _) => Some(row.as_str()),
        (None, true) => Some(ELI5_INSTRUCTION),
        (None, false) => None,
    };
    if let Some(row) = row {
        instruction.push('\n');
        instruction.push_str(row);
    }
    PromptBundle {
        instruction,
        context: history_context(history, question, budget),
        question: question_line(question),
        exemplars: style.exemplars.clone(),
    }
}

/// A bare question with no instruction, for direct-answer attempts.
pub fn render_direct_prompt(question: &str) -> PromptBundle {
    PromptBundle {
        question: question.to_string(),
        ..Default::default()
    }
}

pub fn render_extraction_prompt(passage: &str, templates: &PromptTemplates) -> PromptBundle {
    PromptBundle {
        instruction: templates.extraction_instruction.clone(),
        context: String::new(),
        question: format!("Passage:\n{passage}\n\nTriples:"),
        exemplars: templates.extraction_exemplars.clone(),
    }
}

/// Document numbers are 1-based, one document per line.
pub fn render_filter_prompt(question: &str, docs: &[&str]) -> PromptBundle {
    let enumerated = docs
        .iter()
        .enumerate()
        .map(|(i, d)| format!("{}. {}", i + 1, d))
        .collect::<Vec<_>>()
        .join("\n");
    PromptBundle {
        instruction: FILTER_INSTRUCTION.to_string(),
        context: String::new(),
        question: format!("Question: {question}\nSupporting docs: \n{enumerated}\n\n{FILTER_TAIL}"),
        exemplars: None,
    }
}

/// The previous-subqueries block appears only when `previous` is non-empty.
pub fn render_subquery_prompt(
    question: &str,
    topic: &str,
    document: &str,
    previous: &[String],
) -> PromptBundle {
    let mut body =
        format!("Main Question: {question}\n\nCurrent Document ({topic}):\n{document}\n\n");
    if !previous.is_empty() {
        body.push_str("Previously generated sub-queries:\n");
        for q in previous {
            body.push_str("- ");
            body.push_str(q);
            body.push('\n');
        }
        body.push_str("\n\n");
    }
    body.push_str(SUBQUERY_TAIL);
    PromptBundle {
        instruction: SUBQUERY_HEAD.to_string(),
        context: String::new(),
        question: body,
        exemplars: None,
    }
}
