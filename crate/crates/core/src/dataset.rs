//! Training-data construction for the planner and answerer: filter
//! supporting documents, generate one subquery per kept document, label
//! samples, and summarize the result.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::thread;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::embed::NullEmbedder;
use crate::eval::golden_match;
use crate::extract::{ExtractError, Passage, TripleSource};
use crate::gateway::{
    render_direct_prompt, render_filter_prompt, render_subquery_prompt, GatewayError, LanguageModel,
};
use crate::graph::{build_subgraph, QuestionGraph};
use crate::planner::{
    format_history, GRAPH_INFO_PREFIX, LABEL_NO_RETRIEVAL, LABEL_SUBQ, LABEL_SUFFICIENT,
};
use crate::triples::{parse_triples, TripleList};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDoc {
    pub topic: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceEntry {
    pub question: String,
    pub docs: Vec<SourceDoc>,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannerSample {
    pub input: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSample {
    pub input: String,
    pub output: String,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("entry has no supporting documents")]
    NoDocs,

    #[error("no document number in filter reply {0:?}")]
    UnparseableFilter(String),

    #[error("empty subquery for document {doc} of {question:?}")]
    EmptySubquery { question: String, doc: usize },

    #[error("entry has an empty gold answer")]
    EmptyAnswer,

    #[error(transparent)]
    Gateway(#[from] GatewayError),

    #[error(transparent)]
    Extract(#[from] ExtractError),

    #[error("{path} line {line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Kept document indices (0-based, ascending) plus any 1-based numbers the
/// model gave that were out of range.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilterOutcome {
    pub kept: Vec<usize>,
    pub out_of_range: Vec<usize>,
}

/// Reads document numbers from the first reply line that has any.
pub fn parse_filter_reply(reply: &str, num_docs: usize) -> Result<FilterOutcome, DatasetError> {
    let digits = Regex::new(r"\d+").expect("static regex");
    let line = reply
        .lines()
        .find(|l| digits.is_match(l))
        .ok_or_else(|| DatasetError::UnparseableFilter(reply.to_string()))?;
    let mut out = FilterOutcome::default();
    for m in digits.find_iter(line) {
        match m.as_str().parse::<usize>() {
            Ok(n) if (1..=num_docs).contains(&n) => out.kept.push(n - 1),
            _ => out
                .out_of_range
                .push(m.as_str().parse().unwrap_or(usize::MAX)),
        }
    }
    out.kept.sort_unstable();
    out.kept.dedup();
    if !out.out_of_range.is_empty() {
        log::warn!(
            "filter reply {reply:?} names documents outside 1..={num_docs}: {:?}",
            out.out_of_range
        );
    }
    Ok(out)
}

pub fn filter_supporting_docs(
    question: &str,
    docs: &[SourceDoc],
    model: &dyn LanguageModel,
    max_new_tokens: Option<usize>,
) -> Result<FilterOutcome, DatasetError> {
    if docs.is_empty() {
        return Err(DatasetError::NoDocs);
    }
    let bodies: Vec<String> = docs.iter().map(|d| d.text.clone()).collect();
    let refs: Vec<&str> = bodies.iter().map(String::as_str).collect();
    let reply = model.complete(&render_filter_prompt(question, &refs), max_new_tokens)?;
    parse_filter_reply(&reply, docs.len())
}

pub fn generate_subquery(
    question: &str,
    doc: &SourceDoc,
    doc_index: usize,
    previous: &[String],
    model: &dyn LanguageModel,
    max_new_tokens: Option<usize>,
) -> Result<String, DatasetError> {
    let prompt = render_subquery_prompt(question, &doc.topic, &doc.text, previous);
    let reply = model.complete(&prompt, max_new_tokens)?;
    reply
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .map(str::to_string)
        .ok_or_else(|| DatasetError::EmptySubquery {
            question: question.to_string(),
            doc: doc_index,
        })
}

/// The models a build talks to. `base` makes the direct-answer attempt;
/// `generator` filters documents and writes subqueries.
#[derive(Clone, Copy)]
pub struct LabelingModels<'a> {
    pub base: &'a dyn LanguageModel,
    pub generator: &'a dyn LanguageModel,
    pub extractor: &'a dyn TripleSource,
    pub max_new_tokens: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabeledEntry {
    pub planner: Vec<PlannerSample>,
    pub answer: Vec<AnswerSample>,
}

/// Labels one filtered entry. A direct answer that golden-matches the gold
/// yields a single `[NO_RETRIEVAL]` pair on the bare question. Otherwise
/// document `i` gets subquery `q_i` and triples `g_i`; the history through
/// `i` is labeled `[SUBQ] q_{i+1}`, and the full history is labeled
/// `[SUFFICIENT]` and paired with the gold answer.
pub fn label_samples(
    entry: &SourceEntry,
    models: LabelingModels<'_>,
) -> Result<LabeledEntry, DatasetError> {
    if entry.answer.trim().is_empty() {
        return Err(DatasetError::EmptyAnswer);
    }
    let direct = models.base.complete(
        &render_direct_prompt(&entry.question),
        models.max_new_tokens,
    )?;
    if golden_match(&direct, &[&entry.answer]).unwrap_or(0.0) == 1.0 {
        return Ok(LabeledEntry {
            planner: vec![PlannerSample {
                input: entry.question.clone(),
                label: LABEL_NO_RETRIEVAL.to_string(),
            }],
            answer: vec![AnswerSample {
                input: entry.question.clone(),
                output: entry.answer.clone(),
            }],
        });
    }
    if entry.docs.is_empty() {
        return Err(DatasetError::NoDocs);
    }

    let mut subqueries: Vec<String> = Vec::with_capacity(entry.docs.len());
    for (i, doc) in entry.docs.iter().enumerate() {
        let q = generate_subquery(
            &entry.question,
            doc,
            i,
            &subqueries,
            models.generator,
            models.max_new_tokens,
        )?;
        subqueries.push(q);
    }
    let mut graphs: Vec<TripleList> = Vec::with_capacity(entry.docs.len());
    for doc in &entry.docs {
        let passage = Passage {
            id: None,
            title: doc.topic.clone(),
            text: doc.text.clone(),
        };
        graphs.push(models.extractor.extract(&passage)?.0);
    }

    let n = entry.docs.len() - 1;
    let mut out = LabeledEntry::default();
    for i in 0..=n {
        let pairs: Vec<(&str, &TripleList)> = subqueries[..=i]
            .iter()
            .map(String::as_str)
            .zip(graphs[..=i].iter())
            .collect();
        let input = format_history(&pairs, &entry.question, None);
        if i < n {
            out.planner.push(PlannerSample {
                input,
                label: format!("{LABEL_SUBQ} {}", subqueries[i + 1]),
            });
        } else {
            out.planner.push(PlannerSample {
                input: input.clone(),
                label: LABEL_SUFFICIENT.to_string(),
            });
            out.answer.push(AnswerSample {
                input,
                output: entry.answer.clone(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildOptions {
    /// Ask the generator which documents help before labeling.
    pub filter: bool,
    pub workers: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            filter: true,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub entries: usize,
    pub labeled: usize,
    pub no_retrieval: usize,
    /// Entries whose filter kept no documents.
    pub dropped_no_docs: usize,
    /// Entries whose filter reply could not be read.
    pub flagged_for_review: Vec<usize>,
    pub failed: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BuildOutput {
    pub planner: Vec<PlannerSample>,
    pub answer: Vec<AnswerSample>,
    pub report: BuildReport,
}

enum EntryResult {
    Labeled(LabeledEntry),
    NoDocs,
    Flagged,
    Failed,
}

fn process_entry(
    index: usize,
    entry: &SourceEntry,
    models: LabelingModels<'_>,
    options: BuildOptions,
) -> EntryResult {
    let entry = if options.filter && !entry.docs.is_empty() {
        match filter_supporting_docs(
            &entry.question,
            &entry.docs,
            models.generator,
            models.max_new_tokens,
        ) {
            Ok(outcome) => SourceEntry {
                question: entry.question.clone(),
                docs: outcome
                    .kept
                    .iter()
                    .map(|&i| entry.docs[i].clone())
                    .collect(),
                answer: entry.answer.clone(),
            },
            Err(DatasetError::UnparseableFilter(reply)) => {
                log::warn!("entry {index}: unreadable filter reply {reply:?}; flagged for review");
                return EntryResult::Flagged;
            }
            Err(e) => {
                log::error!("entry {index}: {e}");
                return EntryResult::Failed;
            }
        }
    } else {
        entry.clone()
    };
    if entry.docs.is_empty() {
        log::info!("entry {index}: no supporting documents kept; dropped");
        return EntryResult::NoDocs;
    }
    match label_samples(&entry, models) {
        Ok(l) => EntryResult::Labeled(l),
        Err(e) => {
            log::error!("entry {index}: {e}");
            EntryResult::Failed
        }
    }
}

/// Labels every entry, `options.workers` at a time, and keeps the output in
/// input order. Scripted backends answer in call order, so runs against them
/// are only reproducible with one worker.
pub fn build_dataset(
    entries: &[SourceEntry],
    models: LabelingModels<'_>,
    options: BuildOptions,
) -> BuildOutput {
    let workers = options.workers.max(1);
    let mut results: Vec<Option<EntryResult>> = (0..entries.len()).map(|_| None).collect();
    if workers == 1 {
        for (i, e) in entries.iter().enumerate() {
            results[i] = Some(process_entry(i, e, models, options));
        }
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let done = std::sync::Mutex::new(&mut results);
        thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if i >= entries.len() {
                        break;
                    }
                    let r = process_entry(i, &entries[i], models, options);
                    done.lock().unwrap()[i] = Some(r);
                });
            }
        });
    }

    let mut out = BuildOutput::default();
    out.report.entries = entries.len();
    for (i, r) in results.into_iter().enumerate() {
        match r.expect("every entry processed") {
            EntryResult::Labeled(l) => {
                out.report.labeled += 1;
                if l.planner.iter().any(|p| p.label == LABEL_NO_RETRIEVAL) {
                    out.report.no_retrieval += 1;
                }
                out.planner.extend(l.planner);
                out.answer.extend(l.answer);
            }
            EntryResult::NoDocs => out.report.dropped_no_docs += 1,
            EntryResult::Flagged => out.report.flagged_for_review.push(i),
            EntryResult::Failed => out.report.failed.push(i),
        }
    }
    out
}

pub fn read_entries(path: &Path) -> Result<Vec<SourceEntry>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| DatasetError::Malformed {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

impl Summary {
    /// All zeros for an empty sample. The median of an even-sized sample is
    /// the mean of the two middle values.
    pub fn of(values: &[usize]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let mut v = values.to_vec();
        v.sort_unstable();
        let n = v.len();
        let median = if n % 2 == 1 {
            v[n / 2] as f64
        } else {
            (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
        };
        Self {
            min: v[0] as f64,
            mean: v.iter().sum::<usize>() as f64 / n as f64,
            median,
            max: v[n - 1] as f64,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub queries: usize,
    pub input_tokens: Summary,
    pub output_tokens: Summary,
    pub subqueries: Summary,
    pub nodes: Summary,
    pub edges: Summary,
    pub failed: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub planning: SplitStats,
    pub answering: SplitStats,
    /// Planner label counts keyed by label token.
    pub labels: BTreeMap<String, usize>,
    pub subq_tokens: Summary,
}

fn whitespace_len(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Subquery count and graph size recovered from an assembled history.
fn history_shape(input: &str) -> (usize, usize, usize) {
    let subqueries = input
        .lines()
        .filter(|l| l.starts_with(&format!("{LABEL_SUBQ} ")))
        .count();
    let mut graph = QuestionGraph::new();
    for (i, line) in input
        .lines()
        .filter_map(|l| l.strip_prefix(GRAPH_INFO_PREFIX))
        .enumerate()
    {
        let sub = build_subgraph(&parse_triples(line), &NullEmbedder, i)
            .expect("null embedder cannot fail");
        graph.merge(sub).expect("iterations are sequential");
    }
    let s = graph.stats();
    (subqueries, s.nodes, s.edges)
}

struct Shapes {
    inputs: Vec<usize>,
    outputs: Vec<usize>,
    subqueries: Vec<usize>,
    nodes: Vec<usize>,
    edges: Vec<usize>,
}

impl Shapes {
    fn new() -> Self {
        Self {
            inputs: vec![],
            outputs: vec![],
            subqueries: vec![],
            nodes: vec![],
            edges: vec![],
        }
    }

    fn add(&mut self, input: &str, output: &str) {
        let (q, n, e) = history_shape(input);
        self.inputs.push(whitespace_len(input));
        self.outputs.push(whitespace_len(output));
        self.subqueries.push(q);
        self.nodes.push(n);
        self.edges.push(e);
    }

    fn finish(self, failed: usize) -> SplitStats {
        SplitStats {
            queries: self.inputs.len(),
            input_tokens: Summary::of(&self.inputs),
            output_tokens: Summary::of(&self.outputs),
            subqueries: Summary::of(&self.subqueries),
            nodes: Summary::of(&self.nodes),
            edges: Summary::of(&self.edges),
            failed,
        }
    }
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> io::Result<(Vec<T>, usize)> {
    let mut ok = Vec::new();
    let mut failed = 0;
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(r) => ok.push(r),
            Err(e) => {
                log::warn!("{} line {}: {e}", path.display(), i + 1);
                failed += 1;
            }
        }
    }
    Ok((ok, failed))
}

pub fn stats_of(planner: &[PlannerSample], answer: &[AnswerSample]) -> DatasetStats {
    let mut stats = DatasetStats::default();
    for label in [LABEL_SUFFICIENT, LABEL_SUBQ, LABEL_NO_RETRIEVAL] {
        stats.labels.insert(label.to_string(), 0);
    }
    let mut plan = Shapes::new();
    let mut subq_tokens = Vec::new();
    for s in planner {
        plan.add(&s.input, &s.label);
        let key = if let Some(q) = s.label.strip_prefix(LABEL_SUBQ) {
            subq_tokens.push(whitespace_len(q));
            LABEL_SUBQ
        } else {
            s.label.as_str()
        };
        *stats.labels.entry(key.to_string()).or_default() += 1;
    }
    let mut ans = Shapes::new();
    for s in answer {
        ans.add(&s.input, &s.output);
    }
    stats.planning = plan.finish(0);
    stats.answering = ans.finish(0);
    stats.subq_tokens = Summary::of(&subq_tokens);
    stats
}

/// Malformed lines are counted per file and left out of every figure.
pub fn compute_stats(planner: &Path, answer: &Path) -> io::Result<DatasetStats> {
    let (p, pf) = read_lines::<PlannerSample>(planner)?;
    let (a, af) = read_lines::<AnswerSample>(answer)?;
    let mut stats = stats_of(&p, &a);
    stats.planning.failed = pf;
    stats.answering.failed = af;
    Ok(stats)
}
