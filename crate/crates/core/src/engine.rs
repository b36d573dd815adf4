//! The retrieval-and-structuring loop.
//!
//! Dynamic mode: plan once with an empty history; `[NO_RETRIEVAL]` goes
//! straight to answering. Otherwise iteration 0 retrieves with the main
//! question, and every iteration retrieves top-k passages, extracts triples,
//! merges the resulting subgraph into the question graph and re-plans, until
//! the planner says `[SUFFICIENT]` or the iteration cap is hit. Static mode
//! skips planning and retrieval and walks a fixed list of context sets.
//!
//! A run never panics on model misbehavior: gateway failures mark the trace
//! failed with the iterations completed so far, and unparseable plans follow
//! [`PlanFailurePolicy`].

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::embed::Embedder;
use crate::encoder::{encode_question_graph, EncoderParams, GraphToken};
use crate::extract::{Passage, TripleSource};
use crate::gateway::{
    render_answer_prompt, render_plan_prompt, AnswerStyle, LanguageModel, PromptTemplates,
};
use crate::graph::{build_subgraph, GraphStats, QuestionGraph};
use crate::planner::{parse_plan, IterationRecord, Plan, PlanError, DEFAULT_TOKEN_BUDGET};
use crate::retrieval::{RankedDocs, Retriever, ScoredDoc};
use crate::triples::TripleList;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrieverKind {
    #[default]
    Dense,
    Bm25,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    #[default]
    Dynamic,
    Static,
}

/// What to do when the planner's reply does not fit the label grammar.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanFailurePolicy {
    /// Stop retrieving and answer from what has been gathered.
    #[default]
    Answer,
    Abort,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub max_iterations: usize,
    pub top_k: usize,
    pub retriever: RetrieverKind,
    pub mode: InferenceMode,
    /// Generation limit passed to every model call. Remote backends refuse
    /// to run without one.
    pub max_new_tokens: Option<usize>,
    pub long_form: bool,
    #[serde(default)]
    pub task_instruction: Option<String>,
    pub token_budget: Option<usize>,
    pub on_plan_failure: PlanFailurePolicy,
    /// Wall-clock stage timings make traces non-reproducible, so they are
    /// opt-in.
    #[serde(default)]
    pub record_timings: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            max_iterations: 5,
            top_k: 5,
            retriever: RetrieverKind::Dense,
            mode: InferenceMode::Dynamic,
            max_new_tokens: None,
            long_form: false,
            task_instruction: None,
            token_budget: Some(DEFAULT_TOKEN_BUDGET),
            on_plan_failure: PlanFailurePolicy::Answer,
            record_timings: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("invalid session config: {0}")]
    Config(String),

    #[error("static inference needs at least one context set")]
    EmptyContexts,
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.max_iterations == 0 {
            return Err(EngineError::Config(
                "max_iterations must be at least 1".into(),
            ));
        }
        if self.top_k == 0 {
            return Err(EngineError::Config("top_k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    NoRetrieval,
    Sufficient,
    IterationCap,
    PlanFailure,
    StaticComplete,
    Error,
}

/// A step that did not go as the grammar expects but was recovered from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegradedStep {
    pub iteration: usize,
    pub raw: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub planning_ms: f64,
    pub retrieval_ms: f64,
    pub structuring_ms: f64,
    pub answering_ms: f64,
}

/// Full record of one question's run. Field names are part of the trace
/// file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTrace {
    pub question: String,
    pub mode: InferenceMode,
    pub status: TraceStatus,
    pub stop_reason: StopReason,
    pub initial_plan: Option<Plan>,
    pub iterations: Vec<IterationRecord>,
    /// Union graph size after each iteration.
    pub graph_stats: Vec<GraphStats>,
    pub final_graph_stats: GraphStats,
    pub answer: String,
    pub plan_calls: usize,
    pub degraded: Vec<DegradedStep>,
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<StageTimings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub settings: Option<Value>,
}

impl SessionTrace {
    fn new(question: &str, mode: InferenceMode) -> Self {
        Self {
            question: question.to_string(),
            mode,
            status: TraceStatus::Completed,
            stop_reason: StopReason::Error,
            initial_plan: None,
            iterations: Vec::new(),
            graph_stats: Vec::new(),
            final_graph_stats: GraphStats::default(),
            answer: String::new(),
            plan_calls: 0,
            degraded: Vec::new(),
            error: None,
            timings: None,
            settings: None,
        }
    }

    pub fn is_failed(&self) -> bool {
        self.status == TraceStatus::Failed
    }

    /// One line of the trace file.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace serializes")
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct Session {
    pub trace: SessionTrace,
    pub graph: QuestionGraph,
    pub graph_token: Option<GraphToken>,
}

#[derive(Default)]
struct Clock {
    enabled: bool,
    timings: StageTimings,
}

impl Clock {
    fn time<T>(&mut self, stage: fn(&mut StageTimings) -> &mut f64, f: impl FnOnce() -> T) -> T {
        if !self.enabled {
            return f();
        }
        let start = Instant::now();
        let out = f();
        *stage(&mut self.timings) += ms(start.elapsed());
        out
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

enum Step {
    Plan(Plan),
    Grammar(PlanError, String),
}

/// Session dependencies. One model serves both planning and answering;
/// triple extraction has its own source.
pub struct Engine<'a> {
    model: &'a dyn LanguageModel,
    extractor: &'a dyn TripleSource,
    embedder: &'a dyn Embedder,
    retriever: Option<&'a dyn Retriever>,
    encoder: Option<&'a EncoderParams>,
    templates: PromptTemplates,
}

impl<'a> Engine<'a> {
    pub fn new(
        model: &'a dyn LanguageModel,
        extractor: &'a dyn TripleSource,
        embedder: &'a dyn Embedder,
    ) -> Self {
        Self {
            model,
            extractor,
            embedder,
            retriever: None,
            encoder: None,
            templates: PromptTemplates::default(),
        }
    }

    pub fn with_retriever(mut self, retriever: &'a dyn Retriever) -> Self {
        self.retriever = Some(retriever);
        self
    }

    pub fn with_encoder(mut self, params: &'a EncoderParams) -> Self {
        self.encoder = Some(params);
        self
    }

    pub fn with_templates(mut self, templates: PromptTemplates) -> Self {
        self.templates = templates;
        self
    }

    /// One planner call over `history`. Returns the raw reply alongside its
    /// parse.
    pub fn plan_step(
        &self,
        history: &[IterationRecord],
        question: &str,
        config: &SessionConfig,
    ) -> Result<(String, Result<Plan, PlanError>), crate::gateway::GatewayError> {
        let prompt = render_plan_prompt(
            history,
            question,
            config.token_budget,
            self.templates.plan_exemplars.as_deref(),
        );
        let raw = self.model.complete(&prompt, config.max_new_tokens)?;
        let parsed = parse_plan(&raw, history.is_empty());
        Ok((raw, parsed))
    }

    fn answer_style(&self, config: &SessionConfig) -> AnswerStyle {
        AnswerStyle {
            long_form: config.long_form,
            task_instruction: config.task_instruction.clone(),
            exemplars: self.templates.answer_exemplars.clone(),
        }
    }

    pub fn run_question(
        &self,
        question: &str,
        config: &SessionConfig,
    ) -> Result<Session, EngineError> {
        self.run_dynamic(question, None, config)
    }

    /// Like [`Engine::run_question`], but iteration 0 consumes the given
    /// passages instead of retrieving.
    pub fn run_question_with_initial_context(
        &self,
        question: &str,
        initial: &[Passage],
        config: &SessionConfig,
    ) -> Result<Session, EngineError> {
        self.run_dynamic(question, Some(initial), config)
    }

    fn run_dynamic(
        &self,
        question: &str,
        initial: Option<&[Passage]>,
        config: &SessionConfig,
    ) -> Result<Session, EngineError> {
        config.validate()?;
        let mut run = Run::new(self, question, InferenceMode::Dynamic, config);

        let first = match run.plan() {
            Ok(step) => step,
            Err(e) => return Ok(run.fail(e)),
        };
        let retrieve = match first {
            Step::Plan(Plan::NoRetrieval) => {
                run.trace.initial_plan = Some(Plan::NoRetrieval);
                run.trace.stop_reason = StopReason::NoRetrieval;
                false
            }
            Step::Plan(Plan::SubQ(q)) => {
                run.trace.initial_plan = Some(Plan::SubQ(q));
                true
            }
            Step::Plan(Plan::Sufficient) => {
                run.trace.initial_plan = Some(Plan::Sufficient);
                run.degrade(
                    0,
                    LABEL_RAW_SUFFICIENT.into(),
                    "sufficient before any retrieval; answering directly",
                );
                run.trace.stop_reason = StopReason::Sufficient;
                false
            }
            Step::Grammar(err, raw) => {
                if config.on_plan_failure == PlanFailurePolicy::Abort {
                    return Ok(run.fail(err.to_string()));
                }
                run.degrade(0, raw, &err.to_string());
                run.trace.stop_reason = StopReason::PlanFailure;
                false
            }
        };

        if retrieve {
            // the main question is always the first subquery
            let mut subquery = question.to_string();
            for i in 0..config.max_iterations {
                let passages = match (i, initial) {
                    (0, Some(given)) => Ok((given.to_vec(), passages_as_ranked(given, 0))),
                    _ => run.retrieve(&subquery),
                };
                let (passages, ranked) = match passages {
                    Ok(p) => p,
                    Err(e) => return Ok(run.fail(e)),
                };
                if let Err(e) = run.structure(i, &subquery, ranked, &passages) {
                    return Ok(run.fail(e));
                }
                if i + 1 == config.max_iterations {
                    run.trace.stop_reason = StopReason::IterationCap;
                    break;
                }
                match run.plan() {
                    Err(e) => return Ok(run.fail(e)),
                    Ok(Step::Plan(Plan::SubQ(q))) => {
                        run.trace.iterations[i].plan_after = Some(Plan::SubQ(q.clone()));
                        subquery = q;
                    }
                    Ok(Step::Plan(p)) => {
                        run.trace.iterations[i].plan_after = Some(p);
                        run.trace.stop_reason = StopReason::Sufficient;
                        break;
                    }
                    Ok(Step::Grammar(err, raw)) => {
                        if config.on_plan_failure == PlanFailurePolicy::Abort {
                            return Ok(run.fail(err.to_string()));
                        }
                        run.degrade(i + 1, raw, &err.to_string());
                        run.trace.stop_reason = StopReason::PlanFailure;
                        break;
                    }
                }
            }
        }

        Ok(run.answer())
    }

    /// Fixed-iteration inference over predetermined context sets: no plan
    /// calls and no retrieval, one iteration per set.
    pub fn run_static(
        &self,
        question: &str,
        contexts: &[Vec<Passage>],
        config: &SessionConfig,
    ) -> Result<Session, EngineError> {
        config.validate()?;
        if contexts.is_empty() {
            return Err(EngineError::EmptyContexts);
        }
        let mut run = Run::new(self, question, InferenceMode::Static, config);
        for (i, set) in contexts.iter().enumerate() {
            if let Err(e) = run.structure(i, question, passages_as_ranked(set, i), set) {
                return Ok(run.fail(e));
            }
        }
        run.trace.stop_reason = StopReason::StaticComplete;
        Ok(run.answer())
    }
}

const LABEL_RAW_SUFFICIENT: &str = crate::planner::LABEL_SUFFICIENT;

fn passages_as_ranked(passages: &[Passage], iteration: usize) -> RankedDocs {
    RankedDocs {
        entries: passages
            .iter()
            .enumerate()
            .map(|(j, p)| ScoredDoc {
                id: p
                    .id
                    .clone()
                    .unwrap_or_else(|| format!("ctx-{iteration}-{j}")),
                score: 0.0,
            })
            .collect(),
        k: passages.len(),
    }
}

struct Run<'e, 'a> {
    engine: &'e Engine<'a>,
    config: &'e SessionConfig,
    question: String,
    trace: SessionTrace,
    graph: QuestionGraph,
    clock: Clock,
}

impl<'e, 'a> Run<'e, 'a> {
    fn new(
        engine: &'e Engine<'a>,
        question: &str,
        mode: InferenceMode,
        config: &'e SessionConfig,
    ) -> Self {
        Self {
            engine,
            config,
            question: question.to_string(),
            trace: SessionTrace::new(question, mode),
            graph: QuestionGraph::new(),
            clock: Clock {
                enabled: config.record_timings,
                ..Default::default()
            },
        }
    }

    fn degrade(&mut self, iteration: usize, raw: String, reason: &str) {
        log::warn!("degraded plan at iteration {iteration}: {reason}");
        self.trace.degraded.push(DegradedStep {
            iteration,
            raw,
            reason: reason.to_string(),
        });
    }

    fn plan(&mut self) -> Result<Step, String> {
        self.trace.plan_calls += 1;
        let engine = self.engine;
        let (history, question, config) = (&self.trace.iterations, &self.question, self.config);
        let res = self.clock.time(
            |t| &mut t.planning_ms,
            || engine.plan_step(history, question, config),
        );
        match res {
            Err(e) => Err(format!("planner call failed: {e}")),
            Ok((_, Ok(plan))) => Ok(Step::Plan(plan)),
            Ok((raw, Err(err))) => Ok(Step::Grammar(err, raw)),
        }
    }

    fn retrieve(&mut self, subquery: &str) -> Result<(Vec<Passage>, RankedDocs), String> {
        let retriever = self
            .engine
            .retriever
            .ok_or_else(|| "retrieval requested but no retriever is configured".to_string())?;
        let k = self.config.top_k;
        let ranked = self
            .clock
            .time(|t| &mut t.retrieval_ms, || retriever.retrieve(subquery, k))
            .map_err(|e| format!("retrieval failed: {e}"))?;
        let passages = ranked
            .ids()
            .map(|id| {
                retriever
                    .document(id)
                    .map(Passage::from)
                    .ok_or_else(|| format!("retriever returned unknown document {id:?}"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok((passages, ranked))
    }

    fn structure(
        &mut self,
        iteration: usize,
        subquery: &str,
        ranked: RankedDocs,
        passages: &[Passage],
    ) -> Result<(), String> {
        let engine = self.engine;
        let graph = &mut self.graph;
        let record = self.clock.time(
            |t| &mut t.structuring_ms,
            || -> Result<IterationRecord, String> {
                let mut triples = TripleList::new();
                let mut skipped = 0;
                for p in passages {
                    let (t, diag) = engine
                        .extractor
                        .extract(p)
                        .map_err(|e| format!("triple extraction failed: {e}"))?;
                    triples.extend(t);
                    skipped += diag.skipped_spans;
                }
                let sub = build_subgraph(&triples, engine.embedder, iteration)
                    .map_err(|e| format!("graph construction failed: {e}"))?;
                graph.merge(sub).map_err(|e| e.to_string())?;
                Ok(IterationRecord {
                    subquery: subquery.to_string(),
                    retrieved: ranked,
                    passages: passages.iter().map(Passage::content).collect(),
                    triples,
                    skipped_triple_spans: skipped,
                    plan_after: None,
                })
            },
        )?;
        self.trace.iterations.push(record);
        self.trace.graph_stats.push(self.graph.stats());
        Ok(())
    }

    fn answer(mut self) -> Session {
        let prompt = render_answer_prompt(
            &self.trace.iterations,
            &self.question,
            &self.engine.answer_style(self.config),
            self.config.token_budget,
        );
        let model = self.engine.model;
        let limit = self.config.max_new_tokens;
        let res = self
            .clock
            .time(|t| &mut t.answering_ms, || model.complete(&prompt, limit));
        match res {
            Ok(answer) if !answer.trim().is_empty() => {
                self.trace.answer = answer.trim().to_string();
                self.finish()
            }
            Ok(_) => self.fail("answerer returned an empty answer".into()),
            Err(e) => self.fail(format!("answer call failed: {e}")),
        }
    }

    fn fail(mut self, message: String) -> Session {
        log::error!("session failed: {message}");
        self.trace.status = TraceStatus::Failed;
        self.trace.stop_reason = StopReason::Error;
        self.trace.error = Some(message);
        self.finish()
    }

    fn finish(mut self) -> Session {
        self.trace.final_graph_stats = self.graph.stats();
        if self.clock.enabled {
            self.trace.timings = Some(self.clock.timings);
        }
        let graph_token = self.engine.encoder.and_then(|params| {
            match encode_question_graph(&self.graph, params) {
                Ok(tok) => Some(tok),
                Err(e) => {
                    log::warn!("graph encoding skipped: {e}");
                    None
                }
            }
        });
        Session {
            trace: self.trace,
            graph: self.graph,
            graph_token,
        }
    }
}
