#![allow(dead_code)]

use std::sync::Mutex;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use ras_core::extract::{ExtractError, Passage, TripleSource};
use ras_core::gateway::{GatewayError, LanguageModel, PromptBundle, INST_PLAN};
use ras_core::retrieval::{CorpusStore, Document};
use ras_core::triples::{ParseDiagnostics, Triple, TripleList};

/// Answers plan prompts and answer prompts from separate sources, so a
/// planner's behavior does not depend on how many answer calls came first.
pub struct RoleModel {
    plans: Mutex<PlanSource>,
    answer: String,
}

enum PlanSource {
    Queue(std::collections::VecDeque<String>),
    Always(String),
}

impl RoleModel {
    pub fn queued<I: IntoIterator<Item = S>, S: Into<String>>(plans: I, answer: &str) -> Self {
        Self {
            plans: Mutex::new(PlanSource::Queue(
                plans.into_iter().map(Into::into).collect(),
            )),
            answer: answer.into(),
        }
    }

    pub fn always(plan: &str, answer: &str) -> Self {
        Self {
            plans: Mutex::new(PlanSource::Always(plan.into())),
            answer: answer.into(),
        }
    }
}

impl LanguageModel for RoleModel {
    fn complete(&self, prompt: &PromptBundle, _: Option<usize>) -> Result<String, GatewayError> {
        if prompt.instruction != INST_PLAN {
            return Ok(self.answer.clone());
        }
        match &mut *self.plans.lock().unwrap() {
            PlanSource::Always(p) => Ok(p.clone()),
            PlanSource::Queue(q) => q
                .pop_front()
                .ok_or(GatewayError::ScriptExhausted { consumed: 0 }),
        }
    }
}

/// Chains the first words of a passage into triples, so
/// passages sharing vocabulary share entities.
pub struct ChainTriples;

impl TripleSource for ChainTriples {
    fn extract(&self, passage: &Passage) -> Result<(TripleList, ParseDiagnostics), ExtractError> {
        let words: Vec<&str> = passage.text.split_whitespace().collect();
        let triples = words
            .windows(2)
            .take(4)
            .map(|w| Triple::new(w[0], "precedes", w[1]).expect("plain words are valid fields"))
            .collect();
        Ok((triples, ParseDiagnostics::default()))
    }
}

pub const VOCAB: [&str; 24] = [
    "Alpha", "Bravo", "Charlie", "Delta", "Echo", "Foxtrot", "Golf", "Hotel", "India", "Juliet",
    "Kilo", "Lima", "Mike", "November", "Oscar", "Papa", "Quebec", "Romeo", "Sierra", "Tango",
    "Uniform", "Victor", "Whiskey", "Xray",
];

pub fn random_text(rng: &mut StdRng, words: usize) -> String {
    (0..words)
        .map(|_| VOCAB[rng.gen_range(0..VOCAB.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn synthetic_corpus(n: usize, seed: u64) -> CorpusStore {
    let mut rng = StdRng::seed_from_u64(seed);
    let docs = (0..n)
        .map(|i| {
            let words = rng.gen_range(3..12);
            Document::new(
                format!("doc-{i:04}"),
                format!("Title {i}"),
                random_text(&mut rng, words),
            )
        })
        .collect();
    CorpusStore::from_documents(docs).unwrap()
}
