//! Iterative retrieval planning over question-specific knowledge graphs.
//!
//! A session plans, retrieves passages, turns them into triples, grows a
//! graph per question, and answers from the accumulated graph context. The
//! crate also carries the training-data labeler and the QA metrics used to
//! score runs.

pub mod dataset;
pub mod embed;
pub mod encoder;
pub mod engine;
pub mod eval;
pub mod extract;
pub mod gateway;
pub mod graph;
pub mod http;
pub mod planner;
pub mod retrieval;
pub mod triples;

pub use engine::{Engine, Session, SessionConfig, SessionTrace};
pub use planner::Plan;
pub use triples::{parse_triples, serialize_triples, Triple, TripleList};
