//! QA metrics and a batch harness over prediction files.

mod harness;
mod metrics;

pub use harness::{load_records, run_eval, score_records, EvalRecord, ExampleScore, MetricReport};
pub use metrics::{
    accuracy, exact_match, golden_match, lcs_len, normalize_text, rouge_l, rouge_lsum, token_f1,
    token_f1_max,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("at least one reference is required")]
    NoReferences,

    #[error("{predictions} predictions but {references} references")]
    LengthMismatch {
        predictions: usize,
        references: usize,
    },

    #[error("nothing to evaluate")]
    Empty,

    #[error("unknown metric {0:?}")]
    UnknownMetric(String),

    #[error("metric {0} is unavailable in this build")]
    Unavailable(Metric),

    #[error("{path} line {line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}: duplicate id {id:?}")]
    DuplicateId { path: String, id: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    GoldenMatch,
    TokenF1,
    Accuracy,
    RougeL,
    RougeLsum,
    Mauve,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::GoldenMatch,
        Metric::TokenF1,
        Metric::Accuracy,
        Metric::RougeL,
        Metric::RougeLsum,
        Metric::Mauve,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::GoldenMatch => "golden_match",
            Metric::TokenF1 => "token_f1",
            Metric::Accuracy => "accuracy",
            Metric::RougeL => "rouge_l",
            Metric::RougeLsum => "rouge_lsum",
            Metric::Mauve => "mauve",
        }
    }

    /// Per-example score in [0, 1]. Accuracy scores one example as a
    /// normalized exact match against any reference.
    pub fn score(self, pred: &str, refs: &[&str]) -> Result<f64, EvalError> {
        match self {
            Metric::GoldenMatch => golden_match(pred, refs),
            Metric::TokenF1 => token_f1_max(pred, refs),
            Metric::Accuracy => exact_match(pred, refs),
            Metric::RougeL => rouge_l(pred, refs),
            Metric::RougeLsum => rouge_lsum(pred, refs),
            Metric::Mauve => Err(EvalError::Unavailable(self)),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .or(match key.as_str() {
                "f1" => Some(Metric::TokenF1),
                "em" | "exact_match" => Some(Metric::Accuracy),
                "match" => Some(Metric::GoldenMatch),
                _ => None,
            })
            .ok_or_else(|| EvalError::UnknownMetric(s.to_string()))
    }
}
