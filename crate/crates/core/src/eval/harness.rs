use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::thread;

use serde::{Deserialize, Serialize};

use super::{EvalError, Metric};

/// One line of a predictions or references file. References may carry
/// several acceptable answers under `texts`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub texts: Option<Vec<String>>,
}

impl EvalRecord {
    fn all_texts(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.text.iter().map(String::as_str).collect();
        if let Some(ts) = &self.texts {
            out.extend(ts.iter().map(String::as_str));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: Metric,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "N_failed")]
    pub n_failed: usize,
    /// Mean per-example score as a percentage.
    pub aggregate: f64,
    pub per_example: Vec<ExampleScore>,
    pub failed_ids: Vec<String>,
}

pub fn load_records(path: &Path) -> Result<Vec<EvalRecord>, EvalError> {
    let shown = path.display().to_string();
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EvalRecord = serde_json::from_str(&line).map_err(|e| EvalError::Malformed {
            path: shown.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(rec.id.clone()) {
            return Err(EvalError::DuplicateId {
                path: shown,
                id: rec.id,
            });
        }
        out.push(rec);
    }
    Ok(out)
}

/// Scores predictions against references matched by id. Ids present on
/// only one side, and examples the metric rejects, count as failed and stay
/// out of the aggregate. `workers` bounds the scoring threads.
pub fn score_records(
    predictions: &[EvalRecord],
    references: &[EvalRecord],
    metric: Metric,
    workers: usize,
) -> Result<MetricReport, EvalError> {
    if metric == Metric::Mauve {
        return Err(EvalError::Unavailable(metric));
    }
    let refs: HashMap<&str, &EvalRecord> = references.iter().map(|r| (r.id.as_str(), r)).collect();
    let pred_ids: std::collections::HashSet<&str> =
        predictions.iter().map(|p| p.id.as_str()).collect();

    let score_one = |p: &EvalRecord| -> Option<f64> {
        let r = refs.get(p.id.as_str())?;
        let pred = p
            .text
            .as_deref()
            .or_else(|| p.texts.as_ref()?.first().map(String::as_str))?;
        metric.score(pred, &r.all_texts()).ok()
    };

    let workers = workers.max(1);
    let chunk = predictions.len().div_ceil(workers).max(1);
    let scores: Vec<Option<f64>> = thread::scope(|s| {
        let handles: Vec<_> = predictions
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(score_one).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("scoring thread panicked"))
            .collect()
    });

    let mut per_example = Vec::new();
    let mut failed_ids = Vec::new();
    for (p, s) in predictions.iter().zip(scores) {
        match s {
            Some(score) => per_example.push(ExampleScore {
                id: p.id.clone(),
                score,
            }),
            None => failed_ids.push(p.id.clone()),
        }
    }
    failed_ids.extend(
        references
            .iter()
            .filter(|r| !pred_ids.contains(r.id.as_str()))
            .map(|r| r.id.clone()),
    );
    if !failed_ids.is_empty() {
        log::warn!("{} examples failed: {:?}", failed_ids.len(), failed_ids);
    }

    let n = per_example.len();
    let aggregate = if n == 0 {
        0.0
    } else {
        100.0 * per_example.iter().map(|e| e.score).sum::<f64>() / n as f64
    };
    Ok(MetricReport {
        metric,
        n,
        n_failed: failed_ids.len(),
        aggregate,
        per_example,
        failed_ids,
    })
}

pub fn run_eval(
    predictions: &Path,
    references: &Path,
    metric: Metric,
    workers: usize,
) -> Result<MetricReport, EvalError> {
    let preds = load_records(predictions)?;
    let refs = load_records(references)?;
    score_records(&preds, &refs, metric, workers)
}
