//! Layered settings: built-in defaults, then a TOML file, then `RAS_*`
//! environment variables, then command-line flags. Each layer overrides the
//! previous one field by field.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use ras_core::engine::{InferenceMode, PlanFailurePolicy, RetrieverKind, SessionConfig};
use ras_core::planner::DEFAULT_TOKEN_BUDGET;

pub const ENV_PREFIX: &str = "RAS_";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Remote,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    pub max_iterations: usize,
    pub top_k: usize,
    pub retriever: RetrieverKind,
    pub mode: InferenceMode,
    pub max_new_tokens: Option<usize>,
    pub long_form: bool,
    pub task_instruction: Option<String>,
    pub token_budget: Option<usize>,
    pub on_plan_failure: PlanFailurePolicy,
    pub record_timings: bool,

    pub backend: BackendKind,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub api_key: Option<String>,
    pub temperature: f64,
    pub generator_model: Option<String>,
    pub extract_model: Option<String>,

    /// `hash:<dim>` or `remote`.
    pub embedder: String,
    pub embed_endpoint: Option<String>,
    pub embed_dimension: Option<usize>,
    pub shards: usize,

    pub corpus: Option<PathBuf>,
    pub index_dir: Option<PathBuf>,
    pub templates_dir: Option<PathBuf>,
    pub encoder_weights: Option<PathBuf>,
    pub workers: usize,
}

impl Default for CliConfig {
    fn default() -> Self {
        let s = SessionConfig::default();
        Self {
            max_iterations: s.max_iterations,
            top_k: s.top_k,
            retriever: s.retriever,
            mode: s.mode,
            max_new_tokens: s.max_new_tokens,
            long_form: s.long_form,
            task_instruction: s.task_instruction,
            token_budget: Some(DEFAULT_TOKEN_BUDGET),
            on_plan_failure: s.on_plan_failure,
            record_timings: s.record_timings,
            backend: BackendKind::Remote,
            endpoint: None,
            model: None,
            api_key: None,
            temperature: 0.0,
            generator_model: None,
            extract_model: None,
            embedder: "hash:256".into(),
            embed_endpoint: None,
            embed_dimension: None,
            shards: ras_core::retrieval::DEFAULT_SHARDS,
            corpus: None,
            index_dir: None,
            templates_dir: None,
            encoder_weights: None,
            workers: 1,
        }
    }
}

impl CliConfig {
    pub fn session(&self) -> SessionConfig {
        SessionConfig {
            max_iterations: self.max_iterations,
            top_k: self.top_k,
            retriever: self.retriever,
            mode: self.mode,
            max_new_tokens: self.max_new_tokens,
            long_form: self.long_form,
            task_instruction: self.task_instruction.clone(),
            token_budget: self.token_budget,
            on_plan_failure: self.on_plan_failure,
            record_timings: self.record_timings,
        }
    }

    /// Effective settings for the trace, with the credential removed.
    pub fn snapshot(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(key) = v.get_mut("api_key") {
            if !key.is_null() {
                *key = Value::String("<redacted>".into());
            }
        }
        v
    }
}

/// One named layer of overrides.
pub struct Layer {
    pub source: String,
    pub values: Map<String, Value>,
}

fn field_names() -> Vec<String> {
    match serde_json::to_value(CliConfig::default()).expect("config serializes") {
        Value::Object(m) => m.keys().cloned().collect(),
        _ => unreachable!(),
    }
}

pub fn file_layer(path: &Path) -> Result<Layer> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let table: toml::Table =
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    let values = match serde_json::to_value(table)? {
        Value::Object(m) => m,
        _ => unreachable!(),
    };
    Ok(Layer {
        source: format!("config file {}", path.display()),
        values,
    })
}

/// Reads `RAS_<FIELD>` for every config field from `lookup`.
pub fn env_layer(lookup: impl Fn(&str) -> Option<String>) -> Layer {
    let mut values = Map::new();
    for field in field_names() {
        let var = format!("{ENV_PREFIX}{}", field.to_ascii_uppercase());
        if let Some(raw) = lookup(&var) {
            values.insert(field, Value::String(raw));
        }
    }
    Layer {
        source: "environment".into(),
        values,
    }
}

/// Strings from the environment or flags are tried as JSON scalars first
/// (numbers, booleans), then as plain strings.
fn candidates(v: &Value) -> Vec<Value> {
    match v {
        Value::String(s) => {
            let mut out = Vec::new();
            if let Ok(parsed) = serde_json::from_str::<Value>(s) {
                if !parsed.is_string() && !parsed.is_object() && !parsed.is_array() {
                    out.push(parsed);
                }
            }
            out.push(v.clone());
            out
        }
        other => vec![other.clone()],
    }
}

pub fn resolve_config(layers: &[Layer]) -> Result<CliConfig> {
    let known = field_names();
    let mut merged = match serde_json::to_value(CliConfig::default())? {
        Value::Object(m) => m,
        _ => unreachable!(),
    };
    for layer in layers {
        for (field, value) in &layer.values {
            if !known.contains(field) {
                bail!("{}: unknown field `{field}`", layer.source);
            }
            let mut last_err = None;
            let mut accepted = None;
            for c in candidates(value) {
                let mut trial = merged.clone();
                trial.insert(field.clone(), c.clone());
                match serde_json::from_value::<CliConfig>(Value::Object(trial)) {
                    Ok(_) => {
                        accepted = Some(c);
                        break;
                    }
                    Err(e) => last_err = Some(e),
                }
            }
            match accepted {
                Some(c) => {
                    merged.insert(field.clone(), c);
                }
                None => {
                    return Err(anyhow!(
                        "{}: invalid value {} for field `{field}`: {}",
                        layer.source,
                        value,
                        last_err.map(|e| e.to_string()).unwrap_or_default()
                    ))
                }
            }
        }
    }
    let config: CliConfig = serde_json::from_value(Value::Object(merged))?;
    if config.max_iterations == 0 || config.top_k == 0 {
        bail!("max_iterations and top_k must be at least 1");
    }
    Ok(config)
}
