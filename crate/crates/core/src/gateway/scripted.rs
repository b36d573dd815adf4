use std::collections::VecDeque;
use std::fs;
use std::io;
use std::path::Path;
use std::sync::Mutex;

use super::{GatewayError, LanguageModel, PromptBundle};

/// Replays canned responses strictly in order and records every prompt it
/// was given.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    state: Mutex<ScriptState>,
}

#[derive(Debug, Default)]
struct ScriptState {
    queue: VecDeque<String>,
    consumed: usize,
    prompts: Vec<PromptBundle>,
}

impl ScriptedBackend {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            state: Mutex::new(ScriptState {
                queue: responses.into_iter().map(Into::into).collect(),
                ..Default::default()
            }),
        }
    }

    pub fn from_file(path: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(path)?;
        parse_script(&text).map(Self::new).map_err(|e| {
            io::Error::new(
                io::ErrorKind::InvalidData,
                format!("{}: {e}", path.display()),
            )
        })
    }

    pub fn remaining(&self) -> usize {
        self.state.lock().unwrap().queue.len()
    }

    pub fn consumed(&self) -> usize {
        self.state.lock().unwrap().consumed
    }

    pub fn prompts(&self) -> Vec<PromptBundle> {
        self.state.lock().unwrap().prompts.clone()
    }
}

impl LanguageModel for ScriptedBackend {
    fn complete(
        &self,
        prompt: &PromptBundle,
        _max_new_tokens: Option<usize>,
    ) -> Result<String, GatewayError> {
        let mut state = self.state.lock().unwrap();
        state.prompts.push(prompt.clone());
        match state.queue.pop_front() {
            Some(r) => {
                state.consumed += 1;
                Ok(r)
            }
            None => Err(GatewayError::ScriptExhausted {
                consumed: state.consumed,
            }),
        }
    }
}

/// One response per line. A line starting with `"` is read as a JSON string
/// literal so responses can carry newlines; any other non-blank line is taken
/// verbatim.
pub fn parse_script(text: &str) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if line.trim_start().starts_with('"') {
            let s: String =
                serde_json::from_str(line.trim()).map_err(|e| format!("line {}: {e}", i + 1))?;
            out.push(s);
        } else {
            out.push(line.to_string());
        }
    }
    Ok(out)
}
