//! The single seam for model calls.
//!
//! Every prompt is a [`PromptBundle`]; every model sits behind
//! [`LanguageModel`]. Two backends ship: [`RemoteBackend`] speaks a
//! chat-completion wire protocol, [`ScriptedBackend`] replays canned replies
//! so that whole engine runs are reproducible in tests.

mod prompts;
mod remote;
mod scripted;

use serde::{Deserialize, Serialize};

pub use prompts::{
    render_answer_prompt, render_direct_prompt, render_extraction_prompt, render_filter_prompt,
    render_plan_prompt, render_subquery_prompt, AnswerStyle, PromptTemplates, ARC_C_INSTRUCTION,
    ASQA_INSTRUCTION, DEFAULT_EXTRACTION_INSTRUCTION, ELI5_INSTRUCTION, FILTER_INSTRUCTION,
    INST_ANS, INST_PLAN, PUBHEALTH_INSTRUCTION,
};
pub use remote::{RemoteBackend, RemoteConfig};
pub use scripted::{parse_script, ScriptedBackend};

use crate::http::TransportError;

#[derive(Debug, Clone, thiserror::Error)]
pub enum GatewayError {
    #[error(transparent)]
    Transport(#[from] TransportError),

    #[error("model response malformed: {0}")]
    Malformed(String),

    #[error("script exhausted after {consumed} response(s)")]
    ScriptExhausted { consumed: usize },

    #[error("max_new_tokens must be set explicitly for remote generation")]
    MissingLimit,
}

impl GatewayError {
    /// Transport failures may succeed on a later call; everything else is a
    /// bug or a configuration problem.
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Transport(_))
    }
}

/// The four argument slots of a model call.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub instruction: String,
    pub context: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exemplars: Option<String>,
}

impl PromptBundle {
    /// System-side text: instruction, then exemplars when present.
    pub fn system_text(&self) -> String {
        let mut parts: Vec<&str> = Vec::new();
        if !self.instruction.is_empty() {
            parts.push(&self.instruction);
        }
        if let Some(ex) = self.exemplars.as_deref().filter(|e| !e.is_empty()) {
            parts.push(ex);
        }
        parts.join("\n\n")
    }

    /// User-side text: history context lines, then the question slot.
    pub fn user_text(&self) -> String {
        if self.context.is_empty() {
            self.question.clone()
        } else {
            format!("{}\n{}", self.context, self.question)
        }
    }

    /// Everything as one document, blocks separated by blank lines.
    pub fn to_text(&self) -> String {
        let system = self.system_text();
        let user = self.user_text();
        match (system.is_empty(), user.is_empty()) {
            (true, _) => user,
            (false, true) => system,
            (false, false) => format!("{system}\n\n{user}"),
        }
    }
}

pub trait LanguageModel: Send + Sync {
    /// `max_new_tokens` of `None` means the caller configured no limit;
    /// backends that talk to a real model reject that.
    fn complete(
        &self,
        prompt: &PromptBundle,
        max_new_tokens: Option<usize>,
    ) -> Result<String, GatewayError>;
}

impl<T: LanguageModel + ?Sized> LanguageModel for std::sync::Arc<T> {
    fn complete(
        &self,
        prompt: &PromptBundle,
        max_new_tokens: Option<usize>,
    ) -> Result<String, GatewayError> {
        (**self).complete(prompt, max_new_tokens)
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for &T {
    fn complete(
        &self,
        prompt: &PromptBundle,
        max_new_tokens: Option<usize>,
    ) -> Result<String, GatewayError> {
        (**self).complete(prompt, max_new_tokens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_layout() {
        let p = PromptBundle {
            instruction: "INST".into(),
            context: "ctx".into(),
            question: "Question: Q".into(),
            exemplars: Some("EX".into()),
        };
        assert_eq!(p.to_text(), "INST\n\nEX\n\nctx\nQuestion: Q");
        let bare = PromptBundle {
            question: "Q".into(),
            ..Default::default()
        };
        assert_eq!(bare.to_text(), "Q");
    }
}
