//! Backend contracts for every external service the runtime talks to:
//! policy model, judge model, web search, page fetch, and image embedding.
//!
//! Each contract is a small async trait so tests can swap in scripted or
//! fixture implementations and live deployments can point at HTTP services.

pub mod http;
pub mod scripted;

use serde::{Deserialize, Serialize};

use crate::tools::SearchResultItem;

/// Chat roles understood by chat-completion-style endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// One part of a message: text or an inline base64 image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    Text { text: String },
    Image { media_type: String, data_b64: String },
}

/// A chat turn with optional image attachments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: Vec<ContentPart>,
}

impl Message {
    pub fn text(role: Role, text: impl Into<String>) -> Self {
        Message { role, content: vec![ContentPart::Text { text: text.into() }] }
    }

    /// Concatenation of the text parts (images contribute nothing).
    pub fn text_content(&self) -> String {
        self.content
            .iter()
            .filter_map(|p| match p {
                ContentPart::Text { text } => Some(text.as_str()),
                ContentPart::Image { .. } => None,
            })
            .collect()
    }
}

/// Sampling parameters forwarded to the policy backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: usize,
}

impl Default for Sampling {
    fn default() -> Self {
        // Rollout defaults used throughout evaluation.
        Sampling { temperature: 0.7, top_p: 0.95, max_tokens: 4096 }
    }
}

/// One generated assistant turn.
///
/// When a stop string terminates generation, the emitted text INCLUDES the
/// matched stop string (the environment needs the closing tag to parse the
/// turn) and `end_reason` names it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub text: String,
    pub end_reason: String,
    /// Per-token logprobs when the backend can report them.
    pub logprobs: Option<Vec<f64>>,
}

/// Transport-level failure talking to any backend.
#[derive(Debug, Clone, thiserror::Error)]
pub enum TransportError {
    #[error("backend unreachable: {0}")]
    Unreachable(String),
    #[error("backend returned malformed payload: {0}")]
    Malformed(String),
    #[error("backend timed out after {0} ms")]
    Timeout(u64),
    #[error("backend not configured: {0}")]
    NotConfigured(String),
}

/// Chat-completion transport used by the judge and the url-visit assistant.
#[async_trait::async_trait]
pub trait ChatCompletion: Send + Sync {
    async fn complete(
        &self,
        messages: &[Message],
        temperature: f64,
    ) -> Result<String, TransportError>;
}

/// Policy model contract.
///
/// Implementations must respect stop strings where the transport supports
/// them (stop-inclusive semantics, see [`Generation`]); scripted backends
/// return authored turns verbatim.
#[async_trait::async_trait]
pub trait PolicyBackend: Send + Sync {
    async fn generate(
        &self,
        messages: &[Message],
        sampling: &Sampling,
        stop: &[String],
    ) -> Result<Generation, TransportError>;
}

/// Text retrieval backend behind the web_search tool.
#[async_trait::async_trait]
pub trait SearchBackend: Send + Sync {
    async fn search(&self, query: &str) -> Result<Vec<SearchResultItem>, TransportError>;
}

/// Raw page fetch behind the url_visit tool. Returns the body as text
/// (typically HTML; extraction happens in the tool).
#[async_trait::async_trait]
pub trait FetchBackend: Send + Sync {
    async fn fetch(&self, url: &str) -> Result<String, TransportError>;
}

/// Image embedding contract shared by the visual-search tool and the
/// retrieval index builder. Must be deterministic for a given image.
#[async_trait::async_trait]
pub trait EmbedBackend: Send + Sync {
    async fn embed_image(&self, image_bytes: &[u8]) -> Result<Vec<f32>, TransportError>;

    fn dim(&self) -> usize;
}
