//! Deterministic in-process backends for hermetic runs and tests: a scripted
//! policy, an equality-echo judge, a content-hash embedding, canned
//! search/fetch/chat stand-ins, and not-configured placeholders.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::sync::Mutex;

use crate::tools::SearchResultItem;

use super::{
    ChatCompletion, ContentPart, EmbedBackend, FetchBackend, Generation, Message, PolicyBackend,
    Role, Sampling, SearchBackend, TransportError,
};

// ---------------------------------------------------------------------------
// Scripted policy
// ---------------------------------------------------------------------------

/// One scripted item: the exact question text and its authored assistant
/// turns. `sample_turns` provides per-sample variants for grouped rollouts;
/// variants must diverge at their first turn so transcript-prefix matching
/// can tell them apart.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub question: String,
    #[serde(default)]
    pub turns: Vec<String>,
    #[serde(default)]
    pub sample_turns: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Script {
    pub entries: Vec<ScriptEntry>,
}

/// Policy backend that replays authored turns.
///
/// The next turn is located by the conversation so far: the entry whose
/// question matches the first user message, then the variant whose turns are
/// a prefix-match for the assistant turns already in the transcript. Scripts
/// are complete turns: stop strings are not applied to them.
pub struct ScriptedPolicy {
    script: Script,
}

impl ScriptedPolicy {
    pub fn new(script: Script) -> Self {
        ScriptedPolicy { script }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        Ok(ScriptedPolicy { script: serde_json::from_str(text)? })
    }

    fn variants<'a>(entry: &'a ScriptEntry) -> Vec<&'a [String]> {
        if entry.sample_turns.is_empty() {
            vec![entry.turns.as_slice()]
        } else {
            entry.sample_turns.iter().map(|v| v.as_slice()).collect()
        }
    }
}

#[async_trait::async_trait]
impl PolicyBackend for ScriptedPolicy {
    async fn generate(
        &self,
        messages: &[Message],
        _sampling: &Sampling,
        _stop: &[String],
    ) -> Result<Generation, TransportError> {
        let question = messages
            .iter()
            .find(|m| m.role == Role::User)
            .map(Message::text_content)
            .ok_or_else(|| TransportError::Malformed("no user message in transcript".into()))?;
        let entry = self
            .script
            .entries
            .iter()
            .find(|e| e.question == question)
            .ok_or_else(|| {
                TransportError::Malformed(format!("no script entry for question {question:?}"))
            })?;
        let transcript: Vec<String> = messages
            .iter()
            .filter(|m| m.role == Role::Assistant)
            .map(Message::text_content)
            .collect();
        let n = transcript.len();
        for variant in Self::variants(entry) {
            let prefix_matches = variant.len() > n
                && variant[..n].iter().zip(&transcript).all(|(a, b)| a == b);
            if prefix_matches {
                return Ok(Generation {
                    text: variant[n].clone(),
                    end_reason: "script".to_string(),
                    logprobs: None,
                });
            }
        }
        Err(TransportError::Malformed(format!(
            "script for {question:?} has no continuation after {n} turn(s)"
        )))
    }
}

// ---------------------------------------------------------------------------
// Equality-echo judge
// ---------------------------------------------------------------------------

/// Fixture judge: extracts the substituted fields back out of the rendered
/// judge prompt and returns "1" exactly when the model answer equals the
/// ground truth after whitespace/case normalization.
pub struct EchoJudge;

fn normalize_answer(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn field_between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = text.find(start)? + start.len();
    let to = text[from..].find(end)? + from;
    Some(text[from..to].trim())
}

#[async_trait::async_trait]
impl ChatCompletion for EchoJudge {
    async fn complete(
        &self,
        messages: &[Message],
        _temperature: f64,
    ) -> Result<String, TransportError> {
        let prompt = messages
            .last()
            .map(Message::text_content)
            .ok_or_else(|| TransportError::Malformed("empty message list".into()))?;
        let output = field_between(&prompt, "- **模型回答**：", "- **标准答案")
            .ok_or_else(|| TransportError::Malformed("prompt missing answer field".into()))?;
        let ground_truth = field_between(&prompt, "- **标准答案 (GT)**：", "请遵循以下")
            .ok_or_else(|| TransportError::Malformed("prompt missing ground truth".into()))?;
        let correct = normalize_answer(output) == normalize_answer(ground_truth);
        let verdict = serde_json::json!({
            "extracted_final_answer": output,
            "reasoning": "fixture equality check",
            "result": if correct { "1" } else { "0" },
            "confidence": 100,
            "strict": true,
        });
        Ok(verdict.to_string())
    }
}

// ---------------------------------------------------------------------------
// Queued chat (retry tests) and canned backends
// ---------------------------------------------------------------------------

/// Chat backend that pops pre-seeded responses in order.
pub struct QueuedChat {
    responses: Mutex<VecDeque<Result<String, TransportError>>>,
    pub calls: std::sync::atomic::AtomicU32,
}

impl QueuedChat {
    pub fn new(responses: Vec<Result<String, TransportError>>) -> Self {
        QueuedChat {
            responses: Mutex::new(responses.into()),
            calls: std::sync::atomic::AtomicU32::new(0),
        }
    }
}

#[async_trait::async_trait]
impl ChatCompletion for QueuedChat {
    async fn complete(
        &self,
        _messages: &[Message],
        _temperature: f64,
    ) -> Result<String, TransportError> {
        self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        self.responses
            .lock()
            .await
            .pop_front()
            .unwrap_or_else(|| Err(TransportError::Unreachable("queue exhausted".into())))
    }
}

/// Search backend serving a fixed table of query → items.
pub struct CannedSearch {
    pub by_query: std::collections::HashMap<String, Vec<SearchResultItem>>,
}

#[async_trait::async_trait]
impl SearchBackend for CannedSearch {
    async fn search(&self, query: &str) -> Result<Vec<SearchResultItem>, TransportError> {
        Ok(self.by_query.get(query).cloned().unwrap_or_default())
    }
}

/// Fetch backend serving a fixed table of url → body.
pub struct CannedFetch {
    pub by_url: std::collections::HashMap<String, String>,
}

#[async_trait::async_trait]
impl FetchBackend for CannedFetch {
    async fn fetch(&self, url: &str) -> Result<String, TransportError> {
        self.by_url
            .get(url)
            .cloned()
            .ok_or_else(|| TransportError::Unreachable(format!("no canned body for {url}")))
    }
}

// ---------------------------------------------------------------------------
// Content-hash embedding
// ---------------------------------------------------------------------------

/// Deterministic embedding backend: hashes the decoded pixel buffer and
/// expands the digest into a unit vector. No model involved; two images with
/// identical pixels embed identically regardless of their encoding.
pub struct HashEmbed {
    dim: usize,
}

impl HashEmbed {
    pub fn new(dim: usize) -> Self {
        HashEmbed { dim }
    }
}

#[async_trait::async_trait]
impl EmbedBackend for HashEmbed {
    async fn embed_image(&self, image_bytes: &[u8]) -> Result<Vec<f32>, TransportError> {
        let mut hasher = Sha256::new();
        match image::load_from_memory(image_bytes) {
            Ok(img) => {
                let rgba = img.to_rgba8();
                hasher.update(rgba.width().to_le_bytes());
                hasher.update(rgba.height().to_le_bytes());
                hasher.update(rgba.as_raw());
            }
            // Not an image: hash the raw bytes so the backend stays total.
            Err(_) => hasher.update(image_bytes),
        }
        let digest: [u8; 32] = hasher.finalize().into();
        let mut rng = ChaCha20Rng::from_seed(digest);
        let mut v: Vec<f64> = (0..self.dim).map(|_| rng.gen::<f64>() - 0.5).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            v[0] = 1.0;
        } else {
            for x in &mut v {
                *x /= norm;
            }
        }
        Ok(v.into_iter().map(|x| x as f32).collect())
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

// ---------------------------------------------------------------------------
// Not-configured placeholders
// ---------------------------------------------------------------------------

/// Placeholder for backends with no configured endpoint. Replay-mode runs
/// never reach these; anything else gets a clear error.
pub struct NotConfigured(pub &'static str);

#[async_trait::async_trait]
impl ChatCompletion for NotConfigured {
    async fn complete(&self, _m: &[Message], _t: f64) -> Result<String, TransportError> {
        Err(TransportError::NotConfigured(self.0.to_string()))
    }
}

#[async_trait::async_trait]
impl SearchBackend for NotConfigured {
    async fn search(&self, _q: &str) -> Result<Vec<SearchResultItem>, TransportError> {
        Err(TransportError::NotConfigured(self.0.to_string()))
    }
}

#[async_trait::async_trait]
impl FetchBackend for NotConfigured {
    async fn fetch(&self, _u: &str) -> Result<String, TransportError> {
        Err(TransportError::NotConfigured(self.0.to_string()))
    }
}

#[async_trait::async_trait]
impl PolicyBackend for NotConfigured {
    async fn generate(
        &self,
        _m: &[Message],
        _s: &Sampling,
        _stop: &[String],
    ) -> Result<Generation, TransportError> {
        Err(TransportError::NotConfigured(self.0.to_string()))
    }
}

#[async_trait::async_trait]
impl EmbedBackend for NotConfigured {
    async fn embed_image(&self, _b: &[u8]) -> Result<Vec<f32>, TransportError> {
        Err(TransportError::NotConfigured(self.0.to_string()))
    }

    fn dim(&self) -> usize {
        0
    }
}

/// Attach an image to a user message (question + picture).
pub fn user_message_with_image(text: &str, png: Arc<Vec<u8>>) -> Message {
    Message {
        role: Role::User,
        content: vec![
            ContentPart::Text { text: text.to_string() },
            ContentPart::Image {
                media_type: "image/png".to_string(),
                data_b64: {
                    use base64::Engine;
                    base64::engine::general_purpose::STANDARD.encode(png.as_slice())
                },
            },
        ],
    }
}
