//! Live HTTP implementations of the backend contracts.
//!
//! Policy and judge speak a chat-completion-style protocol: POST to the
//! configured URL with `{model?, messages, temperature, ...}` and read
//! `choices[0].message.content` back. Search and embed use small bespoke
//! JSON contracts documented on each type. Credentials travel as a bearer
//! token from the corresponding `*_API_KEY` environment variable.

use std::time::Duration;

use serde_json::json;

use crate::tools::SearchResultItem;

use super::{
    ChatCompletion, ContentPart, EmbedBackend, FetchBackend, Generation, Message, PolicyBackend,
    Role, Sampling, SearchBackend, TransportError,
};

#[derive(Debug, Clone)]
pub struct HttpEndpoint {
    pub url: String,
    pub api_key: Option<String>,
    pub model: Option<String>,
    pub timeout: Duration,
}

impl HttpEndpoint {
    pub fn new(url: impl Into<String>) -> Self {
        HttpEndpoint { url: url.into(), api_key: None, model: None, timeout: Duration::from_secs(60) }
    }

    fn client(&self) -> Result<reqwest::Client, TransportError> {
        reqwest::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| TransportError::Unreachable(e.to_string()))
    }

    async fn post_json(&self, body: serde_json::Value) -> Result<serde_json::Value, TransportError> {
        let mut req = self.client()?.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout(self.timeout.as_millis() as u64)
            } else {
                TransportError::Unreachable(e.to_string())
            }
        })?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().await.unwrap_or_default();
            return Err(TransportError::Unreachable(format!("HTTP {status}: {text}")));
        }
        resp.json().await.map_err(|e| TransportError::Malformed(e.to_string()))
    }
}

fn role_str(role: Role) -> &'static str {
    match role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
    }
}

/// Chat-completion message encoding; images become `image_url` data URIs.
fn encode_messages(messages: &[Message]) -> serde_json::Value {
    let encoded: Vec<serde_json::Value> = messages
        .iter()
        .map(|m| {
            let only_text = m.content.iter().all(|p| matches!(p, ContentPart::Text { .. }));
            if only_text {
                json!({"role": role_str(m.role), "content": m.text_content()})
            } else {
                let parts: Vec<serde_json::Value> = m
                    .content
                    .iter()
                    .map(|p| match p {
                        ContentPart::Text { text } => json!({"type": "text", "text": text}),
                        ContentPart::Image { media_type, data_b64 } => json!({
                            "type": "image_url",
                            "image_url": {"url": format!("data:{media_type};base64,{data_b64}")},
                        }),
                    })
                    .collect();
                json!({"role": role_str(m.role), "content": parts})
            }
        })
        .collect();
    serde_json::Value::Array(encoded)
}

fn first_choice_text(resp: &serde_json::Value) -> Result<String, TransportError> {
    resp["choices"][0]["message"]["content"]
        .as_str()
        .or_else(|| resp["choices"][0]["text"].as_str())
        .or_else(|| resp["content"].as_str())
        .map(str::to_string)
        .ok_or_else(|| TransportError::Malformed("no completion text in response".into()))
}

/// Chat-completion transport (judge, url-visit assistant).
pub struct HttpChat(pub HttpEndpoint);

#[async_trait::async_trait]
impl ChatCompletion for HttpChat {
    async fn complete(
        &self,
        messages: &[Message],
        temperature: f64,
    ) -> Result<String, TransportError> {
        let mut body = json!({
            "messages": encode_messages(messages),
            "temperature": temperature,
        });
        if let Some(model) = &self.0.model {
            body["model"] = json!(model);
        }
        let resp = self.0.post_json(body).await?;
        first_choice_text(&resp)
    }
}

/// Chat-completion policy backend.
///
/// Stop strings are forwarded along with `include_stop_str_in_output: true`
/// (the vLLM extension); servers that exclude the stop string will produce
/// turns missing their closing tag, which the trajectory schema then flags.
pub struct HttpPolicy(pub HttpEndpoint);

#[async_trait::async_trait]
impl PolicyBackend for HttpPolicy {
    async fn generate(
        &self,
        messages: &[Message],
        sampling: &Sampling,
        stop: &[String],
    ) -> Result<Generation, TransportError> {
        let mut body = json!({
            "messages": encode_messages(messages),
            "temperature": sampling.temperature,
            "top_p": sampling.top_p,
            "max_tokens": sampling.max_tokens,
        });
        if !stop.is_empty() {
            body["stop"] = json!(stop);
            body["include_stop_str_in_output"] = json!(true);
        }
        if let Some(model) = &self.0.model {
            body["model"] = json!(model);
        }
        let resp = self.0.post_json(body).await?;
        let text = first_choice_text(&resp)?;
        let end_reason = resp["choices"][0]["finish_reason"]
            .as_str()
            .unwrap_or("stop")
            .to_string();
        Ok(Generation { text, end_reason, logprobs: None })
    }
}

/// Search contract: POST `{query}`; response `{results: [{title, content,
/// url, date?}]}` (also accepts `snippet` for `content`).
pub struct HttpSearch(pub HttpEndpoint);

#[async_trait::async_trait]
impl SearchBackend for HttpSearch {
    async fn search(&self, query: &str) -> Result<Vec<SearchResultItem>, TransportError> {
        let resp = self.0.post_json(json!({"query": query})).await?;
        let results = resp["results"]
            .as_array()
            .ok_or_else(|| TransportError::Malformed("no results array".into()))?;
        Ok(results
            .iter()
            .enumerate()
            .map(|(i, r)| SearchResultItem {
                id: i as u32 + 1,
                title: r["title"].as_str().unwrap_or_default().to_string(),
                content: r["content"]
                    .as_str()
                    .or_else(|| r["snippet"].as_str())
                    .unwrap_or_default()
                    .to_string(),
                url: r["url"].as_str().unwrap_or_default().to_string(),
                date: r["date"].as_str().map(str::to_string),
            })
            .collect())
    }
}

/// Plain GET of the target URL; body returned as text.
pub struct DirectFetch {
    pub timeout: Duration,
}

#[async_trait::async_trait]
impl FetchBackend for DirectFetch {
    async fn fetch(&self, url: &str) -> Result<String, TransportError> {
        let client = reqwest::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| TransportError::Unreachable(e.to_string()))?;
        let resp = client.get(url).send().await.map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout(self.timeout.as_millis() as u64)
            } else {
                TransportError::Unreachable(e.to_string())
            }
        })?;
        let status = resp.status();
        if !status.is_success() {
            return Err(TransportError::Unreachable(format!("HTTP {status}")));
        }
        resp.text().await.map_err(|e| TransportError::Malformed(e.to_string()))
    }
}

/// Embedding contract: POST `{image_b64}`; response `{vector: [..]}`.
pub struct HttpEmbed {
    pub endpoint: HttpEndpoint,
    pub dim: usize,
}

#[async_trait::async_trait]
impl EmbedBackend for HttpEmbed {
    async fn embed_image(&self, image_bytes: &[u8]) -> Result<Vec<f32>, TransportError> {
        use base64::Engine;
        let b64 = base64::engine::general_purpose::STANDARD.encode(image_bytes);
        let resp = self.endpoint.post_json(json!({"image_b64": b64})).await?;
        let vector = resp["vector"]
            .as_array()
            .ok_or_else(|| TransportError::Malformed("no vector in response".into()))?;
        let v: Vec<f32> = vector.iter().filter_map(|x| x.as_f64()).map(|x| x as f32).collect();
        if v.len() != self.dim {
            return Err(TransportError::Malformed(format!(
                "embedding dimension {} != configured {}",
                v.len(),
                self.dim
            )));
        }
        Ok(v)
    }

    fn dim(&self) -> usize {
        self.dim
    }
}
