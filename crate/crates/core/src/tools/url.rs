//! Webpage content extraction in three modes: full text, character window,
//! or goal-directed structured summary via an assistant model.

use crate::backends::{ChatCompletion, FetchBackend, Message, Role};
use crate::util::extract_json_object;

use super::{as_integral, ToolError};

const SUMMARIZE_PROMPT: &str = "You are a reading assistant. Given page content and a goal, \
extract what serves the goal.\nRespond strictly as a JSON object: \
{\"rational\": string, \"evidence\": [string, ...], \"summary\": string}.\n\nGoal: {goal}\n\nPage content:\n{content}";

/// Visit a URL. Mode selection: a non-empty `goal` produces a structured
/// summary; otherwise a `window` argument selects the half-open character
/// range [a, b) of the extracted text; otherwise the full extracted text is
/// returned. Output object: `{visited_url, mode, result}`.
pub async fn url_visit(
    args: &serde_json::Map<String, serde_json::Value>,
    fetch: &dyn FetchBackend,
    assistant: &dyn ChatCompletion,
) -> Result<serde_json::Value, ToolError> {
    let url = args["url"].as_str().expect("validated");
    if reqwest::Url::parse(url).is_err() {
        return Err(ToolError::ArgValidation(format!("url '{url}' is not a valid URL")));
    }
    let goal = args.get("goal").and_then(|v| v.as_str()).filter(|g| !g.trim().is_empty());
    let window = args.get("window").and_then(|v| v.as_array()).map(|arr| {
        let a = as_integral(&arr[0]).expect("validated") as usize;
        let b = as_integral(&arr[1]).expect("validated") as usize;
        (a, b)
    });

    let raw = fetch
        .fetch(url)
        .await
        .map_err(|e| ToolError::FetchFailure(e.to_string()))?;
    let text = html_to_text(&raw);

    let (mode, result) = if let Some(goal) = goal {
        (
            "summarize",
            summarize(&text, goal, assistant).await?,
        )
    } else if let Some((a, b)) = window {
        ("window", serde_json::Value::String(window_slice(&text, a, b)?))
    } else {
        ("full", serde_json::Value::String(text))
    };

    Ok(serde_json::json!({
        "visited_url": url,
        "mode": mode,
        "result": result,
    }))
}

/// Character-offset window, half-open and 0-based. `a` beyond the text is an
/// error; `b` is clamped to the length.
fn window_slice(text: &str, a: usize, b: usize) -> Result<String, ToolError> {
    let len = text.chars().count();
    if a > len || a > b {
        return Err(ToolError::WindowOutOfRange { a, b, len });
    }
    Ok(text.chars().skip(a).take(b.min(len) - a).collect())
}

async fn summarize(
    text: &str,
    goal: &str,
    assistant: &dyn ChatCompletion,
) -> Result<serde_json::Value, ToolError> {
    let prompt = SUMMARIZE_PROMPT.replace("{goal}", goal).replace("{content}", text);
    let reply = assistant
        .complete(&[Message::text(Role::User, prompt)], 0.0)
        .await
        .map_err(|e| ToolError::AssistantFailure(e.to_string()))?;
    let object = extract_json_object(&reply)
        .ok_or_else(|| ToolError::AssistantFailure("assistant returned no JSON object".into()))?;
    let value: serde_json::Value = serde_json::from_str(object)
        .map_err(|e| ToolError::AssistantFailure(format!("assistant JSON invalid: {e}")))?;
    for key in ["rational", "evidence", "summary"] {
        if value.get(key).is_none() {
            return Err(ToolError::AssistantFailure(format!("summary missing field {key}")));
        }
    }
    Ok(value)
}

/// Default page-text reduction: drop script/style blocks, strip tags, decode
/// the common entities, and collapse whitespace runs. A dedicated reader
/// service can replace this wholesale by returning plain text from the fetch
/// backend (text without '<' passes through).
pub fn html_to_text(html: &str) -> String {
    let no_scripts = strip_block(html, "script");
    let no_styles = strip_block(&no_scripts, "style");

    let mut out = String::with_capacity(no_styles.len());
    let mut in_tag = false;
    for c in no_styles.chars() {
        match c {
            '<' => in_tag = true,
            '>' => {
                in_tag = false;
                out.push(' ');
            }
            c if !in_tag => out.push(c),
            _ => {}
        }
    }

    let decoded = out
        .replace("&nbsp;", " ")
        .replace("&amp;", "&")
        .replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&#39;", "'");

    let mut collapsed = String::with_capacity(decoded.len());
    let mut last_ws = true;
    for c in decoded.chars() {
        if c.is_whitespace() {
            if !last_ws {
                collapsed.push(' ');
            }
            last_ws = true;
        } else {
            collapsed.push(c);
            last_ws = false;
        }
    }
    collapsed.trim().to_string()
}

fn strip_block(html: &str, tag: &str) -> String {
    let open = format!("<{tag}");
    let close = format!("</{tag}>");
    let lower = html.to_lowercase();
    let mut out = String::with_capacity(html.len());
    let mut pos = 0;
    while let Some(rel) = lower[pos..].find(&open) {
        let start = pos + rel;
        out.push_str(&html[pos..start]);
        match lower[start..].find(&close) {
            Some(rel_end) => pos = start + rel_end + close.len(),
            None => {
                pos = html.len();
                break;
            }
        }
    }
    out.push_str(&html[pos..]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::TransportError;

    struct CannedFetch(String);

    #[async_trait::async_trait]
    impl FetchBackend for CannedFetch {
        async fn fetch(&self, _url: &str) -> Result<String, TransportError> {
            Ok(self.0.clone())
        }
    }

    struct CannedChat(String);

    #[async_trait::async_trait]
    impl ChatCompletion for CannedChat {
        async fn complete(
            &self,
            _messages: &[Message],
            _temperature: f64,
        ) -> Result<String, TransportError> {
            Ok(self.0.clone())
        }
    }

    fn args(v: serde_json::Value) -> serde_json::Map<String, serde_json::Value> {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn html_reduction() {
        let html = "<html><head><style>body{}</style><script>var x=1;</script></head>\
                    <body><h1>Title</h1><p>Hello&nbsp;&amp; world</p></body></html>";
        assert_eq!(html_to_text(html), "Title Hello & world");
    }

    #[tokio::test]
    async fn full_mode_and_window_equivalence() {
        let fetch = CannedFetch("<p>one two three</p>".into());
        let chat = CannedChat(String::new());
        let full = url_visit(&args(serde_json::json!({"url": "https://e.com/a"})), &fetch, &chat)
            .await
            .unwrap();
        assert_eq!(full["mode"], "full");
        let text = full["result"].as_str().unwrap().to_string();
        let len = text.chars().count();
        let windowed = url_visit(
            &args(serde_json::json!({"url": "https://e.com/a", "window": [0, len]})),
            &fetch,
            &chat,
        )
        .await
        .unwrap();
        assert_eq!(windowed["mode"], "window");
        assert_eq!(windowed["result"].as_str().unwrap(), text);
    }

    #[tokio::test]
    async fn window_past_end_is_error() {
        let fetch = CannedFetch("<p>short</p>".into());
        let chat = CannedChat(String::new());
        let out = url_visit(
            &args(serde_json::json!({"url": "https://e.com/a", "window": [99, 120]})),
            &fetch,
            &chat,
        )
        .await;
        assert!(matches!(out, Err(ToolError::WindowOutOfRange { .. })));
    }

    #[tokio::test]
    async fn goal_mode_summarizes() {
        let fetch = CannedFetch("<p>facts</p>".into());
        let chat = CannedChat(
            r#"{"rational": "r", "evidence": ["e1"], "summary": "s"}"#.to_string(),
        );
        let out = url_visit(
            &args(serde_json::json!({"url": "https://e.com/a", "goal": "find facts"})),
            &fetch,
            &chat,
        )
        .await
        .unwrap();
        assert_eq!(out["mode"], "summarize");
        assert_eq!(out["result"]["summary"], "s");
        assert_eq!(out["result"]["evidence"][0], "e1");
    }

    #[tokio::test]
    async fn invalid_url_rejected() {
        let fetch = CannedFetch(String::new());
        let chat = CannedChat(String::new());
        let out = url_visit(&args(serde_json::json!({"url": "not a url"})), &fetch, &chat).await;
        assert!(matches!(out, Err(ToolError::ArgValidation(_))));
    }
}
