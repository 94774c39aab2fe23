//! Hybrid trajectory reward: outcome accuracy from an external judge, a
//! format reward with residue penalty, and a hallucinated tool-call penalty,
//! combined as
//!
//! ```text
//! r_total = r_acc + lambda_fmt * r_fmt + lambda_halluc * r_halluc
//! ```
//!
//! The formula components are pure; [`judge_answer`] is the one networked
//! operation and retries unparsable verdicts before giving up.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::backends::{ChatCompletion, Message, Role, TransportError};
use crate::traj::FormatReport;

/// Judge prompt template with `{question}`, `{output}`, `{ground_truth}`
/// placeholders. Versioned asset; changing it changes scoring behavior.
pub const JUDGE_PROMPT_TEMPLATE: &str = include_str!("assets/judge_prompt.txt");

/// System prompt used for policy rollouts. Versioned asset.
pub const POLICY_PROMPT: &str = include_str!("assets/policy_prompt.txt");

/// Weights applied to the format and hallucination components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub lambda_fmt: f64,
    pub lambda_halluc: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights { lambda_fmt: 0.1, lambda_halluc: 0.05 }
    }
}

/// Structured verdict returned by the judge endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub extracted_final_answer: String,
    pub reasoning: String,
    /// "1" correct, "0" incorrect.
    pub result: String,
    /// 0..=100.
    pub confidence: u8,
    /// Schema requires strict mode; always true.
    pub strict: bool,
}

/// Per-trajectory reward components and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_acc: f64,
    pub r_fmt: f64,
    pub r_halluc: f64,
    pub r_total: f64,
}

/// Format reward: 0.5 for a strictly schema-valid trajectory with zero
/// residue, otherwise −0.5 − 0.01 per residue character. Residue alone forces
/// the penalty branch even when the tag structure is valid.
pub fn format_reward(report: &FormatReport) -> f64 {
    if report.schema_valid && report.residue_len == 0 {
        0.5
    } else {
        -0.5 - 0.01 * report.residue_len as f64
    }
}

/// Penalty for tool calls that never received an environment response:
/// `min(0, (n_resp − n_call) × 0.2)`. Extra responses are not rewarded.
pub fn hallucination_penalty(n_call: usize, n_resp: usize) -> f64 {
    ((n_resp as f64 - n_call as f64) * 0.2).min(0.0)
}

/// Sparse terminal accuracy: 1.0 iff the judge returned "1". Confidence does
/// not modulate the reward.
pub fn accuracy_reward(v: &JudgeVerdict) -> f64 {
    if v.result == "1" {
        1.0
    } else {
        0.0
    }
}

/// Weighted total of the three components.
pub fn total_reward(r_acc: f64, r_fmt: f64, r_halluc: f64, w: &RewardWeights) -> f64 {
    r_acc + w.lambda_fmt * r_fmt + w.lambda_halluc * r_halluc
}

/// Assemble the full breakdown from a format report and an accuracy score.
pub fn breakdown(r_acc: f64, report: &FormatReport, w: &RewardWeights) -> RewardBreakdown {
    let r_fmt = format_reward(report);
    let r_halluc = hallucination_penalty(report.n_call, report.n_resp);
    RewardBreakdown { r_acc, r_fmt, r_halluc, r_total: total_reward(r_acc, r_fmt, r_halluc, w) }
}

/// Judge invocation settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeConfig {
    /// Total attempts (first try plus retries).
    pub max_attempts: u32,
    /// Backoff before retry k is `backoff_base_ms * 2^(k-1)` milliseconds.
    pub backoff_base_ms: u64,
    /// Judge sampling temperature; 0 for reproducibility.
    pub temperature: f64,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        JudgeConfig { max_attempts: 3, backoff_base_ms: 1_000, temperature: 0.0 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum JudgeError {
    #[error("judge unreachable after {attempts} attempts: {last}")]
    Unreachable { attempts: u32, last: TransportError },
    #[error("judge output never matched the verdict schema after {attempts} attempts")]
    VerdictUnparsable { attempts: u32 },
}

/// Render the judge prompt with the three fields substituted.
pub fn render_judge_prompt(question: &str, model_answer: &str, ground_truth: &str) -> String {
    JUDGE_PROMPT_TEMPLATE
        .replace("{question}", question)
        .replace("{output}", model_answer)
        .replace("{ground_truth}", ground_truth)
}

/// Ask the judge whether `model_answer` matches `ground_truth`.
///
/// Sends the rendered prompt as a single user message at the configured
/// temperature, parses the response into a [`JudgeVerdict`], and retries with
/// exponential backoff while the output is unparsable or the transport fails.
pub async fn judge_answer(
    question: &str,
    model_answer: &str,
    ground_truth: &str,
    client: &dyn ChatCompletion,
    cfg: &JudgeConfig,
) -> Result<JudgeVerdict, JudgeError> {
    let prompt = render_judge_prompt(question, model_answer, ground_truth);
    let messages = [Message::text(Role::User, prompt)];

    let mut last_transport: Option<TransportError> = None;
    let mut saw_unparsable = false;
    for attempt in 1..=cfg.max_attempts {
        if attempt > 1 {
            let backoff = Duration::from_millis(cfg.backoff_base_ms * 2u64.pow(attempt - 2));
            tokio::time::sleep(backoff).await;
        }
        match client.complete(&messages, cfg.temperature).await {
            Ok(text) => match parse_verdict(&text) {
                Ok(v) => return Ok(v),
                Err(reason) => {
                    log::warn!("judge attempt {attempt}: unparsable verdict ({reason})");
                    saw_unparsable = true;
                }
            },
            Err(e) => {
                log::warn!("judge attempt {attempt}: transport failure ({e})");
                last_transport = Some(e);
            }
        }
    }
    if saw_unparsable || last_transport.is_none() {
        Err(JudgeError::VerdictUnparsable { attempts: cfg.max_attempts })
    } else {
        Err(JudgeError::Unreachable {
            attempts: cfg.max_attempts,
            last: last_transport.expect("transport failure recorded"),
        })
    }
}

/// Parse judge output into a verdict, tolerating markdown fences and
/// surrounding prose, and enforcing the schema constraints
/// (result in {"1","0"}, confidence 0..=100, strict == true).
pub fn parse_verdict(text: &str) -> Result<JudgeVerdict, String> {
    #[derive(Deserialize)]
    struct Raw {
        extracted_final_answer: String,
        reasoning: String,
        result: String,
        confidence: i64,
        strict: bool,
    }

    let candidate = extract_json_object(text).ok_or("no JSON object in output")?;
    let raw: Raw = serde_json::from_str(candidate).map_err(|e| e.to_string())?;
    if raw.result != "1" && raw.result != "0" {
        return Err(format!("result must be \"1\" or \"0\", got {:?}", raw.result));
    }
    if !(0..=100).contains(&raw.confidence) {
        return Err(format!("confidence out of range: {}", raw.confidence));
    }
    if !raw.strict {
        return Err("strict must be true".to_string());
    }
    Ok(JudgeVerdict {
        extracted_final_answer: raw.extracted_final_answer,
        reasoning: raw.reasoning,
        result: raw.result,
        confidence: raw.confidence as u8,
        strict: raw.strict,
    })
}

fn extract_json_object(text: &str) -> Option<&str> {
    let trimmed = text.trim();
    if trimmed.starts_with('{') && trimmed.ends_with('}') {
        return Some(trimmed);
    }
    let start = trimmed.find('{')?;
    let end = trimmed.rfind('}')?;
    (start < end).then(|| &trimmed[start..=end])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traj::{parse_trajectory, validate_schema};

    fn report(src: &str) -> FormatReport {
        validate_schema(&parse_trajectory(src))
    }

    fn verdict(result: &str, confidence: u8) -> JudgeVerdict {
        JudgeVerdict {
            extracted_final_answer: "x".into(),
            reasoning: "r".into(),
            result: result.into(),
            confidence,
            strict: true,
        }
    }

    #[test]
    fn format_reward_branches() {
        let clean = report("<think>a</think><answer>b</answer>");
        assert_eq!(format_reward(&clean), 0.5);

        let invalid = report("<think>a</think>");
        assert_eq!(invalid.residue_len, 0);
        assert_eq!(format_reward(&invalid), -0.5);

        let residue20 = FormatReport {
            schema_valid: true,
            residue_len: 20,
            errors: vec![],
            n_call: 0,
            n_resp: 0,
        };
        assert!((format_reward(&residue20) - (-0.7)).abs() < 1e-12);
    }

    #[test]
    fn hallucination_penalty_branches() {
        assert_eq!(hallucination_penalty(3, 3), 0.0);
        assert!((hallucination_penalty(3, 2) - (-0.2)).abs() < 1e-12);
        assert_eq!(hallucination_penalty(2, 3), 0.0);
    }

    #[test]
    fn accuracy_ignores_confidence() {
        assert_eq!(accuracy_reward(&verdict("1", 100)), 1.0);
        assert_eq!(accuracy_reward(&verdict("0", 100)), 0.0);
        assert_eq!(accuracy_reward(&verdict("1", 10)), 1.0);
    }

    #[test]
    fn totals_match_weighted_sum() {
        let w = RewardWeights::default();
        assert!((total_reward(1.0, 0.5, 0.0, &w) - 1.05).abs() < 1e-12);
        assert!((total_reward(0.0, -0.6, -0.2, &w) - (-0.07)).abs() < 1e-12);
        assert_eq!(total_reward(0.0, 0.0, 0.0, &w), 0.0);
    }

    #[test]
    fn verdict_parsing_tolerates_fences() {
        let text = "```json\n{\"extracted_final_answer\":\"a\",\"reasoning\":\"b\",\"result\":\"1\",\"confidence\":95,\"strict\":true}\n```";
        let v = parse_verdict(text).unwrap();
        assert_eq!(v.result, "1");
        assert_eq!(v.confidence, 95);
    }

    #[test]
    fn verdict_schema_enforced() {
        let bad_result = r#"{"extracted_final_answer":"a","reasoning":"b","result":"yes","confidence":5,"strict":true}"#;
        assert!(parse_verdict(bad_result).is_err());
        let bad_conf = r#"{"extracted_final_answer":"a","reasoning":"b","result":"1","confidence":101,"strict":true}"#;
        assert!(parse_verdict(bad_conf).is_err());
        let lax = r#"{"extracted_final_answer":"a","reasoning":"b","result":"1","confidence":5,"strict":false}"#;
        assert!(parse_verdict(lax).is_err());
        assert!(parse_verdict("no json here").is_err());
    }

    #[test]
    fn prompt_substitution() {
        let p = render_judge_prompt("Q?", "A!", "GT");
        assert!(p.contains("- **问题**：Q?"));
        assert!(p.contains("- **模型回答**：A!"));
        assert!(p.contains("- **标准答案 (GT)**：GT"));
        assert!(!p.contains("{question}"));
    }
}
