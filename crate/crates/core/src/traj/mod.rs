//! Tagged interleaved-thinking trajectory format.
//!
//! A trajectory is a single decoding stream in which the model alternates
//! reasoning and action through four tag pairs: `<think>`, `<tool_call>`,
//! `<tool_response>`, and `<answer>`. Parsing is total: malformed input never
//! fails, it just produces residue spans and recorded violations that
//! [`validate_schema`] turns into a [`FormatReport`].
//!
//! The accepted segment grammar is
//!
//! ```text
//! (Think ToolCall ToolResponse)* Think Answer
//! ```
//!
//! with exactly one `Answer` as the final segment. Non-whitespace text outside
//! any tag pair is *residue*; whitespace between tags is free.

pub mod lenient;

use serde::{Deserialize, Serialize};

/// Half-open byte range into a trajectory source string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// The four tagged segment kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Think,
    ToolCall,
    ToolResponse,
    Answer,
}

impl SegmentKind {
    pub fn opener(&self) -> &'static str {
        match self {
            SegmentKind::Think => "<think>",
            SegmentKind::ToolCall => "<tool_call>",
            SegmentKind::ToolResponse => "<tool_response>",
            SegmentKind::Answer => "<answer>",
        }
    }

    pub fn closer(&self) -> &'static str {
        match self {
            SegmentKind::Think => "</think>",
            SegmentKind::ToolCall => "</tool_call>",
            SegmentKind::ToolResponse => "</tool_response>",
            SegmentKind::Answer => "</answer>",
        }
    }

    const ALL: [SegmentKind; 4] = [
        SegmentKind::Think,
        SegmentKind::ToolCall,
        SegmentKind::ToolResponse,
        SegmentKind::Answer,
    ];
}

/// One recognized tag-delimited segment. `span` covers the content between
/// the tag markers; the markers themselves are excluded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub content: String,
    pub span: Span,
}

impl Segment {
    /// Byte range covering the whole tagged region, markers included.
    pub fn tag_extent(&self) -> Span {
        Span {
            start: self.span.start - self.kind.opener().len(),
            end: self.span.end + self.kind.closer().len(),
        }
    }
}

/// Structured schema violation reported by parsing or validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FormatViolation {
    /// An opening tag with no matching closer; the region became residue.
    UnbalancedTag { segment: SegmentKind, offset: usize },
    /// Segment sequence does not match the grammar, or content follows the
    /// final answer.
    IllegalSequence { detail: String },
    /// A tool_call segment whose payload is not a readable invocation.
    UnparsablePayload { segment_index: usize, detail: String },
}

/// Parse result: ordered segments plus residue spans over the original text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedTrajectory {
    pub source: String,
    pub segments: Vec<Segment>,
    /// Spans of text outside any tag pair, trimmed to their first and last
    /// non-whitespace character. All-whitespace gaps produce no span.
    pub residue_spans: Vec<Span>,
    /// Violations detectable at parse time (unbalanced tags).
    pub parse_errors: Vec<FormatViolation>,
}

impl ParsedTrajectory {
    /// Count of non-whitespace characters across all residue spans.
    pub fn residue_len(&self) -> usize {
        self.residue_spans
            .iter()
            .map(|s| {
                self.source[s.start..s.end]
                    .chars()
                    .filter(|c| !c.is_whitespace())
                    .count()
            })
            .sum()
    }

    /// Content of the final `Answer` segment, if the trajectory has one.
    pub fn final_answer(&self) -> Option<&str> {
        self.segments
            .iter()
            .rev()
            .find(|s| s.kind == SegmentKind::Answer)
            .map(|s| s.content.as_str())
    }

    pub fn count_kind(&self, kind: SegmentKind) -> usize {
        self.segments.iter().filter(|s| s.kind == kind).count()
    }

    /// Line-delimited debug record: `{source, segments:[{kind,start,end}], residue:[{start,end}]}`.
    pub fn to_record(&self) -> serde_json::Value {
        serde_json::json!({
            "source": self.source,
            "segments": self.segments.iter().map(|s| serde_json::json!({
                "kind": s.kind,
                "start": s.span.start,
                "end": s.span.end,
            })).collect::<Vec<_>>(),
            "residue": self.residue_spans.iter().map(|s| serde_json::json!({
                "start": s.start,
                "end": s.end,
            })).collect::<Vec<_>>(),
        })
    }
}

/// Schema report consumed by the format reward.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatReport {
    pub schema_valid: bool,
    /// Non-whitespace characters outside tag pairs.
    pub residue_len: usize,
    pub errors: Vec<FormatViolation>,
    pub n_call: usize,
    pub n_resp: usize,
}

/// Parsed `{"name": ..., "arguments": {...}}` tool-call payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInvocation {
    pub name: String,
    /// Always a JSON object; key order is canonical (lexicographic).
    pub arguments: serde_json::Value,
}

impl ToolInvocation {
    /// Canonical serialization: compact JSON with lexicographically ordered
    /// keys at every level. Two invocations are fixture-equal iff their
    /// canonical strings are equal.
    pub fn canonical(&self) -> String {
        let v = serde_json::json!({ "name": self.name, "arguments": self.arguments });
        v.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExtractError {
    #[error("payload unparsable: {0}")]
    PayloadUnparsable(String),
    #[error("missing field: {0}")]
    MissingField(&'static str),
}

/// Split `source` into tagged segments and residue spans. Total: never fails.
///
/// Scanning is linear and left-to-right. The earliest opening tag wins; inner
/// tags of a different kind are literal content of the enclosing segment. An
/// opening tag with no closer rejects the segment: everything from the opener
/// to end of input becomes residue and an `UnbalancedTag` violation is
/// recorded.
pub fn parse_trajectory(source: &str) -> ParsedTrajectory {
    let mut segments = Vec::new();
    let mut parse_errors = Vec::new();
    let mut outside: Vec<Span> = Vec::new();
    let bytes = source.as_bytes();
    let mut pos = 0usize;

    while pos < bytes.len() {
        // Earliest opener at or after pos.
        let mut next: Option<(usize, SegmentKind)> = None;
        for kind in SegmentKind::ALL {
            if let Some(rel) = source[pos..].find(kind.opener()) {
                let at = pos + rel;
                if next.map_or(true, |(best, _)| at < best) {
                    next = Some((at, kind));
                }
            }
        }
        let Some((open_at, kind)) = next else {
            outside.push(Span { start: pos, end: bytes.len() });
            break;
        };
        if open_at > pos {
            outside.push(Span { start: pos, end: open_at });
        }
        let content_start = open_at + kind.opener().len();
        match source[content_start..].find(kind.closer()) {
            Some(rel) => {
                let content_end = content_start + rel;
                segments.push(Segment {
                    kind,
                    content: source[content_start..content_end].to_string(),
                    span: Span { start: content_start, end: content_end },
                });
                pos = content_end + kind.closer().len();
            }
            None => {
                parse_errors.push(FormatViolation::UnbalancedTag { segment: kind, offset: open_at });
                outside.push(Span { start: open_at, end: bytes.len() });
                pos = bytes.len();
            }
        }
    }

    let residue_spans = outside
        .iter()
        .filter_map(|span| trim_to_nonwhitespace(source, *span))
        .collect();

    ParsedTrajectory {
        source: source.to_string(),
        segments,
        residue_spans,
        parse_errors,
    }
}

/// Shrink a span to its first and last non-whitespace character, or drop it.
fn trim_to_nonwhitespace(source: &str, span: Span) -> Option<Span> {
    let text = &source[span.start..span.end];
    let first = text.find(|c: char| !c.is_whitespace())?;
    let last_char_at = text.rfind(|c: char| !c.is_whitespace())?;
    let last_len = text[last_char_at..].chars().next().map(char::len_utf8)?;
    Some(Span {
        start: span.start + first,
        end: span.start + last_char_at + last_len,
    })
}

/// Check a parsed trajectory against the schema and count call/response pairs.
///
/// `schema_valid` is true exactly when no violation was found: the segment
/// sequence matches `(Think ToolCall ToolResponse)* Think Answer`, nothing
/// follows the final answer, all tags were balanced, and every tool_call
/// payload parses. Residue elsewhere does not by itself invalidate the schema;
/// the format reward penalizes it separately.
pub fn validate_schema(t: &ParsedTrajectory) -> FormatReport {
    let mut errors = t.parse_errors.clone();

    let kinds: Vec<SegmentKind> = t.segments.iter().map(|s| s.kind).collect();
    if let Some(detail) = grammar_violation(&kinds) {
        errors.push(FormatViolation::IllegalSequence { detail });
    }

    // The protocol ends at </answer>: any residue after it is a violation,
    // not just penalized chitchat.
    if let Some(last) = t.segments.last() {
        if last.kind == SegmentKind::Answer {
            let end = last.tag_extent().end;
            if t.residue_spans.iter().any(|r| r.start >= end) {
                errors.push(FormatViolation::IllegalSequence {
                    detail: "content after final answer".to_string(),
                });
            }
        }
    }

    for (i, seg) in t.segments.iter().enumerate() {
        if seg.kind == SegmentKind::ToolCall {
            if let Err(e) = extract_tool_invocation(seg) {
                errors.push(FormatViolation::UnparsablePayload {
                    segment_index: i,
                    detail: e.to_string(),
                });
            }
        }
    }

    FormatReport {
        schema_valid: errors.is_empty(),
        residue_len: t.residue_len(),
        errors,
        n_call: t.count_kind(SegmentKind::ToolCall),
        n_resp: t.count_kind(SegmentKind::ToolResponse),
    }
}

fn grammar_violation(kinds: &[SegmentKind]) -> Option<String> {
    use SegmentKind::*;
    let mut i = 0;
    while i + 2 < kinds.len()
        && kinds[i] == Think
        && kinds[i + 1] == ToolCall
        && kinds[i + 2] == ToolResponse
    {
        i += 3;
    }
    if i + 2 == kinds.len() && kinds[i] == Think && kinds[i + 1] == Answer {
        None
    } else {
        Some(format!(
            "segment sequence {:?} does not match (Think ToolCall ToolResponse)* Think Answer",
            kinds
        ))
    }
}

/// Parse a tool_call segment's content into a [`ToolInvocation`].
///
/// Strict JSON is tried first, then a dictionary-literal fallback (single
/// quotes, trailing commas, Python constants); the result is normalized to
/// canonical JSON either way.
pub fn extract_tool_invocation(s: &Segment) -> Result<ToolInvocation, ExtractError> {
    debug_assert_eq!(s.kind, SegmentKind::ToolCall);
    let text = s.content.trim();
    let value: serde_json::Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(_) => lenient::parse_value(text)
            .map_err(|e| ExtractError::PayloadUnparsable(e.to_string()))?,
    };
    let obj = value
        .as_object()
        .ok_or_else(|| ExtractError::PayloadUnparsable("payload is not an object".into()))?;
    let name = match obj.get("name") {
        None => return Err(ExtractError::MissingField("name")),
        Some(serde_json::Value::String(s)) if !s.is_empty() => s.clone(),
        Some(serde_json::Value::String(_)) => return Err(ExtractError::MissingField("name")),
        Some(_) => return Err(ExtractError::PayloadUnparsable("name must be a string".into())),
    };
    let arguments = match obj.get("arguments") {
        None => return Err(ExtractError::MissingField("arguments")),
        Some(v @ serde_json::Value::Object(_)) => v.clone(),
        Some(_) => {
            return Err(ExtractError::PayloadUnparsable("arguments must be an object".into()))
        }
    };
    Ok(ToolInvocation { name, arguments })
}

/// Re-render a parse result; byte-identical to the original source.
pub fn render_trajectory(t: &ParsedTrajectory) -> &str {
    &t.source
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> ParsedTrajectory {
        parse_trajectory(s)
    }

    #[test]
    fn minimal_valid_trajectory() {
        let t = parse("<think>a</think><answer>b</answer>");
        assert_eq!(t.segments.len(), 2);
        assert_eq!(t.segments[0].kind, SegmentKind::Think);
        assert_eq!(t.segments[0].content, "a");
        assert_eq!(t.segments[1].kind, SegmentKind::Answer);
        assert_eq!(t.segments[1].content, "b");
        assert_eq!(t.residue_len(), 0);
        let r = validate_schema(&t);
        assert!(r.schema_valid);
        assert_eq!(r.residue_len, 0);
    }

    #[test]
    fn tool_call_payload_preserved() {
        let src = r#"<think>find it</think><tool_call>{"name": "zoom_v_search", "arguments": {"bbox_2d": [1, 2, 3, 4], "category": "person"}}</tool_call>"#;
        let t = parse(src);
        assert_eq!(t.segments.len(), 2);
        assert_eq!(t.segments[1].kind, SegmentKind::ToolCall);
        let inv = extract_tool_invocation(&t.segments[1]).unwrap();
        assert_eq!(inv.name, "zoom_v_search");
        assert_eq!(inv.arguments["category"], "person");
    }

    #[test]
    fn chitchat_outside_tags_is_residue() {
        let t = parse("</tool_call> I will now execute the search.");
        assert!(t.segments.is_empty());
        assert_eq!(t.residue_spans.len(), 1);
        let n: usize = "</tool_call> I will now execute the search."
            .chars()
            .filter(|c| !c.is_whitespace())
            .count();
        assert_eq!(t.residue_len(), n);
    }

    #[test]
    fn counts_calls_and_responses() {
        let src = "<think>a</think><tool_call>{}</tool_call><tool_response>r</tool_response>\
                   <think>b</think><tool_call>{}</tool_call><tool_response>r</tool_response>\
                   <think>c</think><tool_call>{}</tool_call>";
        let r = validate_schema(&parse(src));
        assert_eq!(r.n_call, 3);
        assert_eq!(r.n_resp, 2);
        assert!(!r.schema_valid);
    }

    #[test]
    fn text_after_answer_is_illegal_sequence() {
        let t = parse("<think>a</think><answer>b</answer>oops");
        let r = validate_schema(&t);
        assert!(!r.schema_valid);
        assert_eq!(r.residue_len, 4);
        assert!(r
            .errors
            .iter()
            .any(|e| matches!(e, FormatViolation::IllegalSequence { .. })));
    }

    #[test]
    fn residue_between_segments_keeps_schema_valid() {
        let t = parse("<think>a</think> chatter <answer>b</answer>");
        let r = validate_schema(&t);
        assert!(r.schema_valid);
        assert_eq!(r.residue_len, 7);
    }

    #[test]
    fn unclosed_tag_becomes_residue() {
        let t = parse("<think>a</think><answer>b");
        assert_eq!(t.segments.len(), 1);
        assert_eq!(t.parse_errors.len(), 1);
        assert!(matches!(
            t.parse_errors[0],
            FormatViolation::UnbalancedTag { segment: SegmentKind::Answer, .. }
        ));
        // "<answer>b" has 9 non-whitespace chars
        assert_eq!(t.residue_len(), 9);
        assert!(!validate_schema(&t).schema_valid);
    }

    #[test]
    fn nested_tags_are_literal_content() {
        let t = parse("<answer>keep <think>this</think> inline</answer>");
        assert_eq!(t.segments.len(), 1);
        assert_eq!(t.segments[0].content, "keep <think>this</think> inline");
    }

    #[test]
    fn render_round_trips() {
        for src in [
            "",
            "<think>a</think><answer>b</answer>",
            "junk <think>a</think> more junk",
            "<tool_call>{broken",
            "  \n\t ",
        ] {
            let t = parse(src);
            assert_eq!(render_trajectory(&t), src);
        }
    }

    #[test]
    fn empty_think_is_accepted() {
        let r = validate_schema(&parse("<think></think><answer>b</answer>"));
        assert!(r.schema_valid);
    }

    #[test]
    fn consecutive_thinks_rejected() {
        let r = validate_schema(&parse(
            "<think>a</think><think>b</think><answer>c</answer>",
        ));
        assert!(!r.schema_valid);
    }

    #[test]
    fn extraction_errors() {
        let seg = |content: &str| Segment {
            kind: SegmentKind::ToolCall,
            content: content.to_string(),
            span: Span { start: 0, end: content.len() },
        };
        assert_eq!(
            extract_tool_invocation(&seg(r#"{"arguments":{}}"#)),
            Err(ExtractError::MissingField("name"))
        );
        assert_eq!(
            extract_tool_invocation(&seg(r#"{"name":"x"}"#)),
            Err(ExtractError::MissingField("arguments"))
        );
        assert!(matches!(
            extract_tool_invocation(&seg("not a payload")),
            Err(ExtractError::PayloadUnparsable(_))
        ));
    }

    #[test]
    fn dict_literal_payload_normalizes() {
        let seg = Segment {
            kind: SegmentKind::ToolCall,
            content: "{'name': 'code_interpreter', 'arguments': {'code': 'print(1)',},}".into(),
            span: Span { start: 0, end: 0 },
        };
        let inv = extract_tool_invocation(&seg).unwrap();
        assert_eq!(inv.name, "code_interpreter");
        assert_eq!(inv.arguments["code"], "print(1)");
        // canonical form is strict JSON with sorted keys
        assert_eq!(
            inv.canonical(),
            r#"{"arguments":{"code":"print(1)"},"name":"code_interpreter"}"#
        );
    }

    #[test]
    fn record_shape() {
        let t = parse("x<think>a</think>");
        let rec = t.to_record();
        assert_eq!(rec["segments"][0]["kind"], "think");
        assert_eq!(rec["residue"][0]["start"], 0);
    }
}
