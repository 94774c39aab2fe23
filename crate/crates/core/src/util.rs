//! Small shared helpers.

/// Locate the outermost JSON object in free-form model output (tolerates
/// markdown fences and surrounding prose).
pub fn extract_json_object(text: &str) -> Option<&str> {
    let trimmed = text.trim();
    if trimmed.starts_with('{') && trimmed.ends_with('}') {
        return Some(trimmed);
    }
    let start = trimmed.find('{')?;
    let end = trimmed.rfind('}')?;
    (start < end).then(|| &trimmed[start..=end])
}

/// Truncate to at most `budget` characters, appending a marker when content
/// was dropped.
pub fn truncate_chars(text: &str, budget: usize, marker: &str) -> String {
    if text.chars().count() <= budget {
        return text.to_string();
    }
    let kept: String = text.chars().take(budget).collect();
    format!("{kept}{marker}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_fenced_object() {
        let t = "```json\n{\"a\": 1}\n```";
        assert_eq!(extract_json_object(t), Some("{\"a\": 1}"));
    }

    #[test]
    fn truncation_marks() {
        assert_eq!(truncate_chars("abcdef", 3, "…"), "abc…");
        assert_eq!(truncate_chars("abc", 3, "…"), "abc");
    }
}
