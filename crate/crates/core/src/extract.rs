//! Pulling structured JSON out of free-form model replies.
//!
//! Models wrap JSON in prose and markdown fences unpredictably. The rule
//! here is fixed: fenced blocks are searched first, in order, then the whole
//! reply; within a region the first balanced, parseable candidate that the
//! caller accepts wins.

use std::ops::Range;

use serde_json::Value;

/// A JSON value found inside a larger text.
#[derive(Debug, Clone, PartialEq)]
pub struct Found {
    pub value: Value,
    /// Byte span of the value itself.
    pub span: Range<usize>,
    /// Byte span to cut when recovering the surrounding prose: the enclosing
    /// fence when there is one, otherwise `span`.
    pub outer: Range<usize>,
}

impl Found {
    /// Text before and after the extracted block, trimmed and joined.
    pub fn surrounding_text(&self, text: &str) -> String {
        let before = text[..self.outer.start].trim();
        let after = text[self.outer.end..].trim();
        match (before.is_empty(), after.is_empty()) {
            (true, true) => String::new(),
            (false, true) => before.to_string(),
            (true, false) => after.to_string(),
            (false, false) => format!("{before}\n{after}"),
        }
    }
}

/// Markdown code fences: `(outer, inner)` spans, outer including the
/// backtick lines.
pub fn fenced_blocks(text: &str) -> Vec<(Range<usize>, Range<usize>)> {
    let mut out = Vec::new();
    let mut pos = 0;
    while let Some(rel) = text[pos..].find("```") {
        let open = pos + rel;
        let after_ticks = open + 3;
        // Skip the info string (e.g. "json") up to the end of the line.
        let body_start = match text[after_ticks..].find('\n') {
            Some(nl) => after_ticks + nl + 1,
            None => break,
        };
        let Some(close_rel) = text[body_start..].find("```") else {
            break;
        };
        let close = body_start + close_rel;
        out.push((open..close + 3, body_start..close));
        pos = close + 3;
    }
    out
}

/// End (exclusive) of the balanced bracket group opening at `start`, with
/// JSON string literals skipped.
fn balanced_end(text: &str, start: usize) -> Option<usize> {
    let bytes = text.as_bytes();
    let (open, close) = match bytes[start] {
        b'{' => (b'{', b'}'),
        b'[' => (b'[', b']'),
        _ => return None,
    };
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b if b == open => depth += 1,
            b if b == close => {
                depth -= 1;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

fn scan(text: &str, region: Range<usize>, open: u8, accept: &dyn Fn(&Value) -> bool) -> Option<Range<usize>> {
    let slice = &text.as_bytes()[region.clone()];
    for (off, &b) in slice.iter().enumerate() {
        if b != open {
            continue;
        }
        let start = region.start + off;
        let Some(end) = balanced_end(text, start) else { continue };
        if end > region.end {
            continue;
        }
        if let Ok(v) = serde_json::from_str::<Value>(&text[start..end]) {
            if accept(&v) {
                return Some(start..end);
            }
        }
    }
    None
}

/// First JSON value opened by `open` (`b'{'` or `b'['`) that `accept` likes.
pub fn find_json(text: &str, open: u8, accept: impl Fn(&Value) -> bool) -> Option<Found> {
    for (outer, inner) in fenced_blocks(text) {
        if let Some(span) = scan(text, inner, open, &accept) {
            let value = serde_json::from_str(&text[span.clone()]).expect("scanned value parses");
            return Some(Found { value, span, outer });
        }
    }
    let span = scan(text, 0..text.len(), open, &accept)?;
    let value = serde_json::from_str(&text[span.clone()]).expect("scanned value parses");
    Some(Found {
        value,
        outer: span.clone(),
        span,
    })
}

/// First JSON object in `text`.
pub fn first_object(text: &str) -> Option<Found> {
    find_json(text, b'{', |v| v.is_object())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn nested_braces_and_strings() {
        let text = r#"Sure! {"a": "}{", "b": {"c": [1, {"d": 2}]}} trailing }"#;
        let f = first_object(text).unwrap();
        assert_eq!(f.value, json!({"a": "}{", "b": {"c": [1, {"d": 2}]}}));
        assert_eq!(f.surrounding_text(text), "Sure!\ntrailing }");
    }

    #[test]
    fn skips_unparseable_braces() {
        let text = "use {curly} braces, then {\"x\": 1}";
        assert_eq!(first_object(text).unwrap().value, json!({"x": 1}));
    }

    #[test]
    fn fence_takes_priority() {
        let text = "prose {\"no\": 1}\n```json\n{\"yes\": 2}\n```\nafter";
        let f = first_object(text).unwrap();
        assert_eq!(f.value, json!({"yes": 2}));
        assert_eq!(f.surrounding_text(text), "prose {\"no\": 1}\nafter");
    }

    #[test]
    fn none_without_braces() {
        assert!(first_object("I cannot help with that.").is_none());
        assert!(first_object("{unterminated").is_none());
    }

    #[test]
    fn escaped_quotes_inside_strings() {
        let text = r#"{"s": "say \"hi\" }"}"#;
        assert_eq!(first_object(text).unwrap().value, json!({"s": "say \"hi\" }"}));
    }
}
