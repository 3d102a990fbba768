//! Response parsers: fenced code blocks, JSON blocks, tagged contents.

use serde_json::{Map, Value};

use super::repair::repair_json;
use crate::error::{Error, Result};

/// Interior of the first fenced block, optionally requiring a language tag
/// (` ```python `).
pub fn parse_fenced(text: &str, language_tag: Option<&str>) -> Result<String> {
    let mut rest = text;
    let mut offset = 0;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let line_end = after.find('\n').unwrap_or(after.len());
        let tag = after[..line_end].trim();
        let body = after.get(line_end + 1..).unwrap_or("");
        let close = body.find("```");
        let matches_tag = language_tag.map_or(true, |t| tag.eq_ignore_ascii_case(t));
        match close {
            Some(end) if matches_tag => return Ok(body[..end].trim_end_matches('\n').to_string()),
            Some(end) => {
                let consumed = open + 3 + line_end + 1 + end + 3;
                offset += consumed;
                rest = &text[offset..];
            }
            None => break,
        }
    }
    Err(Error::RuleResolvable {
        reason: match language_tag {
            Some(t) => format!("no fenced block tagged '{t}'"),
            None => "no fenced block".into(),
        },
        text: text.to_string(),
    })
}

/// A JSON object in a fenced block, repaired if needed. Unfenced JSON is
/// accepted too.
pub fn parse_json_block(text: &str) -> Result<Value> {
    repair_json(text)
}

/// A tag pair such as `[thought]` / `[/thought]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedContent {
    pub name: String,
    pub open: String,
    pub close: String,
}

impl TaggedContent {
    pub fn new(name: impl Into<String>, open: impl Into<String>, close: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            open: open.into(),
            close: close.into(),
        }
    }

    /// `[name]...[/name]`
    pub fn bracket(name: &str) -> Self {
        Self::new(name, format!("[{name}]"), format!("[/{name}]"))
    }
}

/// `{tag name: interior}` for every tag pair; errors if any is missing.
pub fn parse_tagged(text: &str, tags: &[TaggedContent]) -> Result<Map<String, Value>> {
    let mut out = Map::new();
    let mut missing = Vec::new();
    for tag in tags {
        let found = text.find(&tag.open).and_then(|start| {
            let body_start = start + tag.open.len();
            text[body_start..]
                .find(&tag.close)
                .map(|end| text[body_start..body_start + end].trim().to_string())
        });
        match found {
            Some(body) => {
                out.insert(tag.name.clone(), Value::String(body));
            }
            None => missing.push(tag.name.clone()),
        }
    }
    if missing.is_empty() {
        Ok(out)
    } else {
        Err(Error::RuleResolvable {
            reason: format!("missing tag(s): {}", missing.join(", ")),
            text: text.to_string(),
        })
    }
}
