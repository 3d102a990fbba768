//! Rule-based repair of malformed JSON in model output.

use serde_json::Value;

use crate::error::{Error, Result};

/// Parses model output as JSON, applying format rules when strict parsing
/// fails:
///
/// 1. take the interior of the first fenced block, if any;
/// 2. trim to the first `{`/`[` and its matching closer;
/// 3. close unbalanced brackets (and an unterminated string);
/// 4. drop trailing commas before closers.
///
/// Input that is already strict JSON is returned as parsed.
pub fn repair_json(text: &str) -> Result<Value> {
    if let Ok(v) = serde_json::from_str::<Value>(text.trim()) {
        return Ok(v);
    }
    let fenced = fence_interior(text).unwrap_or(text);
    let trimmed = trim_to_structure(fenced);
    let closed = close_unbalanced(trimmed);
    let repaired = strip_trailing_commas(&closed);
    serde_json::from_str::<Value>(&repaired).map_err(|e| Error::RuleResolvable {
        reason: format!("unparseable JSON after repair: {e}"),
        text: repaired,
    })
}

/// Interior of the first fenced block. The closing fence must start a line;
/// an unterminated fence runs to the end.
pub(crate) fn fence_interior(text: &str) -> Option<&str> {
    let open = text.find("```")?;
    let after = &text[open + 3..];
    let body_start = after.find('\n').map(|i| i + 1).unwrap_or(after.len());
    let body = &after[body_start..];
    let end = if body.starts_with("```") {
        Some(0)
    } else {
        body.find("\n```").map(|i| i + 1)
    };
    Some(match end {
        Some(end) => &body[..end],
        None => body,
    })
}

fn closer_for(open: char) -> char {
    if open == '{' {
        '}'
    } else {
        ']'
    }
}

/// Scans bracket structure outside of strings.
struct Scan {
    stack: Vec<char>,
    in_string: bool,
    escaped: bool,
}

enum Step {
    Continue,
    Balanced,
    Mismatch,
}

impl Scan {
    fn new() -> Self {
        Self {
            stack: Vec::new(),
            in_string: false,
            escaped: false,
        }
    }

    fn feed(&mut self, c: char) -> Step {
        if self.in_string {
            if self.escaped {
                self.escaped = false;
            } else if c == '\\' {
                self.escaped = true;
            } else if c == '"' {
                self.in_string = false;
            }
            return Step::Continue;
        }
        match c {
            '"' => self.in_string = true,
            '{' | '[' => self.stack.push(c),
            '}' | ']' => match self.stack.pop() {
                Some(open) if closer_for(open) == c => {
                    if self.stack.is_empty() {
                        return Step::Balanced;
                    }
                }
                _ => return Step::Mismatch,
            },
            _ => {}
        }
        Step::Continue
    }
}

fn trim_to_structure(s: &str) -> &str {
    let Some(start) = s.find(['{', '[']) else {
        return s.trim();
    };
    let mut scan = Scan::new();
    for (i, c) in s[start..].char_indices() {
        match scan.feed(c) {
            Step::Balanced => return &s[start..start + i + c.len_utf8()],
            Step::Mismatch => break,
            Step::Continue => {}
        }
    }
    s[start..].trim_end()
}

fn close_unbalanced(s: &str) -> String {
    let mut scan = Scan::new();
    for c in s.chars() {
        if let Step::Mismatch = scan.feed(c) {
            return s.to_string();
        }
    }
    let mut out = s.to_string();
    if scan.in_string {
        if scan.escaped {
            out.pop();
        }
        out.push('"');
    }
    for open in scan.stack.iter().rev() {
        out.push(closer_for(*open));
    }
    out
}

fn strip_trailing_commas(s: &str) -> String {
    let chars: Vec<char> = s.chars().collect();
    let mut out = String::with_capacity(s.len());
    let mut in_string = false;
    let mut escaped = false;
    for (i, &c) in chars.iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            out.push(c);
            continue;
        }
        if c == '"' {
            in_string = true;
        } else if c == ',' {
            let next = chars[i + 1..].iter().find(|ch| !ch.is_whitespace());
            if matches!(next, Some('}') | Some(']')) {
                continue;
            }
        }
        out.push(c);
    }
    out
}
