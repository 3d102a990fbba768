use std::path::{Path, PathBuf};

use serde_json::json;

use super::arithmetic::{evaluate, format_number};
use super::{arg_str, arg_usize, ServiceFunction, ServiceResponse};
use crate::knowledge::tokenize;

pub fn read_text_file() -> ServiceFunction {
    ServiceFunction::new("read_text_file", "Read the content of a text file.", |args| {
        let path = match arg_str(args, "path") {
            Ok(p) => p,
            Err(e) => return ServiceResponse::error(e),
        };
        match std::fs::read_to_string(path) {
            Ok(s) => ServiceResponse::success(s),
            Err(e) => ServiceResponse::error(format!("cannot read {path}: {e}")),
        }
    })
    .param("path", "string", "The path of the file to read.")
}

pub fn write_text_file() -> ServiceFunction {
    ServiceFunction::new("write_text_file", "Write text into a file, creating parent directories.", |args| {
        let (path, text) = match (arg_str(args, "path"), arg_str(args, "text")) {
            (Ok(p), Ok(t)) => (p, t),
            (Err(e), _) | (_, Err(e)) => return ServiceResponse::error(e),
        };
        let p = Path::new(path);
        if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            if let Err(e) = std::fs::create_dir_all(parent) {
                return ServiceResponse::error(format!("cannot create {}: {e}", parent.display()));
            }
        }
        match std::fs::write(p, text) {
            Ok(()) => ServiceResponse::success(format!("wrote {} bytes to {path}", text.len())),
            Err(e) => ServiceResponse::error(format!("cannot write {path}: {e}")),
        }
    })
    .param("path", "string", "The path of the file to write.")
    .param("text", "string", "The text to write.")
}

pub fn evaluate_arithmetic() -> ServiceFunction {
    ServiceFunction::new(
        "evaluate_arithmetic",
        "Evaluate an arithmetic expression with + - * / and parentheses.",
        |args| {
            let expr = match arg_str(args, "expression") {
                Ok(e) => e,
                Err(e) => return ServiceResponse::error(e),
            };
            match evaluate(expr) {
                Ok(v) => ServiceResponse::success(format_number(v)),
                Err(e) => ServiceResponse::error(format!("cannot evaluate '{expr}': {e}")),
            }
        },
    )
    .param("expression", "string", "The arithmetic expression to evaluate.")
}

fn corpus_files(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            corpus_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// Ranks documents under `corpus_dir` by query-token occurrences, ties by
/// path.
pub fn keyword_search_corpus() -> ServiceFunction {
    ServiceFunction::new(
        "keyword_search_corpus",
        "Search the text files of a directory for the given keywords.",
        |args| {
            let (query, dir) = match (arg_str(args, "query"), arg_str(args, "corpus_dir")) {
                (Ok(q), Ok(d)) => (q, d),
                (Err(e), _) | (_, Err(e)) => return ServiceResponse::error(e),
            };
            let k = match arg_usize(args, "k", 3) {
                Ok(k) => k,
                Err(e) => return ServiceResponse::error(e),
            };
            let terms = tokenize(query);
            if terms.is_empty() {
                return ServiceResponse::error("query has no searchable terms");
            }
            let mut files = Vec::new();
            if let Err(e) = corpus_files(Path::new(dir), &mut files) {
                return ServiceResponse::error(format!("cannot list {dir}: {e}"));
            }
            let mut scored = Vec::new();
            for f in files {
                let Ok(text) = std::fs::read_to_string(&f) else { continue };
                let toks = tokenize(&text);
                let score = toks.iter().filter(|t| terms.contains(t)).count();
                if score > 0 {
                    let rel = f.strip_prefix(dir).unwrap_or(&f).to_string_lossy().replace('\\', "/");
                    let snippet: String = text.chars().take(200).collect();
                    scored.push((score, rel, snippet));
                }
            }
            scored.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
            scored.truncate(k);
            let hits: Vec<_> = scored
                .into_iter()
                .map(|(score, path, snippet)| json!({"path": path, "score": score, "snippet": snippet}))
                .collect();
            ServiceResponse::success(hits)
        },
    )
    .param("query", "string", "Keywords to search for.")
    .param("corpus_dir", "string", "Directory holding the corpus.")
    .optional_param("k", "integer", "Number of results.")
}
