//! The three agent tools and the text they hand back to the policy.
//!
//! Search results render as one `• {section_id} — {snippet}` line per hit;
//! reads render as `[{section_id}]` followed by the section body.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::corpus::{Corpus, Section, SectionId};
use crate::gateway::Embedder;
use crate::retrieval::{tokenize, KeywordIndex, SearchHit, VectorIndex};

pub const DEFAULT_SNIPPET_WIDTH: usize = 160;
pub const MIN_SNIPPET_WIDTH: usize = 32;
pub const DEFAULT_K: usize = 10;

pub const SEARCH_KEYWORD: &str = "search_keyword";
pub const SEARCH_SEMANTIC: &str = "search_semantic";
pub const READ_DOCUMENT_PART: &str = "read_document_part";
pub const TOOL_NAMES: [&str; 3] = [SEARCH_KEYWORD, SEARCH_SEMANTIC, READ_DOCUMENT_PART];

const NO_RESULTS: &str = "(no results)";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", content = "args", rename_all = "snake_case")]
pub enum ToolCall {
    SearchKeyword {
        query: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        num: Option<u64>,
    },
    SearchSemantic {
        query: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        num: Option<u64>,
    },
    ReadDocumentPart { part_id: String },
}

/// Why a `{name, args}` object does not describe a valid call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CallShapeError {
    UnknownName,
    BadArgs,
}

impl ToolCall {
    pub fn name(&self) -> &'static str {
        match self {
            ToolCall::SearchKeyword { .. } => SEARCH_KEYWORD,
            ToolCall::SearchSemantic { .. } => SEARCH_SEMANTIC,
            ToolCall::ReadDocumentPart { .. } => READ_DOCUMENT_PART,
        }
    }

    pub fn is_search(&self) -> bool {
        !matches!(self, ToolCall::ReadDocumentPart { .. })
    }

    /// Builds a call from a tool name and its JSON `args` object. Unknown
    /// extra argument keys are ignored.
    pub fn from_parts(name: &str, args: &Value) -> Result<ToolCall, CallShapeError> {
        if !TOOL_NAMES.contains(&name) {
            return Err(CallShapeError::UnknownName);
        }
        let args = args.as_object().ok_or(CallShapeError::BadArgs)?;
        let string_arg = |key: &str| match args.get(key) {
            Some(Value::String(s)) => Ok(s.clone()),
            _ => Err(CallShapeError::BadArgs),
        };
        let num = match args.get("num") {
            None | Some(Value::Null) => None,
            Some(v) => match v.as_u64() {
                Some(n) if n >= 1 => Some(n),
                _ => return Err(CallShapeError::BadArgs),
            },
        };
        Ok(match name {
            SEARCH_KEYWORD => ToolCall::SearchKeyword {
                query: string_arg("query")?,
                num,
            },
            SEARCH_SEMANTIC => ToolCall::SearchSemantic {
                query: string_arg("query")?,
                num,
            },
            _ => ToolCall::ReadDocumentPart {
                part_id: string_arg("part_id")?,
            },
        })
    }

    /// The `{"name": ..., "args": {...}}` wire object.
    pub fn to_json(&self) -> Value {
        let mut args = Map::new();
        match self {
            ToolCall::SearchKeyword { query, num } | ToolCall::SearchSemantic { query, num } => {
                args.insert("query".into(), json!(query));
                if let Some(n) = num {
                    args.insert("num".into(), json!(n));
                }
            }
            ToolCall::ReadDocumentPart { part_id } => {
                args.insert("part_id".into(), json!(part_id));
            }
        }
        json!({ "name": self.name(), "args": Value::Object(args) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub rendered: String,
    pub hits: Vec<SearchHit>,
    pub read_id: Option<SectionId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum ToolError {
    #[error("bad arguments: {0}")]
    BadArgs(String),
    #[error("unknown part id {0:?}")]
    UnknownPartId(String),
    /// The embedding service failed; an environment fault, not a policy one.
    #[error("embedding service failed: {0}")]
    Embedding(String),
}

/// Everything the tools read from; shared read-only across rollouts.
pub struct ToolEnv<'a> {
    pub corpus: &'a Corpus,
    pub keyword: &'a KeywordIndex,
    pub vector: &'a VectorIndex,
    pub embedder: &'a dyn Embedder,
    pub default_k: usize,
    pub snippet_width: usize,
}

pub fn execute_tool(call: &ToolCall, env: &ToolEnv<'_>) -> Result<ToolResult, ToolError> {
    match call {
        ToolCall::SearchKeyword { query, num } => {
            let k = resolve_k(*num, env.default_k)?;
            let hits = env.keyword.search_with_width(query, k, env.snippet_width);
            Ok(search_result(hits))
        }
        ToolCall::SearchSemantic { query, num } => {
            let k = resolve_k(*num, env.default_k)?;
            let tokens = tokenize(query);
            if tokens.is_empty() {
                return Ok(search_result(Vec::new()));
            }
            let vector = env
                .embedder
                .embed(query)
                .map_err(|e| ToolError::Embedding(e.to_string()))?;
            let hits = env
                .vector
                .search_with_snippets(&vector, k, &tokens, env.snippet_width)
                .map_err(|e| ToolError::Embedding(e.to_string()))?;
            Ok(search_result(hits))
        }
        ToolCall::ReadDocumentPart { part_id } => {
            let section = env
                .corpus
                .get_str(part_id)
                .map_err(|_| ToolError::UnknownPartId(part_id.clone()))?;
            Ok(ToolResult {
                rendered: render_read(section),
                hits: Vec::new(),
                read_id: Some(section.id.clone()),
            })
        }
    }
}

fn resolve_k(num: Option<u64>, default_k: usize) -> Result<usize, ToolError> {
    match num {
        None => Ok(default_k),
        Some(0) => Err(ToolError::BadArgs("num must be at least 1".into())),
        Some(n) => Ok(usize::try_from(n).unwrap_or(usize::MAX)),
    }
}

fn search_result(hits: Vec<SearchHit>) -> ToolResult {
    ToolResult {
        rendered: render_hits(&hits),
        hits,
        read_id: None,
    }
}

pub fn render_hits(hits: &[SearchHit]) -> String {
    if hits.is_empty() {
        return NO_RESULTS.to_string();
    }
    hits.iter()
        .map(|h| format!("• {} — {}", h.section_id, h.snippet.replace('\n', " ")))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Full section body: heading, text, then a child listing for containers.
pub fn render_read(section: &Section) -> String {
    let mut body = Vec::new();
    if let Some(h) = &section.heading {
        body.push(h.clone());
    }
    if !section.text.is_empty() {
        body.push(section.text.clone());
    }
    if !section.child_ids.is_empty() {
        body.push("Subsections:".to_string());
        body.extend(section.child_ids.iter().map(|c| format!("- {c}")));
    }
    if body.is_empty() {
        body.push("(empty section)".to_string());
    }
    format!("[{}]\n{}", section.id, body.join("\n"))
}

/// A word of the section text: char offsets `[start, end)`.
#[derive(Debug, Clone, Copy)]
struct Word {
    start: usize,
    end: usize,
    matched: bool,
}

fn words(chars: &[char], query_tokens: &[String]) -> Vec<Word> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if !chars[i].is_alphanumeric() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && chars[i].is_alphanumeric() {
            i += 1;
        }
        let lower: String = chars[start..i].iter().collect::<String>().to_lowercase();
        let matched = query_tokens
            .iter()
            .any(|t| !t.is_empty() && lower.starts_with(t.as_str()));
        out.push(Word {
            start,
            end: i,
            matched,
        });
    }
    out
}

/// Excerpt of at most `width` source characters around the densest cluster
/// of matched words, each match wrapped in `**`. Words are matched by token
/// prefix, so `breach` marks `breached`.
pub fn make_snippet(section: &Section, query_tokens: &[String], width: usize) -> String {
    let width = width.max(MIN_SNIPPET_WIDTH);
    let source = if section.text.is_empty() {
        section.heading.as_deref().unwrap_or("")
    } else {
        section.text.as_str()
    };
    let chars: Vec<char> = source.chars().collect();
    let matches: Vec<Word> = words(&chars, query_tokens)
        .into_iter()
        .filter(|w| w.matched)
        .collect();

    if matches.is_empty() {
        return chars.iter().take(width).collect();
    }

    // Densest run: the start match whose width-window holds the most matches.
    let (mut best_start, mut best_end, mut best_count) = (0, 0, 0usize);
    for (i, first) in matches.iter().enumerate() {
        let mut end = first.end;
        let mut count = 0;
        for m in &matches[i..] {
            if m.end - first.start > width {
                break;
            }
            end = m.end;
            count += 1;
        }
        if count > best_count {
            (best_start, best_end, best_count) = (first.start, end, count);
        }
    }
    if best_count == 0 {
        // Every matched word is longer than the window; show it unmarked.
        let start = matches[0].start;
        return chars[start..start + width].iter().collect();
    }

    let run = best_end - best_start;
    let slack = width.saturating_sub(run);
    let mut lo = best_start.saturating_sub(slack / 2);
    let mut hi = (lo + width).min(chars.len());
    lo = hi.saturating_sub(width).min(lo);

    // Never cut through a matched word at either edge.
    for m in &matches {
        if m.start < lo && lo < m.end {
            lo = m.end;
        }
        if m.start < hi && hi < m.end {
            hi = m.start;
        }
    }
    let hi = hi.max(lo);

    let mut out = String::with_capacity(width + 8);
    let mut pos = lo;
    for m in matches.iter().filter(|m| m.start >= lo && m.end <= hi) {
        out.extend(&chars[pos..m.start]);
        out.push_str("**");
        out.extend(&chars[m.start..m.end]);
        out.push_str("**");
        pos = m.end;
    }
    out.extend(&chars[pos..hi]);
    out
}
