//! Deterministic reference policies for offline runs and tests.

use std::path::Path;

use serde::Deserialize;

use crate::gateway::{assistant_turns, ensure_prefix, GatewayError, GenerationParams, Message, Policy, Role};
use crate::reward::QAItem;
use crate::tools::ToolCall;

pub const IDK_ANSWER: &str = "<answer>I don't know</answer>";

fn first_user(messages: &[Message]) -> Option<&str> {
    messages.iter().find(|m| m.role == Role::User).map(|m| m.content.as_str())
}

fn find_item<'a>(items: &'a [QAItem], messages: &[Message]) -> Option<(usize, &'a QAItem)> {
    let user = first_user(messages)?;
    items
        .iter()
        .enumerate()
        .filter(|(_, it)| user.contains(it.question.as_str()))
        .max_by_key(|(_, it)| it.question.len())
}

/// True when some gold section was shown in full, by a read or as
/// injected context.
fn saw_gold(item: &QAItem, messages: &[Message]) -> bool {
    messages
        .iter()
        .filter(|m| matches!(m.role, Role::Tool | Role::User))
        .any(|m| item.gold_doc_ids.iter().any(|g| m.content.contains(&format!("[{g}]\n"))))
}

fn tool(call: ToolCall) -> String {
    format!("<tool>{}</tool>", call.to_json())
}

fn answer(item: &QAItem) -> String {
    let sources: String = item
        .gold_doc_ids
        .iter()
        .map(|g| format!("<source>{g}</source>\n"))
        .collect();
    format!(
        "<answer>\nThe answer is {}.\n\n<sources>\n{sources}</sources>\n</answer>",
        item.gold_answer
    )
}

/// Answers forced generations honestly: the gold answer only if the gold
/// text was actually seen, otherwise "I don't know".
fn forced_reply(item: Option<&QAItem>, messages: &[Message], params: &GenerationParams) -> String {
    let text = match item {
        Some(it) if saw_gold(it, messages) => answer(it),
        _ => IDK_ANSWER.to_string(),
    };
    ensure_prefix(text, params.forced_prefix.as_deref())
}

/// Knows the dataset. Searches with the question, reads the first gold
/// section, then answers citing every gold section.
#[derive(Debug, Clone)]
pub struct OraclePolicy {
    items: Vec<QAItem>,
}

impl OraclePolicy {
    pub fn new(items: Vec<QAItem>) -> Self {
        Self { items }
    }
}

impl Policy for OraclePolicy {
    fn complete(&self, messages: &[Message], params: &GenerationParams) -> Result<String, GatewayError> {
        let item = find_item(&self.items, messages).map(|(_, it)| it);
        if params.forced_prefix.is_some() {
            return Ok(forced_reply(item, messages, params));
        }
        let Some(item) = item else {
            return Ok(IDK_ANSWER.to_string());
        };
        Ok(match assistant_turns(messages) {
            0 => tool(ToolCall::SearchKeyword {
                query: item.question.clone(),
                num: None,
            }),
            1 => tool(ToolCall::ReadDocumentPart {
                part_id: item.gold_doc_ids[0].to_string(),
            }),
            _ => answer(item),
        })
    }
}

/// Item `j` (0-based dataset position) needs `j + 1` searches before it
/// reads the gold section, so it needs `j + 2` tool turns in total.
/// Accuracy therefore grows with the turn allowance.
#[derive(Debug, Clone)]
pub struct IncrementalPolicy {
    items: Vec<QAItem>,
}

impl IncrementalPolicy {
    pub fn new(items: Vec<QAItem>) -> Self {
        Self { items }
    }
}

impl Policy for IncrementalPolicy {
    fn complete(&self, messages: &[Message], params: &GenerationParams) -> Result<String, GatewayError> {
        let found = find_item(&self.items, messages);
        if params.forced_prefix.is_some() {
            return Ok(forced_reply(found.map(|(_, it)| it), messages, params));
        }
        let Some((j, item)) = found else {
            return Ok(IDK_ANSWER.to_string());
        };
        let turn = assistant_turns(messages);
        Ok(if turn <= j {
            tool(ToolCall::SearchKeyword {
                query: item.question.clone(),
                num: None,
            })
        } else if turn == j + 1 {
            tool(ToolCall::ReadDocumentPart {
                part_id: item.gold_doc_ids[0].to_string(),
            })
        } else {
            answer(item)
        })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdkPolicy;

impl Policy for IdkPolicy {
    fn complete(&self, _: &[Message], params: &GenerationParams) -> Result<String, GatewayError> {
        Ok(ensure_prefix(IDK_ANSWER.to_string(), params.forced_prefix.as_deref()))
    }
}

/// Always replies with text that is neither a tool call nor an answer.
#[derive(Debug, Clone, Copy, Default)]
pub struct MalformedPolicy;

impl Policy for MalformedPolicy {
    fn complete(&self, _: &[Message], params: &GenerationParams) -> Result<String, GatewayError> {
        Ok(ensure_prefix("hello".to_string(), params.forced_prefix.as_deref()))
    }
}

#[derive(Debug, Clone, Deserialize)]
struct ScriptFile {
    scripts: Vec<ScriptEntry>,
}

#[derive(Debug, Clone, Deserialize)]
struct ScriptEntry {
    question: String,
    responses: Vec<String>,
}

/// Per-question scripted responses loaded from JSON:
/// `{"scripts": [{"question": "...", "responses": ["...", ...]}]}`.
/// The script is chosen by the question in the first user message.
#[derive(Debug, Clone)]
pub struct FileScriptedPolicy {
    scripts: Vec<ScriptEntry>,
}

impl FileScriptedPolicy {
    pub fn from_json(json: &str) -> Result<Self, GatewayError> {
        let file: ScriptFile =
            serde_json::from_str(json).map_err(|e| GatewayError::Config(format!("script file: {e}")))?;
        Ok(Self { scripts: file.scripts })
    }

    pub fn from_path(path: &Path) -> Result<Self, GatewayError> {
        let json = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&json)
    }
}

impl Policy for FileScriptedPolicy {
    fn complete(&self, messages: &[Message], params: &GenerationParams) -> Result<String, GatewayError> {
        let user = first_user(messages).unwrap_or_default();
        let script = self
            .scripts
            .iter()
            .filter(|s| user.contains(s.question.as_str()))
            .max_by_key(|s| s.question.len())
            .ok_or_else(|| GatewayError::Script("no script for this question".into()))?;
        let turn = assistant_turns(messages);
        let text = script
            .responses
            .get(turn)
            .cloned()
            .ok_or_else(|| GatewayError::Script(format!("no scripted response for turn {turn}")))?;
        Ok(ensure_prefix(text, params.forced_prefix.as_deref()))
    }
}
