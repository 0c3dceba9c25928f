//! Text protocol between the policy and the harness.
//!
//! A policy turn is free text containing an optional `<think>` block and
//! either one `<tool>` block holding a JSON object `{"name", "args"}` or one
//! `<answer>` block that may end with
//! `<sources><source>id</source>...</sources>`. Tags are case-sensitive and
//! the first complete block of each kind wins. An `<answer>` block takes
//! precedence over a `<tool>` block. Tags inside the first `<think>` block
//! are not interpreted.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{Corpus, SectionId};
use crate::tools::{CallShapeError, ToolCall};

pub const ANSWER_PREFIX: &str = "<answer>";

const SYSTEM_PROMPT_TEMPLATE: &str = r#"You are a legal research assistant that can search legal documents to answer questions.

You have access to the following tools:

- search_keyword(query: str, num: int) -> str: Search using keyword/BM25 search for exact term matches.
- search_semantic(query: str, num: int) -> str: Search using semantic/vector search for conceptual similarity.
- read_document_part(part_id: str) -> str: Read a document part by ID. Part IDs use hierarchical format (e.g., A:B:C). To access parent parts, remove the last segment (e.g. A:B:C -> parent is A:B).

You may call one tool per turn, for up to {max_turns} turns, before giving your final answer.

In each turn, you should analyze what information you need and respond with EITHER a tool call OR your final answer.

For tool calls, use this format:
<think>
[your reasoning for what to search for and why]
</think>
<tool>
{"name": "tool_name", "args": {"query": "search query"}}
</tool>

When you have enough information, give your final answer in this format:

<think>
[your reasoning for the answer]
</think>
<answer>
[your comprehensive answer citing the evidence you found or "I don't know" if you didn't get enough information]

<sources>
<source>doc_id_1</source>
</sources>
</answer>
"#;

/// System prompt for the single-shot retrieval baseline.
pub const ANSWER_ONLY_SYSTEM_PROMPT: &str = r#"You are a legal research assistant that answers questions about legal documents.

The user message contains a question followed by sections retrieved from a collection of court judgments. Each retrieved section starts with its ID in square brackets, e.g. [A:B:C].

Answer the question based solely on the retrieved sections. You cannot search or request more information.

Give your final answer in this format:

<answer>
[your comprehensive answer citing the evidence you found or "I don't know" if the retrieved sections do not contain enough information]

<sources>
<source>doc_id_1</source>
</sources>
</answer>
"#;

/// The agent system prompt with the turn budget filled in.
pub fn render_system_prompt(max_turns: usize) -> String {
    SYSTEM_PROMPT_TEMPLATE.replace("{max_turns}", &max_turns.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatError {
    CantParseToolCall,
    BadToolCallName,
    BadToolCallArgs,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionKind {
    ToolCall { call: ToolCall },
    Answer { text: String, sources: Vec<String> },
    ParseError { error: FormatError },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentAction {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub think: Option<String>,
    #[serde(flatten)]
    pub kind: ActionKind,
}

impl AgentAction {
    pub fn tool_call(&self) -> Option<&ToolCall> {
        match &self.kind {
            ActionKind::ToolCall { call } => Some(call),
            _ => None,
        }
    }

    pub fn answer(&self) -> Option<(&str, &[String])> {
        match &self.kind {
            ActionKind::Answer { text, sources } => Some((text, sources)),
            _ => None,
        }
    }

    pub fn format_error(&self) -> Option<FormatError> {
        match &self.kind {
            ActionKind::ParseError { error } => Some(*error),
            _ => None,
        }
    }

    /// Checks the field-level invariants a parsed action must satisfy.
    pub fn is_well_formed(&self) -> bool {
        match &self.kind {
            ActionKind::ToolCall { call } => match call {
                ToolCall::SearchKeyword { num, .. } | ToolCall::SearchSemantic { num, .. } => {
                    num.is_none_or(|n| n >= 1)
                }
                ToolCall::ReadDocumentPart { .. } => true,
            },
            ActionKind::Answer { sources, .. } => sources.iter().all(|s| !s.is_empty()),
            ActionKind::ParseError { .. } => true,
        }
    }

    /// Renders the action back into protocol text.
    pub fn to_message(&self) -> String {
        let mut out = String::new();
        if let Some(t) = &self.think {
            out.push_str(&format!("<think>\n{t}\n</think>\n"));
        }
        match &self.kind {
            ActionKind::ToolCall { call } => {
                out.push_str(&format!("<tool>\n{}\n</tool>", call.to_json()));
            }
            ActionKind::Answer { text, sources } => {
                out.push_str(&format!("<answer>\n{text}\n"));
                if !sources.is_empty() {
                    out.push_str("\n<sources>\n");
                    for s in sources {
                        out.push_str(&format!("<source>{s}</source>\n"));
                    }
                    out.push_str("</sources>\n");
                }
                out.push_str("</answer>");
            }
            ActionKind::ParseError { .. } => {}
        }
        out
    }
}

/// Byte range of the first complete `<tag>...</tag>` block: `(outer, inner)`.
fn find_block(text: &str, tag: &str) -> Option<((usize, usize), (usize, usize))> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = text.find(&open)?;
    let inner_start = start + open.len();
    let inner_end = inner_start + text[inner_start..].find(&close)?;
    Some(((start, inner_end + close.len()), (inner_start, inner_end)))
}

fn block<'a>(text: &'a str, tag: &str) -> Option<&'a str> {
    find_block(text, tag).map(|(_, (s, e))| &text[s..e])
}

fn without_think(text: &str) -> (Option<String>, String) {
    match find_block(text, "think") {
        Some(((s, e), (is, ie))) => (
            Some(text[is..ie].trim().to_string()),
            format!("{}{}", &text[..s], &text[e..]),
        ),
        None => (None, text.to_string()),
    }
}

fn parse_answer_body(body: &str) -> ActionKind {
    let (text, sources) = match find_block(body, "sources") {
        Some(((s, e), (is, ie))) => {
            let mut list = Vec::new();
            let mut rest = &body[is..ie];
            while let Some((_, (a, b))) = find_block(rest, "source") {
                let id = rest[a..b].trim();
                if !id.is_empty() {
                    list.push(id.to_string());
                }
                rest = &rest[b..];
            }
            (format!("{}{}", &body[..s], &body[e..]), list)
        }
        None => (body.to_string(), Vec::new()),
    };
    ActionKind::Answer {
        text: text.trim().to_string(),
        sources,
    }
}

fn parse_tool_body(body: &str) -> ActionKind {
    let error = |error| ActionKind::ParseError { error };
    let Ok(Value::Object(obj)) = serde_json::from_str::<Value>(body.trim()) else {
        return error(FormatError::CantParseToolCall);
    };
    if obj.len() != 2 {
        return error(FormatError::CantParseToolCall);
    }
    let (Some(Value::String(name)), Some(args)) = (obj.get("name"), obj.get("args")) else {
        return error(FormatError::CantParseToolCall);
    };
    match ToolCall::from_parts(name, args) {
        Ok(call) => ActionKind::ToolCall { call },
        Err(CallShapeError::UnknownName) => error(FormatError::BadToolCallName),
        Err(CallShapeError::BadArgs) => error(FormatError::BadToolCallArgs),
    }
}

/// Parses one assistant message. Total: malformed input becomes a
/// `ParseError` action, never a panic.
pub fn parse_assistant_message(text: &str) -> AgentAction {
    let (think, rest) = without_think(text);
    let kind = if let Some(body) = block(&rest, "answer") {
        parse_answer_body(body)
    } else if let Some(body) = block(&rest, "tool") {
        parse_tool_body(body)
    } else {
        ActionKind::ParseError {
            error: FormatError::CantParseToolCall,
        }
    };
    AgentAction { think, kind }
}

/// Parses a completion generated after the harness seeded `<answer>`.
/// Tool blocks are ignored and a missing `</answer>` closes at end of text,
/// so the result is always an answer.
pub fn parse_forced_answer(text: &str) -> AgentAction {
    let (think, rest) = without_think(text);
    let body_start = rest.find(ANSWER_PREFIX).map_or(0, |i| i + ANSWER_PREFIX.len());
    let tail = &rest[body_start..];
    let body = match tail.find("</answer>") {
        Some(end) => &tail[..end],
        None => tail,
    };
    let body = match find_block(body, "tool") {
        Some(((s, e), _)) => format!("{}{}", &body[..s], &body[e..]),
        None => body.to_string(),
    };
    AgentAction {
        think,
        kind: parse_answer_body(&body),
    }
}

/// Case-insensitive "i don't know" / "i do not know" containment.
pub fn is_i_dont_know(answer_text: &str) -> bool {
    let lower = answer_text.to_lowercase().replace(['\u{2019}', '\u{2018}'], "'");
    lower.contains("i don't know") || lower.contains("i do not know")
}

/// Splits cited IDs into those present in the corpus and the rest, keeping
/// order and duplicates.
pub fn validate_sources(sources: &[String], corpus: &Corpus) -> (Vec<SectionId>, Vec<String>) {
    let mut valid = Vec::new();
    let mut invalid = Vec::new();
    for s in sources {
        match SectionId::new(s.as_str()) {
            Ok(id) if corpus.contains(&id) => valid.push(id),
            _ => invalid.push(s.clone()),
        }
    }
    (valid, invalid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::fixture_corpus;
    use proptest::prelude::*;

    #[test]
    fn prompt_substitution() {
        let p = render_system_prompt(10);
        assert!(p.contains("for up to 10 turns"));
        assert!(render_system_prompt(2).contains("for up to 2 turns"));
        assert_eq!(p, render_system_prompt(10));
        assert!(p.starts_with("You are a legal research assistant"));
        assert!(p.contains(r#"{"name": "tool_name", "args": {"query": "search query"}}"#));
        assert!(!p.contains("{max_turns}"));
    }

    #[test]
    fn parses_tool_call() {
        let a = parse_assistant_message(
            r#"<think>t</think><tool>{"name":"search_keyword","args":{"query":"breach","num":5}}</tool>"#,
        );
        assert_eq!(a.think.as_deref(), Some("t"));
        assert_eq!(
            a.tool_call(),
            Some(&ToolCall::SearchKeyword {
                query: "breach".into(),
                num: Some(5)
            })
        );
    }

    #[test]
    fn classifies_formatting_errors() {
        let cases = [
            (r#"<tool>{"name":"search_web","args":{"query":"x"}}</tool>"#, FormatError::BadToolCallName),
            (r#"<tool>{"name":"search_keyword","args":"#, FormatError::CantParseToolCall),
            (r#"<tool>{"name":"search_keyword","args":{"q":"x"}}</tool>"#, FormatError::BadToolCallArgs),
            (r#"<tool>{"name":"read_document_part","args":{"part_id":7}}</tool>"#, FormatError::BadToolCallArgs),
            (r#"<tool>{"name":"search_keyword"}</tool>"#, FormatError::CantParseToolCall),
            (r#"<tool>{"name":"search_keyword","args":{},"x":1}</tool>"#, FormatError::CantParseToolCall),
            (r#"<tool>[1,2]</tool>"#, FormatError::CantParseToolCall),
            ("hello", FormatError::CantParseToolCall),
            ("<TOOL>{}</TOOL>", FormatError::CantParseToolCall),
            ("<answer>unterminated", FormatError::CantParseToolCall),
        ];
        for (text, want) in cases {
            assert_eq!(parse_assistant_message(text).format_error(), Some(want), "{text}");
        }
    }

    #[test]
    fn answers_and_sources() {
        let a = parse_assistant_message("<answer>I don't know</answer>");
        assert_eq!(a.answer(), Some(("I don't know", &[][..])));
        let a = parse_assistant_message(
            "<think>x</think>\n<answer>\n$5,000 was awarded.\n\n<sources>\n<source> D1:j:damages:p1 </source>\n<source>D9:z</source>\n</sources>\n</answer>",
        );
        let (text, sources) = a.answer().unwrap();
        assert_eq!(text, "$5,000 was awarded.");
        assert_eq!(sources, ["D1:j:damages:p1", "D9:z"]);
    }

    #[test]
    fn answer_beats_tool() {
        let a = parse_assistant_message(
            r#"<tool>{"name":"search_keyword","args":{"query":"x"}}</tool><answer>done</answer>"#,
        );
        assert_eq!(a.answer().map(|a| a.0), Some("done"));
    }

    #[test]
    fn tags_inside_think_are_inert() {
        let a = parse_assistant_message(
            r#"<think>maybe <answer>no</answer></think><tool>{"name":"read_document_part","args":{"part_id":"D1"}}</tool>"#,
        );
        assert!(a.tool_call().is_some());
    }

    #[test]
    fn forced_answers() {
        let a = parse_forced_answer("<answer>The damages were $5,000 ... </answer>");
        assert_eq!(a.answer().map(|a| a.0), Some("The damages were $5,000 ..."));
        let a = parse_forced_answer(
            r#"<answer><tool>{"name":"search_keyword","args":{"query":"x"}}</tool>"#,
        );
        assert_eq!(a.answer().map(|a| a.0), Some(""));
        let a = parse_forced_answer("<answer>partial <sources><source>D1</source></sources>");
        assert_eq!(a.answer(), Some(("partial", &["D1".to_string()][..])));
    }

    #[test]
    fn idk_detection() {
        assert!(is_i_dont_know("Sorry, I DON'T KNOW."));
        assert!(is_i_dont_know("i do not know"));
        assert!(is_i_dont_know("I don\u{2019}t know"));
        assert!(!is_i_dont_know("I know: $5,000"));
    }

    #[test]
    fn source_validation() {
        let corpus = fixture_corpus();
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        let (valid, invalid) = validate_sources(&s(&["D1:j:damages:p1"]), &corpus);
        assert_eq!((valid.len(), invalid.len()), (1, 0));
        let (valid, invalid) = validate_sources(&s(&["D1:j:damages:p1", "D9:z", "D1:j:damages:p1"]), &corpus);
        assert_eq!(valid.len(), 2);
        assert_eq!(invalid, ["D9:z"]);
        let (valid, invalid) = validate_sources(&[], &corpus);
        assert!(valid.is_empty() && invalid.is_empty());
    }

    fn tool_call_strategy() -> impl Strategy<Value = ToolCall> {
        let text = "[a-zA-Z0-9 :_$,.\"'\\\\{}<>-]{0,24}";
        prop_oneof![
            (text, prop::option::of(1u64..100)).prop_map(|(query, num)| ToolCall::SearchKeyword { query, num }),
            (text, prop::option::of(1u64..100)).prop_map(|(query, num)| ToolCall::SearchSemantic { query, num }),
            text.prop_map(|part_id| ToolCall::ReadDocumentPart { part_id }),
        ]
    }

    proptest! {
        #[test]
        fn tool_call_round_trip(call in tool_call_strategy(), think in prop::option::of("[a-z ]{1,20}")) {
            let think = think.map(|t| t.trim().to_string()).filter(|t| !t.is_empty());
            let action = AgentAction { think, kind: ActionKind::ToolCall { call } };
            let reparsed = parse_assistant_message(&action.to_message());
            prop_assert_eq!(reparsed, action);
        }

        #[test]
        fn parser_is_total(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
            let text = String::from_utf8_lossy(&bytes);
            prop_assert!(parse_assistant_message(&text).is_well_formed());
            prop_assert!(parse_forced_answer(&text).answer().is_some());
        }
    }
}
