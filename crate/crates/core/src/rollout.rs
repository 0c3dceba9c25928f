//! The multi-turn agent loop.
//!
//! A rollout starts from the system prompt and the question, then alternates
//! policy generations with tool executions until the policy answers. A turn
//! is one generation that results in an executed tool call; the final answer
//! is not a turn. Once the turn budget is spent (either `max_turns` or the
//! `forced_answer_turn` restriction) the next generation is seeded with
//! `<answer>` so the policy has to commit.

use std::io::{BufRead, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline;
use crate::corpus::{Corpus, SectionId};
use crate::gateway::{ensure_prefix, Embedder, GenerationParams, Judge, Message, Policy, ScriptedPolicy};
use crate::protocol::{parse_assistant_message, parse_forced_answer, render_system_prompt, ActionKind, AgentAction, ANSWER_PREFIX};
use crate::retrieval::{Bm25Params, KeywordIndex, RetrievalError, VectorIndex};
use crate::reward::{compute_metrics, compute_reward, grpo_advantages, OutcomeMetrics, QAItem, Reward, DEFAULT_ADVANTAGE_EPS};
use crate::tools::{execute_tool, ToolEnv, ToolError, ToolResult, DEFAULT_K, DEFAULT_SNIPPET_WIDTH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub max_turns: usize,
    /// Results per search when the call does not pass `num`.
    pub k_results: usize,
    /// Force an answer after this many executed tool turns.
    pub forced_answer_turn: Option<usize>,
    pub snippet_width: usize,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            max_turns: 10,
            k_results: DEFAULT_K,
            forced_answer_turn: None,
            snippet_width: DEFAULT_SNIPPET_WIDTH,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("forced_answer_turn {0} exceeds max_turns {1}")]
    ForcedTurnTooLate(usize, usize),
    #[error("k_results must be at least 1")]
    ZeroK,
    #[error("group_size must be at least 2, got {0}")]
    GroupTooSmall(usize),
    #[error("groups_per_step must be at least 1")]
    NoGroups,
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.k_results == 0 {
            return Err(ConfigError::ZeroK);
        }
        match self.forced_answer_turn {
            Some(n) if n > self.max_turns => Err(ConfigError::ForcedTurnTooLate(n, self.max_turns)),
            _ => Ok(()),
        }
    }

    /// Tool turns allowed before the answer is forced.
    pub fn turn_limit(&self) -> usize {
        self.forced_answer_turn.map_or(self.max_turns, |n| n.min(self.max_turns))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupConfig {
    pub group_size: usize,
    pub groups_per_step: usize,
}

impl Default for GroupConfig {
    fn default() -> Self {
        Self {
            group_size: 6,
            groups_per_step: 8,
        }
    }
}

impl GroupConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.group_size < 2 {
            return Err(ConfigError::GroupTooSmall(self.group_size));
        }
        if self.groups_per_step == 0 {
            return Err(ConfigError::NoGroups);
        }
        Ok(())
    }
}

/// Corpus, indexes and embedder; built once and shared read-only.
pub struct Environment {
    pub corpus: Corpus,
    pub keyword: KeywordIndex,
    pub vector: VectorIndex,
    pub embedder: Arc<dyn Embedder>,
}

impl Environment {
    pub fn build(corpus: Corpus, embedder: Arc<dyn Embedder>, params: Bm25Params) -> Result<Self, RetrievalError> {
        let keyword = KeywordIndex::build(&corpus, params)?;
        let vector = VectorIndex::build(&corpus, embedder.as_ref())?;
        Ok(Self {
            corpus,
            keyword,
            vector,
            embedder,
        })
    }

    pub fn tool_env(&self, default_k: usize, snippet_width: usize) -> ToolEnv<'_> {
        ToolEnv {
            corpus: &self.corpus,
            keyword: &self.keyword,
            vector: &self.vector,
            embedder: self.embedder.as_ref(),
            default_k,
            snippet_width,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    Answered,
    /// Answer seeded with `<answer>` because the turn restriction was hit.
    ForcedAnswered,
    /// Answer seeded with `<answer>` because `max_turns` ran out.
    RanOutOfTurns,
    FormattingError,
    /// Transport or environment failure; carries no reward.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolOutcome {
    Ok(ToolResult),
    Err(ToolError),
}

impl From<Result<ToolResult, ToolError>> for ToolOutcome {
    fn from(r: Result<ToolResult, ToolError>) -> Self {
        match r {
            Ok(v) => ToolOutcome::Ok(v),
            Err(e) => ToolOutcome::Err(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub messages: Vec<Message>,
    pub actions: Vec<AgentAction>,
    pub tool_results: Vec<ToolOutcome>,
    /// Sections injected into the prompt without a tool call (retrieval baseline).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub context_ids: Vec<SectionId>,
    pub terminal: Terminal,
}

impl Transcript {
    pub fn tool_messages(&self) -> usize {
        self.messages.iter().filter(|m| m.role == crate::gateway::Role::Tool).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub qa: QAItem,
    pub config: RolloutConfig,
    #[serde(default)]
    pub rollout_index: usize,
    pub transcript: Transcript,
    pub metrics: OutcomeMetrics,
    pub reward: Option<Reward>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl RolloutRecord {
    /// Scores a finished transcript.
    pub fn finish(
        qa: &QAItem,
        cfg: &RolloutConfig,
        transcript: Transcript,
        failure: Option<String>,
        corpus: &Corpus,
        judge: &dyn Judge,
    ) -> Self {
        let metrics = compute_metrics(&transcript, qa, corpus, judge);
        let reward = compute_reward(&metrics, transcript.terminal, cfg).ok();
        Self {
            qa: qa.clone(),
            config: *cfg,
            rollout_index: 0,
            transcript,
            metrics,
            reward,
            failure,
        }
    }

    pub fn is_failed(&self) -> bool {
        self.transcript.terminal == Terminal::Failed
    }
}

/// Seeds the next generation with `<answer>`. Messages pass through
/// unchanged; the seed travels in the generation parameters.
pub fn force_answer_prefix(messages: &[Message]) -> (Vec<Message>, GenerationParams) {
    (messages.to_vec(), GenerationParams::forced(ANSWER_PREFIX))
}

/// Runs the forced generation and parses it under answer precedence.
pub(crate) fn forced_answer(
    policy: &dyn Policy,
    messages: &[Message],
) -> Result<(String, AgentAction), crate::gateway::GatewayError> {
    let (msgs, params) = force_answer_prefix(messages);
    let text = ensure_prefix(policy.complete(&msgs, &params)?, Some(ANSWER_PREFIX));
    let action = parse_forced_answer(&text);
    Ok((text, action))
}

pub fn run_rollout(
    policy: &dyn Policy,
    qa: &QAItem,
    env: &Environment,
    judge: &dyn Judge,
    cfg: &RolloutConfig,
) -> RolloutRecord {
    if cfg.forced_answer_turn == Some(0) {
        return baseline::run_naive_rag(policy, qa, env, judge, cfg);
    }

    let tools = env.tool_env(cfg.k_results, cfg.snippet_width);
    let limit = cfg.turn_limit();
    let restricted = cfg.forced_answer_turn.is_some_and(|n| n <= cfg.max_turns);

    let mut t = Transcript {
        messages: vec![
            Message::system(render_system_prompt(cfg.max_turns)),
            Message::user(qa.question.clone()),
        ],
        actions: Vec::new(),
        tool_results: Vec::new(),
        context_ids: Vec::new(),
        terminal: Terminal::Failed,
    };
    let mut failure = None;
    let mut turns = 0;

    loop {
        if turns == limit {
            match forced_answer(policy, &t.messages) {
                Ok((text, action)) => {
                    t.messages.push(Message::assistant(text));
                    t.actions.push(action);
                    t.terminal = if restricted {
                        Terminal::ForcedAnswered
                    } else {
                        Terminal::RanOutOfTurns
                    };
                }
                Err(e) => failure = Some(e.to_string()),
            }
            break;
        }

        let text = match policy.complete(&t.messages, &GenerationParams::default()) {
            Ok(text) => text,
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        let action = parse_assistant_message(&text);
        t.messages.push(Message::assistant(text));
        let call = match &action.kind {
            ActionKind::Answer { .. } => {
                t.actions.push(action);
                t.terminal = Terminal::Answered;
                break;
            }
            ActionKind::ParseError { .. } => {
                t.actions.push(action);
                t.terminal = Terminal::FormattingError;
                break;
            }
            ActionKind::ToolCall { call } => call.clone(),
        };
        t.actions.push(action);

        match execute_tool(&call, &tools) {
            Ok(result) => {
                t.messages.push(Message::tool(result.rendered.clone()));
                t.tool_results.push(ToolOutcome::Ok(result));
                turns += 1;
            }
            Err(error @ ToolError::Embedding(_)) => {
                failure = Some(error.to_string());
                t.tool_results.push(ToolOutcome::Err(error));
                break;
            }
            Err(error) => {
                t.tool_results.push(ToolOutcome::Err(error));
                t.terminal = Terminal::FormattingError;
                break;
            }
        }
    }

    if failure.is_some() {
        t.terminal = Terminal::Failed;
    }
    RolloutRecord::finish(qa, cfg, t, failure, &env.corpus, judge)
}

/// A group of rollouts for one question plus their group-relative advantages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupOutcome {
    pub records: Vec<RolloutRecord>,
    /// Per-slot advantage; `None` for slots without a reward, or for every
    /// slot when fewer than two rollouts were scored.
    pub advantages: Vec<Option<f64>>,
}

pub fn group_advantages(records: &[RolloutRecord]) -> Vec<Option<f64>> {
    let scored: Vec<(usize, f64)> = records
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.reward.map(|rw| (i, rw.value)))
        .collect();
    let mut out = vec![None; records.len()];
    let values: Vec<f64> = scored.iter().map(|(_, v)| *v).collect();
    if let Ok(adv) = grpo_advantages(&values, DEFAULT_ADVANTAGE_EPS) {
        for ((i, _), a) in scored.iter().zip(adv) {
            out[*i] = Some(a);
        }
    }
    out
}

/// Runs `group_size` independent rollouts of one question. Records come
/// back in slot order whatever order they finish in.
pub fn run_group(
    policy: &dyn Policy,
    qa: &QAItem,
    env: &Environment,
    judge: &dyn Judge,
    cfg: &RolloutConfig,
    gcfg: &GroupConfig,
) -> GroupOutcome {
    let records: Vec<RolloutRecord> = (0..gcfg.group_size)
        .into_par_iter()
        .map(|slot| {
            let mut r = run_rollout(policy, qa, env, judge, cfg);
            r.rollout_index = slot;
            r
        })
        .collect();
    let advantages = group_advantages(&records);
    GroupOutcome { records, advantages }
}

/// One training step: `groups_per_step` groups over consecutive items,
/// wrapping around the dataset.
pub fn run_step(
    policy: &dyn Policy,
    dataset: &[QAItem],
    step: usize,
    env: &Environment,
    judge: &dyn Judge,
    cfg: &RolloutConfig,
    gcfg: &GroupConfig,
) -> Vec<GroupOutcome> {
    if dataset.is_empty() {
        return Vec::new();
    }
    (0..gcfg.groups_per_step)
        .into_par_iter()
        .map(|g| {
            let item = &dataset[(step * gcfg.groups_per_step + g) % dataset.len()];
            run_group(policy, item, env, judge, cfg, gcfg)
        })
        .collect()
}

pub fn write_jsonl(records: &[RolloutRecord], mut out: impl Write) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl(input: impl BufRead) -> Result<Vec<RolloutRecord>, String> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| format!("line {}: {e}", i + 1))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?);
    }
    Ok(out)
}

/// Re-runs a recorded rollout with its assistant messages as a scripted
/// policy. Returns the new record and whether its transcript serializes to
/// the same bytes as the original.
pub fn replay(record: &RolloutRecord, env: &Environment, judge: &dyn Judge) -> (RolloutRecord, bool) {
    let responses = record
        .transcript
        .messages
        .iter()
        .filter(|m| m.role == crate::gateway::Role::Assistant)
        .map(|m| m.content.clone());
    let policy = ScriptedPolicy::new(responses);
    let mut again = run_rollout(&policy, &record.qa, env, judge, &record.config);
    again.rollout_index = record.rollout_index;
    let same = serde_json::to_vec(&again.transcript).ok() == serde_json::to_vec(&record.transcript).ok();
    (again, same)
}
