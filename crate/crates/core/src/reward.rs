//! Outcome metrics, banded rewards and group-relative advantages.
//!
//! Rewards fall into four disjoint bands:
//!
//! | band          | interval      | outcome                                   |
//! |---------------|---------------|-------------------------------------------|
//! | `A_correct`   | [1.0, 2.0]    | correct answer citing a gold section      |
//! | `B_idk`       | [0.0, 1.0)    | "I don't know"                            |
//! | `C_incorrect` | [-1.0, 0.0)   | wrong or unsupported answer               |
//! | `D_format`    | [-2.0, -1.0)  | malformed call, bad arguments, unknown ID |
//!
//! Within a band, fewer turns and searches (A) or more progress toward the
//! gold sections (B, C, D) earn more.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, SectionId};
use crate::gateway::Judge;
use crate::protocol::{is_i_dont_know, validate_sources, ActionKind, FormatError};
use crate::rollout::{RolloutConfig, Terminal, ToolOutcome, Transcript};
use crate::tools::ToolError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAItem {
    pub id: String,
    pub question: String,
    pub gold_answer: String,
    pub gold_doc_ids: Vec<SectionId>,
}

impl QAItem {
    pub fn validate(&self, corpus: &Corpus) -> Result<(), CorpusError> {
        if self.gold_doc_ids.is_empty() {
            return Err(CorpusError::Schema(format!("item {} has no gold_doc_ids", self.id)));
        }
        for g in &self.gold_doc_ids {
            corpus.get(g)?;
        }
        Ok(())
    }
}

pub const METRIC_NAMES: [&str; 13] = [
    "answer_correct",
    "sources_correct",
    "returned_i_dont_know",
    "attempted_answer",
    "ever_found_right_doc",
    "ever_read_right_doc",
    "cant_parse_tool_call",
    "bad_tool_call_name",
    "bad_tool_call_args",
    "bad_sources_id",
    "num_turns",
    "num_searches",
    "ran_out_of_turns",
];

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeMetrics {
    pub answer_correct: bool,
    pub sources_correct: bool,
    pub returned_i_dont_know: bool,
    pub attempted_answer: bool,
    pub ever_found_right_doc: bool,
    pub ever_read_right_doc: bool,
    pub cant_parse_tool_call: bool,
    pub bad_tool_call_name: bool,
    pub bad_tool_call_args: bool,
    pub bad_sources_id: bool,
    pub num_turns: usize,
    pub num_searches: usize,
    pub ran_out_of_turns: bool,
    /// Gold sections that appeared in search results or injected context.
    pub gold_docs_found: usize,
    /// Gold sections reached by a read of the section, an ancestor or a descendant.
    pub gold_docs_read: usize,
    /// Set when the judge could not be reached; the reward is withheld.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub judge_pending: bool,
}

impl OutcomeMetrics {
    /// The 13 tracked metrics as numbers, in [`METRIC_NAMES`] order.
    pub fn values(&self) -> [f64; 13] {
        let b = |x: bool| if x { 1.0 } else { 0.0 };
        [
            b(self.answer_correct),
            b(self.sources_correct),
            b(self.returned_i_dont_know),
            b(self.attempted_answer),
            b(self.ever_found_right_doc),
            b(self.ever_read_right_doc),
            b(self.cant_parse_tool_call),
            b(self.bad_tool_call_name),
            b(self.bad_tool_call_args),
            b(self.bad_sources_id),
            self.num_turns as f64,
            self.num_searches as f64,
            b(self.ran_out_of_turns),
        ]
    }

    pub fn has_format_error(&self) -> bool {
        self.cant_parse_tool_call || self.bad_tool_call_name || self.bad_tool_call_args
    }
}

fn covers(hit: &SectionId, gold: &SectionId) -> bool {
    hit == gold || hit.is_descendant_of(gold)
}

fn read_reaches(read: &SectionId, gold: &SectionId) -> bool {
    read == gold || read.is_descendant_of(gold) || gold.is_descendant_of(read)
}

/// Derives all metrics from a finished transcript. The judge is consulted
/// only for attempted, non-IDK answers.
pub fn compute_metrics(t: &Transcript, qa: &QAItem, corpus: &Corpus, judge: &dyn Judge) -> OutcomeMetrics {
    let mut m = OutcomeMetrics::default();

    let mut found: Vec<&SectionId> = t.context_ids.iter().collect();
    let mut reads: Vec<&SectionId> = Vec::new();
    for outcome in &t.tool_results {
        match outcome {
            ToolOutcome::Ok(r) => {
                m.num_turns += 1;
                match &r.read_id {
                    Some(id) => reads.push(id),
                    None => {
                        m.num_searches += 1;
                        found.extend(r.hits.iter().map(|h| &h.section_id));
                    }
                }
            }
            ToolOutcome::Err(ToolError::BadArgs(_) | ToolError::UnknownPartId(_)) => {
                m.bad_tool_call_args = true;
            }
            ToolOutcome::Err(ToolError::Embedding(_)) => {}
        }
    }
    m.gold_docs_found = qa
        .gold_doc_ids
        .iter()
        .filter(|g| found.iter().any(|h| covers(h, g)))
        .count();
    m.gold_docs_read = qa
        .gold_doc_ids
        .iter()
        .filter(|g| reads.iter().any(|r| read_reaches(r, g)))
        .count();
    m.ever_found_right_doc = m.gold_docs_found > 0;
    m.ever_read_right_doc = m.gold_docs_read > 0;

    for action in &t.actions {
        if let ActionKind::ParseError { error } = action.kind {
            match error {
                FormatError::CantParseToolCall => m.cant_parse_tool_call = true,
                FormatError::BadToolCallName => m.bad_tool_call_name = true,
                FormatError::BadToolCallArgs => m.bad_tool_call_args = true,
            }
        }
    }

    if let Some((text, sources)) = t.actions.last().and_then(|a| a.answer()) {
        let (valid, invalid) = validate_sources(sources, corpus);
        m.bad_sources_id = !invalid.is_empty();
        m.sources_correct = invalid.is_empty() && valid.iter().any(|v| qa.gold_doc_ids.contains(v));
        m.returned_i_dont_know = is_i_dont_know(text);
        m.attempted_answer = !m.returned_i_dont_know;
        if m.attempted_answer {
            match judge.judge(&qa.question, &qa.gold_answer, text) {
                Ok(v) => m.answer_correct = v,
                Err(_) => m.judge_pending = true,
            }
        }
    }
    m.ran_out_of_turns = t.terminal == Terminal::RanOutOfTurns;
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Band {
    #[serde(rename = "A_correct")]
    Correct,
    #[serde(rename = "B_idk")]
    IDontKnow,
    #[serde(rename = "C_incorrect")]
    Incorrect,
    #[serde(rename = "D_format")]
    Format,
}

impl Band {
    pub const ALL: [Band; 4] = [Band::Correct, Band::IDontKnow, Band::Incorrect, Band::Format];

    /// Closed interval `[lo, hi]` the band's values may take.
    pub fn interval(self) -> (f64, f64) {
        match self {
            Band::Correct => (1.0, 2.0),
            Band::IDontKnow => (0.0, 1.0),
            Band::Incorrect => (-1.0, 0.0),
            Band::Format => (-2.0, -1.0),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Band::Correct => "A_correct",
            Band::IDontKnow => "B_idk",
            Band::Incorrect => "C_incorrect",
            Band::Format => "D_format",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reward {
    pub value: f64,
    pub band: Band,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardError {
    #[error("answer verdict is still pending; resolve the judge call first")]
    JudgePending,
    #[error("rollout failed before completion; it has no reward")]
    Failed,
    #[error("value {0} is outside [-2, 2]")]
    OutOfRange(f64),
    #[error("advantages need a group of at least 2 rewards, got {0}")]
    GroupTooSmall(usize),
}

/// Interval lookup; the boundaries 1.0, 0.0 and -1.0 belong to the higher band.
pub fn classify_band(value: f64) -> Result<Band, RewardError> {
    if !(-2.0..=2.0).contains(&value) {
        return Err(RewardError::OutOfRange(value));
    }
    Ok(if value >= 1.0 {
        Band::Correct
    } else if value >= 0.0 {
        Band::IDontKnow
    } else if value >= -1.0 {
        Band::Incorrect
    } else {
        Band::Format
    })
}

/// Sum of the two efficiency terms as a fraction `units / budget`, so equal
/// outcomes always produce bit-identical rewards.
fn efficiency_sum(turns: usize, searches: usize, budget: usize) -> f64 {
    if budget == 0 {
        return 2.0;
    }
    let units = budget.saturating_sub(turns) + budget.saturating_sub(searches);
    units as f64 / budget as f64
}

pub fn compute_reward(m: &OutcomeMetrics, terminal: Terminal, cfg: &RolloutConfig) -> Result<Reward, RewardError> {
    if terminal == Terminal::Failed {
        return Err(RewardError::Failed);
    }
    if m.judge_pending {
        return Err(RewardError::JudgePending);
    }
    let (band, value) = if terminal == Terminal::FormattingError {
        let v = -2.0 + 0.1 * m.num_turns as f64;
        (Band::Format, v.clamp(-2.0, -1.05))
    } else if m.answer_correct && m.sources_correct {
        let v = 1.0 + 0.5 * efficiency_sum(m.num_turns, m.num_searches, cfg.max_turns);
        (Band::Correct, v.clamp(1.0, 2.0))
    } else if m.returned_i_dont_know {
        let progress = usize::from(m.ever_found_right_doc) + usize::from(m.ever_read_right_doc);
        (Band::IDontKnow, 0.3 + 0.2 * progress as f64)
    } else {
        let v = -1.0 + 0.1 * (m.gold_docs_found + m.gold_docs_read) as f64;
        (Band::Incorrect, v.clamp(-1.0, -0.05))
    };
    Ok(Reward { value, band })
}

/// Group-relative advantages `(r - mean) / (std + eps)` with the population
/// standard deviation. A group with no spread gets all zeros.
pub fn grpo_advantages(rewards: &[f64], eps: f64) -> Result<Vec<f64>, RewardError> {
    if rewards.len() < 2 {
        return Err(RewardError::GroupTooSmall(rewards.len()));
    }
    if rewards.iter().all(|r| *r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / (std + eps)).collect())
}

pub const DEFAULT_ADVANTAGE_EPS: f64 = 1e-8;
