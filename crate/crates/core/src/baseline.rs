//! Single-shot retrieval baseline: one keyword search and one vector search,
//! the retrieved sections pasted into the prompt, one forced answer.

use crate::corpus::SectionId;
use crate::gateway::{Embedder, GatewayError, Judge, Message, Policy};
use crate::protocol::ANSWER_ONLY_SYSTEM_PROMPT;
use crate::retrieval::{KeywordIndex, SearchHit, VectorIndex};
use crate::reward::QAItem;
use crate::rollout::{forced_answer, Environment, RolloutConfig, RolloutRecord, Terminal, Transcript};
use crate::tools::render_read;

/// Top `k` keyword hits and top `k` vector hits, interleaved (keyword
/// first) with duplicates dropped. Returns at most `2k` sections.
pub fn naive_retrieve(
    query: &str,
    keyword: &KeywordIndex,
    vector: &VectorIndex,
    embedder: &dyn Embedder,
    k: usize,
) -> Result<Vec<SearchHit>, GatewayError> {
    let kw = keyword.search(query, k);
    let qv = embedder.embed(query)?;
    let vec = vector.search(&qv, k).map_err(|e| GatewayError::InvalidResponse(e.to_string()))?;

    let mut out: Vec<SearchHit> = Vec::with_capacity(kw.len() + vec.len());
    let mut kw = kw.into_iter();
    let mut vec = vec.into_iter();
    loop {
        let (a, b) = (kw.next(), vec.next());
        if a.is_none() && b.is_none() {
            break;
        }
        for hit in [a, b].into_iter().flatten() {
            if !out.iter().any(|h| h.section_id == hit.section_id) {
                out.push(hit);
            }
        }
    }
    Ok(out)
}

pub fn context_message(question: &str, sections: &[String]) -> String {
    let body = if sections.is_empty() {
        "(no sections retrieved)".to_string()
    } else {
        sections.join("\n\n")
    };
    format!("Question: {question}\n\nRetrieved sections:\n\n{body}")
}

/// Runs the baseline for one item. The transcript has no tool messages; the
/// retrieved IDs are recorded as context so progress metrics still apply.
pub fn run_naive_rag(
    policy: &dyn Policy,
    qa: &QAItem,
    env: &Environment,
    judge: &dyn Judge,
    cfg: &RolloutConfig,
) -> RolloutRecord {
    let mut t = Transcript {
        messages: vec![Message::system(ANSWER_ONLY_SYSTEM_PROMPT)],
        actions: Vec::new(),
        tool_results: Vec::new(),
        context_ids: Vec::new(),
        terminal: Terminal::Failed,
    };
    let mut failure = None;

    match naive_retrieve(&qa.question, &env.keyword, &env.vector, env.embedder.as_ref(), cfg.k_results) {
        Ok(hits) => {
            let ids: Vec<SectionId> = hits.into_iter().map(|h| h.section_id).collect();
            let rendered: Vec<String> = ids
                .iter()
                .filter_map(|id| env.corpus.get(id).ok())
                .map(render_read)
                .collect();
            t.messages.push(Message::user(context_message(&qa.question, &rendered)));
            t.context_ids = ids;
            match forced_answer(policy, &t.messages) {
                Ok((text, action)) => {
                    t.messages.push(Message::assistant(text));
                    t.actions.push(action);
                    t.terminal = Terminal::ForcedAnswered;
                }
                Err(e) => failure = Some(e.to_string()),
            }
        }
        Err(e) => failure = Some(e.to_string()),
    }
    RolloutRecord::finish(qa, cfg, t, failure, &env.corpus, judge)
}
