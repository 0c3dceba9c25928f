//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any fail. Built with `harness = false`.

// `ensure!(x <= tol)` must fail when `x` is NaN, hence the negated compare.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};

use lexsearch::baseline::run_naive_rag;
use lexsearch::corpus::{Corpus, SectionId};
use lexsearch::eval::{run_benchmark, run_turn_sweep, BenchmarkOptions};
use lexsearch::fixtures;
use lexsearch::gateway::{Embedder, ScriptedPolicy, StubEmbedder, StubJudge};
use lexsearch::policies::{IdkPolicy, IncrementalPolicy, MalformedPolicy, OraclePolicy};
use lexsearch::protocol::{parse_assistant_message, validate_sources, FormatError};
use lexsearch::retrieval::{keyword_search, vector_search, Bm25Params, KeywordIndex};
use lexsearch::reward::{compute_reward, grpo_advantages, Band, OutcomeMetrics, DEFAULT_ADVANTAGE_EPS};
use lexsearch::rollout::{run_rollout, RolloutConfig, Terminal};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

// ---------------------------------------------------------------------------
// Independent oracles
// ---------------------------------------------------------------------------

fn oracle_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Leaf ID and its indexed text (heading line, then body).
fn oracle_leaves(corpus: &Corpus) -> Vec<(SectionId, String)> {
    corpus
        .sections()
        .filter(|s| s.child_ids.is_empty())
        .map(|s| {
            let text = match (&s.heading, s.text.is_empty()) {
                (Some(h), false) => format!("{h}\n{}", s.text),
                (Some(h), true) => h.clone(),
                (None, _) => s.text.clone(),
            };
            (s.id.clone(), text)
        })
        .collect()
}

fn oracle_rank(mut scored: Vec<(SectionId, f64)>) -> Vec<(SectionId, f64)> {
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored
}

fn oracle_bm25(corpus: &Corpus, query: &str) -> Vec<(SectionId, f64)> {
    let (k1, b) = (1.2, 0.75);
    let docs: Vec<(SectionId, Vec<String>)> = oracle_leaves(corpus)
        .into_iter()
        .map(|(id, t)| (id, oracle_tokens(&t)))
        .collect();
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(|(_, t)| t.len() as f64).sum::<f64>() / n;
    let q = oracle_tokens(query);
    let scored = docs
        .iter()
        .map(|(id, toks)| {
            let dl = toks.len() as f64;
            let mut s = 0.0;
            for term in &q {
                let tf = toks.iter().filter(|t| *t == term).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let df = docs.iter().filter(|(_, t)| t.contains(term)).count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                s += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avgdl));
            }
            (id.clone(), s)
        })
        .filter(|(_, s)| *s > 0.0)
        .collect();
    oracle_rank(scored)
}

fn oracle_embed(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for tok in oracle_tokens(text) {
        let mut h: u64 = 14_695_981_039_346_656_037;
        for byte in tok.bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(1_099_511_628_211);
        }
        v[(h % dim as u64) as usize] += if h.is_multiple_of(2) { 1.0 } else { -1.0 };
    }
    v
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Same IDs and scores, position by position. A different ID at a
/// position is accepted only if the two sections tie within `tol`.
fn compare_rankings(got: &[(SectionId, f64)], want: &[(SectionId, f64)], tol: f64) -> Result<(), String> {
    ensure!(got.len() == want.len(), "length {} != oracle {}", got.len(), want.len());
    let by_id: HashMap<&SectionId, f64> = want.iter().map(|(id, s)| (id, *s)).collect();
    for (i, ((gid, gs), (wid, ws))) in got.iter().zip(want).enumerate() {
        ensure!((gs - ws).abs() <= tol, "position {i}: score {gs} != oracle {ws}");
        if gid != wid {
            let theirs = by_id.get(gid).ok_or(format!("unexpected hit {gid}"))?;
            ensure!((theirs - ws).abs() <= tol, "position {i}: {gid} ranked where oracle has {wid}");
        }
        ensure!((by_id[gid] - gs).abs() <= tol, "{gid}: score {gs} != oracle {}", by_id[gid]);
    }
    Ok(())
}

fn random_query(rng: &mut StdRng, vocab: &[String]) -> String {
    const EXTRA: [&str; 4] = ["zebra", "Quorum", "appeal!", "THE"];
    let len = rng.random_range(1..=5);
    let mut words = Vec::new();
    for _ in 0..len {
        if rng.random_range(0..5) == 0 {
            words.push(EXTRA[rng.random_range(0..EXTRA.len())].to_string());
        } else {
            let w = &vocab[rng.random_range(0..vocab.len())];
            words.push(if rng.random_bool(0.3) { w.to_uppercase() } else { w.clone() });
        }
    }
    words.join(" ")
}

fn vocabulary(corpus: &Corpus) -> Vec<String> {
    let mut v: Vec<String> = oracle_leaves(corpus)
        .iter()
        .flat_map(|(_, t)| oracle_tokens(t))
        .collect();
    v.sort();
    v.dedup();
    v
}

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

fn bm25_oracle() -> Check {
    let corpus = fixtures::corpus();
    let index = KeywordIndex::build(&corpus, Bm25Params::default()).map_err(|e| e.to_string())?;
    let vocab = vocabulary(&corpus);
    let mut rng = StdRng::seed_from_u64(0xb325);
    let mut compared = 0;
    for _ in 0..25 {
        let q = random_query(&mut rng, &vocab);
        let got: Vec<(SectionId, f64)> = keyword_search(&index, &q, 100)
            .into_iter()
            .map(|h| (h.section_id, h.score))
            .collect();
        compare_rankings(&got, &oracle_bm25(&corpus, &q), 1e-9).map_err(|e| format!("query {q:?}: {e}"))?;
        compared += got.len();
    }
    Ok(format!("25 queries, {compared} scored hits"))
}

fn vector_oracle() -> Check {
    let env = fixtures::environment();
    let vocab = vocabulary(&env.corpus);
    let leaves = oracle_leaves(&env.corpus);
    let embedder = StubEmbedder::default();
    let mut rng = StdRng::seed_from_u64(0xc051);
    for _ in 0..25 {
        let q = random_query(&mut rng, &vocab);
        let qv = embedder.embed(&q).map_err(|e| e.to_string())?;
        let got: Vec<(SectionId, f64)> = vector_search(&env.vector, &qv, leaves.len())
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|h| (h.section_id, h.score))
            .collect();
        let raw_q = oracle_embed(&q, embedder.dim);
        let want = oracle_rank(
            leaves
                .iter()
                .map(|(id, t)| (id.clone(), cosine(&raw_q, &oracle_embed(t, embedder.dim))))
                .collect(),
        );
        compare_rankings(&got, &want, 1e-12).map_err(|e| format!("query {q:?}: {e}"))?;
    }
    Ok(format!("25 queries over {} leaves", leaves.len()))
}

fn random_tool_call(rng: &mut StdRng) -> String {
    const NAMES: [&str; 5] = ["search_keyword", "search_semantic", "read_document_part", "search_web", ""];
    const KEYS: [&str; 5] = ["query", "num", "part_id", "q", "extra"];
    const VALUES: [&str; 7] = ["\"breach\"", "5", "-1", "2.5", "null", "\"D1:j\"", "[1]"];
    let mut args = Vec::new();
    for _ in 0..rng.random_range(0..3) {
        let k = KEYS[rng.random_range(0..KEYS.len())];
        let v = VALUES[rng.random_range(0..VALUES.len())];
        args.push(format!("\"{k}\":{v}"));
    }
    let name = NAMES[rng.random_range(0..NAMES.len())];
    let think = if rng.random_bool(0.5) { "<think>plan</think>" } else { "" };
    format!("{think}<tool>{{\"name\":\"{name}\",\"args\":{{{}}}}}</tool>", args.join(","))
}

fn random_message(rng: &mut StdRng) -> String {
    const PIECES: [&str; 28] = [
        "<think>", "</think>", "<tool>", "</tool>", "<answer>", "</answer>", "<sources>", "</sources>",
        "<source>", "</source>", "{", "}", "[", "]", ":", ",", "\"name\"", "\"args\"", "\"query\"",
        "\"num\"", "\"part_id\"", "\"search_keyword\"", "\"read_document_part\"", "\"search_web\"", "5", "-1",
        "D1:j:damages:p1", "I don't know",
    ];
    let mut s = String::new();
    if rng.random_bool(0.3) {
        s.push_str(&random_tool_call(rng));
    }
    for _ in 0..rng.random_range(0..24) {
        match rng.random_range(0..10) {
            0 => s.push(char::from_u32(rng.random_range(0..0x11_0000)).unwrap_or('\u{fffd}')),
            1 => s.push(' '),
            2 => s.push('<'),
            _ => s.push_str(PIECES[rng.random_range(0..PIECES.len())]),
        }
    }
    if rng.random_bool(0.3) {
        s.push_str(&random_tool_call(rng));
    }
    s
}

fn protocol_totality() -> Check {
    let mut rng = StdRng::seed_from_u64(0x7074);
    let mut kinds: HashMap<&'static str, usize> = HashMap::new();
    for i in 0..10_000 {
        let msg = random_message(&mut rng);
        let action = catch_unwind(|| parse_assistant_message(&msg)).map_err(|_| format!("case {i} panicked: {msg:?}"))?;
        ensure!(action.is_well_formed(), "case {i} not well formed: {msg:?}");
        let kind = match (action.tool_call(), action.answer(), action.format_error()) {
            (Some(_), None, None) => "tool_call",
            (None, Some(_), None) => "answer",
            (None, None, Some(_)) => "parse_error",
            _ => return Err(format!("case {i}: ambiguous action for {msg:?}")),
        };
        *kinds.entry(kind).or_default() += 1;
    }

    let targeted = [
        (r#"<tool>{"name":"search_keyword","args":"#, FormatError::CantParseToolCall),
        ("plain prose", FormatError::CantParseToolCall),
        (r#"<tool>{"name":"search_web","args":{"query":"x"}}</tool>"#, FormatError::BadToolCallName),
        (r#"<tool>{"name":"search_keyword","args":{"q":"x"}}</tool>"#, FormatError::BadToolCallArgs),
        (r#"<tool>{"name":"read_document_part","args":{"part_id":7}}</tool>"#, FormatError::BadToolCallArgs),
    ];
    for (msg, want) in targeted {
        let got = parse_assistant_message(msg).format_error();
        ensure!(got == Some(want), "{msg:?}: expected {want:?}, got {got:?}");
    }
    let corpus = fixtures::corpus();
    let cited = parse_assistant_message("<answer>x<sources><source>D9:z</source></sources></answer>");
    let (_, sources) = cited.answer().ok_or("citation case did not parse as an answer")?;
    let (_, invalid) = validate_sources(sources, &corpus);
    ensure!(invalid == ["D9:z"], "bad source ID not reported: {invalid:?}");

    let env = fixtures::environment();
    let item = &fixtures::dataset()[0];
    let policy = ScriptedPolicy::new(["<answer>$5,000<sources><source>D9:z</source></sources></answer>"]);
    let r = run_rollout(&policy, item, &env, &StubJudge, &RolloutConfig::default());
    ensure!(r.metrics.bad_sources_id && !r.metrics.sources_correct, "bad_sources_id metric not set");

    Ok(format!(
        "10000 fuzz cases ({} tool, {} answer, {} error); 4 error kinds hit",
        kinds.get("tool_call").unwrap_or(&0),
        kinds.get("answer").unwrap_or(&0),
        kinds.get("parse_error").unwrap_or(&0)
    ))
}

fn random_metrics(rng: &mut StdRng) -> OutcomeMetrics {
    let num_turns = rng.random_range(0..=20);
    OutcomeMetrics {
        answer_correct: rng.random_bool(0.5),
        sources_correct: rng.random_bool(0.5),
        returned_i_dont_know: rng.random_bool(0.3),
        attempted_answer: rng.random_bool(0.5),
        ever_found_right_doc: rng.random_bool(0.5),
        ever_read_right_doc: rng.random_bool(0.5),
        cant_parse_tool_call: rng.random_bool(0.1),
        bad_tool_call_name: rng.random_bool(0.1),
        bad_tool_call_args: rng.random_bool(0.1),
        bad_sources_id: rng.random_bool(0.2),
        num_turns,
        num_searches: rng.random_range(0..=num_turns),
        ran_out_of_turns: rng.random_bool(0.2),
        gold_docs_found: rng.random_range(0..=4),
        gold_docs_read: rng.random_range(0..=4),
        judge_pending: false,
    }
}

const TERMINALS: [Terminal; 4] = [
    Terminal::Answered,
    Terminal::ForcedAnswered,
    Terminal::RanOutOfTurns,
    Terminal::FormattingError,
];

fn in_band(band: Band, v: f64) -> bool {
    match band {
        Band::Correct => (1.0..=2.0).contains(&v),
        Band::IDontKnow => (0.0..1.0).contains(&v),
        Band::Incorrect => (-1.0..0.0).contains(&v),
        Band::Format => (-2.0..-1.0).contains(&v),
    }
}

fn reward_bands() -> Check {
    let mut rng = StdRng::seed_from_u64(0x8e3d);
    let mut max_c = f64::NEG_INFINITY;
    let mut min_b = f64::INFINITY;
    let mut counts = [0usize; 4];
    for i in 0..20_000 {
        let m = random_metrics(&mut rng);
        let terminal = TERMINALS[rng.random_range(0..TERMINALS.len())];
        let cfg = RolloutConfig {
            max_turns: rng.random_range(0..=15),
            ..RolloutConfig::default()
        };
        let r = compute_reward(&m, terminal, &cfg).map_err(|e| format!("case {i}: {e}"))?;
        ensure!(in_band(r.band, r.value), "case {i}: {} outside {:?}", r.value, r.band);
        counts[Band::ALL.iter().position(|b| *b == r.band).unwrap()] += 1;
        match r.band {
            Band::Incorrect => max_c = max_c.max(r.value),
            Band::IDontKnow => min_b = min_b.min(r.value),
            Band::Correct => {
                for (dt, ds) in [(1, 0), (1, 1)] {
                    let more = OutcomeMetrics {
                        num_turns: m.num_turns + dt,
                        num_searches: m.num_searches + ds,
                        ..m.clone()
                    };
                    let r2 = compute_reward(&more, terminal, &cfg).map_err(|e| e.to_string())?;
                    ensure!(r2.band == Band::Correct && r2.value <= r.value, "case {i}: efficiency not monotone");
                }
            }
            Band::Format => {}
        }
    }
    ensure!(counts.iter().all(|c| *c > 0), "some band never produced: {counts:?}");
    ensure!(max_c < min_b, "hallucination ordering violated: max C {max_c} >= min B {min_b}");
    Ok(format!("20000 cases, bands A/B/C/D = {counts:?}, max C {max_c:.2} < min B {min_b:.2}"))
}

/// Checks one group. Returns `Ok(Some(input_std))` when everything holds
/// except the unit-std bound, so violations can be tallied.
fn check_group(rewards: &[f64]) -> Result<Option<f64>, String> {
    let adv = grpo_advantages(rewards, DEFAULT_ADVANTAGE_EPS).map_err(|e| e.to_string())?;
    let n = adv.len() as f64;
    if rewards.iter().all(|r| *r == rewards[0]) {
        ensure!(adv.iter().all(|a| *a == 0.0), "equal group {rewards:?} gave {adv:?}");
        return Ok(None);
    }
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    ensure!(mean.abs() <= 1e-12, "mean {mean:e} for {rewards:?}");
    if (std - 1.0).abs() <= 1e-6 {
        return Ok(None);
    }
    let rm = rewards.iter().sum::<f64>() / n;
    let input_std = (rewards.iter().map(|r| (r - rm).powi(2)).sum::<f64>() / n).sqrt();
    Ok(Some(input_std))
}

fn grpo() -> Check {
    let mut rng = StdRng::seed_from_u64(0x6790);
    let mut groups = 0;
    let mut positive = 0;
    let mut violations: Vec<f64> = Vec::new();
    for _ in 0..2_000 {
        let size = rng.random_range(2..=16);
        let uniform: Vec<f64> = (0..size).map(|_| rng.random_range(-2.0..=2.0)).collect();

        let cfg = RolloutConfig {
            max_turns: rng.random_range(1..=15),
            ..RolloutConfig::default()
        };
        let outcome: Vec<f64> = (0..size)
            .map(|_| {
                let terminal = TERMINALS[rng.random_range(0..TERMINALS.len())];
                compute_reward(&random_metrics(&mut rng), terminal, &cfg).unwrap().value
            })
            .collect();
        let constant = vec![rng.random_range(-2.0..=2.0); size];

        for rewards in [&uniform, &outcome, &constant] {
            if rewards.iter().any(|r| *r != rewards[0]) {
                positive += 1;
            }
            if let Some(input_std) = check_group(rewards)? {
                violations.push(input_std);
            }
            let c = rng.random_range(-50.0..=50.0);
            let shifted: Vec<f64> = rewards.iter().map(|r| r + c).collect();
            let a = grpo_advantages(rewards, DEFAULT_ADVANTAGE_EPS).unwrap();
            let b = grpo_advantages(&shifted, DEFAULT_ADVANTAGE_EPS).unwrap();
            let worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            ensure!(worst <= 1e-6, "shift by {c} moved advantages by {worst:e}");
            groups += 1;
        }
    }
    if !violations.is_empty() {
        let largest = violations.iter().copied().fold(0.0, f64::max);
        return Err(format!(
            "output std off by more than 1e-6 in {}/{positive} variance-positive groups; \
             all have input std <= {largest:.3e}, where eps = {DEFAULT_ADVANTAGE_EPS:e} alone shrinks \
             the std by eps/(std+eps) > 1e-6. Mean, all-equal and shift checks passed on all {groups} groups",
            violations.len()
        ));
    }
    Ok(format!("{groups} groups ({positive} variance-positive)"))
}

fn end_to_end() -> Check {
    let env = fixtures::environment();
    let items = fixtures::dataset();
    let opts = BenchmarkOptions::default();
    let run = |p: &dyn lexsearch::gateway::Policy| run_benchmark(&items, &env, p, &StubJudge, &opts);

    let oracle = run(&OraclePolicy::new(items.clone())).map_err(|e| e.to_string())?.report;
    ensure!(oracle.aggregates.accuracy == 100.0, "oracle accuracy {}", oracle.aggregates.accuracy);
    let all = |rep: &lexsearch::eval::Report, lo: f64, hi: f64| {
        rep.items
            .iter()
            .flat_map(|i| &i.rollouts)
            .all(|r| r.reward.is_some_and(|v| (lo..=hi).contains(&v)))
    };
    ensure!(all(&oracle, 1.0, 2.0), "oracle reward outside [1, 2]");
    ensure!(
        oracle.items.iter().flat_map(|i| &i.rollouts).all(|r| r.metrics.sources_correct),
        "oracle sources not correct everywhere"
    );
    let idk = run(&IdkPolicy).map_err(|e| e.to_string())?.report;
    ensure!(all(&idk, 0.0, 1.0), "IDK reward outside [0, 1]");
    let bad = run(&MalformedPolicy).map_err(|e| e.to_string())?.report;
    ensure!(all(&bad, -2.0, -1.0), "malformed reward outside [-2, -1]");
    Ok(format!(
        "oracle {}% (avg turns {}), IDK mean {:?}, malformed mean {:?}",
        oracle.aggregates.accuracy, oracle.aggregates.avg_turns, idk.aggregates.mean_reward, bad.aggregates.mean_reward
    ))
}

fn restriction_equivalence() -> Check {
    let env = fixtures::environment();
    let items = fixtures::dataset();
    let policy = OraclePolicy::new(items.clone());
    let cfg0 = RolloutConfig {
        forced_answer_turn: Some(0),
        ..RolloutConfig::default()
    };
    for item in &items {
        let forced = run_rollout(&policy, item, &env, &StubJudge, &cfg0);
        let rag = run_naive_rag(&policy, item, &env, &StubJudge, &RolloutConfig::default());
        let mut a = forced.transcript.context_ids.clone();
        let mut b = rag.transcript.context_ids.clone();
        a.sort();
        b.sort();
        ensure!(!a.is_empty(), "{}: no context injected", item.id);
        ensure!(a == b, "{}: {a:?} != {b:?}", item.id);
        ensure!(forced.transcript.tool_messages() == 0, "{}: tool turns under N=0", item.id);
    }
    Ok(format!("{} items, identical context sets", items.len()))
}

fn sweep_monotonicity() -> Check {
    let env = fixtures::environment();
    let items = fixtures::dataset();
    let run = run_turn_sweep(
        &items,
        &env,
        &IncrementalPolicy::new(items.clone()),
        &StubJudge,
        &BenchmarkOptions::default(),
        &[1, 2, 3, 4, 5],
    )
    .map_err(|e| e.to_string())?;
    let sweep = run.report.sweep.ok_or("no sweep in report")?;
    let acc: Vec<f64> = sweep.values().map(|p| p.accuracy).collect();
    ensure!(acc.windows(2).all(|w| w[0] <= w[1]), "accuracy not monotone: {acc:?}");
    ensure!(acc.first() < acc.last(), "accuracy flat: {acc:?}");
    Ok(format!("accuracy by N = {acc:.1?}"))
}

fn cli_determinism() -> Check {
    let bin = env!("CARGO_BIN_EXE_lexsearch");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let runs: [&[&str]; 2] = [
        &["eval", "run", "--policy", "oracle", "--group-size", "6", "--jobs", "4"],
        &["eval", "sweep", "--policy", "incremental", "--turns", "0,1,2,3,4,5", "--group-size", "3", "--jobs", "4"],
    ];
    for (r, args) in runs.iter().enumerate() {
        let mut outputs = Vec::new();
        for attempt in 0..2 {
            let out = tmp.path().join(format!("run{r}-{attempt}"));
            let status = Command::new(bin)
                .args(*args)
                .arg("--out")
                .arg(&out)
                .output()
                .map_err(|e| e.to_string())?;
            ensure!(
                status.status.success(),
                "{args:?} failed: {}",
                String::from_utf8_lossy(&status.stderr)
            );
            outputs.push(std::fs::read(out.join("report.json")).map_err(|e| e.to_string())?);
        }
        ensure!(outputs[0] == outputs[1], "{args:?}: report.json differs between runs");
    }
    Ok("eval run and eval sweep each byte-identical across two runs".into())
}

fn main() -> ExitCode {
    type Criterion = (&'static str, Option<Duration>, fn() -> Check);
    let criteria: [Criterion; 9] = [
        ("bm25_oracle", Some(Duration::from_secs(1)), bm25_oracle),
        ("vector_oracle", Some(Duration::from_secs(1)), vector_oracle),
        ("protocol_totality", Some(Duration::from_secs(5)), protocol_totality),
        ("reward_bands", Some(Duration::from_secs(5)), reward_bands),
        ("grpo_advantages", Some(Duration::from_secs(1)), grpo),
        ("end_to_end_oracle", Some(Duration::from_secs(2)), end_to_end),
        ("restriction_equivalence", Some(Duration::from_secs(1)), restriction_equivalence),
        ("sweep_monotonicity", Some(Duration::from_secs(2)), sweep_monotonicity),
        ("cli_determinism", None, cli_determinism),
    ];

    // The fuzz cases panic by design if the parser is broken; keep output clean.
    let default_hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));

    let mut failed = 0;
    for (i, (name, budget, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let result = match (result, budget) {
            (Ok(_), Some(b)) if elapsed > *b => Err(format!("took {elapsed:?}, budget {b:?}")),
            (r, _) => r,
        };
        let budget = budget.map_or("-".to_string(), |b| format!("<{}s", b.as_secs()));
        match result {
            Ok(detail) => println!("PASS {} {name} ({:.3}s, {budget}): {detail}", i + 1, elapsed.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name} ({:.3}s, {budget}): {why}", i + 1, elapsed.as_secs_f64());
            }
        }
    }
    std::panic::set_hook(default_hook);
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
