//! Benchmark runs, turn-restriction sweeps and report files.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufRead;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::run_naive_rag;
use crate::corpus::Corpus;
use crate::gateway::{Judge, Policy};
use crate::reward::{Band, OutcomeMetrics, QAItem, METRIC_NAMES};
use crate::rollout::{
    group_advantages, run_group, run_rollout, write_jsonl, ConfigError, Environment, GroupConfig, RolloutConfig,
    RolloutRecord, Terminal,
};

pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const TRANSCRIPTS_FILE: &str = "transcripts.jsonl";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset line {line}: {message}")]
    Dataset { line: usize, message: String },
    #[error("dataset line {line}: item {id}: {message}")]
    UnknownGold { line: usize, id: String, message: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("report encoding: {0}")]
    Encode(String),
}

/// Reads one JSON item per non-blank line and checks every gold ID against
/// the corpus.
pub fn load_dataset(input: impl BufRead, corpus: &Corpus) -> Result<Vec<QAItem>, EvalError> {
    let mut items = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item: QAItem = serde_json::from_str(&line).map_err(|e| EvalError::Dataset {
            line: line_no,
            message: e.to_string(),
        })?;
        item.validate(corpus).map_err(|e| EvalError::UnknownGold {
            line: line_no,
            id: item.id.clone(),
            message: e.to_string(),
        })?;
        items.push(item);
    }
    Ok(items)
}

pub fn load_dataset_path(path: &Path, corpus: &Corpus) -> Result<Vec<QAItem>, EvalError> {
    let file = fs::File::open(path)?;
    load_dataset(std::io::BufReader::new(file), corpus)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Agent,
    NaiveRag,
}

#[derive(Debug, Clone)]
pub struct BenchmarkOptions {
    pub label: String,
    pub mode: Mode,
    pub rollout: RolloutConfig,
    /// When set, each item is run as a group and advantages are reported.
    pub group: Option<GroupConfig>,
    /// Worker threads; 0 uses the rayon default.
    pub jobs: usize,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        Self {
            label: "run".into(),
            mode: Mode::Agent,
            rollout: RolloutConfig::default(),
            group: None,
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutSummary {
    pub index: usize,
    pub terminal: Terminal,
    pub band: Option<Band>,
    pub reward: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advantage: Option<f64>,
    pub metrics: OutcomeMetrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemReport {
    pub qa_id: String,
    pub rollouts: Vec<RolloutSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub n_items: usize,
    pub n_rollouts: usize,
    pub n_failed: usize,
    /// Percentage of all rollouts judged correct.
    pub accuracy: f64,
    /// Mean tool turns over completed rollouts.
    pub avg_turns: f64,
    pub mean_reward: Option<f64>,
    pub band_histogram: BTreeMap<String, usize>,
    /// Mean of each tracked metric over completed rollouts.
    pub metrics: BTreeMap<String, f64>,
}

impl Aggregates {
    pub fn from_items(items: &[ItemReport]) -> Self {
        let all: Vec<&RolloutSummary> = items.iter().flat_map(|i| &i.rollouts).collect();
        let done: Vec<&RolloutSummary> = all.iter().copied().filter(|r| r.terminal != Terminal::Failed).collect();
        let mean = |xs: &mut dyn Iterator<Item = f64>, n: usize| if n == 0 { 0.0 } else { xs.sum::<f64>() / n as f64 };

        let correct = all.iter().filter(|r| r.metrics.answer_correct).count();
        let accuracy = if all.is_empty() {
            0.0
        } else {
            100.0 * correct as f64 / all.len() as f64
        };
        let avg_turns = mean(&mut done.iter().map(|r| r.metrics.num_turns as f64), done.len());

        let rewards: Vec<f64> = all.iter().filter_map(|r| r.reward).collect();
        let mean_reward = (!rewards.is_empty()).then(|| rewards.iter().sum::<f64>() / rewards.len() as f64);

        let mut band_histogram: BTreeMap<String, usize> =
            Band::ALL.iter().map(|b| (b.label().to_string(), 0)).collect();
        band_histogram.insert("unscored".into(), 0);
        for r in &all {
            let key = r.band.map_or("unscored", Band::label);
            *band_histogram.get_mut(key).expect("all keys present") += 1;
        }

        let mut metrics = BTreeMap::new();
        for (k, name) in METRIC_NAMES.iter().enumerate() {
            let v = mean(&mut done.iter().map(|r| r.metrics.values()[k]), done.len());
            metrics.insert(name.to_string(), v);
        }

        Self {
            n_items: items.len(),
            n_rollouts: all.len(),
            n_failed: all.len() - done.len(),
            accuracy,
            avg_turns,
            mean_reward,
            band_histogram,
            metrics,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub accuracy: f64,
    pub avg_turns: f64,
    pub n_rollouts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub label: String,
    pub mode: Mode,
    pub config: RolloutConfig,
    pub group: Option<GroupConfig>,
    pub items: Vec<ItemReport>,
    pub aggregates: Aggregates,
    /// Forced-answer turn -> results, for sweeps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<BTreeMap<usize, SweepPoint>>,
}

impl Report {
    pub fn aggregates_consistent(&self) -> bool {
        Aggregates::from_items(&self.items) == self.aggregates
    }
}

pub struct BenchmarkRun {
    pub report: Report,
    pub records: Vec<RolloutRecord>,
}

fn summarize(records: &[RolloutRecord], advantages: Option<&[Option<f64>]>) -> Vec<RolloutSummary> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| RolloutSummary {
            index: r.rollout_index,
            terminal: r.transcript.terminal,
            band: r.reward.map(|x| x.band),
            reward: r.reward.map(|x| x.value),
            advantage: advantages.and_then(|a| a[i]),
            metrics: r.metrics.clone(),
            failure: r.failure.clone(),
        })
        .collect()
}

fn run_item(
    item: &QAItem,
    env: &Environment,
    policy: &dyn Policy,
    judge: &dyn Judge,
    opts: &BenchmarkOptions,
) -> (ItemReport, Vec<RolloutRecord>) {
    let one = |slot: usize| {
        let mut r = match opts.mode {
            Mode::Agent => run_rollout(policy, item, env, judge, &opts.rollout),
            Mode::NaiveRag => run_naive_rag(policy, item, env, judge, &opts.rollout),
        };
        r.rollout_index = slot;
        r
    };
    let (records, advantages) = match (&opts.group, opts.mode) {
        (Some(g), Mode::Agent) => {
            let out = run_group(policy, item, env, judge, &opts.rollout, g);
            (out.records, Some(out.advantages))
        }
        (Some(g), Mode::NaiveRag) => {
            let records: Vec<RolloutRecord> = (0..g.group_size).into_par_iter().map(one).collect();
            let adv = group_advantages(&records);
            (records, Some(adv))
        }
        (None, _) => (vec![one(0)], None),
    };
    let report = ItemReport {
        qa_id: item.id.clone(),
        rollouts: summarize(&records, advantages.as_deref()),
    };
    (report, records)
}

pub fn run_benchmark(
    dataset: &[QAItem],
    env: &Environment,
    policy: &dyn Policy,
    judge: &dyn Judge,
    opts: &BenchmarkOptions,
) -> Result<BenchmarkRun, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    opts.rollout.validate()?;
    if let Some(g) = &opts.group {
        g.validate()?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| EvalError::ThreadPool(e.to_string()))?;
    let results: Vec<(ItemReport, Vec<RolloutRecord>)> =
        pool.install(|| dataset.par_iter().map(|it| run_item(it, env, policy, judge, opts)).collect());

    let mut items = Vec::with_capacity(results.len());
    let mut records = Vec::new();
    for (item, recs) in results {
        items.push(item);
        records.extend(recs);
    }
    let aggregates = Aggregates::from_items(&items);
    Ok(BenchmarkRun {
        report: Report {
            label: opts.label.clone(),
            mode: opts.mode,
            config: opts.rollout,
            group: opts.group,
            items,
            aggregates,
            sweep: None,
        },
        records,
    })
}

/// Runs the base configuration, then once per distinct forced-answer turn
/// `N` (raising `max_turns` to `N` where needed). The base run's items and
/// aggregates are kept; every run's records are returned.
pub fn run_turn_sweep(
    dataset: &[QAItem],
    env: &Environment,
    policy: &dyn Policy,
    judge: &dyn Judge,
    opts: &BenchmarkOptions,
    turns: &[usize],
) -> Result<BenchmarkRun, EvalError> {
    let mut base = run_benchmark(dataset, env, policy, judge, opts)?;
    let mut ns = turns.to_vec();
    ns.sort_unstable();
    ns.dedup();

    let mut sweep = BTreeMap::new();
    for n in ns {
        let mut o = opts.clone();
        o.rollout.forced_answer_turn = Some(n);
        o.rollout.max_turns = o.rollout.max_turns.max(n);
        let run = run_benchmark(dataset, env, policy, judge, &o)?;
        let a = &run.report.aggregates;
        sweep.insert(
            n,
            SweepPoint {
                accuracy: a.accuracy,
                avg_turns: a.avg_turns,
                n_rollouts: a.n_rollouts,
            },
        );
        base.records.extend(run.records);
    }
    base.report.sweep = Some(sweep);
    Ok(base)
}

/// Writes `report.json`, `summary.csv` and, for sweeps, `sweep.csv`. A stale
/// `sweep.csv` is removed when the report has no sweep.
pub fn write_report(report: &Report, dir: &Path) -> Result<(), EvalError> {
    fs::create_dir_all(dir)?;
    let mut json = serde_json::to_string_pretty(report).map_err(|e| EvalError::Encode(e.to_string()))?;
    json.push('\n');
    fs::write(dir.join(REPORT_FILE), json)?;

    let csv_err = |e: csv::Error| EvalError::Encode(e.to_string());
    let a = &report.aggregates;
    let mut w = csv::Writer::from_path(dir.join(SUMMARY_FILE)).map_err(csv_err)?;
    w.write_record(["model", "mode", "accuracy", "avg_turns", "n_items", "n_rollouts"])
        .map_err(csv_err)?;
    let mode = match report.mode {
        Mode::Agent => "agent",
        Mode::NaiveRag => "naive_rag",
    };
    w.write_record([
        report.label.clone(),
        mode.to_string(),
        a.accuracy.to_string(),
        a.avg_turns.to_string(),
        a.n_items.to_string(),
        a.n_rollouts.to_string(),
    ])
    .map_err(csv_err)?;
    w.flush()?;

    let sweep_path = dir.join(SWEEP_FILE);
    match &report.sweep {
        Some(points) => {
            let mut w = csv::Writer::from_path(&sweep_path).map_err(csv_err)?;
            w.write_record(["n", "accuracy", "avg_turns"]).map_err(csv_err)?;
            for (n, p) in points {
                w.write_record([n.to_string(), p.accuracy.to_string(), p.avg_turns.to_string()])
                    .map_err(csv_err)?;
            }
            w.flush()?;
        }
        None if sweep_path.exists() => fs::remove_file(&sweep_path)?,
        None => {}
    }
    Ok(())
}

pub fn write_transcripts(records: &[RolloutRecord], dir: &Path) -> Result<(), EvalError> {
    fs::create_dir_all(dir)?;
    let file = fs::File::create(dir.join(TRANSCRIPTS_FILE))?;
    let mut w = std::io::BufWriter::new(file);
    write_jsonl(records, &mut w)?;
    std::io::Write::flush(&mut w)?;
    Ok(())
}

pub fn read_report(dir: &Path) -> Result<Report, EvalError> {
    let text = fs::read_to_string(dir.join(REPORT_FILE))?;
    serde_json::from_str(&text).map_err(|e| EvalError::Encode(e.to_string()))
}
