use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use lexsearch::corpus::Corpus;
use lexsearch::eval::{
    load_dataset, load_dataset_path, run_benchmark, run_turn_sweep, write_report, write_transcripts,
    BenchmarkOptions, BenchmarkRun, Mode,
};
use lexsearch::fixtures;
use lexsearch::gateway::{Embedder, GatewayConfig, HttpGateway, Judge, Policy, StubEmbedder, StubJudge};
use lexsearch::policies::{FileScriptedPolicy, IdkPolicy, IncrementalPolicy, MalformedPolicy, OraclePolicy};
use lexsearch::retrieval::Bm25Params;
use lexsearch::reward::QAItem;
use lexsearch::rollout::{read_jsonl, replay, Environment, GroupConfig, RolloutConfig};

#[derive(Parser)]
#[command(name = "lexsearch", version, about = "Legal search agent environment and evaluator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Corpus and index inspection.
    Index {
        #[command(subcommand)]
        cmd: IndexCmd,
    },
    /// Agent benchmarks.
    Eval {
        #[command(subcommand)]
        cmd: EvalCmd,
    },
    /// Single-shot retrieval baseline.
    Rag {
        #[command(subcommand)]
        cmd: RagCmd,
    },
    /// Transcript tools.
    Rollout {
        #[command(subcommand)]
        cmd: RolloutCmd,
    },
}

#[derive(Subcommand)]
enum IndexCmd {
    /// Parse the corpus, build both indexes and print their statistics.
    Build(SourceArgs),
}

#[derive(Subcommand)]
enum EvalCmd {
    /// Run the agent over the dataset.
    Run(RunArgs),
    /// Run once per forced-answer turn in --turns and report the curve.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        turns: Vec<usize>,
    },
}

#[derive(Subcommand)]
enum RagCmd {
    /// Retrieve once, paste the sections into the prompt, force an answer.
    Baseline(RunArgs),
}

#[derive(Subcommand)]
enum RolloutCmd {
    /// Re-run recorded transcripts and check they reproduce exactly.
    Replay {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long)]
        transcripts: PathBuf,
        #[arg(long, value_enum, default_value_t = Backend::Stub)]
        judge: Backend,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Backend {
    Stub,
    Api,
}

#[derive(Args)]
struct SourceArgs {
    /// Corpus XML; defaults to the bundled fixture corpus.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Backend::Stub)]
    embedder: Backend,
    /// Stub embedder dimension.
    #[arg(long, default_value_t = 64)]
    dim: usize,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// JSONL dataset; defaults to the bundled fixture dataset.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// oracle | incremental | idk | malformed | scripted:<file> | api
    #[arg(long, default_value = "oracle")]
    policy: String,
    #[arg(long, value_enum, default_value_t = Backend::Stub)]
    judge: Backend,
    #[arg(long, default_value_t = 10)]
    max_turns: usize,
    /// Results per search when the call gives no `num`.
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Force an answer after this many tool turns.
    #[arg(long)]
    force_turn: Option<usize>,
    #[arg(long, default_value_t = 160)]
    snippet_width: usize,
    /// Run each item as a group of this size and report advantages.
    #[arg(long)]
    group_size: Option<usize>,
    /// Worker threads; 0 picks automatically.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Name used in summary files; defaults to the policy name.
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

struct Backends {
    gateway: Option<Arc<HttpGateway>>,
}

impl Backends {
    fn api(&mut self) -> Result<Arc<HttpGateway>> {
        if let Some(g) = &self.gateway {
            return Ok(g.clone());
        }
        let config = GatewayConfig::from_env()?;
        let g = Arc::new(HttpGateway::new(config)?);
        self.gateway = Some(g.clone());
        Ok(g)
    }

    fn embedder(&mut self, b: Backend, dim: usize) -> Result<Arc<dyn Embedder>> {
        Ok(match b {
            Backend::Stub => Arc::new(StubEmbedder::new(dim)),
            Backend::Api => self.api()?,
        })
    }

    fn judge(&mut self, b: Backend) -> Result<Arc<dyn Judge>> {
        Ok(match b {
            Backend::Stub => Arc::new(StubJudge),
            Backend::Api => self.api()?,
        })
    }

    fn policy(&mut self, name: &str, items: &[QAItem]) -> Result<Arc<dyn Policy>> {
        Ok(match name {
            "oracle" => Arc::new(OraclePolicy::new(items.to_vec())),
            "incremental" => Arc::new(IncrementalPolicy::new(items.to_vec())),
            "idk" => Arc::new(IdkPolicy),
            "malformed" => Arc::new(MalformedPolicy),
            "api" => self.api()?,
            other => match other.strip_prefix("scripted:") {
                Some(path) => Arc::new(FileScriptedPolicy::from_path(Path::new(path))?),
                None => bail!("unknown policy {other:?}"),
            },
        })
    }
}

fn load_corpus(path: Option<&Path>) -> Result<Corpus> {
    match path {
        Some(p) => Corpus::from_path(p).with_context(|| format!("loading corpus {}", p.display())),
        None => Ok(fixtures::corpus()),
    }
}

fn build_env(source: &SourceArgs, backends: &mut Backends) -> Result<Environment> {
    let corpus = load_corpus(source.corpus.as_deref())?;
    let embedder = backends.embedder(source.embedder, source.dim)?;
    Ok(Environment::build(corpus, embedder, Bm25Params::default())?)
}

fn run(args: &RunArgs, mode: Mode, turns: Option<&[usize]>) -> Result<()> {
    let mut backends = Backends { gateway: None };
    let env = build_env(&args.source, &mut backends)?;
    let dataset = match &args.dataset {
        Some(p) => load_dataset_path(p, &env.corpus)?,
        None => load_dataset(fixtures::DATASET_JSONL.as_bytes(), &env.corpus)?,
    };
    let policy = backends.policy(&args.policy, &dataset)?;
    let judge = backends.judge(args.judge)?;

    let opts = BenchmarkOptions {
        label: args.label.clone().unwrap_or_else(|| args.policy.clone()),
        mode,
        rollout: RolloutConfig {
            max_turns: args.max_turns,
            k_results: args.k,
            forced_answer_turn: args.force_turn,
            snippet_width: args.snippet_width,
        },
        group: args.group_size.map(|group_size| GroupConfig {
            group_size,
            ..GroupConfig::default()
        }),
        jobs: args.jobs,
    };
    let BenchmarkRun { report, records } = match turns {
        Some(ns) => run_turn_sweep(&dataset, &env, policy.as_ref(), judge.as_ref(), &opts, ns)?,
        None => run_benchmark(&dataset, &env, policy.as_ref(), judge.as_ref(), &opts)?,
    };
    write_report(&report, &args.out)?;
    write_transcripts(&records, &args.out)?;

    let a = &report.aggregates;
    println!(
        "{}: accuracy {:.1}% avg_turns {:.2} over {} rollouts ({} failed)",
        report.label, a.accuracy, a.avg_turns, a.n_rollouts, a.n_failed
    );
    if let Some(sweep) = &report.sweep {
        for (n, p) in sweep {
            println!("  N={n}: accuracy {:.1}% avg_turns {:.2}", p.accuracy, p.avg_turns);
        }
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn index_build(source: &SourceArgs) -> Result<()> {
    let mut backends = Backends { gateway: None };
    let env = build_env(source, &mut backends)?;
    println!("documents: {}", env.corpus.doc_ids().len());
    println!("sections: {}", env.corpus.len());
    println!("indexed leaves: {}", env.keyword.n_docs());
    println!("vocabulary: {}", env.keyword.vocabulary_size());
    println!("avg leaf length: {:.3}", env.keyword.avg_doc_length());
    println!("vector dimension: {}", env.vector.dimension());
    Ok(())
}

fn rollout_replay(source: &SourceArgs, transcripts: &Path, judge: Backend) -> Result<ExitCode> {
    let mut backends = Backends { gateway: None };
    let env = build_env(source, &mut backends)?;
    let judge = backends.judge(judge)?;
    let file = std::fs::File::open(transcripts).with_context(|| format!("opening {}", transcripts.display()))?;
    let records = read_jsonl(std::io::BufReader::new(file)).map_err(anyhow::Error::msg)?;
    let mut mismatches = 0;
    for r in &records {
        let (_, same) = replay(r, &env, judge.as_ref());
        if !same {
            mismatches += 1;
        }
        println!(
            "{} #{}: {}",
            r.qa.id,
            r.rollout_index,
            if same { "identical" } else { "DIFFERENT" }
        );
    }
    println!("{} replayed, {} different", records.len(), mismatches);
    Ok(if mismatches == 0 { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();

    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Index { cmd: IndexCmd::Build(s) } => index_build(s).map(|_| ExitCode::SUCCESS),
        Cmd::Eval { cmd: EvalCmd::Run(a) } => run(a, Mode::Agent, None).map(|_| ExitCode::SUCCESS),
        Cmd::Eval {
            cmd: EvalCmd::Sweep { run: a, turns },
        } => run(a, Mode::Agent, Some(turns)).map(|_| ExitCode::SUCCESS),
        Cmd::Rag { cmd: RagCmd::Baseline(a) } => run(a, Mode::NaiveRag, None).map(|_| ExitCode::SUCCESS),
        Cmd::Rollout {
            cmd: RolloutCmd::Replay {
                source,
                transcripts,
                judge,
            },
        } => rollout_replay(source, transcripts, *judge),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
