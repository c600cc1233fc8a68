use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use scrapmem::config::{EngineConfig, Providers};
use scrapmem::corpus;
use scrapmem::eval::{self, Granularity, OracleAnswerer, RunOptions, RunResult};
use scrapmem::forgetting::ForgettingPolicy;
use scrapmem::pipeline::{self, Engine};
use scrapmem::retrieval::{self, AnswerProvider};
use scrapmem::store::Store;
use scrapmem::synth::{self, SynthOptions};
use scrapmem::Error;

/// Scrapbook memory: per-day page rasters, an episodic memory graph, staged
/// forgetting and evaluation. Results go to stdout as JSON; diagnostics go to stderr.
#[derive(Parser, Debug)]
#[command(name = "scrapmem", version)]
struct Cli {
    /// Store directory.
    #[arg(long, global = true, env = "SCRAPMEM_STORE", default_value = "scrapmem-store")]
    store: PathBuf,

    /// Engine configuration JSON; defaults apply when absent.
    #[arg(long, global = true, env = "SCRAPMEM_CONFIG")]
    config: Option<PathBuf>,

    /// Seed for fixture generation.
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,

    /// Compact single-line JSON instead of pretty-printed.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a corpus manifest and write the store skeleton.
    Ingest {
        /// Corpus directory holding manifest.jsonl, or the manifest itself.
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Consolidate pages and build the memory graph; resumes an interrupted build.
    Build,
    /// Degrade pages by age, fade unreadable nodes and prune the graph.
    Forget {
        /// Preset name or policy JSON file; defaults to the configured policy.
        #[arg(long)]
        policy: Option<String>,
        /// Reference date (YYYY-MM-DD); defaults to today (UTC).
        #[arg(long)]
        now: Option<String>,
    },
    /// Retrieve evidence for a question.
    Query {
        question: String,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Retrieve evidence and answer a question.
    Answer {
        question: String,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Run a benchmark JSONL file against the store.
    Eval {
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value = "item")]
        granularity: Granularity,
        /// Where to write the run report; defaults to <store>/reports/eval.json.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Answer with the ground truth, to measure the retrieval ceiling.
        #[arg(long)]
        oracle: bool,
    },
    /// Report store bytes against the raw corpus.
    Storage {
        /// Baseline bytes; defaults to the raw corpus size.
        #[arg(long)]
        baseline_bytes: Option<u64>,
    },
    /// Label the wrong answers of a run as retrieval, forgetting or reasoning failures.
    ClassifyFailures {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
        /// Also write the labels as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Generate a seeded synthetic corpus with benchmark questions.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 60)]
        days: usize,
        /// Days between the last corpus day and the suggested forgetting date.
        #[arg(long, default_value_t = 401)]
        age_offset: i64,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(e) if e.is_validation() => 2,
        Some(e) if e.is_provider() => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    match run(&cli) {
        Ok(value) => {
            let text = if cli.json {
                serde_json::to_string(&value)
            } else {
                serde_json::to_string_pretty(&value)
            };
            match text {
                Ok(t) => {
                    println!("{t}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<EngineConfig> {
    Ok(EngineConfig::load_or_default(cli.config.as_deref())?)
}

fn manifest_path(corpus: &Path) -> PathBuf {
    if corpus.is_dir() {
        corpus.join("manifest.jsonl")
    } else {
        corpus.to_path_buf()
    }
}

fn engine(cli: &Cli) -> anyhow::Result<Engine> {
    let config = load_config(cli)?;
    let providers = Providers::from_config(&config)?;
    let store = Store::open(&cli.store)?;
    Ok(Engine::open(&store, &config, providers)?)
}

fn parse_date(s: &str) -> anyhow::Result<chrono::NaiveDate> {
    chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map_err(|_| Error::Config(format!("--now must be YYYY-MM-DD, got `{s}`")).into())
}

fn run(cli: &Cli) -> anyhow::Result<Value> {
    match &cli.command {
        Command::Ingest { corpus: dir } => {
            let manifest = manifest_path(dir);
            let corpus = corpus::ingest(&manifest)?;
            let root = std::fs::canonicalize(&corpus.root).unwrap_or_else(|_| corpus.root.clone());
            let corpus = corpus::Corpus::new(root, corpus.items);
            Store::init(&cli.store, &corpus)?;
            let counts = corpus.counts();
            eprintln!("{} items, {} days", corpus.len(), corpus.by_day.len());
            Ok(json!({
                "store": cli.store,
                "items": corpus.len(),
                "days": corpus.by_day.len(),
                "counts": counts,
            }))
        }
        Command::Build => {
            let config = load_config(cli)?;
            let providers = Providers::from_config(&config)?;
            let store = Store::open(&cli.store)?;
            let report = pipeline::build(&store, &config, &providers)?;
            eprintln!(
                "{} pages processed, {} already built; {} nodes, {} paths",
                report.pages_processed, report.pages_skipped, report.nodes, report.paths
            );
            Ok(serde_json::to_value(report)?)
        }
        Command::Forget { policy, now } => {
            let config = load_config(cli)?;
            let policy = match policy {
                Some(p) => ForgettingPolicy::resolve(p)?,
                None => config.policy()?,
            };
            let now = match now {
                Some(s) => parse_date(s)?,
                None => chrono::Utc::now().date_naive(),
            };
            let providers = Providers::from_config(&config)?;
            let store = Store::open(&cli.store)?;
            let report = pipeline::forget(&store, &config, &providers, &policy, now)?;
            let stages: Vec<String> = report.stage_counts.iter().map(|(s, n)| format!("{s} {n}")).collect();
            eprintln!(
                "{}: {} of {} pages changed ({}); {} mentions lost, {} paths pruned, {} nodes removed",
                policy.name,
                report.pages_changed,
                report.pages,
                stages.join(", "),
                report.lost_mentions,
                report.pruned_paths,
                report.removed_nodes
            );
            Ok(serde_json::to_value(report)?)
        }
        Command::Query { question, k } => {
            let engine = engine(cli)?;
            let k = k.unwrap_or(engine.config().k);
            Ok(serde_json::to_value(engine.query(question, k)?)?)
        }
        Command::Answer { question, k } => {
            let engine = engine(cli)?;
            let k = k.unwrap_or(engine.config().k);
            let evidence = engine.query(question, k)?;
            let texts = engine.texts_for(&evidence);
            let record = retrieval::answer(engine.providers().answerer.as_ref(), question, &evidence, &texts)
                .map_err(|f| anyhow!(f.error).context(format!("answering `{question}`")))?;
            Ok(json!({ "answer": record, "evidence": evidence }))
        }
        Command::Eval {
            questions,
            k,
            granularity,
            out,
            oracle,
        } => {
            let engine = engine(cli)?;
            let qs = eval::load_questions(questions)?;
            let opts = RunOptions {
                k: k.unwrap_or(engine.config().k),
                granularity: *granularity,
                max_inflight: engine.config().max_inflight,
            };
            let oracle_answerer;
            let answerer: &dyn AnswerProvider = if *oracle {
                oracle_answerer = OracleAnswerer::new(&qs);
                &oracle_answerer
            } else {
                engine.providers().answerer.as_ref()
            };
            let run = eval::run_benchmark(&engine, &qs, answerer, engine.providers().judge.as_ref(), &opts)?;
            let out = out.clone().unwrap_or_else(|| cli.store.join("reports").join("eval.json"));
            if let Some(parent) = out.parent() {
                std::fs::create_dir_all(parent).with_context(|| format!("create {}", parent.display()))?;
            }
            std::fs::write(&out, serde_json::to_vec_pretty(&run)?).with_context(|| format!("write {}", out.display()))?;
            let a = &run.aggregates;
            let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{:.1}%", 100.0 * v));
            eprintln!(
                "{} questions ({} scored): QS {}, R@{} {}, Joint@{} {}; report {}",
                a.questions,
                a.scored,
                pct(a.qs),
                run.k,
                pct(a.recall_at_k),
                run.k,
                pct(a.joint_at_k),
                out.display()
            );
            Ok(serde_json::to_value(run)?)
        }
        Command::Storage { baseline_bytes } => {
            let store = Store::open(&cli.store)?;
            let baseline = match baseline_bytes {
                Some(b) => *b,
                None => store.load_corpus()?.raw_bytes()?,
            };
            let report = store.storage(baseline)?;
            match report.saving_fraction {
                Some(s) => eprintln!("{} bytes stored, {:.1}% saved against {baseline}", report.total_bytes, 100.0 * s),
                None => eprintln!("{} bytes stored, no baseline", report.total_bytes),
            }
            Ok(serde_json::to_value(report)?)
        }
        Command::ClassifyFailures { run, baseline, csv } => {
            let r = RunResult::load(run)?;
            let b = RunResult::load(baseline)?;
            let report = eval::classify_failures(&r, &b)?;
            if let Some(path) = csv {
                std::fs::write(path, report.to_csv()).with_context(|| format!("write {}", path.display()))?;
            }
            let shares: Vec<String> =
                report.shares.iter().map(|(k, v)| format!("{} {v:.1}%", k.as_str())).collect();
            eprintln!("{} incorrect: {}", report.incorrect, shares.join(", "));
            Ok(serde_json::to_value(report)?)
        }
        Command::Synth { out, days, age_offset } => {
            if *days == 0 {
                bail!(Error::Config("--days must be at least 1".into()));
            }
            let opts = SynthOptions {
                days: *days,
                age_offset: *age_offset,
                seed: cli.seed,
                ..SynthOptions::default()
            };
            let corpus = synth::generate(out, &opts)?;
            eprintln!(
                "{} items over {} days, {} questions; forget with --now {}",
                corpus.items, corpus.days, corpus.question_count, corpus.now
            );
            Ok(serde_json::to_value(corpus)?)
        }
    }
}
