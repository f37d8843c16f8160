mod config;

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::SystemTime;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use docmt_core::baselines::{context_baseline, count_missing, doc2doc_baseline, sentence_baseline, WindowedRun};
use docmt_core::doc::{load_corpus, load_targets, write_corpus};
use docmt_core::eval::{
    build_annotations, evaluate, joiner_for, parse_annotations, parse_buckets, parse_token_file, MatchOptions,
};
use docmt_core::orchestrator::sha256_hex;
use docmt_core::{
    Agent, AlignmentMap, Checkpoint, CorpusFormat, DocumentTranslator, MemoryState, RunTrace, SourceDocument,
    TargetDocument, TemplateSet,
};

use config::RunConfig;

const EXIT_PARTIAL: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "docmt", version, about = "Document-level translation with a multi-level memory agent")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Strategy {
    Delta,
    Sentence,
    Context,
    Doc2doc,
}

#[derive(Subcommand)]
enum Command {
    /// Translate a corpus and write the output, a trace and a run manifest.
    Translate {
        #[arg(long, value_enum, default_value = "delta")]
        strategy: Strategy,
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Documents translated concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Doc2doc batch size; overrides the config.
        #[arg(long)]
        window: Option<usize>,
        /// Continue the document this checkpoint belongs to.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Template directory laid out as `<dir>/<src>-<tgt>/<component>.txt`.
        #[arg(long)]
        templates: Option<PathBuf>,
        /// Where checkpoints go; defaults to `<out>.checkpoints`.
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
    },
    /// Score proper-noun translation consistency and print a JSON report.
    Evaluate {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        alignment: PathBuf,
        #[arg(long)]
        src_tokens: PathBuf,
        /// Tokenized target sentences, one `doc_id<TAB>index<TAB>tokens` per line.
        #[arg(long, conflicts_with = "hyp", required_unless_present = "hyp")]
        tgt_tokens: Option<PathBuf>,
        /// Translated corpus; its sentences are split on whitespace.
        #[arg(long)]
        hyp: Option<PathBuf>,
        /// Distance buckets such as `1-10,11-50,51-`.
        #[arg(long)]
        buckets: Option<String>,
        /// Target language; decides how linked tokens are joined.
        #[arg(long, default_value = "zh")]
        tgt_lang: String,
        #[arg(long)]
        case_fold: bool,
    },
    /// Print the memory after a given sentence.
    Inspect {
        #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
        trace: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Sentence index; 0 is the initial empty memory. Defaults to the last.
        #[arg(long)]
        at: Option<usize>,
        /// Document id; defaults to the first document in the trace.
        #[arg(long)]
        doc: Option<String>,
    },
}

/// Error carrying the exit code it maps to.
struct Failure(u8, String);

fn config_error(msg: impl Into<String>) -> Failure {
    Failure(EXIT_CONFIG, msg.into())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Translate {
            strategy,
            config,
            input,
            out,
            jobs,
            window,
            resume,
            templates,
            checkpoint_dir,
        } => cmd_translate(TranslateArgs {
            strategy,
            config,
            input,
            out,
            jobs,
            window,
            resume,
            templates,
            checkpoint_dir,
        }),
        Command::Evaluate {
            annotations,
            alignment,
            src_tokens,
            tgt_tokens,
            hyp,
            buckets,
            tgt_lang,
            case_fold,
        } => cmd_evaluate(
            &annotations,
            &alignment,
            &src_tokens,
            tgt_tokens.as_deref(),
            hyp.as_deref(),
            buckets.as_deref(),
            &tgt_lang,
            case_fold,
        ),
        Command::Inspect {
            trace,
            checkpoint,
            at,
            doc,
        } => cmd_inspect(trace.as_deref(), checkpoint.as_deref(), at, doc.as_deref()),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

struct TranslateArgs {
    strategy: Strategy,
    config: PathBuf,
    input: PathBuf,
    out: PathBuf,
    jobs: usize,
    window: Option<usize>,
    resume: Option<PathBuf>,
    templates: Option<PathBuf>,
    checkpoint_dir: Option<PathBuf>,
}

#[derive(Serialize)]
struct Manifest {
    config_hash: String,
    config_path: PathBuf,
    corpus_path: PathBuf,
    strategy: Strategy,
    backend: String,
    window: Option<usize>,
    jobs: usize,
    started_at: String,
    finished_at: String,
    documents: usize,
    failed_documents: Vec<String>,
    missing_sentences: Option<usize>,
    outputs: Outputs,
}

#[derive(Serialize)]
struct Outputs {
    corpus: PathBuf,
    trace: Option<PathBuf>,
    manifest: PathBuf,
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn now() -> String {
    humantime::format_rfc3339_seconds(SystemTime::now()).to_string()
}

/// Maps `f` over `items` on up to `jobs` threads, keeping input order.
fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(i) else { break };
                *slots[i].lock().unwrap() = Some(f(item));
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every slot filled"))
        .collect()
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure(EXIT_PARTIAL, format!("{}: {e}", path.display()));
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    for row in rows {
        serde_json::to_writer(&mut w, row).map_err(|e| io(e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

#[derive(Serialize)]
struct Doc2DocTrace<'a> {
    doc_id: &'a str,
    run: &'a WindowedRun,
}

fn cmd_translate(args: TranslateArgs) -> Result<u8, Failure> {
    let started_at = now();
    let mut cfg = RunConfig::load(&args.config).map_err(config_error)?;
    if let Some(w) = args.window {
        cfg.window = w;
    }
    if cfg.window == 0 {
        return Err(config_error("window must be >= 1"));
    }
    if args.jobs == 0 {
        return Err(config_error("--jobs must be >= 1"));
    }
    if args.resume.is_some() && args.strategy != Strategy::Delta {
        return Err(config_error("--resume only applies to the delta strategy"));
    }
    let agent_cfg = cfg.agent();
    agent_cfg.validate().map_err(|e| config_error(e.to_string()))?;
    let templates = match &args.templates {
        Some(dir) => TemplateSet::load(dir, &agent_cfg.langs.key()).map_err(|e| config_error(e.to_string()))?,
        None => TemplateSet::builtin(),
    };
    let backend = cfg.build_backend().map_err(config_error)?;
    let backend = &*backend;
    let docs = load_corpus(&args.input, CorpusFormat::from_path(&args.input)).map_err(|e| config_error(e.to_string()))?;
    let resume = match &args.resume {
        Some(p) => Some(Checkpoint::load(p).map_err(|e| config_error(format!("{}: {e}", p.display())))?),
        None => None,
    };
    if let Some(cp) = &resume {
        if !docs.iter().any(|d| d.doc_id == cp.doc_id) {
            return Err(config_error(format!("checkpoint document '{}' is not in the corpus", cp.doc_id)));
        }
    }
    let config_hash = sha256_hex(&serde_json::to_vec(&cfg).expect("config serializes"));

    let trace_path = sibling(&args.out, ".trace.jsonl");
    let mut failed: Vec<String> = Vec::new();
    let mut outputs: Vec<TargetDocument> = Vec::new();
    let mut missing_sentences = None;
    let mut wrote_trace = true;

    match args.strategy {
        Strategy::Delta => {
            let dir = args
                .checkpoint_dir
                .clone()
                .unwrap_or_else(|| sibling(&args.out, ".checkpoints"));
            let translator =
                DocumentTranslator::new(backend, &templates, agent_cfg.clone()).with_checkpoint_dir(dir);
            let results = par_map(&docs, args.jobs, |d: &SourceDocument| match &resume {
                Some(cp) if cp.doc_id == d.doc_id => translator.resume(cp.clone(), d),
                _ => translator.translate_document(d),
            });
            let mut traces: Vec<RunTrace> = Vec::new();
            for (doc, r) in docs.iter().zip(results) {
                match r {
                    Ok((t, trace)) => {
                        outputs.push(t);
                        traces.push(trace);
                    }
                    Err(e) => {
                        log::error!("{}: {e}", doc.doc_id);
                        failed.push(doc.doc_id.clone());
                    }
                }
            }
            write_jsonl(&trace_path, &traces)?;
        }
        Strategy::Sentence | Strategy::Context => {
            let agent = Agent::new(backend, &templates, agent_cfg.generation.clone(), agent_cfg.langs.clone());
            let results = par_map(&docs, args.jobs, |d: &SourceDocument| match args.strategy {
                Strategy::Sentence => sentence_baseline(&agent, d),
                _ => context_baseline(&agent, d),
            });
            for (doc, r) in docs.iter().zip(results) {
                match r {
                    Ok(t) => outputs.push(t),
                    Err(e) => {
                        log::error!("{}: {e}", doc.doc_id);
                        failed.push(doc.doc_id.clone());
                    }
                }
            }
            wrote_trace = false;
        }
        Strategy::Doc2doc => {
            let agent = Agent::new(backend, &templates, agent_cfg.generation.clone(), agent_cfg.langs.clone());
            let results = par_map(&docs, args.jobs, |d: &SourceDocument| doc2doc_baseline(&agent, d, cfg.window));
            let mut runs = Vec::new();
            let mut missing = 0;
            for (doc, r) in docs.iter().zip(results) {
                match r {
                    Ok(out) => {
                        missing += count_missing(&out.run);
                        outputs.push(TargetDocument {
                            doc_id: doc.doc_id.clone(),
                            sentences: out.padded(),
                            lang: agent_cfg.langs.tgt.clone(),
                        });
                        runs.push((doc.doc_id.clone(), out.run));
                    }
                    Err(e) => {
                        log::error!("{}: {e}", doc.doc_id);
                        failed.push(doc.doc_id.clone());
                    }
                }
            }
            let rows: Vec<Doc2DocTrace> = runs
                .iter()
                .map(|(id, run)| Doc2DocTrace { doc_id: id, run })
                .collect();
            write_jsonl(&trace_path, &rows)?;
            missing_sentences = Some(missing);
        }
    }

    write_corpus(&outputs, Some(&docs), &args.out, CorpusFormat::from_path(&args.out))
        .map_err(|e| Failure(EXIT_PARTIAL, e.to_string()))?;

    let manifest_path = sibling(&args.out, ".manifest.json");
    let manifest = Manifest {
        config_hash,
        config_path: args.config.clone(),
        corpus_path: args.input.clone(),
        strategy: args.strategy,
        backend: backend.describe(),
        window: (args.strategy == Strategy::Doc2doc).then_some(cfg.window),
        jobs: args.jobs,
        started_at,
        finished_at: now(),
        documents: docs.len(),
        failed_documents: failed.clone(),
        missing_sentences,
        outputs: Outputs {
            corpus: args.out.clone(),
            trace: wrote_trace.then_some(trace_path),
            manifest: manifest_path.clone(),
        },
    };
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    fs::write(&manifest_path, json).map_err(|e| Failure(EXIT_PARTIAL, format!("{}: {e}", manifest_path.display())))?;

    if failed.is_empty() {
        Ok(0)
    } else {
        eprintln!("{} of {} documents failed: {}", failed.len(), docs.len(), failed.join(", "));
        Ok(EXIT_PARTIAL)
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

#[allow(clippy::too_many_arguments)]
fn cmd_evaluate(
    annotations: &Path,
    alignment: &Path,
    src_tokens: &Path,
    tgt_tokens: Option<&Path>,
    hyp: Option<&Path>,
    buckets: Option<&str>,
    tgt_lang: &str,
    case_fold: bool,
) -> Result<u8, Failure> {
    let err = |e: docmt_core::EvalError| config_error(e.to_string());
    let name = |p: &Path| p.display().to_string();
    let records = parse_annotations(&read(annotations)?, &name(annotations)).map_err(err)?;
    let links = AlignmentMap::parse_links(&read(alignment)?, &name(alignment)).map_err(err)?;
    let src = parse_token_file(&read(src_tokens)?, &name(src_tokens)).map_err(err)?;
    let tgt = match (tgt_tokens, hyp) {
        (Some(p), _) => parse_token_file(&read(p)?, &name(p)).map_err(err)?,
        (None, Some(p)) => {
            let docs = load_targets(p, CorpusFormat::from_path(p)).map_err(|e| config_error(e.to_string()))?;
            let mut map = HashMap::new();
            for d in docs {
                for (i, s) in d.sentences.iter().enumerate() {
                    map.insert((d.doc_id.clone(), i + 1), s.split_whitespace().map(str::to_string).collect());
                }
            }
            map
        }
        (None, None) => return Err(config_error("one of --tgt-tokens or --hyp is required")),
    };
    let map = AlignmentMap::new(links, src, tgt).map_err(err)?;
    let set = build_annotations(&records, &map, joiner_for(tgt_lang)).map_err(err)?;
    let buckets = buckets.map(parse_buckets).transpose().map_err(err)?;
    let report = evaluate(&set, buckets.as_deref(), MatchOptions { case_fold }).map_err(err)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(0)
}

fn cmd_inspect(
    trace: Option<&Path>,
    checkpoint: Option<&Path>,
    at: Option<usize>,
    doc: Option<&str>,
) -> Result<u8, Failure> {
    let run = match (trace, checkpoint) {
        (Some(p), _) => {
            let text = read(p)?;
            let mut traces = Vec::new();
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let t: RunTrace = serde_json::from_str(line)
                    .map_err(|e| config_error(format!("{}:{}: {e}", p.display(), i + 1)))?;
                traces.push(t);
            }
            let found = match doc {
                Some(id) => traces.into_iter().find(|t| t.doc_id == id),
                None => traces.into_iter().next(),
            };
            found.ok_or_else(|| config_error("no matching document in trace"))?
        }
        (None, Some(p)) => {
            let cp = Checkpoint::load(p).map_err(|e| config_error(format!("{}: {e}", p.display())))?;
            if doc.is_some_and(|d| d != cp.doc_id) {
                return Err(config_error(format!("checkpoint is for document '{}'", cp.doc_id)));
            }
            RunTrace {
                doc_id: cp.doc_id,
                records: cp.trace,
            }
        }
        (None, None) => return Err(config_error("one of --trace or --checkpoint is required")),
    };
    let at = at.unwrap_or(run.records.len());
    if at > run.records.len() {
        return Err(config_error(format!(
            "--at {at} is out of range: '{}' has {} translated sentences",
            run.doc_id,
            run.records.len()
        )));
    }
    let memory = match at {
        0 => {
            let (l, k) = run
                .records
                .first()
                .map(|r| (r.memory.long_term.capacity(), r.memory.short_term.capacity()))
                .unwrap_or((0, 0));
            MemoryState::new(l, k)
        }
        i => run.records[i - 1].memory.clone(),
    };
    println!("Document {} after sentence {at} of {}", run.doc_id, run.records.len());
    if at > 0 {
        println!("Hypothesis: {}", run.records[at - 1].hypothesis);
    }
    print!("{}", memory.render_text());
    Ok(0)
}
