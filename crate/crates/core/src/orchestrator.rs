//! The sentence-by-sentence translation loop.
//!
//! For sentence `i` the loop: looks up proper-noun records, retrieves
//! relevant long-term pairs, translates, extracts new proper nouns, pushes the
//! new pair into the long-term then short-term window, and every `m`
//! sentences writes and merges the bilingual summary. Memory is per document.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::{Agent, AgentError, LanguagePair, SummarySide};
use crate::doc::{assemble_target, SentencePair, SourceDocument, TargetDocument};
use crate::llm::{ChatBackend, ChatRequest, GenerationSettings, LlmError};
use crate::memory::{MatchMode, MemoryState};
use crate::prompts::TemplateSet;

pub const TAG_LOOKUP: &str = "lookup";
pub const TAG_RETRIEVE: &str = "retriever";
pub const TAG_TRANSLATE: &str = "translator";
pub const TAG_EXTRACT: &str = "extractor";
pub const TAG_PUSH_LONG: &str = "push_long_term";
pub const TAG_PUSH_SHORT: &str = "push_short_term";
pub const TAG_WRITE_SRC: &str = "src_summary";
pub const TAG_WRITE_TGT: &str = "tgt_summary";
pub const TAG_MERGE_SRC: &str = "src_merge";
pub const TAG_MERGE_TGT: &str = "tgt_merge";

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    /// Summary update interval `m`.
    #[serde(rename = "m")]
    pub summary_interval: usize,
    /// Long-term window capacity `l`.
    #[serde(rename = "l")]
    pub long_term_capacity: usize,
    /// Pairs retrieved from long-term memory, `n`.
    #[serde(rename = "n")]
    pub retrieve_count: usize,
    /// Short-term window capacity `k`.
    #[serde(rename = "k")]
    pub short_term_capacity: usize,
    pub langs: LanguagePair,
    pub generation: GenerationSettings,
    pub checkpoint_interval: usize,
    pub match_mode: MatchMode,
    /// Turning this off skips record lookup and extraction entirely.
    #[serde(default = "default_true")]
    pub use_records: bool,
    /// Optional query folded into summary prompts.
    #[serde(default)]
    pub summary_query: Option<String>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            summary_interval: 20,
            long_term_capacity: 20,
            retrieve_count: 2,
            short_term_capacity: 3,
            langs: LanguagePair::default(),
            generation: GenerationSettings::default(),
            checkpoint_interval: 10,
            match_mode: MatchMode::CaseSensitive,
            use_records: true,
            summary_query: None,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        let fail = |m: &str| Err(RunError::Config(m.to_string()));
        if self.summary_interval < 1 {
            return fail("m must be >= 1");
        }
        if self.long_term_capacity < 1 {
            return fail("l must be >= 1");
        }
        if self.retrieve_count < 1 {
            return fail("n must be >= 1");
        }
        if self.retrieve_count > self.long_term_capacity {
            return fail("n must not exceed l");
        }
        if self.checkpoint_interval < 1 {
            return fail("checkpoint_interval must be >= 1");
        }
        if self.generation.max_new_tokens == 0 {
            return fail("max_new_tokens must be >= 1");
        }
        if self.generation.temperature.is_nan() || self.generation.temperature < 0.0 {
            return fail("temperature must be >= 0");
        }
        Ok(())
    }

    /// Hash over everything that influences translation output (the
    /// checkpoint cadence is excluded).
    pub fn fingerprint(&self) -> String {
        let mut normalized = self.clone();
        normalized.checkpoint_interval = 0;
        sha256_hex(&serde_json::to_vec(&normalized).expect("config serializes"))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceTrace {
    pub index: usize,
    pub hypothesis: String,
    /// Component invocations in order, including ones answered without a
    /// backend call.
    pub component_calls: Vec<String>,
    pub backend_calls: usize,
    /// Memory after this sentence's updates.
    pub memory: MemoryState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub doc_id: String,
    pub records: Vec<SentenceTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub doc_id: String,
    /// 1-based index of the next sentence to translate.
    pub next_index: usize,
    pub config_fingerprint: String,
    pub memory: MemoryState,
    pub hypotheses: Vec<String>,
    pub trace: Vec<SentenceTrace>,
}

impl Checkpoint {
    /// Atomic write: temp file in the same directory, then rename.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(dir)?;
        let file_name = path.file_name().and_then(|f| f.to_str()).unwrap_or("checkpoint");
        let tmp = dir.join(format!(".{file_name}.tmp"));
        {
            let mut f = fs::File::create(&tmp)?;
            serde_json::to_writer(&mut f, self)?;
            f.write_all(b"\n")?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),
    #[error("document '{doc_id}' failed after sentence {last_completed}: {source}")]
    Failed {
        doc_id: String,
        last_completed: usize,
        checkpoint: Box<Checkpoint>,
        #[source]
        source: AgentError,
    },
    #[error("writing checkpoint {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Counts backend calls made on behalf of one document.
struct CountingBackend<'a> {
    inner: &'a dyn ChatBackend,
    calls: AtomicUsize,
}

impl ChatBackend for CountingBackend<'_> {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }

    fn describe(&self) -> String {
        self.inner.describe()
    }
}

pub fn checkpoint_path(dir: &Path, doc_id: &str) -> PathBuf {
    let safe: String = doc_id
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    dir.join(format!("{safe}.checkpoint.json"))
}

pub struct DocumentTranslator<'a> {
    backend: &'a dyn ChatBackend,
    templates: &'a TemplateSet,
    config: AgentConfig,
    checkpoint_dir: Option<PathBuf>,
}

impl<'a> DocumentTranslator<'a> {
    pub fn new(backend: &'a dyn ChatBackend, templates: &'a TemplateSet, config: AgentConfig) -> Self {
        Self {
            backend,
            templates,
            config,
            checkpoint_dir: None,
        }
    }

    /// Periodic and on-failure checkpoints go to `<dir>/<doc_id>.checkpoint.json`.
    pub fn with_checkpoint_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.checkpoint_dir = Some(dir.into());
        self
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn translate_document(&self, doc: &SourceDocument) -> Result<(TargetDocument, RunTrace), RunError> {
        self.config.validate()?;
        let start = Checkpoint {
            doc_id: doc.doc_id.clone(),
            next_index: 1,
            config_fingerprint: self.config.fingerprint(),
            memory: MemoryState::new(self.config.long_term_capacity, self.config.short_term_capacity),
            hypotheses: Vec::new(),
            trace: Vec::new(),
        };
        self.run(doc, start)
    }

    /// Continues a run from a checkpoint; the result equals an uninterrupted
    /// run under a deterministic backend.
    pub fn resume(&self, checkpoint: Checkpoint, doc: &SourceDocument) -> Result<(TargetDocument, RunTrace), RunError> {
        self.config.validate()?;
        let mismatch = |m: String| Err(RunError::Checkpoint(m));
        if checkpoint.doc_id != doc.doc_id {
            return mismatch(format!(
                "checkpoint is for document '{}', not '{}'",
                checkpoint.doc_id, doc.doc_id
            ));
        }
        if checkpoint.config_fingerprint != self.config.fingerprint() {
            return mismatch("config differs from the one that wrote the checkpoint".into());
        }
        if checkpoint.next_index == 0 || checkpoint.next_index > doc.len() + 1 {
            return mismatch(format!(
                "next index {} outside 1..={}",
                checkpoint.next_index,
                doc.len() + 1
            ));
        }
        let done = checkpoint.next_index - 1;
        if checkpoint.hypotheses.len() != done || checkpoint.trace.len() != done {
            return mismatch(format!(
                "{} hypotheses / {} trace records for next index {}",
                checkpoint.hypotheses.len(),
                checkpoint.trace.len(),
                checkpoint.next_index
            ));
        }
        if checkpoint.memory.long_term.capacity() != self.config.long_term_capacity
            || checkpoint.memory.short_term.capacity() != self.config.short_term_capacity
        {
            return mismatch("memory window capacities differ from config".into());
        }
        self.run(doc, checkpoint)
    }

    /// Translates documents independently, up to `parallelism` at a time.
    /// Results keep input order; one failure does not stop the others.
    pub fn translate_corpus(
        &self,
        docs: &[SourceDocument],
        parallelism: usize,
    ) -> Vec<Result<(TargetDocument, RunTrace), RunError>> {
        if parallelism <= 1 || docs.len() <= 1 {
            return docs.iter().map(|d| self.translate_document(d)).collect();
        }
        match rayon::ThreadPoolBuilder::new().num_threads(parallelism).build() {
            Ok(pool) => pool.install(|| docs.par_iter().map(|d| self.translate_document(d)).collect()),
            Err(e) => {
                log::warn!("thread pool unavailable ({e}); translating sequentially");
                docs.iter().map(|d| self.translate_document(d)).collect()
            }
        }
    }

    fn save_checkpoint(&self, cp: &Checkpoint) -> Result<(), RunError> {
        if let Some(dir) = &self.checkpoint_dir {
            let path = checkpoint_path(dir, &cp.doc_id);
            cp.save(&path).map_err(|source| RunError::Io { path, source })?;
        }
        Ok(())
    }

    fn run(&self, doc: &SourceDocument, mut state: Checkpoint) -> Result<(TargetDocument, RunTrace), RunError> {
        let counter = CountingBackend {
            inner: self.backend,
            calls: AtomicUsize::new(0),
        };
        let agent = Agent::new(
            &counter,
            self.templates,
            self.config.generation.clone(),
            self.config.langs.clone(),
        );

        for index in state.next_index..=doc.len() {
            let before = counter.calls.load(Ordering::SeqCst);
            let step = self.step(&agent, doc, index, &state.memory, &state.hypotheses);
            match step {
                Ok((hypothesis, memory, calls)) => {
                    let backend_calls = counter.calls.load(Ordering::SeqCst) - before;
                    log::info!("{} [{index}/{}] translated", doc.doc_id, doc.len());
                    state.trace.push(SentenceTrace {
                        index,
                        hypothesis: hypothesis.clone(),
                        component_calls: calls,
                        backend_calls,
                        memory: memory.clone(),
                    });
                    state.hypotheses.push(hypothesis);
                    state.memory = memory;
                    state.next_index = index + 1;
                    if index % self.config.checkpoint_interval == 0 {
                        self.save_checkpoint(&state)?;
                    }
                }
                Err(source) => {
                    self.save_checkpoint(&state)?;
                    return Err(RunError::Failed {
                        doc_id: doc.doc_id.clone(),
                        last_completed: index - 1,
                        checkpoint: Box::new(state),
                        source,
                    });
                }
            }
        }

        let target = assemble_target(doc, state.hypotheses, &self.config.langs.tgt)
            .expect("one hypothesis per sentence by construction");
        Ok((
            target,
            RunTrace {
                doc_id: doc.doc_id.clone(),
                records: state.trace,
            },
        ))
    }

    /// One sentence on a copy of the memory, so a failure leaves the
    /// committed state untouched.
    fn step(
        &self,
        agent: &Agent<'_>,
        doc: &SourceDocument,
        index: usize,
        committed: &MemoryState,
        hypotheses: &[String],
    ) -> Result<(String, MemoryState, Vec<String>), AgentError> {
        let cfg = &self.config;
        let source = &doc.sentences[index - 1];
        let mut memory = committed.clone();
        let mut calls: Vec<String> = Vec::new();

        let matched = if cfg.use_records {
            calls.push(TAG_LOOKUP.into());
            memory.records.lookup(source, cfg.match_mode)
        } else {
            Vec::new()
        };

        calls.push(TAG_RETRIEVE.into());
        let retrieved = agent.retrieve_relevant(source, &memory.long_term, cfg.retrieve_count)?;

        calls.push(TAG_TRANSLATE.into());
        let hypothesis =
            agent.translate_sentence(source, &matched, &retrieved, &memory.summary, &memory.short_term)?;

        if cfg.use_records {
            calls.push(TAG_EXTRACT.into());
            let found = agent.extract_proper_nouns(source, &hypothesis, &memory.records)?;
            memory.records.insert(found);
        }

        let pair = SentencePair::new(index, source.clone(), hypothesis.clone());
        calls.push(TAG_PUSH_LONG.into());
        memory
            .long_term
            .push(pair.clone())
            .expect("indices increase by construction");
        calls.push(TAG_PUSH_SHORT.into());
        memory.short_term.push(pair).expect("indices increase by construction");

        if index.is_multiple_of(cfg.summary_interval) {
            let from = index - cfg.summary_interval;
            let src_segment: Vec<String> = doc.sentences[from..index].to_vec();
            let mut tgt_segment: Vec<String> = hypotheses[from..].to_vec();
            tgt_segment.push(hypothesis.clone());
            let query = cfg.summary_query.as_deref();
            let summary = &memory.summary;

            // The two sides touch disjoint fields, so they run concurrently.
            let (src, tgt) = std::thread::scope(|s| {
                let src = s.spawn(|| -> Result<String, AgentError> {
                    let seg = agent.write_segment_summary(&src_segment, SummarySide::Source, query)?;
                    agent.merge_summaries(&summary.source, &seg, SummarySide::Source, query)
                });
                let tgt = s.spawn(|| -> Result<String, AgentError> {
                    let seg = agent.write_segment_summary(&tgt_segment, SummarySide::Target, query)?;
                    agent.merge_summaries(&summary.target, &seg, SummarySide::Target, query)
                });
                (
                    src.join().expect("summary thread panicked"),
                    tgt.join().expect("summary thread panicked"),
                )
            });
            let (src, tgt) = (src?, tgt?);
            calls.extend([TAG_WRITE_SRC, TAG_WRITE_TGT, TAG_MERGE_SRC, TAG_MERGE_TGT].map(String::from));
            memory.summary.replace(src, tgt);
        }

        Ok((hypothesis, memory, calls))
    }
}
