//! Document-level machine translation through a multi-level memory agent.
//!
//! The crate translates a document one sentence at a time. Before each
//! sentence the agent consults four memories (proper-noun records, a
//! bilingual running summary, a long-term and a short-term sentence window),
//! asks an LLM for the translation, then updates the memories from the new
//! sentence pair. Around that loop sit the pieces needed to run and judge it:
//! corpus IO, an OpenAI-compatible gateway with a scripted stand-in for tests,
//! the comparison strategies (sentence, context, doc2doc) and the
//! proper-noun consistency metrics.

pub mod agent;
pub mod baselines;
pub mod doc;
pub mod eval;
pub mod llm;
pub mod memory;
pub mod orchestrator;
pub mod prompts;

pub use agent::{Agent, AgentError, LanguagePair, RetrievedContext, SummarySide};
pub use baselines::{BaselineError, Doc2DocOutput, WindowedRun};
pub use doc::{CorpusFormat, DocError, SentencePair, SourceDocument, TargetDocument};
pub use eval::{AlignmentMap, AnnotationSet, DistanceBucket, EvalError, NounOccurrence, Ratio};
pub use llm::{
    ChatBackend, ChatRequest, ChatSession, GenerationSettings, HttpBackend, LlmError, Message,
    RetryPolicy, Role, ScriptedBackend,
};
pub use memory::{BilingualSummary, MatchMode, MemoryState, MemoryWindow, ProperNounRecords};
pub use orchestrator::{AgentConfig, Checkpoint, DocumentTranslator, RunError, RunTrace, SentenceTrace};
pub use prompts::{Component, PromptTemplate, TemplateError, TemplateSet};
