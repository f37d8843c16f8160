//! Comparison strategies: isolated sentences, sentences with the three
//! preceding pairs as context, and batched document-to-document translation
//! in one growing chat session.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{format_instances, Agent, AgentError};
use crate::doc::{assemble_target, SentencePair, SourceDocument, TargetDocument};
use crate::llm::{ChatSession, LlmError};
use crate::memory::NOT_AVAILABLE;
use crate::prompts::{Component, TemplateError};

pub const CONTEXT_PAIRS: usize = 3;
pub const DEFAULT_WINDOW: usize = 10;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("window size must be >= 1")]
    ZeroWindow,
    #[error("document '{doc_id}' failed after {} sentences: {source}", completed.len())]
    Sentence {
        doc_id: String,
        completed: Vec<String>,
        #[source]
        source: AgentError,
    },
    #[error("document '{doc_id}' failed in batch {}: {source}", run.batches.len() + 1)]
    Session {
        doc_id: String,
        run: Box<WindowedRun>,
        #[source]
        source: LlmError,
    },
    #[error(transparent)]
    Template(#[from] TemplateError),
}

pub fn render_sentence_prompt(agent: &Agent<'_>, source: &str) -> Result<String, TemplateError> {
    let langs = agent.langs();
    agent.templates().get(Component::SentenceBaseline).render(&[
        ("SRC_LANG", langs.src_name()),
        ("TGT_LANG", langs.tgt_name()),
        ("SOURCE", source),
    ])
}

/// Up to [`CONTEXT_PAIRS`] preceding pairs, oldest first; `N/A` when none.
pub fn render_context_prompt(
    agent: &Agent<'_>,
    source: &str,
    preceding: &[SentencePair],
) -> Result<String, TemplateError> {
    let langs = agent.langs();
    let from = preceding.len().saturating_sub(CONTEXT_PAIRS);
    let context = format_instances(&preceding[from..], langs.src_name(), langs.tgt_name());
    let context = if context.is_empty() { NOT_AVAILABLE } else { &context };
    agent.templates().get(Component::ContextBaseline).render(&[
        ("SRC_LANG", langs.src_name()),
        ("TGT_LANG", langs.tgt_name()),
        ("RELEVANT_INSTANCES", context),
        ("SOURCE", source),
    ])
}

pub fn sentence_baseline(agent: &Agent<'_>, doc: &SourceDocument) -> Result<TargetDocument, BaselineError> {
    let mut hyps = Vec::with_capacity(doc.len());
    for source in &doc.sentences {
        let prompt = render_sentence_prompt(agent, source)?;
        match agent.translate_with(Component::SentenceBaseline, &prompt) {
            Ok(h) => hyps.push(h),
            Err(source) => return Err(sentence_failure(doc, hyps, source)),
        }
    }
    Ok(assemble_target(doc, hyps, &agent.langs().tgt).expect("one hypothesis per sentence"))
}

pub fn context_baseline(agent: &Agent<'_>, doc: &SourceDocument) -> Result<TargetDocument, BaselineError> {
    let mut done: Vec<SentencePair> = Vec::with_capacity(doc.len());
    for (i, source) in doc.sentences.iter().enumerate() {
        let prompt = render_context_prompt(agent, source, &done)?;
        match agent.translate_with(Component::ContextBaseline, &prompt) {
            Ok(h) => done.push(SentencePair::new(i + 1, source.clone(), h)),
            Err(e) => {
                let hyps = done.into_iter().map(|p| p.target).collect();
                return Err(sentence_failure(doc, hyps, e));
            }
        }
    }
    let hyps = done.into_iter().map(|p| p.target).collect();
    Ok(assemble_target(doc, hyps, &agent.langs().tgt).expect("one hypothesis per sentence"))
}

fn sentence_failure(doc: &SourceDocument, completed: Vec<String>, source: AgentError) -> BaselineError {
    BaselineError::Sentence {
        doc_id: doc.doc_id.clone(),
        completed,
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchLog {
    /// 1-based document index of the first sentence in the batch.
    pub first_index: usize,
    pub size: usize,
    pub prompt: String,
    pub response: String,
    pub recovered: usize,
    /// 1-based document indices with no numbered line in the response.
    pub missing: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedRun {
    pub window: usize,
    pub batches: Vec<BatchLog>,
    /// One slot per source sentence; `None` marks a missing hypothesis.
    pub hypotheses: Vec<Option<String>>,
}

impl WindowedRun {
    pub fn recovered(&self) -> usize {
        self.hypotheses.iter().filter(|h| h.is_some()).count()
    }
}

pub fn count_missing(run: &WindowedRun) -> usize {
    run.hypotheses.iter().filter(|h| h.is_none()).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Doc2DocOutput {
    /// Recovered hypotheses in source order; missing ones are skipped.
    pub hypotheses: Vec<String>,
    pub run: WindowedRun,
}

impl Doc2DocOutput {
    /// Full-length output with missing sentences as empty strings.
    pub fn padded(&self) -> Vec<String> {
        self.run
            .hypotheses
            .iter()
            .map(|h| h.clone().unwrap_or_default())
            .collect()
    }
}

fn numbered_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(\d+)\s*[.):、．]\s*(.*?)\s*$").unwrap())
}

/// Maps `k. text` lines to slots `1..=size`. The first line for a number
/// wins; empty text, out-of-range numbers and unnumbered lines are ignored.
pub fn parse_numbered_lines(response: &str, size: usize) -> Vec<Option<String>> {
    let mut slots = vec![None; size];
    for line in response.lines() {
        let Some(caps) = numbered_line().captures(line) else {
            continue;
        };
        let Ok(k) = caps[1].parse::<usize>() else {
            continue;
        };
        let text = caps[2].to_string();
        if (1..=size).contains(&k) && !text.is_empty() && slots[k - 1].is_none() {
            slots[k - 1] = Some(text);
        }
    }
    slots
}

pub fn render_doc2doc_prompt(agent: &Agent<'_>, batch: &[String]) -> Result<String, TemplateError> {
    let langs = agent.langs();
    let numbered = batch
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {s}", i + 1))
        .collect::<Vec<_>>()
        .join("\n");
    let top = batch.len().to_string();
    agent.templates().get(Component::Doc2Doc).render(&[
        ("SRC_LANG", langs.src_name()),
        ("TGT_LANG", langs.tgt_name()),
        ("TOP_NUM", &top),
        ("SOURCE", &numbered),
    ])
}

/// Sends consecutive batches of `window` sentences through one session.
pub fn doc2doc_baseline(
    agent: &Agent<'_>,
    doc: &SourceDocument,
    window: usize,
) -> Result<Doc2DocOutput, BaselineError> {
    if window == 0 {
        return Err(BaselineError::ZeroWindow);
    }
    let mut session = ChatSession::new(agent.backend(), Component::Doc2Doc.tag(), agent.settings().clone());
    let mut run = WindowedRun {
        window,
        batches: Vec::new(),
        hypotheses: Vec::with_capacity(doc.len()),
    };
    for (b, batch) in doc.sentences.chunks(window).enumerate() {
        let first_index = b * window + 1;
        let prompt = render_doc2doc_prompt(agent, batch)?;
        let response = match session.send(prompt.clone()) {
            Ok(r) => r,
            Err(source) => {
                return Err(BaselineError::Session {
                    doc_id: doc.doc_id.clone(),
                    run: Box::new(run),
                    source,
                })
            }
        };
        let slots = parse_numbered_lines(&response, batch.len());
        let missing: Vec<usize> = slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_none())
            .map(|(i, _)| first_index + i)
            .collect();
        if !missing.is_empty() {
            log::warn!("{} batch {}: missing sentences {missing:?}", doc.doc_id, b + 1);
        }
        run.batches.push(BatchLog {
            first_index,
            size: batch.len(),
            prompt,
            response,
            recovered: batch.len() - missing.len(),
            missing,
        });
        run.hypotheses.extend(slots);
    }
    let hypotheses = run.hypotheses.iter().flatten().cloned().collect();
    Ok(Doc2DocOutput { hypotheses, run })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::LanguagePair;
    use crate::llm::{GenerationSettings, ScriptedBackend};
    use crate::prompts::TemplateSet;

    fn doc(n: usize) -> SourceDocument {
        SourceDocument::new("d", (1..=n).map(|i| format!("s{i}")).collect())
    }

    fn with_agent<R>(b: &ScriptedBackend, f: impl FnOnce(&Agent<'_>) -> R) -> R {
        let t = TemplateSet::builtin();
        let a = Agent::new(b, &t, GenerationSettings::default(), LanguagePair::default());
        f(&a)
    }

    fn numbered_reply(n: usize, skip: &[usize]) -> String {
        (1..=n)
            .filter(|i| !skip.contains(i))
            .map(|i| format!("{i}. t{i}"))
            .collect::<Vec<_>>()
            .join("\n")
    }

    #[test]
    fn sentence_baseline_calls_once_per_sentence() {
        let b = ScriptedBackend::new();
        b.push_all("sentence_baseline", ["a", "b", "c"]);
        let out = with_agent(&b, |a| sentence_baseline(a, &doc(3))).unwrap();
        assert_eq!(out.sentences, vec!["a", "b", "c"]);
        assert_eq!(b.total_calls(), 3);
        let empty = with_agent(&b, |a| sentence_baseline(a, &doc(0))).unwrap();
        assert!(empty.is_empty());
        assert_eq!(b.total_calls(), 3);
    }

    #[test]
    fn context_window_arithmetic() {
        let b = ScriptedBackend::new();
        b.push_all("context_baseline", ["h1", "h2", "h3", "h4", "h5"]);
        with_agent(&b, |a| context_baseline(a, &doc(5))).unwrap();
        let prompts: Vec<String> = b.calls().into_iter().map(|c| c.prompt).collect();
        assert!(prompts[0].contains("Context:\n\nN/A\n\n"));
        assert_eq!(prompts[1].matches("<English source>").count(), 2);
        let p5 = &prompts[4];
        assert!(!p5.contains("source> s1\n"));
        let (i2, i3, i4) = (
            p5.find("source> s2\n").unwrap(),
            p5.find("source> s3\n").unwrap(),
            p5.find("source> s4\n").unwrap(),
        );
        assert!(i2 < i3 && i3 < i4);
        assert!(p5.contains("<Chinese translation> h4"));
    }

    #[test]
    fn numbered_line_parsing() {
        let slots = parse_numbered_lines("1. a\n 2) b\n3、c\nnoise\n2. dup\n9. out\n4.\n", 4);
        assert_eq!(
            slots,
            vec![Some("a".into()), Some("b".into()), Some("c".into()), None]
        );
    }

    #[test]
    fn doc2doc_batches_and_missing() {
        let b = ScriptedBackend::new();
        b.push_all(
            "doc2doc",
            [numbered_reply(10, &[7]), numbered_reply(10, &[]), numbered_reply(5, &[2])],
        );
        let out = with_agent(&b, |a| doc2doc_baseline(a, &doc(25), 10)).unwrap();
        let sizes: Vec<usize> = out.run.batches.iter().map(|x| x.size).collect();
        assert_eq!(sizes, vec![10, 10, 5]);
        assert_eq!(out.run.batches[0].missing, vec![7]);
        assert_eq!(out.run.batches[2].missing, vec![22]);
        assert_eq!(count_missing(&out.run), 2);
        assert_eq!(out.hypotheses.len() + count_missing(&out.run), 25);
        let counts: Vec<usize> = b.calls().iter().map(|c| c.message_count).collect();
        assert_eq!(counts, vec![1, 3, 5]);
    }

    #[test]
    fn doc2doc_session_failure_keeps_partial_run() {
        let b = ScriptedBackend::new();
        b.push("doc2doc", numbered_reply(2, &[]));
        match with_agent(&b, |a| doc2doc_baseline(a, &doc(4), 2)) {
            Err(BaselineError::Session { run, .. }) => assert_eq!(run.batches.len(), 1),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            with_agent(&b, |a| doc2doc_baseline(a, &doc(4), 0)),
            Err(BaselineError::ZeroWindow)
        ));
    }
}
