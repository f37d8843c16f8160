//! The LLM-backed components: proper-noun extractor, summary writers and
//! mergers, long-term memory retriever and the document translator.
//!
//! Each component renders its prompt, calls the backend and parses the reply.
//! Parsers are total: a reply that cannot be parsed triggers one re-ask with
//! the same prompt and then a deterministic fallback.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doc::{joiner_for, SentencePair};
use crate::llm::{ChatBackend, ChatRequest, GenerationSettings, LlmError};
use crate::memory::{is_real_translation, BilingualSummary, MemoryWindow, ProperNounRecords, NOT_AVAILABLE};
use crate::prompts::{language_name, Component, TemplateError, TemplateSet};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("empty translation for sentence after {attempts} attempts")]
    EmptyTranslation { attempts: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguagePair {
    pub src: String,
    pub tgt: String,
}

impl LanguagePair {
    pub fn new(src: impl Into<String>, tgt: impl Into<String>) -> Self {
        Self {
            src: src.into(),
            tgt: tgt.into(),
        }
    }

    pub fn src_name(&self) -> &str {
        language_name(&self.src)
    }

    pub fn tgt_name(&self) -> &str {
        language_name(&self.tgt)
    }

    /// Directory key for templates, e.g. `en-zh`.
    pub fn key(&self) -> String {
        format!("{}-{}", self.src, self.tgt)
    }
}

impl Default for LanguagePair {
    fn default() -> Self {
        Self::new("en", "zh")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SummarySide {
    Source,
    Target,
}

/// Long-term memory pairs chosen for the current sentence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievedContext {
    pub pairs: Vec<SentencePair>,
    /// 1-based positions of `pairs` in the window they came from.
    pub positions: Vec<usize>,
}

impl RetrievedContext {
    fn from_window(window: &MemoryWindow, positions: Vec<usize>) -> Self {
        let pairs = positions
            .iter()
            .filter_map(|p| window.get(p - 1).cloned())
            .collect();
        Self { pairs, positions }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn pair_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#""([^"\n]*)"\s*[-–—:]\s*"([^"\n]*)""#).unwrap())
}

fn bracket_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[([^\[\]]*)\]").unwrap())
}

fn int_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[+-]?[0-9]+$").unwrap())
}

fn normalize_quotes(s: &str) -> String {
    s.chars()
        .map(|c| match c {
            '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{201F}' | '\u{2033}' | '\u{FF02}' => '"',
            _ => c,
        })
        .collect()
}

/// Parses `"X" - "Y"` pairs separated by commas or newlines.
///
/// Returns `Some(vec![])` for a bare `N/A` answer and `None` when the reply
/// holds neither pairs nor `N/A`.
pub fn parse_extractor_response(response: &str) -> Option<Vec<(String, String)>> {
    let text = normalize_quotes(response);
    let pairs: Vec<(String, String)> = pair_regex()
        .captures_iter(&text)
        .map(|c| (c[1].trim().to_string(), c[2].trim().to_string()))
        .collect();
    if !pairs.is_empty() {
        return Some(pairs);
    }
    let bare = text
        .trim()
        .trim_matches(|c: char| c == '"' || c == '\'' || c == '.' || c.is_whitespace());
    bare.eq_ignore_ascii_case(NOT_AVAILABLE).then(Vec::new)
}

/// Finds the first bracketed list of integers, e.g. `[15, 16, 19]`.
/// Values that do not fit in an `i64` saturate (they are out of range anyway).
pub fn parse_retriever_response(response: &str) -> Option<Vec<i64>> {
    bracket_regex().captures_iter(response).find_map(|c| {
        let tokens: Vec<&str> = c[1]
            .split(|ch: char| ch == ',' || ch.is_whitespace())
            .filter(|t| !t.is_empty())
            .collect();
        if !tokens.iter().all(|t| int_regex().is_match(t)) {
            return None;
        }
        Some(
            tokens
                .iter()
                .map(|t| {
                    t.parse::<i64>().unwrap_or(if t.starts_with('-') {
                        i64::MIN
                    } else {
                        i64::MAX
                    })
                })
                .collect(),
        )
    })
}

/// Dedupe, drop numbers outside `1..=window_len`, keep the first `n`, then
/// sort into window order.
pub fn normalize_selection(numbers: &[i64], window_len: usize, n: usize) -> Vec<usize> {
    let mut picked: Vec<usize> = Vec::new();
    for &num in numbers {
        if num < 1 || num as u64 > window_len as u64 {
            continue;
        }
        let pos = num as usize;
        if !picked.contains(&pos) {
            picked.push(pos);
        }
        if picked.len() == n {
            break;
        }
    }
    picked.sort_unstable();
    picked
}

const QUOTE_PAIRS: &[(char, char)] = &[
    ('"', '"'),
    ('\'', '\''),
    ('\u{201C}', '\u{201D}'),
    ('\u{2018}', '\u{2019}'),
    ('\u{300C}', '\u{300D}'),
    ('\u{300E}', '\u{300F}'),
    ('\u{00AB}', '\u{00BB}'),
];

/// Strips surrounding whitespace and matching surrounding quotes.
pub fn trim_translation(text: &str) -> String {
    let mut s = text.trim();
    loop {
        let mut chars = s.chars();
        let (Some(first), Some(last)) = (chars.next(), chars.next_back()) else {
            break;
        };
        if QUOTE_PAIRS.contains(&(first, last)) {
            s = s[first.len_utf8()..s.len() - last.len_utf8()].trim();
        } else {
            break;
        }
    }
    s.to_string()
}

fn or_na(s: &str) -> &str {
    if s.trim().is_empty() {
        NOT_AVAILABLE
    } else {
        s
    }
}

/// Inserts a `Query:` paragraph before the final cue paragraph.
fn with_query(rendered: String, query: &str) -> String {
    match rendered.rfind("\n\n") {
        Some(at) => format!("{}\n\nQuery: {query}{}", &rendered[..at], &rendered[at..]),
        None => format!("Query: {query}\n\n{rendered}"),
    }
}

/// The five prompt-driven components bound to one backend and language pair.
pub struct Agent<'a> {
    backend: &'a dyn ChatBackend,
    templates: &'a TemplateSet,
    settings: GenerationSettings,
    langs: LanguagePair,
}

impl<'a> Agent<'a> {
    pub fn new(
        backend: &'a dyn ChatBackend,
        templates: &'a TemplateSet,
        settings: GenerationSettings,
        langs: LanguagePair,
    ) -> Self {
        Self {
            backend,
            templates,
            settings,
            langs,
        }
    }

    pub fn langs(&self) -> &LanguagePair {
        &self.langs
    }

    fn call(&self, component: Component, prompt: &str) -> Result<String, LlmError> {
        self.backend.complete(&ChatRequest::prompt(
            component.tag(),
            &self.settings,
            prompt.to_string(),
        ))
    }

    pub fn render_extractor(&self, source: &str, target: &str) -> Result<String, TemplateError> {
        self.templates.get(Component::Extractor).render(&[
            ("SRC_LANG", self.langs.src_name()),
            ("TGT_LANG", self.langs.tgt_name()),
            ("SOURCE_SENTENCE", source),
            ("TARGET_SENTENCE", target),
        ])
    }

    /// New proper nouns of a translated pair. Known nouns and `N/A`
    /// translations are dropped; an unparseable reply is re-asked once and
    /// then treated as "no nouns".
    pub fn extract_proper_nouns(
        &self,
        source: &str,
        target: &str,
        known: &ProperNounRecords,
    ) -> Result<Vec<(String, String)>, AgentError> {
        let prompt = self.render_extractor(source, target)?;
        let mut parsed = None;
        for attempt in 1..=2 {
            let reply = self.call(Component::Extractor, &prompt)?;
            parsed = parse_extractor_response(&reply);
            if parsed.is_some() {
                break;
            }
            log::warn!("extractor reply unparseable (attempt {attempt}): {reply:?}");
        }
        let pairs = parsed.unwrap_or_default();
        Ok(pairs
            .into_iter()
            .filter(|(noun, tr)| !noun.is_empty() && is_real_translation(tr) && !known.contains(noun))
            .collect())
    }

    pub fn render_segment_summary(
        &self,
        sentences: &[String],
        side: SummarySide,
        query: Option<&str>,
    ) -> Result<String, TemplateError> {
        let component = match side {
            SummarySide::Source => Component::SrcSummary,
            SummarySide::Target => Component::TgtSummary,
        };
        let lang = match side {
            SummarySide::Source => &self.langs.src,
            SummarySide::Target => &self.langs.tgt,
        };
        let segment = sentences.join(joiner_for(lang));
        self.render_summary_like(component, &[("SOURCE_SEGMENT", &segment)], query)
    }

    pub fn render_merge(
        &self,
        old: &str,
        new: &str,
        side: SummarySide,
        query: Option<&str>,
    ) -> Result<String, TemplateError> {
        let component = match side {
            SummarySide::Source => Component::SrcMerge,
            SummarySide::Target => Component::TgtMerge,
        };
        self.render_summary_like(component, &[("SUMMARY_1", old), ("SUMMARY_2", new)], query)
    }

    fn render_summary_like(
        &self,
        component: Component,
        bindings: &[(&str, &str)],
        query: Option<&str>,
    ) -> Result<String, TemplateError> {
        let template = self.templates.get(component);
        let mut all: Vec<(&str, &str)> = bindings.to_vec();
        all.push(("SRC_LANG", self.langs.src_name()));
        all.push(("TGT_LANG", self.langs.tgt_name()));
        all.push(("QUERY", query.unwrap_or("")));
        let rendered = template.render(&all)?;
        Ok(match query {
            Some(q) if !template.uses("QUERY") => with_query(rendered, q),
            _ => rendered,
        })
    }

    /// Calls the backend, re-asking once on an empty reply; a second empty
    /// reply is accepted.
    fn call_trimmed_accepting_empty(&self, component: Component, prompt: &str) -> Result<String, LlmError> {
        let first = self.call(component, prompt)?.trim().to_string();
        if !first.is_empty() {
            return Ok(first);
        }
        Ok(self.call(component, prompt)?.trim().to_string())
    }

    pub fn write_segment_summary(
        &self,
        sentences: &[String],
        side: SummarySide,
        query: Option<&str>,
    ) -> Result<String, AgentError> {
        let prompt = self.render_segment_summary(sentences, side, query)?;
        let component = match side {
            SummarySide::Source => Component::SrcSummary,
            SummarySide::Target => Component::TgtSummary,
        };
        Ok(self.call_trimmed_accepting_empty(component, &prompt)?)
    }

    /// Merges a segment summary into the running one. With no running summary
    /// the segment summary is returned as-is without a backend call; an empty
    /// segment summary leaves the running one unchanged.
    pub fn merge_summaries(
        &self,
        old: &str,
        new: &str,
        side: SummarySide,
        query: Option<&str>,
    ) -> Result<String, AgentError> {
        if old.is_empty() {
            return Ok(new.to_string());
        }
        if new.is_empty() {
            return Ok(old.to_string());
        }
        let prompt = self.render_merge(old, new, side, query)?;
        let component = match side {
            SummarySide::Source => Component::SrcMerge,
            SummarySide::Target => Component::TgtMerge,
        };
        Ok(self.call_trimmed_accepting_empty(component, &prompt)?)
    }

    pub fn render_retriever(&self, query_sentence: &str, window: &MemoryWindow, n: usize) -> Result<String, TemplateError> {
        let list = window
            .pairs()
            .enumerate()
            .map(|(i, p)| format!("{}. {}", i + 1, p.source))
            .collect::<Vec<_>>()
            .join("\n\n");
        let top = n.to_string();
        self.templates.get(Component::Retriever).render(&[
            ("TOP_NUM", &top),
            ("SENTENCE_LIST", &list),
            ("QUERY", query_sentence),
            ("SRC_LANG", self.langs.src_name()),
            ("TGT_LANG", self.langs.tgt_name()),
        ])
    }

    /// Picks up to `n` long-term memory pairs relevant to `query_sentence`.
    pub fn retrieve_relevant(
        &self,
        query_sentence: &str,
        window: &MemoryWindow,
        n: usize,
    ) -> Result<RetrievedContext, AgentError> {
        if window.len() <= n {
            return Ok(RetrievedContext::from_window(window, (1..=window.len()).collect()));
        }
        let prompt = self.render_retriever(query_sentence, window, n)?;
        for attempt in 1..=2 {
            let reply = self.call(Component::Retriever, &prompt)?;
            if let Some(numbers) = parse_retriever_response(&reply) {
                let positions = normalize_selection(&numbers, window.len(), n);
                return Ok(RetrievedContext::from_window(window, positions));
            }
            log::warn!("retriever reply unparseable (attempt {attempt}): {reply:?}");
        }
        log::warn!("retriever falling back to the {n} most recent pairs");
        let start = window.len() - n + 1;
        Ok(RetrievedContext::from_window(window, (start..=window.len()).collect()))
    }

    pub fn render_translator(
        &self,
        source: &str,
        matched: &[(String, String)],
        retrieved: &RetrievedContext,
        summary: &BilingualSummary,
        short_term: &MemoryWindow,
    ) -> Result<String, TemplateError> {
        let src = self.langs.src_name();
        let tgt = self.langs.tgt_name();
        let history = matched
            .iter()
            .map(|(n, t)| format!("\"{n}\" - \"{t}\""))
            .collect::<Vec<_>>()
            .join("\n");
        let src_context = short_term
            .pairs()
            .map(|p| p.source.as_str())
            .collect::<Vec<_>>()
            .join(joiner_for(&self.langs.src));
        let tgt_context = short_term
            .pairs()
            .map(|p| p.target.as_str())
            .collect::<Vec<_>>()
            .join(joiner_for(&self.langs.tgt));
        let instances = format_instances(&retrieved.pairs, src, tgt);
        self.templates.get(Component::Translator).render(&[
            ("SRC_LANG", src),
            ("TGT_LANG", tgt),
            ("SRC_SUMMARY", or_na(&summary.source)),
            ("TGT_SUMMARY", or_na(&summary.target)),
            ("HISTORY", or_na(&history)),
            ("SRC_CONTEXT", or_na(&src_context)),
            ("TGT_CONTEXT", or_na(&tgt_context)),
            ("RELEVANT_INSTANCES", or_na(&instances)),
            ("SOURCE", source),
        ])
    }

    /// Translates one sentence with everything the memories supplied.
    pub fn translate_sentence(
        &self,
        source: &str,
        matched: &[(String, String)],
        retrieved: &RetrievedContext,
        summary: &BilingualSummary,
        short_term: &MemoryWindow,
    ) -> Result<String, AgentError> {
        let prompt = self.render_translator(source, matched, retrieved, summary, short_term)?;
        self.translate_with(Component::Translator, &prompt)
    }

    /// Shared by the translator and the sentence/context baselines: trimmed
    /// reply, one re-ask on empty output, then an error.
    pub(crate) fn translate_with(&self, component: Component, prompt: &str) -> Result<String, AgentError> {
        for _ in 0..2 {
            let text = trim_translation(&self.call(component, prompt)?);
            if !text.is_empty() {
                return Ok(text);
            }
        }
        Err(AgentError::EmptyTranslation { attempts: 2 })
    }

    pub(crate) fn templates(&self) -> &TemplateSet {
        self.templates
    }

    pub(crate) fn backend(&self) -> &'a dyn ChatBackend {
        self.backend
    }

    pub(crate) fn settings(&self) -> &GenerationSettings {
        &self.settings
    }
}

/// `<src source> s` / `<tgt translation> t` blocks separated by blank lines.
pub(crate) fn format_instances(pairs: &[SentencePair], src_name: &str, tgt_name: &str) -> String {
    pairs
        .iter()
        .map(|p| format!("<{src_name} source> {}\n<{tgt_name} translation> {}", p.source, p.target))
        .collect::<Vec<_>>()
        .join("\n\n")
}
