//! The agent's four memories: proper-noun records, the bilingual summary and
//! the long/short-term sentence windows.

use std::collections::VecDeque;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doc::SentencePair;

/// Extractor marker for a mention that has no translation in the target.
pub const NOT_AVAILABLE: &str = "N/A";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    #[default]
    CaseSensitive,
    CaseInsensitive,
}

/// Source proper noun -> translation at its first encounter.
///
/// Entries are never overwritten. Serialized as an ordered list of
/// `[noun, translation]` pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<(String, String)>", into = "Vec<(String, String)>")]
pub struct ProperNounRecords {
    entries: IndexMap<String, String>,
}

impl From<Vec<(String, String)>> for ProperNounRecords {
    fn from(pairs: Vec<(String, String)>) -> Self {
        let mut records = Self::default();
        records.insert(pairs);
        records
    }
}

impl From<ProperNounRecords> for Vec<(String, String)> {
    fn from(r: ProperNounRecords) -> Self {
        r.entries.into_iter().collect()
    }
}

impl ProperNounRecords {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, noun: &str) -> Option<&str> {
        self.entries.get(noun).map(String::as_str)
    }

    pub fn contains(&self, noun: &str) -> bool {
        self.entries.contains_key(noun)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Inserts pairs in order. Known nouns, empty nouns and empty or `N/A`
    /// translations are skipped. Returns the number of new entries.
    pub fn insert<I, K, V>(&mut self, pairs: I) -> usize
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let mut added = 0;
        for (noun, translation) in pairs {
            let noun = noun.into();
            let translation = translation.into();
            if noun.trim().is_empty() || !is_real_translation(&translation) {
                continue;
            }
            if !self.entries.contains_key(&noun) {
                self.entries.insert(noun, translation);
                added += 1;
            }
        }
        added
    }

    /// Every record whose noun occurs in `sentence`, ordered by first match
    /// position; at equal positions the longer noun comes first.
    pub fn lookup(&self, sentence: &str, mode: MatchMode) -> Vec<(String, String)> {
        let haystack = fold(sentence, mode);
        let mut hits: Vec<(usize, usize, usize, &str, &str)> = self
            .entries
            .iter()
            .enumerate()
            .filter_map(|(order, (noun, translation))| {
                let needle = fold(noun, mode);
                find_char_pos(&haystack, &needle).map(|pos| {
                    (pos, needle.chars().count(), order, noun.as_str(), translation.as_str())
                })
            })
            .collect();
        hits.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
        hits.into_iter()
            .map(|(_, _, _, n, t)| (n.to_string(), t.to_string()))
            .collect()
    }
}

pub(crate) fn is_real_translation(t: &str) -> bool {
    let t = t.trim();
    !t.is_empty() && !t.eq_ignore_ascii_case(NOT_AVAILABLE)
}

fn fold(s: &str, mode: MatchMode) -> std::borrow::Cow<'_, str> {
    match mode {
        MatchMode::CaseSensitive => std::borrow::Cow::Borrowed(s),
        MatchMode::CaseInsensitive => std::borrow::Cow::Owned(s.to_lowercase()),
    }
}

fn find_char_pos(haystack: &str, needle: &str) -> Option<usize> {
    if needle.is_empty() {
        return None;
    }
    haystack
        .find(needle)
        .map(|byte| haystack[..byte].chars().count())
}

/// Running source/target summaries, replaced together.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BilingualSummary {
    pub source: String,
    pub target: String,
}

impl BilingualSummary {
    pub fn replace(&mut self, source: String, target: String) {
        *self = Self { source, target };
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty() && self.target.is_empty()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WindowError {
    #[error("pair index {index} does not follow the newest index {newest}")]
    NonIncreasingIndex { index: usize, newest: usize },
}

/// Bounded FIFO of the most recent sentence pairs, oldest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryWindow {
    capacity: usize,
    pairs: VecDeque<SentencePair>,
}

impl MemoryWindow {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            pairs: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> impl DoubleEndedIterator<Item = &SentencePair> + ExactSizeIterator {
        self.pairs.iter()
    }

    /// Pair at 0-based position (oldest first).
    pub fn get(&self, pos: usize) -> Option<&SentencePair> {
        self.pairs.get(pos)
    }

    pub fn push(&mut self, pair: SentencePair) -> Result<(), WindowError> {
        if let Some(newest) = self.pairs.back() {
            if pair.index <= newest.index {
                return Err(WindowError::NonIncreasingIndex {
                    index: pair.index,
                    newest: newest.index,
                });
            }
        }
        self.pairs.push_back(pair);
        while self.pairs.len() > self.capacity {
            self.pairs.pop_front();
        }
        Ok(())
    }

    /// The `n` most recent pairs, oldest first.
    pub fn most_recent(&self, n: usize) -> Vec<SentencePair> {
        let skip = self.pairs.len().saturating_sub(n);
        self.pairs.iter().skip(skip).cloned().collect()
    }
}

/// Complete memory of one document-translation session; also the snapshot
/// format written to traces and checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryState {
    pub records: ProperNounRecords,
    pub summary: BilingualSummary,
    pub long_term: MemoryWindow,
    pub short_term: MemoryWindow,
}

impl MemoryState {
    pub fn new(long_term_capacity: usize, short_term_capacity: usize) -> Self {
        Self {
            records: ProperNounRecords::new(),
            summary: BilingualSummary::default(),
            long_term: MemoryWindow::new(long_term_capacity),
            short_term: MemoryWindow::new(short_term_capacity),
        }
    }

    /// Human-readable dump used by the CLI `inspect` command.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("Proper noun records ({}):\n", self.records.len()));
        for (n, t) in self.records.iter() {
            out.push_str(&format!("  \"{n}\" - \"{t}\"\n"));
        }
        out.push_str(&format!("Source summary: {}\n", or_na(&self.summary.source)));
        out.push_str(&format!("Target summary: {}\n", or_na(&self.summary.target)));
        for (name, w) in [("Long-term", &self.long_term), ("Short-term", &self.short_term)] {
            out.push_str(&format!("{name} memory ({}/{}):\n", w.len(), w.capacity()));
            for p in w.pairs() {
                out.push_str(&format!("  [{}] {} => {}\n", p.index, p.source, p.target));
            }
        }
        out
    }
}

fn or_na(s: &str) -> &str {
    if s.is_empty() {
        NOT_AVAILABLE
    } else {
        s
    }
}
