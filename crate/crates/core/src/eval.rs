//! Proper-noun translation consistency: LTCR-1, its fuzzy variant, and a
//! breakdown by sentence distance from the first occurrence.
//!
//! Scores are exact [`Ratio`]s. Corpus scores pool numerators and
//! denominators across documents; per-document scores and their mean are
//! reported alongside.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

pub use crate::doc::joiner_for;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("{source_name}:{line}: {message}")]
    Input {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("{doc_id}#{index}: {message}")]
    Location {
        doc_id: String,
        index: usize,
        message: String,
    },
    #[error("invalid bucket spec: {0}")]
    Buckets(String),
}

/// `matches / total`; undefined when `total == 0`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub matches: u64,
    pub total: u64,
}

impl Ratio {
    pub fn value(&self) -> Option<f64> {
        (self.total > 0).then(|| self.matches as f64 / self.total as f64)
    }

    pub fn is_defined(&self) -> bool {
        self.total > 0
    }

    fn add(&mut self, other: Ratio) {
        self.matches += other.matches;
        self.total += other.total;
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.value() {
            Some(v) => write!(f, "{}/{} ({v:.4})", self.matches, self.total),
            None => f.write_str("undefined"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NounOccurrence {
    pub noun: String,
    pub doc_id: String,
    /// 1-based sentence index.
    pub index: usize,
    /// 1-based ordinal among this noun's occurrences in the document.
    pub ordinal: usize,
    /// `None` when the aligner linked no target tokens.
    pub translation: Option<String>,
}

/// Occurrences grouped by document, then by noun, in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AnnotationSet {
    docs: IndexMap<String, IndexMap<String, Vec<NounOccurrence>>>,
}

impl AnnotationSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one occurrence. Occurrences of a noun are kept in sentence order
    /// (stable for equal indices) and ordinals renumbered.
    pub fn add(&mut self, doc_id: &str, index: usize, noun: &str, translation: Option<String>) {
        let group = self
            .docs
            .entry(doc_id.to_string())
            .or_default()
            .entry(noun.to_string())
            .or_default();
        let at = group.partition_point(|o| o.index <= index);
        group.insert(
            at,
            NounOccurrence {
                noun: noun.to_string(),
                doc_id: doc_id.to_string(),
                index,
                ordinal: 0,
                translation,
            },
        );
        for (i, o) in group.iter_mut().enumerate() {
            o.ordinal = i + 1;
        }
    }

    /// Adds a noun whose k-th translation sits in sentence k.
    pub fn add_noun<S: Into<String>>(
        &mut self,
        doc_id: &str,
        noun: &str,
        translations: impl IntoIterator<Item = Option<S>>,
    ) {
        for (i, t) in translations.into_iter().enumerate() {
            self.add(doc_id, i + 1, noun, t.map(Into::into));
        }
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.docs.keys().map(String::as_str)
    }

    /// The proper-noun set of one document.
    pub fn nouns(&self, doc_id: &str) -> Vec<&str> {
        self.docs
            .get(doc_id)
            .map(|m| m.keys().map(String::as_str).collect())
            .unwrap_or_default()
    }

    pub fn occurrences(&self, doc_id: &str, noun: &str) -> &[NounOccurrence] {
        self.docs
            .get(doc_id)
            .and_then(|m| m.get(noun))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn groups(&self) -> impl Iterator<Item = &[NounOccurrence]> {
        self.docs.values().flat_map(|m| m.values().map(Vec::as_slice))
    }

    pub fn len(&self) -> usize {
        self.groups().map(<[_]>::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchOptions {
    pub case_fold: bool,
}

/// NFC, trimmed, optionally lower-cased; empty means absent.
fn normalize(t: Option<&str>, opts: MatchOptions) -> Option<String> {
    let s: String = t?.nfc().collect();
    let s = s.trim();
    if s.is_empty() {
        return None;
    }
    Some(if opts.case_fold { s.to_lowercase() } else { s.to_string() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Exact,
    Fuzzy,
}

fn consistent(first: Option<&String>, later: Option<&String>, metric: Metric) -> bool {
    match (first, later) {
        (Some(a), Some(b)) => match metric {
            Metric::Exact => a == b,
            Metric::Fuzzy => a.contains(b.as_str()) || b.contains(a.as_str()),
        },
        _ => false,
    }
}

fn group_ratio(group: &[NounOccurrence], metric: Metric, opts: MatchOptions) -> Ratio {
    let Some((first, rest)) = group.split_first() else {
        return Ratio::default();
    };
    let first = normalize(first.translation.as_deref(), opts);
    let matches = rest
        .iter()
        .filter(|o| consistent(first.as_ref(), normalize(o.translation.as_deref(), opts).as_ref(), metric))
        .count();
    Ratio {
        matches: matches as u64,
        total: rest.len() as u64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtcrScores {
    pub pooled: Ratio,
    pub per_document: IndexMap<String, Ratio>,
    /// Mean over documents with a defined score.
    pub mean_per_document: Option<f64>,
}

pub fn score(set: &AnnotationSet, metric: Metric, opts: MatchOptions) -> LtcrScores {
    let mut pooled = Ratio::default();
    let mut per_document = IndexMap::new();
    for (doc, nouns) in &set.docs {
        let mut r = Ratio::default();
        for group in nouns.values() {
            r.add(group_ratio(group, metric, opts));
        }
        pooled.add(r);
        per_document.insert(doc.clone(), r);
    }
    let defined: Vec<f64> = per_document.values().filter_map(Ratio::value).collect();
    let mean_per_document = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    LtcrScores {
        pooled,
        per_document,
        mean_per_document,
    }
}

/// Pooled LTCR-1 with default matching.
pub fn ltcr1(set: &AnnotationSet) -> Ratio {
    score(set, Metric::Exact, MatchOptions::default()).pooled
}

/// Pooled LTCR-1_f with default matching.
pub fn ltcr1_fuzzy(set: &AnnotationSet) -> Ratio {
    score(set, Metric::Fuzzy, MatchOptions::default()).pooled
}

/// Closed interval of sentence distances; `hi == None` is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistanceBucket {
    pub lo: usize,
    pub hi: Option<usize>,
}

impl DistanceBucket {
    pub fn contains(&self, d: usize) -> bool {
        d >= self.lo && self.hi.is_none_or(|hi| d <= hi)
    }

    pub fn label(&self) -> String {
        match self.hi {
            Some(hi) if hi == self.lo => format!("{hi}"),
            Some(hi) => format!("{}-{hi}", self.lo),
            None => format!("{}-", self.lo),
        }
    }
}

/// Parses `"0,1-10,11-50,51-"`. Buckets must be non-empty and disjoint.
pub fn parse_buckets(spec: &str) -> Result<Vec<DistanceBucket>, EvalError> {
    let bad = |m: String| EvalError::Buckets(m);
    let mut out: Vec<DistanceBucket> = Vec::new();
    for part in spec.split(',').map(str::trim) {
        if part.is_empty() {
            return Err(bad(format!("empty bucket in '{spec}'")));
        }
        let num = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| bad(format!("'{part}' is not a distance range")))
        };
        let bucket = match part.split_once('-') {
            None => {
                let v = num(part)?;
                DistanceBucket { lo: v, hi: Some(v) }
            }
            Some((lo, hi)) if hi.trim().is_empty() => DistanceBucket { lo: num(lo)?, hi: None },
            Some((lo, hi)) => {
                let (lo, hi) = (num(lo)?, num(hi)?);
                if hi < lo {
                    return Err(bad(format!("'{part}' is reversed")));
                }
                DistanceBucket { lo, hi: Some(hi) }
            }
        };
        out.push(bucket);
    }
    validate_buckets(&out)?;
    Ok(out)
}

pub fn validate_buckets(buckets: &[DistanceBucket]) -> Result<(), EvalError> {
    if buckets.is_empty() {
        return Err(EvalError::Buckets("no buckets".into()));
    }
    for (i, a) in buckets.iter().enumerate() {
        if a.hi.is_some_and(|hi| hi < a.lo) {
            return Err(EvalError::Buckets(format!("'{}' is reversed", a.label())));
        }
        for b in &buckets[i + 1..] {
            let a_end = a.hi.unwrap_or(usize::MAX);
            let b_end = b.hi.unwrap_or(usize::MAX);
            if a.lo <= b_end && b.lo <= a_end {
                return Err(EvalError::Buckets(format!("'{}' overlaps '{}'", a.label(), b.label())));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketScore {
    pub bucket: DistanceBucket,
    pub ratio: Ratio,
}

/// Assigns every repeat occurrence to the bucket holding its sentence
/// distance from the first occurrence; distances outside all buckets are
/// dropped.
pub fn distance_buckets(
    set: &AnnotationSet,
    buckets: &[DistanceBucket],
    metric: Metric,
    opts: MatchOptions,
) -> Result<Vec<BucketScore>, EvalError> {
    validate_buckets(buckets)?;
    let mut scores: Vec<BucketScore> = buckets
        .iter()
        .map(|&bucket| BucketScore {
            bucket,
            ratio: Ratio::default(),
        })
        .collect();
    for group in set.groups() {
        let Some((first, rest)) = group.split_first() else {
            continue;
        };
        let t1 = normalize(first.translation.as_deref(), opts);
        for o in rest {
            let d = o.index - first.index;
            if let Some(s) = scores.iter_mut().find(|s| s.bucket.contains(d)) {
                s.ratio.total += 1;
                let ti = normalize(o.translation.as_deref(), opts);
                if consistent(t1.as_ref(), ti.as_ref(), metric) {
                    s.ratio.matches += 1;
                }
            }
        }
    }
    Ok(scores)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    /// 0-based, inclusive.
    pub start_token: usize,
    /// 0-based, exclusive.
    pub end_token: usize,
    pub noun: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub doc_id: String,
    pub index: usize,
    pub spans: Vec<Span>,
}

fn input_error(source_name: &str, line: usize, message: impl Into<String>) -> EvalError {
    EvalError::Input {
        source_name: source_name.to_string(),
        line,
        message: message.into(),
    }
}

/// One JSON object per line; blank lines are skipped.
pub fn parse_annotations(text: &str, source_name: &str) -> Result<Vec<AnnotationRecord>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: AnnotationRecord =
            serde_json::from_str(line).map_err(|e| input_error(source_name, i + 1, e.to_string()))?;
        if rec.index == 0 {
            return Err(input_error(source_name, i + 1, "sentence index must be >= 1"));
        }
        for s in &rec.spans {
            if s.end_token <= s.start_token {
                return Err(input_error(
                    source_name,
                    i + 1,
                    format!("empty span {}..{} for '{}'", s.start_token, s.end_token, s.noun),
                ));
            }
        }
        out.push(rec);
    }
    Ok(out)
}

type SentenceKey = (String, usize);

fn split_record<'a>(line: &'a str, source_name: &str, lineno: usize) -> Result<(String, usize, &'a str), EvalError> {
    let mut parts = line.splitn(3, '\t');
    let doc = parts.next().unwrap_or_default();
    let idx = parts.next().ok_or_else(|| input_error(source_name, lineno, "expected doc_id<TAB>index<TAB>..."))?;
    let rest = parts.next().unwrap_or("");
    let idx: usize = idx
        .trim()
        .parse()
        .ok()
        .filter(|&i| i >= 1)
        .ok_or_else(|| input_error(source_name, lineno, format!("bad sentence index '{idx}'")))?;
    if doc.is_empty() {
        return Err(input_error(source_name, lineno, "empty doc_id"));
    }
    Ok((doc.to_string(), idx, rest))
}

/// `doc_id<TAB>index<TAB>tok tok ...` lines.
pub fn parse_token_file(text: &str, source_name: &str) -> Result<HashMap<SentenceKey, Vec<String>>, EvalError> {
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (doc, idx, rest) = split_record(line, source_name, i + 1)?;
        let tokens = rest.split_whitespace().map(str::to_string).collect();
        if out.insert((doc, idx), tokens).is_some() {
            return Err(input_error(source_name, i + 1, "duplicate (doc_id, index)"));
        }
    }
    Ok(out)
}

/// Pharaoh links plus tokenized source and target sentences.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AlignmentMap {
    links: HashMap<SentenceKey, Vec<(usize, usize)>>,
    src_tokens: HashMap<SentenceKey, Vec<String>>,
    tgt_tokens: HashMap<SentenceKey, Vec<String>>,
}

impl AlignmentMap {
    /// Parses `doc_id<TAB>index<TAB>i-j i-j ...` lines.
    pub fn parse_links(text: &str, source_name: &str) -> Result<HashMap<SentenceKey, Vec<(usize, usize)>>, EvalError> {
        let mut out = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (doc, idx, rest) = split_record(line, source_name, i + 1)?;
            let mut links = Vec::new();
            for pair in rest.split_whitespace() {
                let parsed = pair
                    .split_once('-')
                    .and_then(|(a, b)| Some((a.parse::<usize>().ok()?, b.parse::<usize>().ok()?)));
                match parsed {
                    Some(l) => links.push(l),
                    None => return Err(input_error(source_name, i + 1, format!("bad link '{pair}'"))),
                }
            }
            if out.insert((doc, idx), links).is_some() {
                return Err(input_error(source_name, i + 1, "duplicate (doc_id, index)"));
            }
        }
        Ok(out)
    }

    /// Checks every link against the token counts of its sentence.
    pub fn new(
        links: HashMap<SentenceKey, Vec<(usize, usize)>>,
        src_tokens: HashMap<SentenceKey, Vec<String>>,
        tgt_tokens: HashMap<SentenceKey, Vec<String>>,
    ) -> Result<Self, EvalError> {
        for ((doc, idx), ls) in &links {
            let loc = |message: String| EvalError::Location {
                doc_id: doc.clone(),
                index: *idx,
                message,
            };
            let key = (doc.clone(), *idx);
            let ns = src_tokens.get(&key).ok_or_else(|| loc("no source tokens".into()))?.len();
            let nt = tgt_tokens.get(&key).ok_or_else(|| loc("no target tokens".into()))?.len();
            if let Some((i, j)) = ls.iter().find(|(i, j)| *i >= ns || *j >= nt) {
                return Err(loc(format!("link {i}-{j} outside {ns}x{nt} tokens")));
            }
        }
        Ok(Self {
            links,
            src_tokens,
            tgt_tokens,
        })
    }

    pub fn links(&self, doc_id: &str, index: usize) -> &[(usize, usize)] {
        self.links
            .get(&(doc_id.to_string(), index))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn source_tokens(&self, doc_id: &str, index: usize) -> Option<&[String]> {
        self.src_tokens.get(&(doc_id.to_string(), index)).map(Vec::as_slice)
    }

    pub fn target_tokens(&self, doc_id: &str, index: usize) -> Option<&[String]> {
        self.tgt_tokens.get(&(doc_id.to_string(), index)).map(Vec::as_slice)
    }
}

/// Resolves each annotated span to the target tokens linked to it, in target
/// order, joined with `joiner`. A span with no links yields an absent
/// translation.
pub fn build_annotations(
    records: &[AnnotationRecord],
    alignment: &AlignmentMap,
    joiner: &str,
) -> Result<AnnotationSet, EvalError> {
    let mut sorted: Vec<&AnnotationRecord> = records.iter().collect();
    // Stable: document order of first appearance, then sentence index.
    let mut doc_order: IndexMap<&str, ()> = IndexMap::new();
    for r in records {
        doc_order.entry(&r.doc_id).or_default();
    }
    sorted.sort_by_key(|r| (doc_order.get_index_of(r.doc_id.as_str()), r.index));

    let mut set = AnnotationSet::new();
    for rec in sorted {
        let loc = |message: String| EvalError::Location {
            doc_id: rec.doc_id.clone(),
            index: rec.index,
            message,
        };
        if rec.spans.is_empty() {
            continue;
        }
        let src = alignment
            .source_tokens(&rec.doc_id, rec.index)
            .ok_or_else(|| loc("sentence not in source token file".into()))?;
        let tgt = alignment.target_tokens(&rec.doc_id, rec.index).unwrap_or(&[]);
        let links = alignment.links(&rec.doc_id, rec.index);
        let mut spans: Vec<&Span> = rec.spans.iter().collect();
        spans.sort_by_key(|s| s.start_token);
        for span in spans {
            if span.end_token > src.len() || span.start_token >= span.end_token {
                return Err(loc(format!(
                    "span {}..{} for '{}' outside {} source tokens",
                    span.start_token,
                    span.end_token,
                    span.noun,
                    src.len()
                )));
            }
            let linked: BTreeSet<usize> = links
                .iter()
                .filter(|(i, _)| (span.start_token..span.end_token).contains(i))
                .map(|&(_, j)| j)
                .collect();
            let translation = if linked.is_empty() {
                None
            } else {
                let words: Vec<&str> = linked.iter().filter_map(|&j| tgt.get(j)).map(String::as_str).collect();
                Some(words.join(joiner))
            };
            set.add(&rec.doc_id, rec.index, &span.noun, translation);
        }
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub value: Option<f64>,
    pub matches: u64,
    pub total: u64,
}

impl From<Ratio> for RatioReport {
    fn from(r: Ratio) -> Self {
        Self {
            value: r.value(),
            matches: r.matches,
            total: r.total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentReport {
    pub doc_id: String,
    pub ltcr1: RatioReport,
    pub ltcr1_f: RatioReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub bucket: String,
    pub ltcr1: RatioReport,
    pub ltcr1_f: RatioReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ltcr1: RatioReport,
    pub ltcr1_f: RatioReport,
    pub ltcr1_mean_per_document: Option<f64>,
    pub ltcr1_f_mean_per_document: Option<f64>,
    pub documents: Vec<DocumentReport>,
    pub buckets: Option<Vec<BucketReport>>,
}

pub fn evaluate(
    set: &AnnotationSet,
    buckets: Option<&[DistanceBucket]>,
    opts: MatchOptions,
) -> Result<EvalReport, EvalError> {
    let exact = score(set, Metric::Exact, opts);
    let fuzzy = score(set, Metric::Fuzzy, opts);
    let documents = exact
        .per_document
        .iter()
        .map(|(doc, r)| DocumentReport {
            doc_id: doc.clone(),
            ltcr1: (*r).into(),
            ltcr1_f: fuzzy.per_document[doc].into(),
        })
        .collect();
    let buckets = match buckets {
        None => None,
        Some(b) => {
            let e = distance_buckets(set, b, Metric::Exact, opts)?;
            let f = distance_buckets(set, b, Metric::Fuzzy, opts)?;
            Some(
                e.into_iter()
                    .zip(f)
                    .map(|(e, f)| BucketReport {
                        bucket: e.bucket.label(),
                        ltcr1: e.ratio.into(),
                        ltcr1_f: f.ratio.into(),
                    })
                    .collect(),
            )
        }
    };
    Ok(EvalReport {
        ltcr1: exact.pooled.into(),
        ltcr1_f: fuzzy.pooled.into(),
        ltcr1_mean_per_document: exact.mean_per_document,
        ltcr1_f_mean_per_document: fuzzy.mean_per_document,
        documents,
        buckets,
    })
}
