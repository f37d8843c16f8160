//! Documents, sentence pairs and corpus files.
//!
//! Two on-disk formats are supported:
//!
//! * plain text: one sentence per line, a blank line separates documents;
//! * line records: one JSON object per line with `doc_id`, `index` (1-based),
//!   `source` and optionally `target` and `lang`.

use std::collections::HashMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DocError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Input {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("alignment error for document '{doc_id}': {expected} source sentences vs {actual} hypotheses")]
    Alignment {
        doc_id: String,
        expected: usize,
        actual: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    PlainText,
    LineRecord,
}

impl CorpusFormat {
    /// `.jsonl` and `.ndjson` are line records, anything else is plain text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => CorpusFormat::LineRecord,
            _ => CorpusFormat::PlainText,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDocument {
    pub doc_id: String,
    pub sentences: Vec<String>,
    #[serde(default)]
    pub lang: String,
}

impl SourceDocument {
    pub fn new(doc_id: impl Into<String>, sentences: Vec<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            sentences,
            lang: String::new(),
        }
    }

    pub fn with_lang(mut self, lang: impl Into<String>) -> Self {
        self.lang = lang.into();
        self
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Sentence at 1-based `index`.
    pub fn sentence(&self, index: usize) -> Option<&str> {
        index
            .checked_sub(1)
            .and_then(|i| self.sentences.get(i))
            .map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetDocument {
    pub doc_id: String,
    pub sentences: Vec<String>,
    #[serde(default)]
    pub lang: String,
}

impl TargetDocument {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    pub index: usize,
    pub source: String,
    pub target: String,
}

impl SentencePair {
    pub fn new(index: usize, source: impl Into<String>, target: impl Into<String>) -> Self {
        debug_assert!(index >= 1, "sentence indices are 1-based");
        Self {
            index,
            source: source.into(),
            target: target.into(),
        }
    }
}

/// Separator for concatenating text in `lang`: empty for scripts written
/// without spaces, otherwise a single space.
pub fn joiner_for(lang: &str) -> &'static str {
    let base = lang.split(['-', '_']).next().unwrap_or("").to_ascii_lowercase();
    match base.as_str() {
        "zh" | "ja" | "th" | "lo" | "km" | "my" => "",
        _ => " ",
    }
}

/// Pairs a source document with hypotheses, which must cover every sentence.
pub fn assemble_target(
    doc: &SourceDocument,
    hyps: Vec<String>,
    lang: &str,
) -> Result<TargetDocument, DocError> {
    if hyps.len() != doc.len() {
        return Err(DocError::Alignment {
            doc_id: doc.doc_id.clone(),
            expected: doc.len(),
            actual: hyps.len(),
        });
    }
    Ok(TargetDocument {
        doc_id: doc.doc_id.clone(),
        sentences: hyps,
        lang: lang.to_string(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct LineRecord {
    doc_id: String,
    index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target: Option<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    lang: String,
}

fn read_text(path: &Path) -> Result<String, DocError> {
    let bytes = fs::read(path).map_err(|source| DocError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    String::from_utf8(bytes).map_err(|e| DocError::Input {
        path: path.to_path_buf(),
        line: 0,
        message: format!("invalid UTF-8: {e}"),
    })
}

/// Loads source documents in file order.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<SourceDocument>, DocError> {
    let text = read_text(path)?;
    match format {
        CorpusFormat::PlainText => Ok(parse_plain(&text)
            .into_iter()
            .map(|(doc_id, sentences)| SourceDocument {
                doc_id,
                sentences,
                lang: String::new(),
            })
            .collect()),
        CorpusFormat::LineRecord => Ok(parse_records(path, &text, Side::Source)?
            .into_iter()
            .map(|(doc_id, lang, sentences)| SourceDocument {
                doc_id,
                sentences,
                lang,
            })
            .collect()),
    }
}

/// Loads the `target` side of a corpus file (plain text files are read as-is).
pub fn load_targets(path: &Path, format: CorpusFormat) -> Result<Vec<TargetDocument>, DocError> {
    let text = read_text(path)?;
    match format {
        CorpusFormat::PlainText => Ok(parse_plain(&text)
            .into_iter()
            .map(|(doc_id, sentences)| TargetDocument {
                doc_id,
                sentences,
                lang: String::new(),
            })
            .collect()),
        CorpusFormat::LineRecord => Ok(parse_records(path, &text, Side::Target)?
            .into_iter()
            .map(|(doc_id, lang, sentences)| TargetDocument {
                doc_id,
                sentences,
                lang,
            })
            .collect()),
    }
}

fn plain_doc_id(ordinal: usize) -> String {
    format!("doc-{ordinal}")
}

fn parse_plain(text: &str) -> Vec<(String, Vec<String>)> {
    let mut docs = Vec::new();
    let mut current: Vec<String> = Vec::new();
    for line in text.lines() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            if !current.is_empty() {
                docs.push((plain_doc_id(docs.len() + 1), std::mem::take(&mut current)));
            }
        } else {
            current.push(line.to_string());
        }
    }
    if !current.is_empty() {
        docs.push((plain_doc_id(docs.len() + 1), current));
    }
    docs
}

#[derive(Clone, Copy)]
enum Side {
    Source,
    Target,
}

type ParsedDoc = (String, String, Vec<String>);

fn parse_records(path: &Path, text: &str, side: Side) -> Result<Vec<ParsedDoc>, DocError> {
    let err = |line: usize, message: String| DocError::Input {
        path: path.to_path_buf(),
        line,
        message,
    };

    struct Group {
        lang: String,
        // index -> (line number, sentence)
        sentences: HashMap<usize, (usize, String)>,
    }
    let mut groups: IndexMap<String, Group> = IndexMap::new();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        if raw.trim().is_empty() {
            continue;
        }
        let rec: LineRecord =
            serde_json::from_str(raw).map_err(|e| err(line_no, format!("malformed record: {e}")))?;
        if rec.index == 0 {
            return Err(err(line_no, "sentence index must be >= 1".into()));
        }
        let sentence = match side {
            Side::Source => rec.source,
            Side::Target => rec.target,
        };
        let key = match side {
            Side::Source => "source",
            Side::Target => "target",
        };
        let sentence = sentence.ok_or_else(|| err(line_no, format!("missing field `{key}`")))?;
        if sentence.contains('\n') || sentence.contains('\r') {
            return Err(err(line_no, "sentence contains a line break".into()));
        }
        let group = groups.entry(rec.doc_id.clone()).or_insert_with(|| Group {
            lang: rec.lang.clone(),
            sentences: HashMap::new(),
        });
        if group.sentences.contains_key(&rec.index) {
            return Err(err(
                line_no,
                format!("duplicate (doc_id, index) = ({}, {})", rec.doc_id, rec.index),
            ));
        }
        group.sentences.insert(rec.index, (line_no, sentence));
    }

    let mut docs = Vec::with_capacity(groups.len());
    for (doc_id, mut group) in groups {
        let n = group.sentences.len();
        let mut sentences = Vec::with_capacity(n);
        for index in 1..=n {
            match group.sentences.remove(&index) {
                Some((_, s)) => sentences.push(s),
                None => {
                    // Some index above n must exist; report the first one in file order.
                    let line = group
                        .sentences
                        .values()
                        .map(|(l, _)| *l)
                        .min()
                        .unwrap_or(0);
                    return Err(err(
                        line,
                        format!("non-contiguous index in document '{doc_id}': missing {index}"),
                    ));
                }
            }
        }
        docs.push((doc_id, group.lang, sentences));
    }
    Ok(docs)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, DocError> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|source| DocError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn io_ctx(path: &Path) -> impl Fn(io::Error) -> DocError + '_ {
    move |source| DocError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Plain-text output cannot carry line breaks inside a sentence.
fn single_line(s: &str) -> String {
    if s.contains(['\n', '\r']) {
        s.split(['\n', '\r'])
            .filter(|p| !p.is_empty())
            .collect::<Vec<_>>()
            .join(" ")
    } else {
        s.to_string()
    }
}

/// Writes target documents. With `sources` supplied, line records also carry
/// the paired `source` sentence (matched by doc_id).
pub fn write_corpus(
    docs: &[TargetDocument],
    sources: Option<&[SourceDocument]>,
    path: &Path,
    format: CorpusFormat,
) -> Result<(), DocError> {
    let mut out = create(path)?;
    let ctx = io_ctx(path);
    match format {
        CorpusFormat::PlainText => {
            for (i, doc) in docs.iter().enumerate() {
                if i > 0 {
                    out.write_all(b"\n").map_err(&ctx)?;
                }
                for s in &doc.sentences {
                    writeln!(out, "{}", single_line(s)).map_err(&ctx)?;
                }
            }
        }
        CorpusFormat::LineRecord => {
            let by_id: HashMap<&str, &SourceDocument> = sources
                .unwrap_or_default()
                .iter()
                .map(|d| (d.doc_id.as_str(), d))
                .collect();
            for doc in docs {
                let src = by_id.get(doc.doc_id.as_str());
                for (i, s) in doc.sentences.iter().enumerate() {
                    let rec = LineRecord {
                        doc_id: doc.doc_id.clone(),
                        index: i + 1,
                        source: src.and_then(|d| d.sentences.get(i)).cloned(),
                        target: Some(s.clone()),
                        lang: doc.lang.clone(),
                    };
                    serde_json::to_writer(&mut out, &rec).map_err(|e| ctx(e.into()))?;
                    out.write_all(b"\n").map_err(&ctx)?;
                }
            }
        }
    }
    out.flush().map_err(&ctx)
}

/// Writes source documents (the inverse of [`load_corpus`]).
pub fn write_sources(
    docs: &[SourceDocument],
    path: &Path,
    format: CorpusFormat,
) -> Result<(), DocError> {
    let mut out = create(path)?;
    let ctx = io_ctx(path);
    match format {
        CorpusFormat::PlainText => {
            for (i, doc) in docs.iter().enumerate() {
                if i > 0 {
                    out.write_all(b"\n").map_err(&ctx)?;
                }
                for s in &doc.sentences {
                    writeln!(out, "{}", single_line(s)).map_err(&ctx)?;
                }
            }
        }
        CorpusFormat::LineRecord => {
            for doc in docs {
                for (i, s) in doc.sentences.iter().enumerate() {
                    let rec = LineRecord {
                        doc_id: doc.doc_id.clone(),
                        index: i + 1,
                        source: Some(s.clone()),
                        target: None,
                        lang: doc.lang.clone(),
                    };
                    serde_json::to_writer(&mut out, &rec).map_err(|e| ctx(e.into()))?;
                    out.write_all(b"\n").map_err(&ctx)?;
                }
            }
        }
    }
    out.flush().map_err(&ctx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp_with(contents: &str, name: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(name);
        fs::write(&path, contents).unwrap();
        (dir, path)
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let (_d, p) = tmp_with("", "c.txt");
        assert!(load_corpus(&p, CorpusFormat::PlainText).unwrap().is_empty());
        let (_d, p) = tmp_with("", "c.jsonl");
        assert!(load_corpus(&p, CorpusFormat::LineRecord).unwrap().is_empty());
    }

    #[test]
    fn plain_text_blocks() {
        let (_d, p) = tmp_with("a\nb\nc\n\nd\ne\n", "c.txt");
        let docs = load_corpus(&p, CorpusFormat::PlainText).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[0].len(), 3);
        assert_eq!(docs[1].len(), 2);
        assert_eq!(docs[1].sentences, vec!["d", "e"]);
        assert_eq!(docs[0].sentence(1), Some("a"));
        assert_eq!(docs[0].sentence(0), None);
    }

    #[test]
    fn non_contiguous_index_is_rejected() {
        let (_d, p) = tmp_with(
            "{\"doc_id\":\"a\",\"index\":1,\"source\":\"x\"}\n{\"doc_id\":\"a\",\"index\":3,\"source\":\"y\"}\n",
            "c.jsonl",
        );
        let err = load_corpus(&p, CorpusFormat::LineRecord).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("non-contiguous index"), "{msg}");
        assert!(msg.contains(":2:"), "{msg}");
    }

    #[test]
    fn duplicate_and_missing_fields_name_the_line() {
        let (_d, p) = tmp_with(
            "{\"doc_id\":\"a\",\"index\":1,\"source\":\"x\"}\n{\"doc_id\":\"a\",\"index\":1,\"source\":\"y\"}\n",
            "c.jsonl",
        );
        let msg = load_corpus(&p, CorpusFormat::LineRecord).unwrap_err().to_string();
        assert!(msg.contains(":2:") && msg.contains("duplicate"), "{msg}");

        let (_d, p) = tmp_with("{\"doc_id\":\"a\",\"index\":1}\n", "c.jsonl");
        let msg = load_corpus(&p, CorpusFormat::LineRecord).unwrap_err().to_string();
        assert!(msg.contains(":1:") && msg.contains("source"), "{msg}");
    }

    #[test]
    fn out_of_order_records_are_sorted() {
        let (_d, p) = tmp_with(
            "{\"doc_id\":\"a\",\"index\":2,\"source\":\"y\"}\n{\"doc_id\":\"b\",\"index\":1,\"source\":\"z\"}\n{\"doc_id\":\"a\",\"index\":1,\"source\":\"x\"}\n",
            "c.jsonl",
        );
        let docs = load_corpus(&p, CorpusFormat::LineRecord).unwrap();
        assert_eq!(docs[0].doc_id, "a");
        assert_eq!(docs[0].sentences, vec!["x", "y"]);
        assert_eq!(docs[1].doc_id, "b");
    }

    #[test]
    fn assemble_checks_length() {
        let doc = SourceDocument::new("d", vec!["a".into(), "b".into(), "c".into()]);
        let t = assemble_target(&doc, vec!["1".into(), "2".into(), "3".into()], "zh").unwrap();
        assert_eq!(t.sentences, vec!["1", "2", "3"]);
        match assemble_target(&doc, vec!["1".into(), "2".into()], "zh") {
            Err(DocError::Alignment {
                expected, actual, ..
            }) => assert_eq!((expected, actual), (3, 2)),
            other => panic!("{other:?}"),
        }
        let empty = SourceDocument::new("e", vec![]);
        assert!(assemble_target(&empty, vec![], "zh").unwrap().is_empty());
    }

    #[test]
    fn write_empty_and_small() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("o.jsonl");
        write_corpus(&[], None, &p, CorpusFormat::LineRecord).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "");

        let t = TargetDocument {
            doc_id: "d".into(),
            sentences: vec!["x".into(), "y".into()],
            lang: String::new(),
        };
        write_corpus(std::slice::from_ref(&t), None, &p, CorpusFormat::LineRecord).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].contains("\"index\":1") && lines[0].contains("\"x\""));
        assert!(lines[1].contains("\"index\":2") && lines[1].contains("\"y\""));
    }

    #[test]
    fn plain_output_flattens_line_breaks() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("o.txt");
        let t = TargetDocument {
            doc_id: "d".into(),
            sentences: vec!["a\nb".into()],
            lang: String::new(),
        };
        write_corpus(&[t], None, &p, CorpusFormat::PlainText).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "a b\n");
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(CorpusFormat::from_path(Path::new("x.jsonl")), CorpusFormat::LineRecord);
        assert_eq!(CorpusFormat::from_path(Path::new("x.txt")), CorpusFormat::PlainText);
    }
}
