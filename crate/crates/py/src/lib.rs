//! Python bindings: memory records, a scripted backend, the translation loop,
//! the consistency metrics and the reply parsers.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use docmt_core::agent;
use docmt_core::doc::load_corpus as core_load_corpus;
use docmt_core::eval;
use docmt_core::{
    AgentConfig, AnnotationSet, CorpusFormat, DocumentTranslator, LanguagePair, MatchMode, SourceDocument,
    TemplateSet,
};

fn match_mode(case_insensitive: bool) -> MatchMode {
    if case_insensitive {
        MatchMode::CaseInsensitive
    } else {
        MatchMode::CaseSensitive
    }
}

/// First-translation map from source proper nouns to target renderings.
#[pyclass(name = "ProperNounRecords")]
#[derive(Default)]
struct PyRecords {
    inner: docmt_core::ProperNounRecords,
}

#[pymethods]
impl PyRecords {
    #[new]
    fn new() -> Self {
        Self::default()
    }

    /// Inserts pairs whose noun is new; returns how many were added.
    fn insert(&mut self, pairs: Vec<(String, String)>) -> usize {
        self.inner.insert(pairs)
    }

    #[pyo3(signature = (sentence, case_insensitive = false))]
    fn lookup(&self, sentence: &str, case_insensitive: bool) -> Vec<(String, String)> {
        self.inner.lookup(sentence, match_mode(case_insensitive))
    }

    fn get(&self, noun: &str) -> Option<String> {
        self.inner.get(noun).map(str::to_string)
    }

    fn items(&self) -> Vec<(String, String)> {
        self.inner.iter().map(|(n, t)| (n.to_string(), t.to_string())).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __contains__(&self, noun: &str) -> bool {
        self.inner.contains(noun)
    }
}

/// Replays canned replies per component tag.
#[pyclass(name = "ScriptedBackend")]
#[derive(Default)]
struct PyScriptedBackend {
    inner: docmt_core::ScriptedBackend,
}

#[pymethods]
impl PyScriptedBackend {
    #[new]
    fn new() -> Self {
        Self::default()
    }

    fn push(&self, tag: &str, reply: String) {
        self.inner.push(tag, reply);
    }

    fn set_fallback(&self, tag: &str, reply: String) {
        self.inner.set_fallback(tag, reply);
    }

    fn call_count(&self, tag: &str) -> usize {
        self.inner.call_count(tag)
    }

    /// `(tag, prompt)` for every call so far.
    fn calls(&self) -> Vec<(String, String)> {
        self.inner.calls().into_iter().map(|c| (c.tag, c.prompt)).collect()
    }
}

/// Translates one document; returns the hypotheses and the JSON trace.
#[pyfunction]
#[pyo3(signature = (
    sentences, backend, doc_id = "doc", m = 20, l = 20, n = 2, k = 3,
    src_lang = "en", tgt_lang = "zh", use_records = true
))]
#[allow(clippy::too_many_arguments)]
fn translate_document(
    py: Python<'_>,
    sentences: Vec<String>,
    backend: &PyScriptedBackend,
    doc_id: &str,
    m: usize,
    l: usize,
    n: usize,
    k: usize,
    src_lang: &str,
    tgt_lang: &str,
    use_records: bool,
) -> PyResult<(Vec<String>, String)> {
    let config = AgentConfig {
        summary_interval: m,
        long_term_capacity: l,
        retrieve_count: n,
        short_term_capacity: k,
        langs: LanguagePair::new(src_lang, tgt_lang),
        use_records,
        ..AgentConfig::default()
    };
    config.validate().map_err(|e| PyValueError::new_err(e.to_string()))?;
    let doc = SourceDocument::new(doc_id, sentences).with_lang(src_lang);
    let templates = TemplateSet::builtin();
    let inner = &backend.inner;
    let (target, trace) = py
        .detach(|| DocumentTranslator::new(inner, &templates, config).translate_document(&doc))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let trace = serde_json::to_string(&trace).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((target.sentences, trace))
}

type Groups = Vec<(String, String, Vec<Option<String>>)>;

fn annotation_set(groups: Groups) -> AnnotationSet {
    let mut set = AnnotationSet::new();
    for (doc, noun, translations) in groups {
        set.add_noun(&doc, &noun, translations);
    }
    set
}

/// `(matches, total)` of LTCR-1 over `(doc_id, noun, translations)` groups.
#[pyfunction]
fn ltcr1(groups: Groups) -> (u64, u64) {
    let r = eval::ltcr1(&annotation_set(groups));
    (r.matches, r.total)
}

/// `(matches, total)` of the substring variant.
#[pyfunction]
fn ltcr1_fuzzy(groups: Groups) -> (u64, u64) {
    let r = eval::ltcr1_fuzzy(&annotation_set(groups));
    (r.matches, r.total)
}

/// `[(doc_id, sentences)]`; `.jsonl` files are read as line records.
#[pyfunction]
fn load_corpus(path: PathBuf) -> PyResult<Vec<(String, Vec<String>)>> {
    let docs = core_load_corpus(&path, CorpusFormat::from_path(&path)).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(docs.into_iter().map(|d| (d.doc_id, d.sentences)).collect())
}

#[pyfunction]
fn parse_extractor_response(text: &str) -> Option<Vec<(String, String)>> {
    agent::parse_extractor_response(text)
}

#[pyfunction]
fn parse_retriever_response(text: &str) -> Option<Vec<i64>> {
    agent::parse_retriever_response(text)
}

#[pymodule]
fn docmt(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRecords>()?;
    m.add_class::<PyScriptedBackend>()?;
    m.add_function(wrap_pyfunction!(translate_document, m)?)?;
    m.add_function(wrap_pyfunction!(ltcr1, m)?)?;
    m.add_function(wrap_pyfunction!(ltcr1_fuzzy, m)?)?;
    m.add_function(wrap_pyfunction!(load_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(parse_extractor_response, m)?)?;
    m.add_function(wrap_pyfunction!(parse_retriever_response, m)?)?;
    Ok(())
}
