use std::sync::atomic::{AtomicBool, Ordering};

use proptest::prelude::*;

use docmt_core::baselines::{context_baseline, count_missing, doc2doc_baseline, sentence_baseline};
use docmt_core::doc::{load_corpus, write_sources};
use docmt_core::orchestrator::checkpoint_path;
use docmt_core::{
    Agent, AgentConfig, ChatBackend, ChatRequest, Checkpoint, CorpusFormat, DocumentTranslator, GenerationSettings,
    LanguagePair, LlmError, RunError, ScriptedBackend, SourceDocument, TemplateSet,
};

fn doc(n: usize) -> SourceDocument {
    SourceDocument::new("doc", (1..=n).map(|i| format!("Line {i} about Ada.")).collect())
}

fn backend() -> ScriptedBackend {
    let b = ScriptedBackend::new();
    b.set_responder("translator", |r| {
        let p = r.last_user_content();
        let src = p.rsplit("<English source> ").next().unwrap_or("");
        let history = p.contains("\"Ada\" - \"艾达\"");
        format!("{}{}", if history { "[R]" } else { "" }, src.lines().next().unwrap_or(""))
    });
    b.set_responder("retriever", |r| format!("[{}]", r.last_user_content().len() % 4 + 1));
    b.set_fallback("extractor", "\"Ada\" - \"艾达\"");
    for tag in ["src_summary", "tgt_summary", "src_merge", "tgt_merge"] {
        b.set_fallback(tag, tag);
    }
    b
}

fn config() -> AgentConfig {
    AgentConfig {
        summary_interval: 3,
        long_term_capacity: 4,
        retrieve_count: 2,
        short_term_capacity: 2,
        checkpoint_interval: 2,
        ..AgentConfig::default()
    }
}

struct FailAt<'a> {
    inner: &'a ScriptedBackend,
    marker: String,
    fired: AtomicBool,
}

impl ChatBackend for FailAt<'_> {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        if request.tag == "translator"
            && request.last_user_content().ends_with(&self.marker)
            && !self.fired.swap(true, Ordering::SeqCst)
        {
            return Err(LlmError::Api {
                status: 400,
                body: "boom".into(),
            });
        }
        self.inner.complete(request)
    }

    fn describe(&self) -> String {
        "fail-at".into()
    }
}

#[test]
fn resume_matches_uninterrupted_at_every_break_point() {
    let t = TemplateSet::builtin();
    let d = doc(9);
    let b = backend();
    let reference = DocumentTranslator::new(&b, &t, config()).translate_document(&d).unwrap();
    assert!(reference.0.sentences[1].starts_with("[R]"));
    for k in 1..=9 {
        let inner = backend();
        let flaky = FailAt {
            inner: &inner,
            marker: format!("<English source> Line {k} about Ada.\n\n<Chinese translation>"),
            fired: AtomicBool::new(false),
        };
        let cp = match DocumentTranslator::new(&flaky, &t, config()).translate_document(&d) {
            Err(RunError::Failed {
                last_completed,
                checkpoint,
                ..
            }) => {
                assert_eq!(last_completed, k - 1);
                *checkpoint
            }
            other => panic!("break at {k}: {other:?}"),
        };
        let b2 = backend();
        let resumed = DocumentTranslator::new(&b2, &t, config()).resume(cp, &d).unwrap();
        assert_eq!(resumed, reference, "break at {k}");
    }
}

#[test]
fn periodic_checkpoints_follow_the_interval() {
    let t = TemplateSet::builtin();
    let dir = tempfile::tempdir().unwrap();
    let b = backend();
    DocumentTranslator::new(&b, &t, config())
        .with_checkpoint_dir(dir.path())
        .translate_document(&doc(5))
        .unwrap();
    let cp = Checkpoint::load(&checkpoint_path(dir.path(), "doc")).unwrap();
    assert_eq!(cp.next_index, 5);
    assert_eq!(cp.hypotheses.len(), 4);
}

#[test]
fn baselines_keep_length() {
    let t = TemplateSet::builtin();
    let b = ScriptedBackend::new();
    b.set_fallback("sentence_baseline", "s");
    b.set_fallback("context_baseline", "c");
    let a = Agent::new(&b, &t, GenerationSettings::default(), LanguagePair::default());
    for n in [0, 1, 7] {
        assert_eq!(sentence_baseline(&a, &doc(n)).unwrap().len(), n);
        assert_eq!(context_baseline(&a, &doc(n)).unwrap().len(), n);
    }
}

#[test]
fn doc2doc_window_one_matches_sentence_call_count() {
    let t = TemplateSet::builtin();
    let b = ScriptedBackend::new();
    b.set_fallback("doc2doc", "1. x");
    b.set_fallback("sentence_baseline", "x");
    let a = Agent::new(&b, &t, GenerationSettings::default(), LanguagePair::default());
    let out = doc2doc_baseline(&a, &doc(6), 1).unwrap();
    sentence_baseline(&a, &doc(6)).unwrap();
    assert_eq!(b.call_count("doc2doc"), b.call_count("sentence_baseline"));
    assert_eq!(count_missing(&out.run), 0);
}

fn arb_corpus() -> impl Strategy<Value = Vec<SourceDocument>> {
    let sentence = "[^\r\n\u{85}\u{2028}\u{2029}]{0,20}";
    proptest::collection::vec(proptest::collection::vec(sentence, 1..5), 0..6).prop_map(|docs| {
        docs.into_iter()
            .enumerate()
            .map(|(i, s)| SourceDocument::new(format!("d{i}"), s).with_lang("en"))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn line_records_round_trip(corpus in arb_corpus()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        write_sources(&corpus, &path, CorpusFormat::LineRecord).unwrap();
        prop_assert_eq!(load_corpus(&path, CorpusFormat::LineRecord).unwrap(), corpus);
    }
}
