use std::fs;
use std::path::{Path, PathBuf};

use assert_cmd::Command;
use serde_json::Value;
use tempfile::TempDir;

fn docmt() -> Command {
    let mut c = Command::cargo_bin("docmt").unwrap();
    c.env("RUST_LOG", "warn");
    c
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, content: &str) -> PathBuf {
        let p = self.path(name);
        fs::write(&p, content).unwrap();
        p
    }

    /// Config plus a script whose fallbacks answer every component.
    fn scripted_config(&self, extra: &str) -> PathBuf {
        self.write(
            "script.json",
            r#"{"fallback": {
                "translator": "译文", "extractor": "\"Ada\" - \"艾达\"", "retriever": "[1, 2]",
                "src_summary": "S", "tgt_summary": "T", "src_merge": "SM", "tgt_merge": "TM",
                "sentence_baseline": "句", "context_baseline": "境", "doc2doc": "1. a\n2. b\n3. c"
            }}"#,
        );
        self.write(
            "config.json",
            &format!(r#"{{"backend": {{"type": "scripted", "script": "script.json"}}, "m": 4, "l": 5, "k": 3{extra}}}"#),
        )
    }

    fn corpus(&self, docs: &[usize]) -> PathBuf {
        let text = docs
            .iter()
            .map(|&n| (1..=n).map(|i| format!("Ada wrote line {i}.\n")).collect::<String>())
            .collect::<Vec<_>>()
            .join("\n");
        self.write("corpus.txt", &text)
    }
}

fn lines(p: &Path) -> Vec<String> {
    fs::read_to_string(p).unwrap().lines().map(str::to_string).collect()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn delta_end_to_end() {
    let f = Fixture::new();
    let cfg = f.scripted_config("");
    let input = f.corpus(&[5, 3]);
    let out = f.path("out.jsonl");
    docmt()
        .args(["translate", "--strategy", "delta", "--jobs", "2"])
        .arg("--config")
        .arg(&cfg)
        .arg("--in")
        .arg(&input)
        .arg("--out")
        .arg(&out)
        .assert()
        .code(0);
    let records = lines(&out);
    assert_eq!(records.len(), 8);
    let first: Value = serde_json::from_str(&records[0]).unwrap();
    assert_eq!(first["doc_id"], "doc-1");
    assert_eq!(first["source"], "Ada wrote line 1.");
    assert_eq!(first["target"], "译文");
    assert_eq!(lines(&f.path("out.jsonl.trace.jsonl")).len(), 2);
    let manifest = json(&f.path("out.jsonl.manifest.json"));
    assert_eq!(manifest["strategy"], "delta");
    assert_eq!(manifest["documents"], 2);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert!(manifest["failed_documents"].as_array().unwrap().is_empty());
}

#[test]
fn reruns_are_byte_identical_except_timestamps() {
    let f = Fixture::new();
    let cfg = f.scripted_config("");
    let input = f.corpus(&[6]);
    let run = |name: &str| {
        let out = f.path(name);
        docmt()
            .arg("translate")
            .arg("--config")
            .arg(&cfg)
            .arg("--in")
            .arg(&input)
            .arg("--out")
            .arg(&out)
            .assert()
            .code(0);
        let mut m = json(&f.path(&format!("{name}.manifest.json")));
        for key in ["started_at", "finished_at", "outputs"] {
            m.as_object_mut().unwrap().remove(key);
        }
        (fs::read(&out).unwrap(), fs::read(f.path(&format!("{name}.trace.jsonl"))).unwrap(), m)
    };
    assert_eq!(run("a.jsonl"), run("b.jsonl"));
}

#[test]
fn config_errors_exit_2() {
    let f = Fixture::new();
    let input = f.corpus(&[2]);
    docmt()
        .arg("translate")
        .arg("--config")
        .arg(f.path("missing.json"))
        .arg("--in")
        .arg(&input)
        .arg("--out")
        .arg(f.path("o.txt"))
        .assert()
        .code(2);
    let bad = f.write("bad.json", r#"{"backend": {"type": "scripted", "script": "s.json"}, "n": 9, "l": 3}"#);
    docmt()
        .arg("translate")
        .arg("--config")
        .arg(&bad)
        .arg("--in")
        .arg(&input)
        .arg("--out")
        .arg(f.path("o.txt"))
        .assert()
        .code(2);
    let cfg = f.scripted_config("");
    docmt()
        .args(["translate", "--strategy", "nope"])
        .arg("--config")
        .arg(&cfg)
        .arg("--in")
        .arg(&input)
        .arg("--out")
        .arg(f.path("o.txt"))
        .assert()
        .code(2);
    assert!(!f.path("o.txt").exists());
}

#[test]
fn doc2doc_records_window_and_missing() {
    let f = Fixture::new();
    let cfg = f.scripted_config("");
    let input = f.corpus(&[4]);
    let out = f.path("d2d.txt");
    docmt()
        .args(["translate", "--strategy", "doc2doc", "--window", "10"])
        .arg("--config")
        .arg(&cfg)
        .arg("--in")
        .arg(&input)
        .arg("--out")
        .arg(&out)
        .assert()
        .code(0);
    let manifest = json(&f.path("d2d.txt.manifest.json"));
    assert_eq!(manifest["window"], 10);
    // The scripted reply numbers only three of the four lines.
    assert_eq!(manifest["missing_sentences"], 1);
    assert_eq!(lines(&out), vec!["a", "b", "c", ""]);
}

#[test]
fn baselines_run() {
    let f = Fixture::new();
    let cfg = f.scripted_config("");
    let input = f.corpus(&[3, 2]);
    for (strategy, word) in [("sentence", "句"), ("context", "境")] {
        let out = f.path(&format!("{strategy}.txt"));
        docmt()
            .args(["translate", "--strategy", strategy])
            .arg("--config")
            .arg(&cfg)
            .arg("--in")
            .arg(&input)
            .arg("--out")
            .arg(&out)
            .assert()
            .code(0);
        assert_eq!(lines(&out), vec![word, word, word, "", word, word]);
    }
}

#[test]
fn partial_failure_exits_1_and_resume_completes() {
    let f = Fixture::new();
    f.write(
        "script.json",
        r#"{"queues": {"translator": ["a1", "a2", "b1"]},
            "fallback": {"extractor": "N/A", "retriever": "[1]"}}"#,
    );
    let cfg = f.write("config.json", r#"{"backend": {"type": "scripted", "script": "script.json"}}"#);
    let input = f.corpus(&[2, 3]);
    let out = f.path("out.jsonl");
    docmt()
        .arg("translate")
        .arg("--config")
        .arg(&cfg)
        .arg("--in")
        .arg(&input)
        .arg("--out")
        .arg(&out)
        .assert()
        .code(1);
    assert_eq!(lines(&out).len(), 2);
    let manifest = json(&f.path("out.jsonl.manifest.json"));
    assert_eq!(manifest["failed_documents"][0], "doc-2");
    let cp = f.path("out.jsonl.checkpoints/doc-2.checkpoint.json");
    assert_eq!(json(&cp)["next_index"], 2);

    f.write(
        "script.json",
        r#"{"queues": {"translator": ["a1", "a2", "b2", "b3"]},
            "fallback": {"extractor": "N/A", "retriever": "[1]"}}"#,
    );
    docmt()
        .arg("translate")
        .arg("--config")
        .arg(&cfg)
        .arg("--in")
        .arg(&input)
        .arg("--out")
        .arg(&out)
        .arg("--resume")
        .arg(&cp)
        .assert()
        .code(0);
    let targets: Vec<String> = lines(&out)
        .iter()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["target"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(targets, vec!["a1", "a2", "b1", "b2", "b3"]);
}

fn eval_inputs(f: &Fixture) -> (PathBuf, PathBuf, PathBuf, PathBuf) {
    // Noun A in sentences 1-3 translated x, x, y; noun B in 4-5 as u, v.
    let ann = (1..=5)
        .map(|i| {
            let noun = if i <= 3 { "A" } else { "B" };
            format!(r#"{{"doc_id":"d","index":{i},"spans":[{{"start_token":0,"end_token":1,"noun":"{noun}"}}]}}"#)
        })
        .collect::<Vec<_>>()
        .join("\n");
    let src = (1..=5).map(|i| format!("d\t{i}\tN here\n")).collect::<String>();
    let tgt = ["x", "x", "y", "u", "v"]
        .iter()
        .enumerate()
        .map(|(i, t)| format!("d\t{}\t{t} 这里\n", i + 1))
        .collect::<String>();
    let align = (1..=5).map(|i| format!("d\t{i}\t0-0 1-1\n")).collect::<String>();
    (
        f.write("ann.jsonl", &ann),
        f.write("align.txt", &align),
        f.write("src.tok", &src),
        f.write("tgt.tok", &tgt),
    )
}

#[test]
fn evaluate_reports_one_third() {
    let f = Fixture::new();
    let (ann, align, src, tgt) = eval_inputs(&f);
    let out = docmt()
        .arg("evaluate")
        .arg("--annotations")
        .arg(&ann)
        .arg("--alignment")
        .arg(&align)
        .arg("--src-tokens")
        .arg(&src)
        .arg("--tgt-tokens")
        .arg(&tgt)
        .args(["--buckets", "1-1,2-"])
        .assert()
        .code(0)
        .get_output()
        .stdout
        .clone();
    let report: Value = serde_json::from_slice(&out).unwrap();
    assert_eq!(report["ltcr1"]["matches"], 1);
    assert_eq!(report["ltcr1"]["total"], 3);
    assert!((report["ltcr1"]["value"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(report["buckets"][0]["ltcr1"]["total"], 2);
    assert_eq!(report["buckets"][1]["ltcr1"]["matches"], 0);
}

#[test]
fn evaluate_empty_and_malformed() {
    let f = Fixture::new();
    let (_, align, src, tgt) = eval_inputs(&f);
    let empty = f.write("empty.jsonl", "");
    let out = docmt()
        .arg("evaluate")
        .arg("--annotations")
        .arg(&empty)
        .arg("--alignment")
        .arg(&align)
        .arg("--src-tokens")
        .arg(&src)
        .arg("--tgt-tokens")
        .arg(&tgt)
        .assert()
        .code(0)
        .get_output()
        .stdout
        .clone();
    let report: Value = serde_json::from_slice(&out).unwrap();
    assert!(report["ltcr1"]["value"].is_null());
    assert!(report["ltcr1_f"]["value"].is_null());

    let bad = f.write("bad.txt", "d\t1\t0-0\nd\t2\t0_1\n");
    let assert = docmt()
        .arg("evaluate")
        .arg("--annotations")
        .arg(&empty)
        .arg("--alignment")
        .arg(&bad)
        .arg("--src-tokens")
        .arg(&src)
        .arg("--tgt-tokens")
        .arg(&tgt)
        .assert()
        .code(2);
    let stderr = String::from_utf8_lossy(&assert.get_output().stderr).to_string();
    assert!(stderr.contains("bad.txt:2"), "{stderr}");
}

#[test]
fn evaluate_from_hypotheses() {
    let f = Fixture::new();
    let (ann, align, src, _) = eval_inputs(&f);
    let hyp = ["x 这里", "x 这里", "y 这里", "u 这里", "v 这里"]
        .iter()
        .enumerate()
        .map(|(i, t)| format!(r#"{{"doc_id":"d","index":{},"target":"{t}"}}"#, i + 1))
        .collect::<Vec<_>>()
        .join("\n");
    let hyp = f.write("hyp.jsonl", &hyp);
    let out = docmt()
        .arg("evaluate")
        .arg("--annotations")
        .arg(&ann)
        .arg("--alignment")
        .arg(&align)
        .arg("--src-tokens")
        .arg(&src)
        .arg("--hyp")
        .arg(&hyp)
        .assert()
        .code(0)
        .get_output()
        .stdout
        .clone();
    let report: Value = serde_json::from_slice(&out).unwrap();
    assert_eq!(report["ltcr1"]["matches"], 1);
}

#[test]
fn inspect_snapshots() {
    let f = Fixture::new();
    let cfg = f.scripted_config("");
    let input = f.corpus(&[12]);
    let out = f.path("out.jsonl");
    docmt()
        .arg("translate")
        .arg("--config")
        .arg(&cfg)
        .arg("--in")
        .arg(&input)
        .arg("--out")
        .arg(&out)
        .assert()
        .code(0);
    let trace = f.path("out.jsonl.trace.jsonl");
    let inspect = |at: &str| {
        let a = docmt().arg("inspect").arg("--trace").arg(&trace).args(["--at", at]).assert();
        let o = a.get_output();
        (o.status.code(), String::from_utf8_lossy(&o.stdout).to_string())
    };
    let (code, text) = inspect("5");
    assert_eq!(code, Some(0));
    assert!(text.contains("after sentence 5 of 12"));
    assert!(text.contains("Short-term memory (3/3)"));
    assert!(text.contains("[5] Ada wrote line 5."));
    assert!(!text.contains("[6]"));
    assert!(text.contains("\"Ada\" - \"艾达\""));
    let (code, text) = inspect("0");
    assert_eq!(code, Some(0));
    assert!(text.contains("Proper noun records (0)"));
    assert!(text.contains("Long-term memory (0/5)"));
    assert_eq!(inspect("99").0, Some(2));
}
