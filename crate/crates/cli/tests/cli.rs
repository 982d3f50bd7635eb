use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use haykit::corpus::{load_qa_samples, Corpus};
use haykit::engine::{EngineParams, RetrievalEngine, RetrieverSpec};
use haykit::metrics::{recall_at_n, ndcg_at_n};
use haykit::retrieval::SparseIndex;
use haykit::tokenize::{ExternalTokenizer, ReferenceTokenizer, Tokenizer};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn haykit(dir: &Path, args: &[&str]) -> Output {
    let corpus = fixture("corpus.jsonl");
    let qa = fixture("qa.jsonl");
    let index = dir.join("index");
    Command::new(env!("CARGO_BIN_EXE_haykit"))
        .arg("--corpus")
        .arg(&corpus)
        .arg("--qa")
        .arg(&qa)
        .arg("--index-dir")
        .arg(&index)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_str(&stdout(o)).unwrap()
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(haykit(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(haykit(dir.path(), &["ingest", "--bogus"]).status.code(), Some(2));
    assert_eq!(haykit(dir.path(), &["build-haystack", "--sample", "q1"]).status.code(), Some(2));
    assert_eq!(haykit(dir.path(), &["retrieve", "--retriever", "bm26"]).status.code(), Some(2));
}

#[test]
fn validation_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_haykit"))
        .args(["--corpus", "/nonexistent/corpus.jsonl", "ingest"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not exist"));
    let o = haykit(dir.path(), &["rerank", "--sample", "q1", "--damping", "1.5"]);
    assert_eq!(o.status.code(), Some(1));
    let o = haykit(dir.path(), &["build-haystack", "--sample", "nope", "--budget", "100"]);
    assert_eq!(o.status.code(), Some(1));
    let o = haykit(dir.path(), &["build-haystack", "--sample", "q1", "--budget", "3"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn ingest_index_retrieve() {
    let dir = tempfile::tempdir().unwrap();
    let o = stdout(&haykit(dir.path(), &["ingest"]));
    assert!(o.starts_with("ingested 15 of 15 records"), "{o}");
    assert!(dir.path().join("index/corpus.bin").exists());
    let o = stdout(&haykit(dir.path(), &["index"]));
    assert!(o.starts_with("indexed 15 documents"), "{o}");
    let v = json(&haykit(dir.path(), &["retrieve", "--query", "Hamburg river Elbe", "--top", "3"]));
    assert_eq!(v["strategy"], "bm25");
    assert_eq!(v["entries"].as_array().unwrap().len(), 3);
    assert_eq!(v["entries"][0]["rank"], 1);
    let v = json(&haykit(dir.path(), &["rerank", "--sample", "q1", "--seeds", "2"]));
    assert_eq!(v["strategy"], "bm25+ppr");
}

#[test]
fn build_haystack_record() {
    let dir = tempfile::tempdir().unwrap();
    let v = json(&haykit(
        dir.path(),
        &["build-haystack", "--sample", "q2", "--retriever", "bm25+ppr", "--budget", "150", "--order", "random", "--seed", "7"],
    ));
    assert_eq!(v["query_id"], "q2");
    assert_eq!(v["budget"], 150);
    assert_eq!(v["order"], "random:7");
    let members = v["members"].as_array().unwrap();
    let total: u64 = members.iter().map(|m| m["tokens"].as_u64().unwrap()).sum();
    assert!(total <= 150);
    let needles: Vec<&str> = members.iter().filter(|m| m["is_needle"] == true).map(|m| m["id"].as_str().unwrap()).collect();
    assert_eq!(needles.len(), 2);

    let v = json(&haykit(dir.path(), &["build-haystack", "--sample", "q2", "--budget", "0"]));
    assert!(v["members"].as_array().unwrap().iter().all(|m| m["is_needle"] == true));
}

#[test]
fn eval_retrieval_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = stdout(&haykit(
        dir.path(),
        &["--out", out.to_str().unwrap(), "eval-retrieval", "--retriever", "bm25", "--retriever", "bm25+ppr"],
    ));
    assert!(o.starts_with("evaluated 3 samples"), "{o}");
    let reports: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("retrieval_report.json")).unwrap()).unwrap();

    let (corpus, _) = Corpus::load(&fixture("corpus.jsonl"), &ReferenceTokenizer).unwrap();
    let samples = load_qa_samples(&fixture("qa.jsonl"), &corpus).unwrap();
    let sparse = SparseIndex::build(&corpus);
    let engine = RetrievalEngine::new(corpus, sparse, EngineParams::default());
    for report in reports.as_array().unwrap() {
        let spec: RetrieverSpec = report["retriever"].as_str().unwrap().parse().unwrap();
        for n in [10usize, 20, 40, 80, 160] {
            let (mut r, mut g) = (0.0, 0.0);
            for s in &samples {
                let ranked = engine.rank(spec, &s.id, &s.question).unwrap();
                r += recall_at_n(&ranked, &s.needles, n);
                g += ndcg_at_n(&ranked, &s.needles, n);
            }
            let at = &report["at"][n.to_string()];
            assert!((at["recall"].as_f64().unwrap() - r / 3.0).abs() < 1e-12);
            assert!((at["ndcg"].as_f64().unwrap() - g / 3.0).abs() < 1e-12);
        }
    }
}

#[test]
fn eval_static_no_distractors_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = stdout(&haykit(
        dir.path(),
        &[
            "--out",
            out.to_str().unwrap(),
            "eval-static",
            "--no-distractors",
            "--client",
            "oracle",
            "--oracle-window",
            "3",
        ],
    ));
    assert!(o.contains("3 results, 0 errored"), "{o}");
    let results = fs::read_to_string(out.join("results.jsonl")).unwrap();
    for line in results.lines() {
        let r: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(r["budget"], 0);
        // with only the needles shown the oracle always answers
        assert_eq!(r["f1"]["f1"], 1.0);
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "eval-static");
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);

    let o = stdout(&haykit(dir.path(), &["--out", out.to_str().unwrap(), "report"]));
    assert!(o.contains("1.0000"), "{o}");
    assert!(out.join("report.json").exists());
}

#[test]
fn report_averages_two_samples() {
    let dir = tempfile::tempdir().unwrap();
    let row = |id: &str, f1: f64| {
        serde_json::json!({
            "sample_id": id, "hops": 2, "retriever": "bm25", "budget": 1000, "ordering": "ranked",
            "mode": "static", "rounds_used": 1, "predicted": "x", "answered": true,
            "f1": { "precision": f1, "recall": f1, "f1": f1 }
        })
        .to_string()
    };
    let results = dir.path().join("results.jsonl");
    fs::write(&results, format!("{}\n{}\n", row("a", 1.0), row("b", 0.0))).unwrap();
    let o = stdout(&haykit(
        dir.path(),
        &["--out", dir.path().to_str().unwrap(), "report", "--results", results.to_str().unwrap()],
    ));
    let line = o.lines().find(|l| l.starts_with("bm25")).unwrap();
    assert!(line.contains("0.5000"), "{line}");

    fs::write(&results, "").unwrap();
    let o = haykit(dir.path(), &["--out", dir.path().to_str().unwrap(), "report", "--results", results.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
}

#[test]
fn eval_dynamic_scripted_and_manifest_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let out1 = dir.path().join("run1");
    let script = fixture("script.json");
    let o = stdout(&haykit(
        dir.path(),
        &[
            "--out",
            out1.to_str().unwrap(),
            "eval-dynamic",
            "--mode",
            "enforced",
            "--rounds",
            "2",
            "--budget",
            "200",
            "--client",
            "scripted",
            "--script",
            script.to_str().unwrap(),
        ],
    ));
    assert!(o.starts_with("eval-dynamic [enforced:2]"), "{o}");
    let traces = fs::read_to_string(out1.join("traces.jsonl")).unwrap();
    let q1: serde_json::Value = serde_json::from_str(traces.lines().next().unwrap()).unwrap();
    assert_eq!(q1["sample_id"], "q1");
    assert_eq!(q1["rounds"][1]["query"], "Which river flows through Munich?");
    assert_eq!(q1["analyses"][0], "Strauss was born in Munich.");
    assert_eq!(q1["termination"], "answered");

    let out2 = dir.path().join("run2");
    let o = Command::new(env!("CARGO_BIN_EXE_haykit"))
        .arg("--manifest")
        .arg(out1.join("manifest.json"))
        .arg("--out")
        .arg(&out2)
        .args(["eval-dynamic", "--mode", "enforced"])
        .output()
        .unwrap();
    stdout(&o);
    for f in ["results.jsonl", "traces.jsonl"] {
        assert_eq!(fs::read(out1.join(f)).unwrap(), fs::read(out2.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn tokenizer_server_speaks_protocol() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_haykit"))
        .args(["tokenizer-server", "--listen", "127.0.0.1:0"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().rsplit(' ').next().unwrap().to_string();
    let tok = ExternalTokenizer::connect(&addr).unwrap();
    let text = "Hello, world! It's 2024.";
    assert_eq!(tok.count(text).unwrap(), ReferenceTokenizer::count_str(text));
    assert_eq!(tok.truncate(text, 3).unwrap(), ReferenceTokenizer::truncate_str(text, 3));
    child.kill().unwrap();
    child.wait().unwrap();
}
