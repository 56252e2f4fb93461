mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use edu4fd::corpus::{load_corpus, write_corpus, Document, Label};
use edu4fd::discourse::{Edge, Relation};
use edu4fd::training::{load_checkpoint, TrainConfig};
use edu4fd_cli::RunConfig;
use serde_json::{json, Value};
use tempfile::TempDir;

fn edu4fd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edu4fd"))
        .args(args)
        .current_dir(dir)
        .env_remove("EDU4FD_SEED")
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read_json(p: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))).unwrap()
}

fn gold_doc(id: &str, edus: &[&str], edges: Vec<Edge>, label: Label) -> Document {
    let mut d = Document::new(id, edus.join(" "), label);
    d.edus = Some(edus.iter().map(|s| s.to_string()).collect());
    d.graph = Some(edges);
    d
}

fn small_config(dir: &Path, extra: Value) -> PathBuf {
    write_corpus(&dir.join("corpus.jsonl"), &common::separable(60, 5, "d")).unwrap();
    let mut cfg = json!({
        "data": {"corpus": "corpus.jsonl"},
        "model": {"emb_dim": 8, "gru_hidden": 4, "filters": 8, "n_bases": 2, "fusion_hidden": 8},
        "train": {"epochs": 2, "batch_size": 8, "lr": 0.005, "seed": 1},
        "trials": 1
    });
    if let (Some(base), Some(more)) = (cfg.as_object_mut(), extra.as_object()) {
        for (k, v) in more {
            base.insert(k.clone(), v.clone());
        }
    }
    let path = dir.join("config.json");
    fs::write(&path, cfg.to_string()).unwrap();
    path
}

#[test]
fn segment_gold_passes_edus_through() {
    let tmp = TempDir::new().unwrap();
    let mut d = gold_doc(
        "a",
        &["ROOT", "The plan failed,", "because costs rose."],
        vec![Edge::new(0, 1, Relation::Root), Edge::new(1, 2, Relation::Cause)],
        Label::Fake,
    );
    d.root = Some(0);
    write_corpus(&tmp.path().join("in.jsonl"), &[d.clone()]).unwrap();
    let o = edu4fd(tmp.path(), &["segment", "--input", "in.jsonl", "--out", "out.jsonl", "--quiet"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let back = load_corpus(&tmp.path().join("out.jsonl")).unwrap().corpus;
    assert_eq!(back.documents, vec![d]);
}

#[test]
fn segment_rule_mode_is_deterministic_and_reports_drops() {
    let tmp = TempDir::new().unwrap();
    let docs = vec![
        Document::new("a", "Prices rose because demand grew. Officials said that supply was short.", Label::Real),
        Document::new("b", "It rained.", Label::Fake),
    ];
    write_corpus(&tmp.path().join("in.jsonl"), &docs).unwrap();
    let args = |out: &'static str| ["segment", "--input", "in.jsonl", "--out", out, "--mode", "rule", "-q"];
    let first = edu4fd(tmp.path(), &args("o1.jsonl"));
    let second = edu4fd(tmp.path(), &args("o2.jsonl"));
    assert_eq!((code(&first), code(&second)), (0, 0));
    assert!(stdout(&first).contains("dropped 1"), "{}", stdout(&first));
    let (a, b) = (
        fs::read(tmp.path().join("o1.jsonl")).unwrap(),
        fs::read(tmp.path().join("o2.jsonl")).unwrap(),
    );
    assert_eq!(a, b);
    let out = load_corpus(&tmp.path().join("o1.jsonl")).unwrap().corpus;
    assert_eq!(
        out.documents[0].edus.as_deref().unwrap(),
        ["Prices rose", "because demand grew .", "Officials said", "that supply was short ."]
    );
    assert!(out.documents[0].graph.is_none());
}

#[test]
fn segment_missing_input_is_an_io_error() {
    let tmp = TempDir::new().unwrap();
    let o = edu4fd(tmp.path(), &["segment", "--input", "nope.jsonl", "--out", "x.jsonl"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.jsonl"));
}

#[test]
fn malformed_record_exits_3() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("bad.jsonl"), "{\"id\": \"a\", \"label\": 7, \"text\": \"x\"}\n").unwrap();
    let o = edu4fd(tmp.path(), &["segment", "--input", "bad.jsonl", "--out", "x.jsonl"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn graph_modes() {
    let tmp = TempDir::new().unwrap();
    let two = gold_doc("two", &["Markets fell", "after the vote."], vec![Edge::new(0, 1, Relation::Temporal)], Label::Real);
    let three = gold_doc(
        "three",
        &["One unit here.", "Second unit here.", "Third unit here."],
        vec![Edge::new(0, 1, Relation::Joint), Edge::new(0, 2, Relation::Joint)],
        Label::Fake,
    );
    write_corpus(&tmp.path().join("in.jsonl"), &[two.clone(), three.clone()]).unwrap();

    let o = edu4fd(tmp.path(), &["graph", "--input", "in.jsonl", "--out", "p.jsonl", "--mode", "provided", "-q"]);
    assert_eq!(code(&o), 0);
    let provided = load_corpus(&tmp.path().join("p.jsonl")).unwrap().corpus.documents;
    assert_eq!(provided, vec![two, three]);

    let o = edu4fd(tmp.path(), &["graph", "--input", "in.jsonl", "--out", "h.jsonl", "--mode", "heuristic", "-q"]);
    assert_eq!(code(&o), 0);
    let heuristic = load_corpus(&tmp.path().join("h.jsonl")).unwrap().corpus.documents;
    assert_eq!(heuristic[0].graph.as_ref().unwrap().len(), 1);

    let o = edu4fd(
        tmp.path(),
        &["graph", "--input", "in.jsonl", "--out", "c.jsonl", "--mode", "complete", "--inverse", "--self", "-q"],
    );
    assert_eq!(code(&o), 0);
    let complete = load_corpus(&tmp.path().join("c.jsonl")).unwrap().corpus.documents;
    let g = complete[1].graph.as_ref().unwrap();
    assert_eq!(g.len(), 6);
    assert!(g.iter().all(|e| e.rel == Relation::Generic));
    // 2 + 6 base edges, doubled by inverses, plus 2 + 3 self loops
    assert!(stdout(&o).contains("with 8 edges (21 channel edges)"), "{}", stdout(&o));
}

#[test]
fn graph_rejects_invalid_gold_edges() {
    let tmp = TempDir::new().unwrap();
    let d = gold_doc("loop", &["A first unit.", "A second unit."], vec![Edge::new(1, 1, Relation::Joint)], Label::Real);
    write_corpus(&tmp.path().join("in.jsonl"), &[d]).unwrap();
    let o = edu4fd(tmp.path(), &["graph", "--input", "in.jsonl", "--out", "o.jsonl"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("self edge"));
    assert!(!tmp.path().join("o.jsonl").exists());
}

#[test]
fn stats_tables_on_the_relation_fixture() {
    let tmp = TempDir::new().unwrap();
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/relations20.jsonl");
    let o = edu4fd(tmp.path(), &["stats", "--input", fixture.to_str().unwrap(), "--out", "s", "-q"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    // 10 documents of 5 EDUs and 10 of 4
    assert!(text.contains("4.50"), "{text}");
    assert!(text.contains("# Total news"));
    let json = read_json(tmp.path().join("s/stats.json"));
    assert_eq!(json["relations"]["rows"].as_array().unwrap().len(), 19);
    assert_eq!(json["corpus"]["total"], 20);
}

#[test]
fn stats_without_graphs_warns_and_zero_fills() {
    let tmp = TempDir::new().unwrap();
    write_corpus(&tmp.path().join("in.jsonl"), &[Document::new("a", "Plain text only.", Label::Real)]).unwrap();
    let o = edu4fd(tmp.path(), &["stats", "--input", "in.jsonl"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("no edges"));
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| l.ends_with("0.000   0.000")).count(), 19);
}

#[test]
fn train_then_eval_round_trip() {
    let tmp = TempDir::new().unwrap();
    small_config(tmp.path(), json!({}));
    let o = edu4fd(tmp.path(), &["train", "--config", "config.json", "--out", "run", "-q"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["checkpoint.bin", "history.json", "config.resolved.json", "test.jsonl"] {
        assert!(tmp.path().join("run").join(f).exists(), "{f}");
    }
    let history = read_json(tmp.path().join("run/history.json"));
    assert_eq!(history["epochs"].as_array().unwrap().len(), 2);

    let test_docs = load_corpus(&tmp.path().join("run/test.jsonl")).unwrap().corpus;
    let probe = test_docs.documents[0].id.clone();
    let o = edu4fd(
        tmp.path(),
        &[
            "eval", "--checkpoint", "run/checkpoint.bin", "--test", "run/test.jsonl", "--out", "ev",
            "--export-embeddings", "emb.tsv", "--export-attention", &probe, "-q",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = read_json(tmp.path().join("ev/metrics.json"));
    let keys: Vec<&String> = metrics["test"].as_object().unwrap().keys().collect();
    assert_eq!(keys, ["accuracy", "f1", "precision", "recall"]);
    let tsv = fs::read_to_string(tmp.path().join("emb.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), test_docs.len());
    assert_eq!(tsv.lines().next().unwrap().split('\t').count(), 3 + 8);

    let attn = read_json(tmp.path().join("ev/attention.json"));
    let fusion: f64 = attn["fusion"].as_array().unwrap().iter().map(|f| f["alpha_t"].as_f64().unwrap()).sum();
    assert!((fusion - 1.0).abs() < 1e-12);

    // without --test the stored split is rebuilt and gives the same numbers
    let o = edu4fd(tmp.path(), &["eval", "--checkpoint", "run/checkpoint.bin", "--out", "ev2", "-q"]);
    assert_eq!(code(&o), 0);
    assert_eq!(
        fs::read(tmp.path().join("ev/metrics.json")).unwrap(),
        fs::read(tmp.path().join("ev2/metrics.json")).unwrap()
    );
}

#[test]
fn eval_trials_retrain_and_report_spread() {
    let tmp = TempDir::new().unwrap();
    small_config(tmp.path(), json!({}));
    assert_eq!(code(&edu4fd(tmp.path(), &["train", "--config", "config.json", "--out", "run", "-q"])), 0);
    let o = edu4fd(tmp.path(), &["eval", "--checkpoint", "run/checkpoint.bin", "--trials", "2", "--out", "ev", "-q"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let trials = read_json(tmp.path().join("ev/trials.json"));
    assert_eq!(trials["test"]["trials"].as_array().unwrap().len(), 2);
    let single = edu4fd(tmp.path(), &["eval", "--checkpoint", "run/checkpoint.bin", "--out", "one", "-q"]);
    assert_eq!(code(&single), 0);
    let first = &trials["test"]["trials"][0];
    assert_eq!(&read_json(tmp.path().join("one/metrics.json"))["test"], first);
}

#[test]
fn eval_rejects_mismatched_config_and_unknown_ids() {
    let tmp = TempDir::new().unwrap();
    small_config(tmp.path(), json!({}));
    assert_eq!(code(&edu4fd(tmp.path(), &["train", "--config", "config.json", "--out", "run", "-q"])), 0);
    let other = json!({"data": {"corpus": "corpus.jsonl"}, "model": {"emb_dim": 12}});
    fs::write(tmp.path().join("other.json"), other.to_string()).unwrap();
    let o = edu4fd(tmp.path(), &["eval", "--checkpoint", "run/checkpoint.bin", "--config", "other.json", "--out", "e"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("emb_dim"));

    let o = edu4fd(
        tmp.path(),
        &["eval", "--checkpoint", "run/checkpoint.bin", "--export-attention", "no-such-doc", "--out", "e2"],
    );
    assert_eq!(code(&o), 3);

    // a sentence-level relation has no channel in an EDU-level model
    let generic = gold_doc("g", &["Unit one here.", "Unit two here."], vec![Edge::new(0, 1, Relation::Generic)], Label::Real);
    write_corpus(&tmp.path().join("generic.jsonl"), &[generic]).unwrap();
    let o = edu4fd(tmp.path(), &["eval", "--checkpoint", "run/checkpoint.bin", "--test", "generic.jsonl", "--out", "e3"]);
    assert_eq!(code(&o), 3);

    fs::write(tmp.path().join("junk.bin"), b"not a checkpoint").unwrap();
    let o = edu4fd(tmp.path(), &["eval", "--checkpoint", "junk.bin", "--out", "e4"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn seed_precedence_flag_then_env_then_file() {
    let tmp = TempDir::new().unwrap();
    small_config(tmp.path(), json!({}));
    let seed_of = |dir: &str| load_checkpoint(&tmp.path().join(dir).join("checkpoint.bin")).unwrap().seed;
    let run = |dir: &str, flag: Option<&str>, env: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_edu4fd"));
        c.args(["train", "--config", "config.json", "--out", dir, "-q"]).current_dir(tmp.path());
        c.env_remove("EDU4FD_SEED");
        if let Some(s) = flag {
            c.args(["--seed", s]);
        }
        if let Some(e) = env {
            c.env("EDU4FD_SEED", e);
        }
        assert!(c.output().unwrap().status.success());
    };
    run("file", None, None);
    run("env", None, Some("21"));
    run("flag", Some("42"), Some("21"));
    assert_eq!((seed_of("file"), seed_of("env"), seed_of("flag")), (1, 21, 42));
    let resolved = read_json(tmp.path().join("flag/config.resolved.json"));
    assert_eq!(resolved["config"]["train"]["seed"], 42);
}

#[test]
fn invalid_configs_exit_3_before_work() {
    let tmp = TempDir::new().unwrap();
    small_config(tmp.path(), json!({"model": {"dropout": 1.5}}));
    let o = edu4fd(tmp.path(), &["train", "--config", "config.json", "--out", "run"]);
    assert_eq!(code(&o), 3);
    assert!(!tmp.path().join("run").exists());

    fs::write(tmp.path().join("typo.json"), r#"{"data": {"corpus": "c.jsonl"}, "modle": {}}"#).unwrap();
    assert_eq!(code(&edu4fd(tmp.path(), &["train", "--config", "typo.json", "--out", "r"])), 3);

    let o = Command::new(env!("CARGO_BIN_EXE_edu4fd"))
        .args(["train", "--config", "config.json", "--out", "r"])
        .current_dir(tmp.path())
        .env("EDU4FD_SEED", "abc")
        .output()
        .unwrap();
    assert_eq!(code(&o), 3);
}

#[test]
fn usage_errors_exit_1() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&edu4fd(tmp.path(), &["frobnicate"])), 1);
    assert_eq!(code(&edu4fd(tmp.path(), &["train"])), 1);
    assert_eq!(code(&edu4fd(tmp.path(), &["--help"])), 0);
}

#[test]
fn non_finite_training_exits_4() {
    let tmp = TempDir::new().unwrap();
    small_config(tmp.path(), json!({"train": {"epochs": 3, "batch_size": 4, "lr": 1e300, "seed": 1}}));
    let o = edu4fd(tmp.path(), &["train", "--config", "config.json", "--out", "run"]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("non-finite"));
}

#[test]
fn ablate_writes_six_rows_deterministically() {
    let tmp = TempDir::new().unwrap();
    small_config(tmp.path(), json!({"train": {"epochs": 1, "batch_size": 16, "seed": 2}}));
    for out in ["a1", "a2"] {
        let o = edu4fd(tmp.path(), &["ablate", "--config", "config.json", "--out", out, "-q"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let text = fs::read_to_string(tmp.path().join("a1/ablation.txt")).unwrap();
    assert_eq!(text, fs::read_to_string(tmp.path().join("a2/ablation.txt")).unwrap());
    let names: Vec<&str> = text.lines().skip(1).map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(names, ["full", "no-edu", "no-rgat", "no-c", "no-g", "no-c-no-g"]);
    let json = read_json(tmp.path().join("a1/ablation.json"));
    assert_eq!(json.as_object().unwrap().len(), 6);
}

#[test]
fn run_config_defaults_and_path_resolution() {
    let cfg = RunConfig::default();
    assert_eq!(cfg.train, TrainConfig::default());
    assert_eq!((cfg.train.lr, cfg.train.batch_size, cfg.train.epochs), (1e-3, 32, 10));
    assert_eq!(cfg.model.dropout, 0.2);
    assert_eq!(cfg.trials, 5);

    let tmp = TempDir::new().unwrap();
    let sub = tmp.path().join("cfg");
    fs::create_dir(&sub).unwrap();
    fs::write(
        sub.join("run.json"),
        r#"{"data": {"train": "../t.jsonl", "val": "/abs/v.jsonl", "tests": [{"name": "x", "path": "x.jsonl"}]}}"#,
    )
    .unwrap();
    let cfg = RunConfig::load(&sub.join("run.json")).unwrap();
    assert_eq!(cfg.data.train.unwrap(), sub.join("../t.jsonl"));
    assert_eq!(cfg.data.val.unwrap(), PathBuf::from("/abs/v.jsonl"));
    assert_eq!(cfg.data.tests[0].path, sub.join("x.jsonl"));
}

#[test]
fn run_config_validation() {
    let base = || RunConfig {
        data: edu4fd_cli::config::DataConfig {
            corpus: Some("c.jsonl".into()),
            ..Default::default()
        },
        ..Default::default()
    };
    assert!(base().validate().is_ok());
    let mut both = base();
    both.data.train = Some("t.jsonl".into());
    assert!(both.validate().is_err());
    let mut none = base();
    none.data.corpus = None;
    assert!(none.validate().is_err());
    let mut dup = base();
    dup.data.tests.push(edu4fd_cli::config::TestSet {
        name: "test".into(),
        path: "x.jsonl".into(),
    });
    assert!(dup.validate().is_err());
    let mut trials = base();
    trials.trials = 0;
    assert_eq!(trials.validate().unwrap_err().exit_code(), 3);
}
