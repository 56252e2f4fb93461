use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use edu4fd::corpus::{corpus_stats, load_corpus, relation_stats, write_corpus, Corpus};
use edu4fd::discourse::{build_graph, expand_graph, GraphMode};
use edu4fd::evaluation::{
    ablation_suite, embeddings_tsv, evaluate, export_attention, summarize, Metrics, MetricsReport,
};
use edu4fd::model::Model;
use edu4fd::pipeline::{build_dataset, prepare_corpus, Example, PrepareConfig};
use edu4fd::segmenter::{edu_count_filter, edu_strings, gold_token_edus, segment_edus, CueLexicon, EduSeq, SegmentMode};
use edu4fd::training::{init_seed, load_checkpoint, save_checkpoint, train as train_model, Checkpoint, TrainConfig};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{RunConfig, SEED_ENV};
use crate::error::{CliError, Failure};
use crate::{EvalArgs, GlobalArgs, GraphArgs, SegmentArgs, StatsArgs};

type Result<T> = std::result::Result<T, CliError>;

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("plain data");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn stdout_err(e: std::io::Error) -> CliError {
    CliError::new(Failure::Io, format!("writing to standard output: {e}"))
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| CliError::new(Failure::Other, format!("{flag} is required for this command")))
}

fn out_dir(g: &GlobalArgs) -> Result<&Path> {
    let dir = required(&g.out, "--out")?;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    Ok(dir)
}

/// Logs the resolved configuration and, given a directory, saves it there.
fn echo(command: &str, resolved: &Value, dir: Option<&Path>) -> Result<()> {
    log::info!("{command}: resolved configuration {resolved}");
    match dir {
        Some(d) => write_json(&d.join("config.resolved.json"), resolved),
        None => Ok(()),
    }
}

fn run_config(g: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(required(&g.config, "--config")?)?;
    let env = std::env::var(SEED_ENV).ok();
    cfg.apply_seed(g.seed, env.as_deref())?;
    cfg.validate()?;
    Ok(cfg)
}

fn load_lexicon(path: Option<&Path>) -> Result<CueLexicon> {
    match path {
        Some(p) => CueLexicon::load(p).map_err(|e| CliError::from(e).context(p)),
        None => Ok(CueLexicon::default()),
    }
}

pub fn segment(g: &GlobalArgs, a: &SegmentArgs, stdout: &mut dyn Write) -> Result<()> {
    echo("segment", &json!({"flags": g, "segment": a}), None)?;
    let out = required(&g.out, "--out")?;
    if a.max_edu_len == 0 {
        return Err(CliError::invalid("--max-edu-len must be at least 1"));
    }
    let lexicon = load_lexicon(a.lexicon.as_deref())?;
    let loaded = load_corpus(&a.input)?;
    let mut dropped = loaded.dropped;
    let mut kept = Vec::with_capacity(loaded.corpus.len());
    for mut doc in loaded.corpus.documents {
        let seq = segment_edus(&doc, a.mode, a.max_edu_len, &lexicon)?;
        if !edu_count_filter(&seq) {
            dropped += 1;
            continue;
        }
        let mut edus = edu_strings(&doc, &seq, a.mode);
        if a.mode == SegmentMode::Gold {
            // keep the root placeholder so gold edge indices stay valid
            if let (Some(r), Some(orig)) = (doc.root, doc.edus.as_ref()) {
                edus.insert(r, orig[r].clone());
            }
        } else {
            doc.graph = None;
            doc.root = None;
        }
        doc.edus = Some(edus);
        kept.push(doc);
    }
    write_corpus(out, &kept)?;
    writeln!(
        stdout,
        "segmented {} documents; dropped {dropped} with fewer than 2 EDUs",
        kept.len()
    )
    .map_err(stdout_err)
}

pub fn graph(g: &GlobalArgs, a: &GraphArgs, stdout: &mut dyn Write) -> Result<()> {
    echo("graph", &json!({"flags": g, "graph": a}), None)?;
    let out = required(&g.out, "--out")?;
    let loaded = load_corpus(&a.input)?;
    let mut errors = Vec::new();
    let mut docs = Vec::with_capacity(loaded.corpus.len());
    let (mut edges, mut channel_edges) = (0, 0);
    for mut doc in loaded.corpus.documents {
        let Some(units) = gold_token_edus(&doc) else {
            errors.push(format!("document {}: no EDUs; run segment first", doc.id));
            continue;
        };
        let seq = EduSeq::from_token_edus(units);
        match build_graph(&doc, &seq, a.mode) {
            Err(e) => errors.push(e.to_string()),
            Ok((graph, report)) => {
                for w in &report.warnings {
                    log::warn!("document {}: {w}", doc.id);
                }
                edges += graph.edges.len();
                channel_edges += expand_graph(&graph, a.inverse, a.self_loops)
                    .channels
                    .iter()
                    .map(|c| c.edges.len())
                    .sum::<usize>();
                if a.mode != GraphMode::Provided {
                    doc.edus = Some(edu_strings(&doc, &seq, SegmentMode::Gold));
                    doc.graph = Some(graph.edges);
                    doc.root = None;
                }
                docs.push(doc);
            }
        }
    }
    if !errors.is_empty() {
        for e in &errors {
            log::error!("{e}");
        }
        return Err(CliError::invalid(format!("{} documents have invalid graphs", errors.len())));
    }
    write_corpus(out, &docs)?;
    writeln!(
        stdout,
        "wrote {} graphs with {edges} edges ({channel_edges} channel edges)",
        docs.len()
    )
    .map_err(stdout_err)
}

pub fn stats(g: &GlobalArgs, a: &StatsArgs, stdout: &mut dyn Write) -> Result<()> {
    echo("stats", &json!({"flags": g, "stats": a}), None)?;
    let loaded = load_corpus(&a.input)?;
    if loaded.dropped > 0 {
        log::info!("dropped {} documents with fewer than 2 EDUs", loaded.dropped);
    }
    let cs = corpus_stats(&loaded.corpus);
    let rs = relation_stats(&loaded.corpus);
    for w in &rs.warnings {
        log::warn!("{w}");
    }
    write!(stdout, "{}\n{}", cs.render(), rs.render()).map_err(stdout_err)?;
    if g.out.is_some() {
        let dir = out_dir(g)?;
        write_json(&dir.join("stats.json"), &json!({"corpus": cs, "relations": rs.to_json()}))?;
    }
    Ok(())
}

pub fn train(g: &GlobalArgs, stdout: &mut dyn Write) -> Result<()> {
    let cfg = run_config(g)?;
    let dir = out_dir(g)?;
    echo("train", &json!({"flags": g, "config": cfg}), Some(dir))?;
    let splits = cfg.load_splits()?;
    let data = build_dataset(&splits, &cfg.prepare_config()?, &cfg.model, cfg.min_count)?;
    log::info!(
        "{} train, {} val documents; vocabulary of {}",
        data.train.len(),
        data.val.len(),
        data.vocab.len()
    );
    let tc = TrainConfig {
        execution: g.execution,
        ..cfg.train.clone()
    };
    let model = Model::new(cfg.model.clone(), data.vocab.len(), init_seed(tc.seed))?;
    let outcome = train_model(model, &data.train, &data.val, &tc)?;
    let ck = Checkpoint {
        model_config: cfg.model.clone(),
        train_config: cfg.train.clone(),
        vocab: data.vocab.clone(),
        params: outcome.model.params().clone(),
        adam: outcome.adam,
        epoch: outcome.history.best_epoch,
        seed: tc.seed,
        run: Some(serde_json::to_value(&cfg).expect("plain data")),
    };
    save_checkpoint(&dir.join("checkpoint.bin"), &ck)?;
    write_json(&dir.join("history.json"), &outcome.history)?;
    if cfg.data.corpus.is_some() {
        let test = &splits.tests[0].1;
        write_corpus(&dir.join("test.jsonl"), &test.documents)?;
    }
    let best = outcome.history.epochs[outcome.history.best_epoch - 1];
    writeln!(
        stdout,
        "best epoch {} of {}: val macro-F1 {:.4}, val loss {:.4}",
        best.epoch,
        outcome.history.epochs.len(),
        best.val_macro_f1,
        best.val_loss
    )
    .map_err(stdout_err)
}

fn stored_config(ck: &Checkpoint) -> Result<Option<RunConfig>> {
    ck.run
        .as_ref()
        .map(|v| {
            serde_json::from_value(v.clone())
                .map_err(|e| CliError::invalid(format!("checkpoint run config: {e}")))
        })
        .transpose()
}

fn test_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn encode(corpus: &Corpus, name: &str, prep: &PrepareConfig, ck: &Checkpoint) -> Result<Vec<Example>> {
    let prepared = prepare_corpus(corpus, prep)?;
    if !prepared.dropped.is_empty() {
        log::warn!("{name}: {} documents too short to classify", prepared.dropped.len());
    }
    Ok(prepared
        .docs
        .iter()
        .map(|d| Example::new(d, &ck.vocab, &ck.model_config))
        .collect())
}

pub fn eval(g: &GlobalArgs, a: &EvalArgs, stdout: &mut dyn Write) -> Result<()> {
    if a.trials == 0 {
        return Err(CliError::invalid("--trials must be at least 1"));
    }
    let ck = load_checkpoint(&a.checkpoint)?;
    let cfg = match &g.config {
        Some(p) => {
            let c = RunConfig::load(p)?;
            ck.ensure_config(&c.model)?;
            Some(c)
        }
        None => stored_config(&ck)?,
    };
    let dir = out_dir(g)?;
    let resolved = json!({
        "flags": g,
        "eval": a,
        "checkpoint": {"model": ck.model_config, "train": ck.train_config, "seed": ck.seed, "epoch": ck.epoch},
        "config": cfg,
    });
    echo("eval", &resolved, Some(dir))?;

    let prep = match &cfg {
        Some(c) => c.prepare_config()?,
        None => PrepareConfig::default(),
    };
    let prep = PrepareConfig {
        granularity: ck.model_config.granularity,
        ..prep
    };
    let corpora: Vec<(String, Corpus)> = if a.tests.is_empty() {
        let c = cfg
            .as_ref()
            .ok_or_else(|| CliError::invalid("no --test given and the checkpoint has no run config"))?;
        c.load_splits()?.tests
    } else {
        a.tests
            .iter()
            .map(|p| Ok((test_name(p), load_corpus(p)?.corpus)))
            .collect::<Result<_>>()?
    };
    if corpora.is_empty() {
        return Err(CliError::invalid("no test sets to evaluate"));
    }
    let tests = corpora
        .iter()
        .map(|(n, c)| Ok((n.clone(), encode(c, n, &prep, &ck)?)))
        .collect::<Result<Vec<_>>>()?;

    let model = ck.model()?;
    let mut per_test: Vec<Vec<Metrics>> = Vec::with_capacity(tests.len());
    for (_, ex) in &tests {
        per_test.push(vec![evaluate(&model, ex, g.execution)?.metrics]);
    }
    if a.trials > 1 {
        retrain_trials(&ck, cfg.as_ref(), &prep, &tests, a.trials, g, &mut per_test)?;
    }

    let mut metrics = serde_json::Map::new();
    let mut detail = serde_json::Map::new();
    for ((name, _), trials) in tests.iter().zip(&per_test) {
        let s = summarize(trials);
        metrics.insert(name.clone(), json!(MetricsReport::from(&s.mean)));
        detail.insert(
            name.clone(),
            json!({
                "mean": MetricsReport::from(&s.mean),
                "std": MetricsReport::from(&s.std),
                "trials": s.trials.iter().map(MetricsReport::from).collect::<Vec<_>>(),
            }),
        );
        writeln!(
            stdout,
            "{name}: accuracy {:.4} precision {:.4} recall {:.4} f1 {:.4} ({} trials)",
            s.mean.accuracy,
            s.mean.macro_precision,
            s.mean.macro_recall,
            s.mean.macro_f1,
            trials.len()
        )
        .map_err(stdout_err)?;
    }
    write_json(&dir.join("metrics.json"), &metrics)?;
    if a.trials > 1 {
        write_json(&dir.join("trials.json"), &detail)?;
    }

    if let Some(path) = &a.export_embeddings {
        let mut tsv = String::new();
        for (_, ex) in &tests {
            tsv.push_str(&embeddings_tsv(&model, ex, g.execution)?);
        }
        fs::write(path, tsv).map_err(|e| CliError::io(path, e))?;
    }
    if let Some(id) = &a.export_attention {
        let ex = tests
            .iter()
            .flat_map(|(_, ex)| ex)
            .find(|e| &e.id == id)
            .ok_or_else(|| CliError::invalid(format!("document {id:?} is not in the test sets")))?;
        export_attention(&model, ex, &dir.join("attention.json"))?;
    }
    Ok(())
}

/// Trials 1..k: retrain from the stored run with seeds `seed + i` and
/// evaluate on the already encoded test sets.
fn retrain_trials(
    ck: &Checkpoint,
    cfg: Option<&RunConfig>,
    prep: &PrepareConfig,
    tests: &[(String, Vec<Example>)],
    trials: usize,
    g: &GlobalArgs,
    per_test: &mut [Vec<Metrics>],
) -> Result<()> {
    let cfg = cfg.ok_or_else(|| CliError::invalid("retraining trials need a run config, none stored in the checkpoint"))?;
    let data = build_dataset(&cfg.load_splits()?, prep, &ck.model_config, cfg.min_count)?;
    if data.vocab != ck.vocab {
        return Err(CliError::invalid("training data yields a vocabulary that differs from the checkpoint"));
    }
    for trial in 1..trials {
        let tc = TrainConfig {
            seed: ck.seed.wrapping_add(trial as u64),
            execution: g.execution,
            ..ck.train_config.clone()
        };
        log::info!("trial {trial}: retraining with seed {}", tc.seed);
        let model = Model::new(ck.model_config.clone(), ck.vocab.len(), init_seed(tc.seed))?;
        let outcome = train_model(model, &data.train, &data.val, &tc)?;
        for ((_, ex), m) in tests.iter().zip(per_test.iter_mut()) {
            m.push(evaluate(&outcome.model, ex, g.execution)?.metrics);
        }
    }
    Ok(())
}

pub fn ablate(g: &GlobalArgs, stdout: &mut dyn Write) -> Result<()> {
    let cfg = run_config(g)?;
    let dir = out_dir(g)?;
    echo("ablate", &json!({"flags": g, "config": cfg}), Some(dir))?;
    let splits = cfg.load_splits()?;
    let tc = TrainConfig {
        execution: g.execution,
        ..cfg.train.clone()
    };
    let table = ablation_suite(&splits, &cfg.prepare_config()?, &cfg.model, &tc, cfg.trials, cfg.min_count)?;
    let text = table.render();
    fs::write(dir.join("ablation.txt"), &text).map_err(|e| CliError::io(&dir.join("ablation.txt"), e))?;
    write_json(&dir.join("ablation.json"), &table.to_json())?;
    stdout.write_all(text.as_bytes()).map_err(stdout_err)
}
