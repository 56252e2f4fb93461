//! Prediction, macro-averaged metrics, repeated trials, the ablation
//! table, and attention and embedding exports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;
use crate::model::{Model, ModelConfig, ModelError, Variant};
use crate::parallel::Execution;
use crate::pipeline::{build_dataset, Dataset, Example, PrepareConfig, PrepareError, SplitDocs};
use crate::training::{init_seed, train, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("trial {trial}: {source}")]
    Trial {
        trial: usize,
        #[source]
        source: Box<EvalError>,
    },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Prepare(#[from] PrepareError),
    #[error("variant {variant}: {source}")]
    Variant {
        variant: &'static str,
        #[source]
        source: Box<EvalError>,
    },
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("at least one trial is required")]
    NoTrials,
}

/// Confusion counts with fake (label 1) as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn new(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn from_pairs<I: IntoIterator<Item = (Label, Label)>>(pairs: I) -> Self {
        let mut c = Self::default();
        for (gold, pred) in pairs {
            c.add(gold, pred);
        }
        c
    }

    pub fn add(&mut self, gold: Label, pred: Label) {
        match (gold, pred) {
            (Label::Fake, Label::Fake) => self.tp += 1,
            (Label::Real, Label::Fake) => self.fp += 1,
            (Label::Fake, Label::Real) => self.fn_ += 1,
            (Label::Real, Label::Real) => self.tn += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

impl Metrics {
    pub fn values(&self) -> [f64; 4] {
        [self.accuracy, self.macro_precision, self.macro_recall, self.macro_f1]
    }

    fn from_values(v: [f64; 4]) -> Self {
        Self {
            accuracy: v[0],
            macro_precision: v[1],
            macro_recall: v[2],
            macro_f1: v[3],
        }
    }
}

/// Metrics under the report key names.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl From<&Metrics> for MetricsReport {
    fn from(m: &Metrics) -> Self {
        Self {
            accuracy: m.accuracy,
            precision: m.macro_precision,
            recall: m.macro_recall,
            f1: m.macro_f1,
        }
    }
}

fn ratio(num: usize, den: usize, what: &str, warnings: &mut Vec<String>) -> f64 {
    if den == 0 {
        warnings.push(format!("{what} has a zero denominator; reported as 0"));
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Macro metrics plus any zero-denominator warnings.
pub fn macro_metrics_with_warnings(c: &Confusion) -> (Metrics, Vec<String>) {
    let mut w = Vec::new();
    let p_fake = ratio(c.tp, c.tp + c.fp, "precision(fake)", &mut w);
    let r_fake = ratio(c.tp, c.tp + c.fn_, "recall(fake)", &mut w);
    let p_real = ratio(c.tn, c.tn + c.fn_, "precision(real)", &mut w);
    let r_real = ratio(c.tn, c.tn + c.fp, "recall(real)", &mut w);
    let total = c.total();
    let accuracy = if total == 0 { 0.0 } else { (c.tp + c.tn) as f64 / total as f64 };
    (
        Metrics {
            accuracy,
            macro_precision: (p_fake + p_real) / 2.0,
            macro_recall: (r_fake + r_real) / 2.0,
            macro_f1: (f1(p_fake, r_fake) + f1(p_real, r_real)) / 2.0,
        },
        w,
    )
}

/// Macro-averaged metrics over both classes. Zero denominators count as
/// 0 and are logged.
pub fn macro_metrics(c: &Confusion) -> Metrics {
    let (m, warnings) = macro_metrics_with_warnings(c);
    for w in warnings {
        log::warn!("{w}");
    }
    m
}

/// Argmax over `[P(real), P(fake)]`; ties go to real.
pub fn predict_label(probs: [f64; 2]) -> Label {
    if probs[1] > probs[0] {
        Label::Fake
    } else {
        Label::Real
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub gold: Label,
    pub pred: Label,
    pub probs: [f64; 2],
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub confusion: Confusion,
    pub metrics: Metrics,
    pub mean_loss: f64,
    pub predictions: Vec<Prediction>,
}

fn bce(probs: [f64; 2], label: Label) -> f64 {
    let p = probs[1].clamp(crate::tensor::BCE_EPS, 1.0 - crate::tensor::BCE_EPS);
    match label {
        Label::Fake => -p.ln(),
        Label::Real => -(1.0 - p).ln(),
    }
}

/// Evaluation-mode predictions over `examples`, aggregated in input order.
pub fn evaluate(model: &Model, examples: &[Example], exec: Execution) -> Result<Evaluation, ModelError> {
    let outs = exec.map_ordered(examples, |_, ex| model.predict(&ex.input));
    let mut predictions = Vec::with_capacity(examples.len());
    let mut loss = 0.0;
    for (ex, out) in examples.iter().zip(outs) {
        let out = out?;
        loss += bce(out.probs, ex.label);
        predictions.push(Prediction {
            id: ex.id.clone(),
            gold: ex.label,
            pred: predict_label(out.probs),
            probs: out.probs,
            z: out.z,
        });
    }
    let confusion = Confusion::from_pairs(predictions.iter().map(|p| (p.gold, p.pred)));
    Ok(Evaluation {
        metrics: macro_metrics(&confusion),
        mean_loss: if examples.is_empty() { 0.0 } else { loss / examples.len() as f64 },
        confusion,
        predictions,
    })
}

/// Mean and sample standard deviation of per-trial metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub mean: Metrics,
    pub std: Metrics,
    pub trials: Vec<Metrics>,
}

pub fn summarize(trials: &[Metrics]) -> TrialSummary {
    let k = trials.len().max(1) as f64;
    let mut mean = [0.0; 4];
    for t in trials {
        for (m, v) in mean.iter_mut().zip(t.values()) {
            *m += v / k;
        }
    }
    let mut var = [0.0; 4];
    if trials.len() > 1 {
        for t in trials {
            for ((s, v), m) in var.iter_mut().zip(t.values()).zip(mean) {
                *s += (v - m).powi(2) / (k - 1.0);
            }
        }
    }
    TrialSummary {
        mean: Metrics::from_values(mean),
        std: Metrics::from_values(var.map(f64::sqrt)),
        trials: trials.to_vec(),
    }
}

/// Per-test-set summaries, in test-set order.
pub type TestSummaries = Vec<(String, TrialSummary)>;

/// Trains `k` models with seeds `base, base + 1, ...` on fixed splits and
/// evaluates each on every test set.
pub fn run_trials(
    data: &Dataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    k: usize,
) -> Result<TestSummaries, EvalError> {
    if k == 0 {
        return Err(EvalError::NoTrials);
    }
    let mut per_test: Vec<Vec<Metrics>> = vec![Vec::new(); data.tests.len()];
    for trial in 0..k {
        let wrap = |e: EvalError| EvalError::Trial {
            trial,
            source: Box::new(e),
        };
        let cfg = TrainConfig {
            seed: train_cfg.seed.wrapping_add(trial as u64),
            ..train_cfg.clone()
        };
        let model = Model::new(model_cfg.clone(), data.vocab.len(), init_seed(cfg.seed))
            .map_err(|e| wrap(e.into()))?;
        let outcome = train(model, &data.train, &data.val, &cfg).map_err(|e| wrap(e.into()))?;
        for (i, (_, test)) in data.tests.iter().enumerate() {
            let ev = evaluate(&outcome.model, test, cfg.execution).map_err(|e| wrap(e.into()))?;
            per_test[i].push(ev.metrics);
        }
    }
    Ok(data
        .tests
        .iter()
        .zip(per_test)
        .map(|((name, _), m)| (name.clone(), summarize(&m)))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub results: TestSummaries,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12}{:<12}{:>10}{:>10}{:>10}{:>10}",
            "variant", "test", "accuracy", "precision", "recall", "f1"
        );
        for row in &self.rows {
            for (test, s) in &row.results {
                let m = &s.mean;
                let _ = writeln!(
                    out,
                    "{:<12}{:<12}{:>10.4}{:>10.4}{:>10.4}{:>10.4}",
                    row.variant.name(),
                    test,
                    m.accuracy,
                    m.macro_precision,
                    m.macro_recall,
                    m.macro_f1
                );
            }
        }
        out
    }

    /// `{variant: {"metrics": {test: report}, "std": {test: report}}}`.
    pub fn to_json(&self) -> serde_json::Value {
        let mut root = serde_json::Map::new();
        for row in &self.rows {
            let mut metrics = serde_json::Map::new();
            let mut std = serde_json::Map::new();
            for (test, s) in &row.results {
                metrics.insert(test.clone(), serde_json::to_value(MetricsReport::from(&s.mean)).expect("plain data"));
                std.insert(test.clone(), serde_json::to_value(MetricsReport::from(&s.std)).expect("plain data"));
            }
            root.insert(
                row.variant.name().to_string(),
                serde_json::json!({"metrics": metrics, "std": std}),
            );
        }
        serde_json::Value::Object(root)
    }
}

/// Runs every variant under the same seeds and splits.
pub fn ablation_suite(
    splits: &SplitDocs,
    prep: &PrepareConfig,
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    trials: usize,
    min_count: usize,
) -> Result<AblationTable, EvalError> {
    let mut rows = Vec::with_capacity(Variant::ALL.len());
    for variant in Variant::ALL {
        let wrap = |e: EvalError| EvalError::Variant {
            variant: variant.name(),
            source: Box::new(e),
        };
        let cfg = variant.apply(base);
        log::info!("ablation variant {}", variant.name());
        let data = build_dataset(splits, prep, &cfg, min_count).map_err(|e| wrap(e.into()))?;
        let results = run_trials(&data, &cfg, train_cfg, trials).map_err(wrap)?;
        rows.push(AblationRow { variant, results });
    }
    Ok(AblationTable { rows })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), EvalError> {
    fs::write(path, contents).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Tab-separated `id, gold, pred, z...` rows at full precision.
pub fn embeddings_tsv(model: &Model, examples: &[Example], exec: Execution) -> Result<String, ModelError> {
    let ev = evaluate(model, examples, exec)?;
    let mut out = String::new();
    for p in &ev.predictions {
        let _ = write!(out, "{}\t{}\t{}", p.id, p.gold.as_u8(), p.pred.as_u8());
        for v in &p.z {
            let _ = write!(out, "\t{v}");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn export_embeddings(model: &Model, examples: &[Example], exec: Execution, path: &Path) -> Result<(), EvalError> {
    let tsv = embeddings_tsv(model, examples, exec)?;
    write_file(path, tsv.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub head: usize,
    pub dep: usize,
    pub relation: String,
    pub receiver: usize,
    pub layer: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionRecord {
    pub index: usize,
    pub alpha_t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionExport {
    pub id: String,
    pub probs: [f64; 2],
    pub edges: Vec<EdgeRecord>,
    pub fusion: Vec<FusionRecord>,
}

impl AttentionExport {
    /// The edge carrying the largest attention weight.
    pub fn strongest_edge(&self) -> Option<&EdgeRecord> {
        self.edges
            .iter()
            .fold(None, |best: Option<&EdgeRecord>, e| match best {
                Some(b) if b.alpha >= e.alpha => Some(b),
                _ => Some(e),
            })
    }
}

pub fn attention_of(model: &Model, example: &Example) -> Result<AttentionExport, ModelError> {
    let out = model.predict(&example.input)?;
    let edges = out
        .edge_attention
        .iter()
        .map(|a| {
            let (head, dep) = a.head_dep();
            EdgeRecord {
                head,
                dep,
                relation: a.channel.name(),
                receiver: a.receiver,
                layer: a.layer,
                alpha: a.alpha,
            }
        })
        .collect();
    let fusion = out
        .fusion_alpha
        .unwrap_or_default()
        .into_iter()
        .enumerate()
        .map(|(index, alpha_t)| FusionRecord { index, alpha_t })
        .collect();
    Ok(AttentionExport {
        id: example.id.clone(),
        probs: out.probs,
        edges,
        fusion,
    })
}

pub fn export_attention(model: &Model, example: &Example, path: &Path) -> Result<AttentionExport, EvalError> {
    let export = attention_of(model, example)?;
    let json = serde_json::to_string_pretty(&export).expect("plain data");
    write_file(path, json.as_bytes())?;
    Ok(export)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_fixtures() {
        let perfect = macro_metrics(&Confusion::new(5, 0, 0, 5));
        assert_eq!(perfect.values(), [1.0; 4]);

        let ones = macro_metrics(&Confusion::new(1, 1, 1, 1));
        assert_eq!(ones.values(), [0.5; 4]);

        // every document predicted fake on a balanced set of ten
        let (m, warnings) = macro_metrics_with_warnings(&Confusion::new(5, 5, 0, 0));
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.macro_precision, 0.25);
        assert_eq!(m.macro_recall, 0.5);
        assert_eq!(m.macro_f1, (0.0 + 2.0 / 3.0) / 2.0);
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn tie_goes_to_real() {
        assert_eq!(predict_label([0.9, 0.1]), Label::Real);
        assert_eq!(predict_label([0.5, 0.5]), Label::Real);
        assert_eq!(predict_label([0.4, 0.6]), Label::Fake);
    }

    #[test]
    fn trial_summary_arithmetic() {
        let m = |v: f64| Metrics::from_values([v; 4]);
        let s = summarize(&[m(0.8), m(0.9)]);
        assert!((s.mean.accuracy - 0.85).abs() < 1e-15);
        assert!((s.std.macro_f1 - (0.005f64).sqrt()).abs() < 1e-12);
        let one = summarize(&[m(0.7)]);
        assert_eq!(one.mean, m(0.7));
        assert_eq!(one.std, m(0.0));
    }

    #[test]
    fn report_keys() {
        let v = serde_json::to_value(MetricsReport::from(&Metrics::default())).unwrap();
        let mut keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        keys.sort();
        assert_eq!(keys, ["accuracy", "f1", "precision", "recall"]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn swap(c: Confusion) -> Confusion {
            Confusion::new(c.tn, c.fn_, c.fp, c.tp)
        }

        proptest! {
            #[test]
            fn symmetric_under_class_swap(tp in 0usize..50, fp in 0usize..50, fn_ in 0usize..50, tn in 0usize..50) {
                prop_assume!(tp + fp + fn_ + tn > 0);
                let c = Confusion::new(tp, fp, fn_, tn);
                let (a, _) = macro_metrics_with_warnings(&c);
                let (b, _) = macro_metrics_with_warnings(&swap(c));
                for (x, y) in a.values().iter().zip(b.values()) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
                for v in a.values() {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }

            #[test]
            fn accuracy_is_mean_correctness(pairs in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..100)) {
                let lab = |b: bool| if b { Label::Fake } else { Label::Real };
                let c = Confusion::from_pairs(pairs.iter().map(|&(g, p)| (lab(g), lab(p))));
                let correct = pairs.iter().filter(|(g, p)| g == p).count() as f64 / pairs.len() as f64;
                prop_assert_eq!(c.total(), pairs.len());
                prop_assert!((macro_metrics_with_warnings(&c).0.accuracy - correct).abs() < 1e-12);
            }

            #[test]
            fn trial_mean_within_range(vals in proptest::collection::vec(0.0f64..1.0, 1..8)) {
                let ms: Vec<Metrics> = vals.iter().map(|&v| Metrics::from_values([v; 4])).collect();
                let s = summarize(&ms);
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(s.mean.accuracy >= lo - 1e-12 && s.mean.accuracy <= hi + 1e-12);
            }
        }
    }
}
