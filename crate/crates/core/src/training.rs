//! Mini-batch Adam training with best-epoch retention, run history and
//! binary checkpoints.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Vocab;
use crate::evaluation::evaluate;
use crate::model::{Model, ModelConfig, ModelError, ParamGrads, Params};
use crate::parallel::Execution;
use crate::pipeline::Example;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid training config: {field}: {message}")]
    Config { field: &'static str, message: String },
    #[error("training split is empty")]
    EmptyTrain,
    #[error("validation split is empty")]
    EmptyVal,
    #[error("non-finite loss or gradient on document {id} (epoch {epoch})")]
    NonFinite { id: String, epoch: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Maximum global gradient norm.
    pub grad_clip: Option<f64>,
    /// How per-document work is scheduled. Results do not depend on it.
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 32,
            epochs: 10,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: None,
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |field, message: String| Err(TrainError::Config { field, message });
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad("lr", format!("must be finite and non-negative, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1".into());
        }
        for (field, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(field, format!("must lie in [0, 1), got {b}"));
            }
        }
        // negated so NaN is rejected too
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.eps > 0.0) {
            return bad("eps", format!("must be positive, got {}", self.eps));
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c >= 0.0) {
                return bad("grad_clip", format!("must be finite and non-negative, got {c}"));
            }
        }
        Ok(())
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes a base seed with a path of integers into an independent stream seed.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix(base), |acc, &p| splitmix(acc ^ splitmix(p)))
}

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_DROPOUT: u64 = 3;

/// Seed for parameter initialisation of a run with seed `seed`.
pub fn init_seed(seed: u64) -> u64 {
    derive_seed(seed, &[STREAM_INIT])
}

/// Adam moments for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &Params) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut Params, grads: &[Vec<f64>], cfg: &TrainConfig) {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                *w -= cfg.lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
            }
        }
    }
}

/// Sums per-document gradients into dense buffers.
fn accumulate(acc: &mut [Vec<f64>], g: &ParamGrads, emb_index: usize, emb_dim: usize) {
    for (a, d) in acc.iter_mut().zip(&g.dense) {
        if let Some(d) = d {
            for (x, y) in a.iter_mut().zip(d) {
                *x += y;
            }
        }
    }
    let table = &mut acc[emb_index];
    for (id, row) in &g.embedding {
        for (x, y) in table[id * emb_dim..(id + 1) * emb_dim].iter_mut().zip(row) {
            *x += y;
        }
    }
}

fn finite_grads(g: &ParamGrads) -> bool {
    g.dense.iter().flatten().flatten().all(|v| v.is_finite())
        && g.embedding.iter().flat_map(|(_, r)| r).all(|v| v.is_finite())
}

/// One optimiser step on `batch`. `seeds[i]` drives the dropout of
/// document `i`. Returns the mean batch loss.
pub fn train_step(
    model: &mut Model,
    adam: &mut Adam,
    batch: &[&Example],
    seeds: &[u64],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<f64, TrainError> {
    assert_eq!(batch.len(), seeds.len());
    let results = {
        let m = &*model;
        cfg.execution.map_ordered(batch, |i, ex| {
            let mut rng = ChaCha8Rng::seed_from_u64(seeds[i]);
            m.loss_and_grads(&ex.input, ex.label.as_u8(), true, &mut rng)
        })
    };
    let emb = model.embedding_index();
    let e = model.config().emb_dim;
    let mut acc: Vec<Vec<f64>> = model.params().tensors().iter().map(|t| vec![0.0; t.len()]).collect();
    let mut total = 0.0;
    for (ex, r) in batch.iter().zip(results) {
        let (loss, g) = r?;
        if !loss.is_finite() || !finite_grads(&g) {
            return Err(TrainError::NonFinite {
                id: ex.id.clone(),
                epoch,
            });
        }
        total += loss;
        accumulate(&mut acc, &g, emb, e);
    }
    let scale = 1.0 / batch.len() as f64;
    for v in acc.iter_mut().flatten() {
        *v *= scale;
    }
    if let Some(clip) = cfg.grad_clip {
        let norm = acc.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        if norm > clip {
            let s = if norm > 0.0 { clip / norm } else { 0.0 };
            for v in acc.iter_mut().flatten() {
                *v *= s;
            }
        }
    }
    adam.step(model.params_mut(), &acc, cfg);
    Ok(total * scale)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_macro_f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were retained.
    pub best_epoch: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model with the best validation macro-F1 parameters.
    pub model: Model,
    /// Optimiser state at the retained epoch.
    pub adam: Adam,
    pub history: History,
}

/// Trains for `cfg.epochs` epochs and keeps the epoch with the best
/// validation macro-F1, the earlier epoch winning ties.
pub fn train(mut model: Model, train: &[Example], val: &[Example], cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyTrain);
    }
    if val.is_empty() {
        return Err(TrainError::EmptyVal);
    }
    let mut adam = Adam::new(model.params());
    let mut history = History::default();
    let mut best: Option<(f64, Params, Adam)> = None;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            cfg.seed,
            &[STREAM_SHUFFLE, epoch as u64],
        )));
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            let seeds: Vec<u64> = (0..chunk.len())
                .map(|p| derive_seed(cfg.seed, &[STREAM_DROPOUT, epoch as u64, b as u64, p as u64]))
                .collect();
            let loss = train_step(&mut model, &mut adam, &batch, &seeds, cfg, epoch)?;
            loss_sum += loss * chunk.len() as f64;
        }
        let ev = evaluate(&model, val, cfg.execution)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss: ev.mean_loss,
            val_macro_f1: ev.metrics.macro_f1,
        };
        log::info!(
            "epoch {epoch}: train loss {:.4}, val loss {:.4}, val macro-F1 {:.4}",
            record.train_loss,
            record.val_loss,
            record.val_macro_f1
        );
        history.epochs.push(record);
        if best.as_ref().is_none_or(|(f, _, _)| record.val_macro_f1 > *f) {
            best = Some((record.val_macro_f1, model.params().clone(), adam.clone()));
            history.best_epoch = epoch;
        }
    }
    let (_, params, adam) = best.expect("at least one epoch");
    *model.params_mut() = params;
    Ok(TrainOutcome { model, adam, history })
}

pub const MAGIC: &[u8; 8] = b"EDU4FDCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint file (bad magic header)")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint is truncated: {0}")]
    Truncated(String),
    #[error("checkpoint is corrupt: {0}")]
    Corrupt(String),
    #[error("checkpoint model config differs in field {field}")]
    ConfigMismatch { field: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    model_config: ModelConfig,
    train_config: TrainConfig,
    vocab: Vocab,
    manifest: Vec<ManifestEntry>,
    epoch: usize,
    seed: u64,
    adam_t: u64,
    run: Option<serde_json::Value>,
}

/// Everything needed to rebuild a trained model and resume its optimiser.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub vocab: Vocab,
    pub params: Params,
    pub adam: Adam,
    pub epoch: usize,
    /// Run seed; every random stream is derived from it.
    pub seed: u64,
    /// Free-form run description stored alongside, such as the resolved
    /// command configuration.
    pub run: Option<serde_json::Value>,
}

impl Checkpoint {
    pub fn model(&self) -> Result<Model, ModelError> {
        Model::from_params(self.model_config.clone(), self.vocab.len(), self.params.clone())
    }

    /// Fails with the first model config field that differs from `expected`.
    pub fn ensure_config(&self, expected: &ModelConfig) -> Result<(), CheckpointError> {
        config_diff(&self.model_config, expected).map_or(Ok(()), |field| Err(CheckpointError::ConfigMismatch { field }))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = Meta {
            model_config: self.model_config.clone(),
            train_config: self.train_config.clone(),
            vocab: self.vocab.clone(),
            manifest: self
                .params
                .manifest()
                .into_iter()
                .map(|(name, shape)| ManifestEntry { name, shape })
                .collect(),
            epoch: self.epoch,
            seed: self.seed,
            adam_t: self.adam.t,
            run: self.run.clone(),
        };
        let json = serde_json::to_vec(&meta).expect("plain data");
        let floats = 3 * self.params.size();
        let mut out = Vec::with_capacity(8 + 4 + 8 + json.len() + floats * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let arrays = self
            .params
            .tensors()
            .iter()
            .map(Tensor::data)
            .chain(self.adam.m.iter().map(Vec::as_slice))
            .chain(self.adam.v.iter().map(Vec::as_slice));
        for a in arrays {
            for v in a {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 8 {
            return Err(CheckpointError::Truncated("missing header".into()));
        }
        if &bytes[..8] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if bytes.len() < 20 {
            return Err(CheckpointError::Truncated("missing header".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let meta_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let body = &bytes[20..];
        let meta_len = usize::try_from(meta_len)
            .ok()
            .filter(|&n| n <= body.len())
            .ok_or_else(|| CheckpointError::Truncated("metadata block".into()))?;
        let meta: Meta = serde_json::from_slice(&body[..meta_len]).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        let data = &body[meta_len..];
        let sizes: Vec<usize> = meta.manifest.iter().map(|e| e.shape.iter().product()).collect();
        let total: usize = sizes.iter().sum();
        let want = 3 * total * 8;
        if data.len() < want {
            return Err(CheckpointError::Truncated(format!(
                "expected {want} bytes of arrays, found {}",
                data.len()
            )));
        }
        if data.len() > want {
            return Err(CheckpointError::Corrupt(format!("{} trailing bytes", data.len() - want)));
        }
        let mut floats = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut take = |n: usize| -> Vec<f64> { floats.by_ref().take(n).collect() };
        let tensors = meta
            .manifest
            .iter()
            .zip(&sizes)
            .map(|(e, &n)| Tensor::new(e.shape.clone(), take(n)).map_err(|e| CheckpointError::Corrupt(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let m = sizes.iter().map(|&n| take(n)).collect();
        let v = sizes.iter().map(|&n| take(n)).collect();
        let names = meta.manifest.into_iter().map(|e| e.name).collect();
        let ck = Checkpoint {
            model_config: meta.model_config,
            train_config: meta.train_config,
            vocab: meta.vocab,
            params: Params::new(names, tensors),
            adam: Adam { t: meta.adam_t, m, v },
            epoch: meta.epoch,
            seed: meta.seed,
            run: meta.run,
        };
        ck.model().map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        Ok(ck)
    }
}

/// First top-level field whose value differs between two configs.
pub fn config_diff(a: &ModelConfig, b: &ModelConfig) -> Option<String> {
    let (a, b) = (serde_json::to_value(a).expect("plain data"), serde_json::to_value(b).expect("plain data"));
    let (a, b) = (a.as_object()?, b.as_object()?);
    a.iter().find(|(k, v)| b.get(*k) != Some(v)).map(|(k, _)| k.clone())
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), CheckpointError> {
    fs::write(path, ck.to_bytes()).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;
    use crate::discourse::{expand_graph, DiscourseGraph, Edge, Relation};
    use crate::model::ModelInput;

    fn small_config() -> ModelConfig {
        ModelConfig {
            emb_dim: 6,
            gru_hidden: 4,
            filters: 5,
            n_bases: 2,
            fusion_hidden: 5,
            ..Default::default()
        }
    }

    fn example(i: usize, cfg: &ModelConfig) -> Example {
        let fake = i % 2 == 1;
        let rel = if fake { Relation::Contrast } else { Relation::Elaboration };
        let marker = if fake { 3 } else { 2 };
        let graph = DiscourseGraph {
            n_nodes: 3,
            edges: vec![Edge::new(0, 1, rel), Edge::new(0, 2, Relation::Elaboration)],
        };
        Example {
            id: format!("d{i}"),
            label: if fake { Label::Fake } else { Label::Real },
            input: ModelInput {
                tokens: vec![vec![marker, 4 + i % 3], vec![5, 6], vec![7, 4, 8]],
                graph: expand_graph(&graph, cfg.add_inverse, cfg.add_self),
            },
        }
    }

    fn data(n: usize, cfg: &ModelConfig) -> Vec<Example> {
        (0..n).map(|i| example(i, cfg)).collect()
    }

    fn quick(epochs: usize) -> TrainConfig {
        TrainConfig {
            lr: 1e-2,
            batch_size: 4,
            epochs,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn defaults_match_reported_hyperparameters() {
        let c = TrainConfig::default();
        assert_eq!((c.lr, c.batch_size, c.epochs), (1e-3, 32, 10));
        assert_eq!((c.beta1, c.beta2, c.eps), (0.9, 0.999, 1e-8));
        assert_eq!(ModelConfig::default().dropout, 0.2);
        c.validate().unwrap();
        assert!(TrainConfig { batch_size: 0, ..c.clone() }.validate().is_err());
        assert!(TrainConfig { lr: -1.0, ..c }.validate().is_err());
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let cfg = small_config();
        let model = Model::new(cfg.clone(), 10, 1).unwrap();
        let before = model.params().clone();
        let out = train(model, &data(8, &cfg), &data(4, &cfg), &TrainConfig { lr: 0.0, ..quick(2) }).unwrap();
        assert_eq!(out.model.params(), &before);
        assert_eq!(out.history.epochs.len(), 2);
    }

    #[test]
    fn zero_clip_leaves_parameters_unchanged() {
        let cfg = small_config();
        let mut model = Model::new(cfg.clone(), 10, 1).unwrap();
        let before = model.params().clone();
        let mut adam = Adam::new(model.params());
        let d = data(4, &cfg);
        let batch: Vec<&Example> = d.iter().collect();
        let tc = TrainConfig {
            grad_clip: Some(0.0),
            ..quick(1)
        };
        train_step(&mut model, &mut adam, &batch, &[1, 2, 3, 4], &tc, 1).unwrap();
        assert_eq!(model.params(), &before);
    }

    #[test]
    fn small_steps_descend() {
        let cfg = ModelConfig {
            dropout: 0.0,
            ..small_config()
        };
        let mut model = Model::new(cfg.clone(), 10, 2).unwrap();
        let d = data(6, &cfg);
        let batch: Vec<&Example> = d.iter().collect();
        let mean_loss = |m: &Model| {
            d.iter()
                .map(|e| m.loss(&e.input, e.label.as_u8(), false, &mut rand::rngs::mock::StepRng::new(0, 0)).unwrap())
                .sum::<f64>()
                / d.len() as f64
        };
        let l0 = mean_loss(&model);
        let mut adam = Adam::new(model.params());
        let tc = TrainConfig { lr: 1e-4, ..quick(1) };
        for _ in 0..2 {
            train_step(&mut model, &mut adam, &batch, &[0; 6], &tc, 1).unwrap();
        }
        assert!(mean_loss(&model) < l0);
    }

    #[test]
    fn confident_correct_document_barely_moves() {
        let cfg = ModelConfig {
            dropout: 0.0,
            ..small_config()
        };
        let mut model = Model::new(cfg.clone(), 10, 2).unwrap();
        let b = model.params_mut().get_mut("classifier.b").unwrap();
        b.data_mut().copy_from_slice(&[-40.0, 40.0]);
        let ex = example(1, &cfg);
        let (loss, g) = model
            .loss_and_grads(&ex.input, 1, false, &mut rand::rngs::mock::StepRng::new(0, 0))
            .unwrap();
        assert!(loss < 1e-11);
        let norm: f64 = g.dense.iter().flatten().flatten().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-11);
    }

    #[test]
    fn training_is_deterministic_across_execution_modes() {
        let cfg = small_config();
        let run = |exec| {
            let model = Model::new(cfg.clone(), 10, init_seed(5)).unwrap();
            let tc = TrainConfig {
                execution: exec,
                ..quick(3)
            };
            train(model, &data(12, &cfg), &data(4, &cfg), &tc).unwrap()
        };
        let a = run(Execution::Parallel);
        let b = run(Execution::Sequential);
        let c = run(Execution::Parallel);
        assert_eq!(a.history, b.history);
        assert_eq!(a.history, c.history);
        assert_eq!(a.model.params(), b.model.params());
        assert!(a.history.epochs.iter().all(|r| r.train_loss >= 0.0 && r.val_loss >= 0.0));
    }

    #[test]
    fn best_epoch_is_first_argmax() {
        let cfg = small_config();
        let model = Model::new(cfg.clone(), 10, 3).unwrap();
        let out = train(model, &data(16, &cfg), &data(6, &cfg), &quick(6)).unwrap();
        let f1s: Vec<f64> = out.history.epochs.iter().map(|r| r.val_macro_f1).collect();
        let max = f1s.iter().cloned().fold(f64::MIN, f64::max);
        let first = f1s.iter().position(|&f| f == max).unwrap() + 1;
        assert_eq!(out.history.best_epoch, first);
        let ev = evaluate(&out.model, &data(6, &cfg), Execution::Sequential).unwrap();
        assert_eq!(ev.metrics.macro_f1, max);
    }

    #[test]
    fn non_finite_loss_names_the_document() {
        let cfg = small_config();
        let mut model = Model::new(cfg.clone(), 10, 1).unwrap();
        model.params_mut().get_mut("classifier.b").unwrap().data_mut()[0] = f64::NAN;
        match train(model, &data(4, &cfg), &data(2, &cfg), &quick(1)) {
            Err(TrainError::NonFinite { id, epoch: 1 }) => assert!(id.starts_with('d')),
            other => panic!("{other:?}"),
        }
    }

    fn checkpoint(cfg: &ModelConfig) -> (Checkpoint, Vec<Example>) {
        let vocab = Vocab::build(
            std::iter::once(["a", "b", "c", "d", "e", "f", "g", "h"].map(String::from).as_slice()),
            1,
        )
        .unwrap();
        assert_eq!(vocab.len(), 10);
        let model = Model::new(cfg.clone(), vocab.len(), 4).unwrap();
        let out = train(model, &data(8, cfg), &data(4, cfg), &quick(2)).unwrap();
        (
            Checkpoint {
                model_config: cfg.clone(),
                train_config: quick(2),
                vocab,
                params: out.model.params().clone(),
                adam: out.adam,
                epoch: out.history.best_epoch,
                seed: 5,
                run: Some(serde_json::json!({"note": "test"})),
            },
            data(4, cfg),
        )
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let cfg = small_config();
        let (ck, docs) = checkpoint(&cfg);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &ck).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.params, ck.params);
        assert_eq!(back.adam, ck.adam);
        assert_eq!(back.vocab, ck.vocab);
        assert_eq!(back.run, ck.run);
        assert_eq!(back.to_bytes(), ck.to_bytes());
        let (m1, m2) = (ck.model().unwrap(), back.model().unwrap());
        for ex in &docs {
            assert_eq!(m1.predict(&ex.input).unwrap(), m2.predict(&ex.input).unwrap());
        }
    }

    #[test]
    fn checkpoint_errors() {
        let cfg = small_config();
        let (ck, _) = checkpoint(&cfg);
        let bytes = ck.to_bytes();
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 5]),
            Err(CheckpointError::Truncated(_))
        ));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..30]), Err(CheckpointError::Truncated(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::BadMagic)));
        let mut ver = bytes.clone();
        ver[8] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(&ver),
            Err(CheckpointError::Version { found: 9, .. })
        ));
        let mut junk = bytes.clone();
        junk[25] = b'#';
        assert!(matches!(Checkpoint::from_bytes(&junk), Err(CheckpointError::Corrupt(_))));
        let other = ModelConfig {
            filters: 7,
            ..cfg.clone()
        };
        match ck.ensure_config(&other) {
            Err(CheckpointError::ConfigMismatch { field }) => assert_eq!(field, "filters"),
            r => panic!("{r:?}"),
        }
        ck.ensure_config(&cfg).unwrap();
        assert!(matches!(
            load_checkpoint(Path::new("/nonexistent/x.ckpt")),
            Err(CheckpointError::Io { .. })
        ));
    }

    #[test]
    fn derived_seeds_differ_by_path() {
        let a = derive_seed(1, &[2, 3]);
        assert_ne!(a, derive_seed(1, &[3, 2]));
        assert_ne!(a, derive_seed(2, &[2, 3]));
        assert_eq!(a, derive_seed(1, &[2, 3]));
    }
}
