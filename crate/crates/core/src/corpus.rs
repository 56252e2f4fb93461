//! Labelled news documents: JSON-lines I/O, splits, vocabulary and
//! corpus-level statistics.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discourse::{Edge, Relation};
use crate::segmenter::tokens;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
    #[error("corpus of {n} documents cannot be split into non-empty train/val/test sets")]
    TooSmall { n: usize },
    #[error("split fractions must lie in (0, 1)")]
    BadFraction,
    #[error("cannot build a vocabulary from an empty training split")]
    EmptyTrain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Real = 0,
    Fake = 1,
}

impl Label {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::Real),
            1 => Some(Label::Fake),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.as_u8())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = u8::deserialize(d)?;
        Label::from_u8(v).ok_or_else(|| serde::de::Error::custom(format!("label must be 0 or 1, got {v}")))
    }
}

/// One news article. `edus` and `graph` hold an imported (gold) parse;
/// `root` flags an artificial root placeholder among the `edus`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edus: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<Vec<Edge>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<usize>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: Label) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            label,
            edus: None,
            graph: None,
            root: None,
        }
    }

    /// Number of gold EDUs, not counting a flagged root.
    pub fn edu_count(&self) -> Option<usize> {
        self.edus
            .as_ref()
            .map(|e| e.len() - usize::from(self.root.is_some_and(|r| r < e.len())))
    }

    fn check(&self) -> Result<(), String> {
        if let Some(edus) = &self.edus {
            if let Some(i) = edus.iter().position(|e| tokens(e).is_empty()) {
                return Err(format!("EDU {i} is empty"));
            }
            if let Some(r) = self.root {
                if r >= edus.len() {
                    return Err(format!("root {r} out of range for {} EDUs", edus.len()));
                }
            }
            if let Some(graph) = &self.graph {
                if let Some(e) = graph.iter().find(|e| e.head >= edus.len() || e.dep >= edus.len()) {
                    return Err(format!(
                        "edge ({}, {}) out of range for {} EDUs",
                        e.head,
                        e.dep,
                        edus.len()
                    ));
                }
            }
        } else if self.graph.is_some() {
            return Err("graph given without edus".into());
        } else if self.root.is_some() {
            return Err("root given without edus".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub documents: Vec<Document>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for d in &documents {
            if !seen.insert(d.id.as_str()) {
                return Err(CorpusError::DuplicateId(d.id.clone()));
            }
        }
        Ok(Self { documents })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadedCorpus {
    pub corpus: Corpus,
    /// Documents dropped for having fewer than two gold EDUs.
    pub dropped: usize,
}

/// Parses JSON-lines records. Blank lines are skipped.
pub fn parse_corpus<R: BufRead>(reader: R) -> Result<LoadedCorpus, CorpusError> {
    let mut docs = Vec::new();
    let mut dropped = 0;
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        doc.check().map_err(|message| CorpusError::Malformed {
            line: line_no,
            message: format!("document {}: {message}", doc.id),
        })?;
        if doc.edu_count().is_some_and(|c| c < 2) {
            log::debug!("dropping {}: fewer than 2 EDUs", doc.id);
            dropped += 1;
            continue;
        }
        docs.push(doc);
    }
    Ok(LoadedCorpus {
        corpus: Corpus::new(docs)?,
        dropped,
    })
}

pub fn load_corpus(path: &Path) -> Result<LoadedCorpus, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus(BufReader::new(file))
}

pub fn write_corpus(path: &Path, docs: &[Document]) -> Result<(), CorpusError> {
    let io = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for d in docs {
        let line = serde_json::to_string(d).expect("documents serialize");
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub val_fraction_of_rest: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_fraction: 0.10,
            val_fraction_of_rest: 0.20,
            seed: 0,
        }
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// `(train, val, test)` sizes: `test = round(f_test N)`, then
/// `val = round(f_val (N - test))`, both rounding halves up.
pub fn split_sizes(n: usize, spec: &SplitSpec) -> (usize, usize, usize) {
    let test = round_half_up(spec.test_fraction * n as f64).min(n);
    let rest = n - test;
    let val = round_half_up(spec.val_fraction_of_rest * rest as f64).min(rest);
    (rest - val, val, test)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Corpus,
    pub val: Corpus,
    pub test: Corpus,
}

/// Seeded random partition. Each split keeps the corpus order.
pub fn split_corpus(corpus: &Corpus, spec: &SplitSpec) -> Result<Splits, CorpusError> {
    let ok = |f: f64| f > 0.0 && f < 1.0;
    if !ok(spec.test_fraction) || !ok(spec.val_fraction_of_rest) {
        return Err(CorpusError::BadFraction);
    }
    let n = corpus.len();
    let (n_train, n_val, n_test) = split_sizes(n, spec);
    if n < 10 || n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(CorpusError::TooSmall { n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let pick = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        Corpus {
            documents: idx.iter().map(|&i| corpus.documents[i].clone()).collect(),
        }
    };
    Ok(Splits {
        test: pick(&order[..n_test]),
        val: pick(&order[n_test..n_test + n_val]),
        train: pick(&order[n_test + n_val..]),
    })
}

pub const PAD: usize = 0;
pub const UNK: usize = 1;

/// Lowercased token index with `PAD = 0` and `UNK = 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Builds from token sequences; tokens seen fewer than `min_count` times
    /// are left out. Ids follow descending count, then lexical order.
    pub fn build<'a, I>(sequences: I, min_count: usize) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut any = false;
        for seq in sequences {
            any = true;
            for t in seq {
                *counts.entry(t.to_lowercase()).or_default() += 1;
            }
        }
        if !any {
            return Err(CorpusError::EmptyTrain);
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count.max(1))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens = vec!["<pad>".to_string(), "<unk>".to_string()];
        tokens.extend(kept.into_iter().map(|(t, _)| t));
        Ok(tokens.into())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn lookup(&self, token: &str) -> usize {
        let lower = token.to_lowercase();
        match self.index.get(&lower) {
            Some(&i) if i > UNK => i,
            _ => UNK,
        }
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Vocabulary over the raw-text tokens of a training split.
pub fn build_vocab(train: &Corpus, min_count: usize) -> Result<Vocab, CorpusError> {
    if train.is_empty() {
        return Err(CorpusError::EmptyTrain);
    }
    let seqs: Vec<Vec<String>> = train.documents.iter().map(|d| tokens(&d.text)).collect();
    Vocab::build(seqs.iter().map(Vec::as_slice), min_count)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub real: usize,
    pub fake: usize,
    pub total: usize,
    pub avg_edus: f64,
}

impl CorpusStats {
    pub const ROWS: [&'static str; 4] = [
        "# Real news",
        "# Fake news",
        "# Total news",
        "avg.# EDUs per news",
    ];

    pub fn render(&self) -> String {
        let vals = [
            self.real.to_string(),
            self.fake.to_string(),
            self.total.to_string(),
            format!("{:.2}", self.avg_edus),
        ];
        let mut out = String::new();
        let _ = writeln!(out, "{:<22}{:>12}", "Statistic", "Value");
        for (name, v) in Self::ROWS.iter().zip(vals) {
            let _ = writeln!(out, "{name:<22}{v:>12}");
        }
        out
    }
}

/// Class counts and mean EDU count. `edu_counts[i]` is the EDU count of
/// document `i` (gold or segmented).
pub fn corpus_stats_with(docs: &[Document], edu_counts: &[usize]) -> CorpusStats {
    let real = docs.iter().filter(|d| d.label == Label::Real).count();
    let total = docs.len();
    let avg_edus = if edu_counts.is_empty() {
        0.0
    } else {
        edu_counts.iter().sum::<usize>() as f64 / edu_counts.len() as f64
    };
    CorpusStats {
        real,
        fake: total - real,
        total,
        avg_edus,
    }
}

/// [`corpus_stats_with`] over gold EDU counts; documents without EDUs are
/// left out of the average.
pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let counts: Vec<usize> = corpus.documents.iter().filter_map(Document::edu_count).collect();
    corpus_stats_with(&corpus.documents, &counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationRow {
    pub relation: Relation,
    pub real: f64,
    pub fake: f64,
}

/// Per-class relation frequencies over the 19-relation taxonomy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationStats {
    pub rows: Vec<RelationRow>,
    pub edges_real: usize,
    pub edges_fake: usize,
    pub warnings: Vec<String>,
}

impl RelationStats {
    pub fn frequency(&self, rel: Relation, label: Label) -> f64 {
        self.rows
            .iter()
            .find(|r| r.relation == rel)
            .map_or(0.0, |r| if label == Label::Real { r.real } else { r.fake })
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<16}{:>8}{:>8}", "relation", "Real", "Fake");
        for r in &self.rows {
            let _ = writeln!(out, "{:<16}{:>8.3}{:>8.3}", r.relation.name(), r.real, r.fake);
        }
        out
    }

    /// JSON form with frequencies rounded to three decimals.
    pub fn to_json(&self) -> serde_json::Value {
        let r3 = |v: f64| (v * 1000.0).round() / 1000.0;
        serde_json::json!({
            "rows": self.rows.iter().map(|r| serde_json::json!({
                "relation": r.relation.name(),
                "Real": r3(r.real),
                "Fake": r3(r.fake),
            })).collect::<Vec<_>>(),
            "edges": {"Real": self.edges_real, "Fake": self.edges_fake},
            "warnings": self.warnings,
        })
    }
}

/// Relation frequencies from `(label, edges)` pairs. Untyped (`Generic`)
/// edges are not counted.
pub fn relation_stats_from<'a, I>(graphs: I) -> RelationStats
where
    I: IntoIterator<Item = (Label, &'a [Edge])>,
{
    let mut counts: [BTreeMap<Relation, usize>; 2] = Default::default();
    let mut totals = [0usize; 2];
    let mut generic = 0;
    for (label, edges) in graphs {
        for e in edges {
            if !e.rel.is_taxonomy() {
                generic += 1;
                continue;
            }
            *counts[label.index()].entry(e.rel).or_default() += 1;
            totals[label.index()] += 1;
        }
    }
    let mut warnings = Vec::new();
    for (label, name) in [(0, "Real"), (1, "Fake")] {
        if totals[label] == 0 {
            warnings.push(format!("class {name} has no edges; frequencies reported as 0"));
        }
    }
    if generic > 0 {
        warnings.push(format!("{generic} untyped edges ignored"));
    }
    let freq = |c: usize, total: usize| if total == 0 { 0.0 } else { c as f64 / total as f64 };
    let rows = Relation::TAXONOMY
        .iter()
        .map(|&relation| RelationRow {
            relation,
            real: freq(counts[0].get(&relation).copied().unwrap_or(0), totals[0]),
            fake: freq(counts[1].get(&relation).copied().unwrap_or(0), totals[1]),
        })
        .collect();
    RelationStats {
        rows,
        edges_real: totals[0],
        edges_fake: totals[1],
        warnings,
    }
}

/// Relation frequencies over the stored graphs (a flagged root's edges
/// included, as in an imported parse).
pub fn relation_stats(corpus: &Corpus) -> RelationStats {
    relation_stats_from(
        corpus
            .documents
            .iter()
            .map(|d| (d.label, d.graph.as_deref().unwrap_or(&[]))),
    )
}
