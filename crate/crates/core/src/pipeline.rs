//! Document preparation: segmentation, graph construction and the
//! two-EDU filter, producing model-ready token and graph data.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, Document, Label, Vocab};
use crate::discourse::{build_graph, DiscourseGraph, GraphError, GraphMode};
use crate::model::{ModelConfig, ModelInput};
use crate::segmenter::{segment_edus, CueLexicon, SegmentError, SegmentMode};

#[derive(Debug, Error)]
pub enum PrepareError {
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("document {0} has fewer than two EDUs after preparation")]
    TooShort(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    #[default]
    Edu,
    Sentence,
}

impl std::str::FromStr for Granularity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "edu" => Ok(Granularity::Edu),
            "sentence" => Ok(Granularity::Sentence),
            other => Err(format!("unknown granularity {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareConfig {
    pub segment: SegmentMode,
    pub graph: GraphMode,
    pub max_edu_len: usize,
    pub granularity: Granularity,
    pub lexicon: CueLexicon,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        Self {
            segment: SegmentMode::Gold,
            graph: GraphMode::Provided,
            max_edu_len: 200,
            granularity: Granularity::Edu,
            lexicon: CueLexicon::default(),
        }
    }
}

impl PrepareConfig {
    /// Segmentation and graph modes actually used: sentence granularity
    /// always means sentence units joined by a complete graph.
    pub fn effective_modes(&self) -> (SegmentMode, GraphMode) {
        match self.granularity {
            Granularity::Edu => (self.segment, self.graph),
            Granularity::Sentence => (SegmentMode::Sentence, GraphMode::Complete),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedDoc {
    pub id: String,
    pub label: Label,
    pub edus: Vec<Vec<String>>,
    pub graph: DiscourseGraph,
}

#[derive(Debug, Clone, Default)]
pub struct Prepared {
    pub docs: Vec<PreparedDoc>,
    /// Ids of documents removed by the two-unit filter.
    pub dropped: Vec<String>,
    /// Non-fatal graph validation messages.
    pub warnings: Vec<String>,
}

/// Prepares one document. `Ok(None)` means it has fewer than two EDUs at
/// EDU granularity. Single-sentence documents at sentence granularity are
/// kept with an edgeless one-node graph.
pub fn prepare_doc(
    doc: &Document,
    cfg: &PrepareConfig,
    warnings: &mut Vec<String>,
) -> Result<Option<PreparedDoc>, PrepareError> {
    let (seg, graph_mode) = cfg.effective_modes();
    let seq = segment_edus(doc, seg, cfg.max_edu_len, &cfg.lexicon)?;
    if seq.len() < 2 {
        if cfg.granularity == Granularity::Edu || seq.is_empty() {
            return Ok(None);
        }
        return Ok(Some(PreparedDoc {
            id: doc.id.clone(),
            label: doc.label,
            edus: seq.edus,
            graph: DiscourseGraph {
                n_nodes: 1,
                edges: Vec::new(),
            },
        }));
    }
    let (graph, report) = build_graph(doc, &seq, graph_mode)?;
    warnings.extend(report.warnings.iter().map(|w| format!("{}: {w}", doc.id)));
    Ok(Some(PreparedDoc {
        id: doc.id.clone(),
        label: doc.label,
        edus: seq.edus,
        graph,
    }))
}

pub fn prepare_corpus(corpus: &Corpus, cfg: &PrepareConfig) -> Result<Prepared, PrepareError> {
    let mut out = Prepared::default();
    for doc in &corpus.documents {
        match prepare_doc(doc, cfg, &mut out.warnings)? {
            Some(p) => out.docs.push(p),
            None => out.dropped.push(doc.id.clone()),
        }
    }
    Ok(out)
}

/// Vocabulary over the EDU tokens of prepared training documents.
pub fn vocab_from_prepared(train: &[PreparedDoc], min_count: usize) -> Result<Vocab, CorpusError> {
    if train.is_empty() {
        return Err(CorpusError::EmptyTrain);
    }
    Vocab::build(train.iter().flat_map(|d| d.edus.iter().map(Vec::as_slice)), min_count)
}

/// A labelled document in model-ready form.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub label: Label,
    pub input: ModelInput,
}

impl Example {
    pub fn new(doc: &PreparedDoc, vocab: &Vocab, config: &ModelConfig) -> Self {
        Self {
            id: doc.id.clone(),
            label: doc.label,
            input: ModelInput::from_prepared(doc, vocab, config),
        }
    }
}

/// Raw documents of a fixed split, with any number of named test sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitDocs {
    pub train: Corpus,
    pub val: Corpus,
    pub tests: Vec<(String, Corpus)>,
}

/// Encoded splits sharing one training vocabulary.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocab,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub tests: Vec<(String, Vec<Example>)>,
}

/// Prepares every split at the model's granularity and encodes it with a
/// vocabulary built from the training split alone. At EDU granularity a
/// document that falls below two EDUs is an error, since filtering belongs
/// before splitting.
pub fn build_dataset(
    splits: &SplitDocs,
    prep: &PrepareConfig,
    model: &ModelConfig,
    min_count: usize,
) -> Result<Dataset, PrepareError> {
    let cfg = PrepareConfig {
        granularity: model.granularity,
        ..prep.clone()
    };
    let run = |c: &Corpus| -> Result<Vec<PreparedDoc>, PrepareError> {
        let p = prepare_corpus(c, &cfg)?;
        match p.dropped.first() {
            Some(id) => Err(PrepareError::TooShort(id.clone())),
            None => Ok(p.docs),
        }
    };
    let train = run(&splits.train)?;
    let val = run(&splits.val)?;
    let tests = splits
        .tests
        .iter()
        .map(|(name, c)| Ok((name.clone(), run(c)?)))
        .collect::<Result<Vec<_>, PrepareError>>()?;
    let vocab = vocab_from_prepared(&train, min_count)?;
    let enc = |docs: &[PreparedDoc]| docs.iter().map(|d| Example::new(d, &vocab, model)).collect::<Vec<_>>();
    Ok(Dataset {
        train: enc(&train),
        val: enc(&val),
        tests: tests.iter().map(|(n, d)| (n.clone(), enc(d))).collect(),
        vocab,
    })
}
