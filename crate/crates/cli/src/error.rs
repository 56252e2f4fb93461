use edu4fd::corpus::CorpusError;
use edu4fd::discourse::GraphError;
use edu4fd::evaluation::EvalError;
use edu4fd::model::ModelError;
use edu4fd::pipeline::PrepareError;
use edu4fd::segmenter::SegmentError;
use edu4fd::training::{CheckpointError, TrainError};
use thiserror::Error;

/// Failure classes, each with a fixed process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Failure {
    /// Bad invocation or an unexpected internal error.
    Other,
    Io,
    /// Malformed input, invalid configuration or a checkpoint mismatch.
    Invalid,
    /// Training aborted on a non-finite loss or gradient.
    NonFinite,
}

impl Failure {
    pub fn exit_code(self) -> i32 {
        match self {
            Failure::Other => 1,
            Failure::Io => 2,
            Failure::Invalid => 3,
            Failure::NonFinite => 4,
        }
    }
}

#[derive(Debug, Error)]
#[error("{message}")]
pub struct CliError {
    pub kind: Failure,
    pub message: String,
}

impl CliError {
    pub fn new(kind: Failure, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(Failure::Invalid, message)
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::new(Failure::Io, format!("{}: {source}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }

    /// Prefixes the message with the path it concerns.
    pub fn context(mut self, path: &std::path::Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }
}

fn classify_corpus(e: &CorpusError) -> Failure {
    match e {
        CorpusError::Io { .. } => Failure::Io,
        _ => Failure::Invalid,
    }
}

fn classify_segment(e: &SegmentError) -> Failure {
    match e {
        SegmentError::Io(_) => Failure::Io,
        _ => Failure::Invalid,
    }
}

fn classify_model(e: &ModelError) -> Failure {
    match e {
        ModelError::Tensor(_) => Failure::Other,
        _ => Failure::Invalid,
    }
}

fn classify_train(e: &TrainError) -> Failure {
    match e {
        TrainError::Model(m) => classify_model(m),
        TrainError::NonFinite { .. } => Failure::NonFinite,
        _ => Failure::Invalid,
    }
}

fn classify_prepare(e: &PrepareError) -> Failure {
    match e {
        PrepareError::Segment(s) => classify_segment(s),
        PrepareError::Corpus(c) => classify_corpus(c),
        PrepareError::Graph(_) | PrepareError::TooShort(_) => Failure::Invalid,
    }
}

fn classify_eval(e: &EvalError) -> Failure {
    match e {
        EvalError::Model(m) => classify_model(m),
        EvalError::Trial { source, .. } | EvalError::Variant { source, .. } => classify_eval(source),
        EvalError::Train(t) => classify_train(t),
        EvalError::Prepare(p) => classify_prepare(p),
        EvalError::Io { .. } => Failure::Io,
        EvalError::NoTrials => Failure::Invalid,
    }
}

macro_rules! classified {
    ($($ty:ty => $f:expr),* $(,)?) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                let classify: fn(&$ty) -> Failure = $f;
                Self::new(classify(&e), e.to_string())
            }
        })*
    };
}

classified! {
    CorpusError => classify_corpus,
    SegmentError => classify_segment,
    GraphError => |_| Failure::Invalid,
    ModelError => classify_model,
    TrainError => classify_train,
    PrepareError => classify_prepare,
    EvalError => classify_eval,
    CheckpointError => |e| match e {
        CheckpointError::Io { .. } => Failure::Io,
        _ => Failure::Invalid,
    },
}
