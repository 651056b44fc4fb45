use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record at line {line}: {detail}")]
    MalformedRecord { line: usize, detail: String },
    #[error("duplicate report id {0:?}")]
    DuplicateReportId(String),
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("no diagnosis section found")]
    NoDiagnosisSection,
    #[error("report {0:?} has no gold label")]
    UnlabeledReport(String),
    #[error("unknown diagnosis label {0:?}")]
    UnknownLabel(String),
    #[error("need at least 2 patients to split, found {0}")]
    TooFewPatients(usize),
    #[error("need at least 2 reports to split, found {0}")]
    TooFewReports(usize),
    #[error("split fraction {fraction} of {n} items leaves one side empty")]
    EmptyPartition { fraction: f64, n: usize },
    #[error("split does not match corpus: {0}")]
    InvalidSplit(String),
    #[error("invalid fraction {0}; expected a value in (0, 1)")]
    InvalidFraction(f64),
    #[error("cannot load vocabulary {path}: {detail}")]
    VocabLoadError { path: PathBuf, detail: String },
    #[error("report {0:?} is missing the requested text field")]
    MissingField(String),
    #[error("gold and predicted lists differ in length ({gold} vs {pred})")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("label {label} out of range for {k} classes")]
    LabelOutOfRange { label: usize, k: usize },
    #[error("beta must be positive and finite, got {0}")]
    InvalidBeta(f64),
    #[error("confusion matrix is degenerate: {0}")]
    DegenerateMatrix(String),
    #[error("malformed probabilities: {0}")]
    MalformedProbabilities(String),
    #[error("AUROC needs both positive and negative examples")]
    SingleClassPresent,
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("training failed: {0}")]
    TrainingFailure(String),
    #[error("numerical overflow during training: {0}")]
    NumericalOverflow(String),
    #[error("all {0} trials failed")]
    AllTrialsFailed(usize),
    #[error("invalid trial config: {0}")]
    InvalidTrial(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("worker protocol error: {0}")]
    Protocol(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Backend,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidSpec(_)
            | Error::InvalidFraction(_)
            | Error::InvalidBeta(_)
            | Error::InvalidTrial(_)
            | Error::Config(_) => ErrorKind::Usage,
            Error::BackendUnavailable(_)
            | Error::TrainingFailure(_)
            | Error::NumericalOverflow(_)
            | Error::AllTrialsFailed(_)
            | Error::Protocol(_) => ErrorKind::Backend,
            _ => ErrorKind::Data,
        }
    }
}
