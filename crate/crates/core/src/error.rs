use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("cannot stratify: {0}")]
    CannotStratify(String),
    #[error("degenerate prior: training data must contain both classes")]
    DegeneratePrior,
    #[error("diverged; lower lr")]
    Diverged,
    #[error("slalom diverged; reduce lr")]
    SlalomDiverged,
    #[error("token not fitted: {0:?}")]
    TokenNotFitted(String),
    #[error("exact oracle limit exceeded: {0} tokens (max {max})", max = crate::explain::EXACT_SHAP_MAX_TOKENS)]
    ExactLimitExceeded(usize),
    #[error("no snippets")]
    NoSnippets,
    #[error("auroc undefined: labels contain a single class")]
    AurocUndefined,
    #[error("alpha undefined: {0}")]
    AlphaUndefined(String),
    #[error("kappa undefined: chance agreement is 1")]
    KappaUndefined,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("misaligned items: {0}")]
    Misaligned(String),
    #[error("api unavailable: {0}")]
    ApiUnavailable(String),
    #[error("unparseable completion: {0:?}")]
    UnparseableCompletion(String),
    #[error("protocol error: {reason}; offending line: {line}")]
    Protocol { reason: String, line: String },
    #[error("bridge closed")]
    BridgeClosed,
    #[error("predictor failed while evaluating token {index}: {source}")]
    AtToken {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("fold {fold} failed: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("train/test overlap detected for segment id {0:?}")]
    Overlap(String),
    #[error("all {} trials failed: {}", .0.len(), .0.join("; "))]
    AllTrialsFailed(Vec<String>),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
