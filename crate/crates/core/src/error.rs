use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("no subjects")]
    NoSubjects,

    #[error("ragged timepoints for subject {subject}: expected 1..={expected}, found {found:?}")]
    RaggedTimepoints {
        subject: String,
        expected: usize,
        found: Vec<usize>,
    },

    #[error("row {row}: duplicate timepoint {timepoint} for subject {subject}")]
    DuplicateTimepoint {
        row: usize,
        subject: String,
        timepoint: usize,
    },

    #[error("row {row}: subject {subject} appears in both arms")]
    ConflictingArm { row: usize, subject: String },

    #[error("timepoint {timepoint} out of range 1..={max}")]
    TimepointOutOfRange { timepoint: usize, max: usize },

    #[error("invalid timepoint pair ({earlier}, {later}): earlier must precede later")]
    InvalidPair { earlier: usize, later: usize },

    #[error("{analysis} requires at least {needed} timepoints, dataset has {found}")]
    TooFewTimepoints {
        analysis: &'static str,
        needed: usize,
        found: usize,
    },

    #[error("degenerate margin: {0}")]
    DegenerateMargin(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("infinite quantile at probability {0}")]
    InfiniteQuantile(f64),

    #[error("empty arm: {0}")]
    EmptyArm(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("design matrix is rank deficient ({rank} < {columns} columns)")]
    RankDeficient { rank: usize, columns: usize },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("no convergence after {iterations} iterations (max |score| = {max_score:e})")]
    NonConvergence { iterations: usize, max_score: f64 },

    #[error("infinite estimate: category {0} is empty at every timepoint")]
    InfiniteEstimate(String),

    #[error("mismatched fit modes: {0}")]
    MismatchedFitModes(String),

    #[error("fits were computed on different data")]
    MismatchedData,

    #[error("invalid probability table: {0}")]
    InvalidProbabilities(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of an iterative numerical method rather than of the
    /// input data.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. } | Error::InfiniteEstimate(_) | Error::Singular(_)
        )
    }
}
