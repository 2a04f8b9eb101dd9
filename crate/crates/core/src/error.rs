use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid log-scores: {0}")]
    InvalidScores(String),

    #[error("invalid posterior matrix: {0}")]
    InvalidPosteriors(String),

    #[error("invalid prior vector: {0}")]
    InvalidPrior(String),

    #[error("invalid labels: {0}")]
    InvalidLabels(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("label {label} has no token log-probabilities")]
    EmptyLabel { label: usize },

    #[error("label {label}, token {token}: log-probability {value} is not <= 0")]
    InvalidTokenProb { label: usize, token: usize, value: f64 },

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("class {class} has zero count / zero probability")]
    ZeroClassCount { class: usize },

    #[error("prior has zero mass on class {class}")]
    DegeneratePrior { class: usize },

    #[error("class {class} receives no posterior mass in the training set")]
    DegenerateColumn { class: usize },

    #[error("reference cross-entropy is zero")]
    DegenerateReference,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: schema error: {message}")]
    Schema { line: usize, message: String },

    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
