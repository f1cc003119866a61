use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid mixture spec: {0}")]
    InvalidSpec(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("step {t} outside 1..={max}")]
    StepOutOfRange { t: usize, max: usize },

    #[error("class {class} outside 0..{classes}")]
    ClassOutOfRange { class: usize, classes: usize },

    #[error("step {t} has alpha_bar = 1; noise prediction is undefined")]
    DegenerateStep { t: usize },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    TrainingDivergence { epoch: usize, batch: usize, loss: f64 },

    #[error("guidance divergence at t = {t}: non-finite state")]
    GuidanceDivergence { t: usize },

    #[error("all {n} chains diverged; no samples to evaluate")]
    EmptyReport { n: usize },

    #[error("degenerate point set: {0}")]
    DegenerateSet(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing artifact {path}; {hint}")]
    MissingArtifact { path: String, hint: String },

    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
