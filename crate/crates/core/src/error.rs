use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training error: non-finite value in {0}")]
    Training(String),

    #[error("gradient check: non-finite function value at coordinate {coordinate}")]
    GradCheck { coordinate: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("data error at primitive {index}: {detail}")]
    Data { index: usize, detail: String },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("state error: {0}")]
    State(String),

    #[error("empty scene")]
    EmptyScene,

    #[error("input error: {0}")]
    Input(String),

    #[error("unknown instruction: {instruction:?} (supported: {known})")]
    UnknownInstruction { instruction: String, known: String },

    #[error("ambiguous instruction: {instruction:?} matches {editors:?}")]
    AmbiguousInstruction {
        instruction: String,
        editors: Vec<String>,
    },

    #[error("schedule error at t={t}: {detail}")]
    Schedule { t: usize, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("png: {0}")]
    Png(String),
}

impl Error {
    pub fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
