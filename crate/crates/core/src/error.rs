use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at {context}: {message}")]
    Parse { context: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("attribute `{attr}` varies within trace `{trace}`")]
    VaryingAttribute { trace: String, attr: String },

    #[error("attribute `{0}` is already present on the log")]
    AttributeCollision(String),

    #[error("trace `{trace}` has no attribute `{attr}`")]
    MissingAttribute { trace: String, attr: String },

    #[error("unknown {kind} label `{label}`")]
    OutOfVocabulary { kind: String, label: String },

    #[error("cannot split log: {0}")]
    Split(String),

    #[error("non-finite value in {0}")]
    Numeric(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("incompatible artifacts: {0}")]
    Compatibility(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }
}
