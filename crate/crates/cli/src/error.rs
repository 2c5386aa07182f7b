use ntk_core::NtkError;
use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config field `{field}`: {message}")]
    Config { field: &'static str, message: String },

    #[error("config: {0}")]
    Parse(String),

    #[error("{context}: {source}")]
    Run {
        context: String,
        #[source]
        source: NtkError,
    },

    #[error("missing data: {0}")]
    MissingData(String),

    #[error(transparent)]
    Core(#[from] NtkError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub(crate) fn run(context: impl Into<String>) -> impl FnOnce(NtkError) -> CliError {
        let context = context.into();
        move |source| CliError::Run { context, source }
    }
}
