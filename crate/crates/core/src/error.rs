use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("ill-conditioned model: {0}")]
    IllConditioned(String),

    #[error("sampler diagnostic failure: acceptance rate {acceptance_rate:.3} (step size {step_size:.3e})")]
    SamplerDiagnostic { acceptance_rate: f64, step_size: f64 },

    #[error("latent integration failed: {0}")]
    Integration(String),

    #[error("projection onto inputs {subset:?} failed: {reason}")]
    ProjectionFailure { subset: Vec<usize>, reason: String },

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("search failed: {0}")]
    Search(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("experiment failed: {0}")]
    Experiment(String),

    #[error("report schema version {found} does not match expected {expected}")]
    SchemaMismatch { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("recipe parse error: {0}")]
    Recipe(#[from] toml::de::Error),
}

impl Error {
    /// Short machine-readable tag used in CLI error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::IllConditioned(_) => "ill_conditioned",
            Error::SamplerDiagnostic { .. } => "sampler_diagnostic",
            Error::Integration(_) => "integration",
            Error::ProjectionFailure { .. } => "projection_failure",
            Error::SingularDesign(_) => "singular_design",
            Error::Search(_) => "search",
            Error::Data(_) => "data",
            Error::Experiment(_) => "experiment",
            Error::SchemaMismatch { .. } => "schema_mismatch",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
            Error::Recipe(_) => "recipe",
        }
    }
}
