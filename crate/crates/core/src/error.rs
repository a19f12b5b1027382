use thiserror::Error;

#[derive(Debug, Error)]
pub enum DesignError {
    #[error("cannot read design file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("design file is malformed: {0}")]
    Parse(String),
    #[error("invalid design: {0}")]
    Invalid(String),
    #[error("invalid assignment: {0}")]
    InvalidAssignment(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider refused or returned no completion: {0}")]
    Refusal(String),
    #[error("latent model does not match the design: {0}")]
    ModelMismatch(String),
}

impl ProviderError {
    /// Short machine-readable tag stored in run logs.
    pub fn kind(&self) -> &'static str {
        match self {
            ProviderError::Auth(_) => "auth",
            ProviderError::RateLimited { .. } => "rate_limited",
            ProviderError::Transport(_) => "transport",
            ProviderError::Refusal(_) => "refusal",
            ProviderError::ModelMismatch(_) => "model_mismatch",
        }
    }
}

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("corrupt run log at line {line}: {reason}")]
    CorruptLog { line: usize, reason: String },
    #[error("run log I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("run log write failed after {completed} record(s): {source}")]
    Sink {
        completed: usize,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Design(#[from] DesignError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("no usable records")]
    EmptyData,
    #[error("records are inconsistent with the requested grouping: {0}")]
    InvalidGrouping(String),
    #[error("design matrix is rank deficient; dependent column(s): {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },
    #[error("clustered standard errors need at least 2 clusters, got {0}")]
    TooFewClusters(usize),
    #[error("no records match the requested cell")]
    EmptyCell,
    #[error("unknown factor `{0}`")]
    UnknownFactor(String),
    #[error("record for vignette {vignette} has an invalid assignment: {reason}")]
    InvalidRecord { vignette: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReportError {
    #[error("tables do not share the same coefficient rows")]
    ShapeMismatch,
    #[error("nothing to render")]
    EmptyData,
    #[error("{0} column label(s) given for {1} table(s)")]
    LabelCount(usize, usize),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    Parse { path: std::path::PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Design(#[from] DesignError),
}

/// Anything a CLI command can fail with; [`PipelineError::exit_code`] maps
/// it onto the process exit status.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Runner(#[from] RunnerError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("cannot access {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Schedule keys still lack a Valid record after this pass.
    #[error("{0}")]
    Incomplete(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Runner(RunnerError::InvalidConfig(_) | RunnerError::Design(_)) => 2,
            PipelineError::Runner(_) | PipelineError::Io { .. } => 1,
            PipelineError::Stats(
                StatsError::EmptyData | StatsError::EmptyCell | StatsError::TooFewClusters(_) | StatsError::RankDeficient { .. },
            ) => 4,
            PipelineError::Stats(_) => 2,
            PipelineError::Report(ReportError::EmptyData) => 4,
            PipelineError::Report(_) => 1,
            PipelineError::Provider(ProviderError::Auth(_)) => 3,
            PipelineError::Provider(ProviderError::ModelMismatch(_)) => 2,
            PipelineError::Provider(_) | PipelineError::Incomplete(_) => 5,
        }
    }
}
