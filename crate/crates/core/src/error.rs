use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure surfaced by the platform's module contracts.
#[derive(Debug, Error)]
pub enum Error {
    // semantic store
    #[error("name must not be empty")]
    EmptyName,
    #[error("`{0}` is already registered with different fields")]
    DuplicateName(String),
    #[error("invalid coordinates: {0}")]
    InvalidCoordinates(String),
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("unknown signal `{0}`")]
    UnknownSignal(String),
    #[error("context ({entity}, {signal}) is already bound")]
    AlreadyBound { entity: String, signal: String },
    #[error("self edge on `{0}`")]
    SelfEdge(String),
    #[error("unknown context ({entity}, {signal})")]
    UnknownContext { entity: String, signal: String },

    // time-series engine
    #[error("unknown series {0}")]
    UnknownSeries(u64),
    #[error("non-finite value at {0}")]
    NonFiniteValue(String),
    #[error("empty range: start must be before end")]
    EmptyRange,
    #[error("invalid frequency `{0}`")]
    InvalidFrequency(String),
    #[error("scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("input is not aligned to a regular grid: {0}")]
    UnalignedInput(String),
    #[error("no weather provider configured")]
    NoProvider,
    #[error("entity `{0}` has no coordinates")]
    MissingCoordinates(String),
    #[error("weather provider failed: {0}")]
    Weather(String),

    // model registry
    #[error("malformed config at `{path}`: {message}")]
    MalformedConfig { path: String, message: String },
    #[error("no runner for {dist_name} {dist_ver}")]
    UnresolvableImplementation { dist_name: String, dist_ver: String },
    #[error("unknown model {0}")]
    UnknownModel(u64),
    #[error("model {0} has no versions")]
    NoVersions(u64),
    #[error("model {model} has no version {version}")]
    UnknownVersion { model: u64, version: u32 },
    #[error("ranking must be a permutation of the deployed models: {0}")]
    IncompleteRanking(String),
    #[error("model blob of {size} bytes exceeds the {cap} byte cap")]
    BlobTooLarge { size: usize, cap: usize },

    // scheduler
    #[error("malformed schedule `{0}`")]
    MalformedSchedule(String),

    // executor
    #[error("runner crashed: {0}")]
    RunnerCrashed(String),
    #[error("runner timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("malformed runner result: {0}")]
    MalformedResult(String),
    #[error("runner reported an error: {0}")]
    RunnerFailed(String),
    #[error("unknown job `{0}`")]
    UnknownJob(String),
    #[error("executor is shut down")]
    ExecutorClosed,

    // forecast store
    #[error("forecast point at {target} is not after issue time {issued}")]
    NonCausalPoint { target: String, issued: String },
    #[error("model {model} already has a forecast issued at {issued}")]
    DuplicateIssue { model: u64, issued: String },
    #[error("length mismatch: {0} predictions vs {1} actuals")]
    LengthMismatch(usize, usize),
    #[error("actual value is zero at index {0}")]
    ZeroActual(usize),
    #[error("no overlap between forecasts and actuals")]
    NoOverlap,
    #[error("forecast points must be strictly increasing in time")]
    UnorderedPoints,

    // scalability harness
    #[error("mean duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("service unavailable: {0}")]
    ServiceUnavailable(String),

    // plumbing
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error("bad config field `{field}`: {message}")]
    BadConfig { field: String, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt journal {path} line {line}: {message}")]
    CorruptJournal {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn unknown_context(entity: &str, signal: &str) -> Self {
        Error::UnknownContext {
            entity: entity.to_string(),
            signal: signal.to_string(),
        }
    }

    /// Short machine-readable name of the variant, used on the wire.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyName => "EmptyName",
            Error::DuplicateName(_) => "DuplicateName",
            Error::InvalidCoordinates(_) => "InvalidCoordinates",
            Error::UnknownEntity(_) => "UnknownEntity",
            Error::UnknownSignal(_) => "UnknownSignal",
            Error::AlreadyBound { .. } => "AlreadyBound",
            Error::SelfEdge(_) => "SelfEdge",
            Error::UnknownContext { .. } => "UnknownContext",
            Error::UnknownSeries(_) => "UnknownSeries",
            Error::NonFiniteValue(_) => "NonFiniteValue",
            Error::EmptyRange => "EmptyRange",
            Error::InvalidFrequency(_) => "InvalidFrequency",
            Error::NonPositiveScale(_) => "NonPositiveScale",
            Error::UnalignedInput(_) => "UnalignedInput",
            Error::NoProvider => "NoProvider",
            Error::MissingCoordinates(_) => "MissingCoordinates",
            Error::Weather(_) => "Weather",
            Error::MalformedConfig { .. } => "MalformedConfig",
            Error::UnresolvableImplementation { .. } => "UnresolvableImplementation",
            Error::UnknownModel(_) => "UnknownModel",
            Error::NoVersions(_) => "NoVersions",
            Error::UnknownVersion { .. } => "UnknownVersion",
            Error::IncompleteRanking(_) => "IncompleteRanking",
            Error::BlobTooLarge { .. } => "BlobTooLarge",
            Error::MalformedSchedule(_) => "MalformedSchedule",
            Error::RunnerCrashed(_) => "RunnerCrashed",
            Error::Timeout(_) => "Timeout",
            Error::MalformedResult(_) => "MalformedResult",
            Error::RunnerFailed(_) => "RunnerFailed",
            Error::UnknownJob(_) => "UnknownJob",
            Error::ExecutorClosed => "ExecutorClosed",
            Error::NonCausalPoint { .. } => "NonCausalPoint",
            Error::DuplicateIssue { .. } => "DuplicateIssue",
            Error::LengthMismatch(..) => "LengthMismatch",
            Error::ZeroActual(_) => "ZeroActual",
            Error::NoOverlap => "NoOverlap",
            Error::UnorderedPoints => "UnorderedPoints",
            Error::NonPositiveDuration(_) => "NonPositiveDuration",
            Error::ServiceUnavailable(_) => "ServiceUnavailable",
            Error::PortInUse(_) => "PortInUse",
            Error::BadConfig { .. } => "BadConfig",
            Error::Io { .. } => "Io",
            Error::CorruptJournal { .. } => "CorruptJournal",
            Error::Json(_) => "Json",
        }
    }
}
