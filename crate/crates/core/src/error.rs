use crate::executor::JobState;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure a platform operation can report.
///
/// Each variant maps to one stable, machine-readable code (see [`Error::code`])
/// which the gateway puts on the wire.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("authentication required")]
    Unauthorized,
    #[error("not authorized")]
    NotAuthorized,
    #[error("bad credentials")]
    BadCredentials,
    #[error("{0} not found")]
    NotFound(&'static str),
    #[error("name already in use: {0}")]
    DuplicateName(String),
    #[error("name must not be empty")]
    EmptyName,
    #[error("analytic artifact must not be empty")]
    EmptyArtifact,
    #[error("invalid policy: {0}")]
    InvalidPolicy(&'static str),
    #[error("invalid range: from must be < to")]
    InvalidRange,
    #[error("invalid bucket: {0}")]
    InvalidBucket(&'static str),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("unknown runtime: {0}")]
    UnknownRuntime(String),
    #[error("dataset is expired")]
    DatasetExpired,
    #[error("job already in terminal state {0}")]
    AlreadyTerminal(JobState),
    #[error("no result document")]
    ResultMissing,
    #[error("malformed result document: {0}")]
    ResultMalformed(String),
    #[error("score {0} outside [0, 100]")]
    ScoreOutOfRange(f64),
    #[error("metric binding already exists")]
    DuplicateBinding,
    #[error("weight must be a finite number > 0")]
    InvalidWeight,
    #[error("message body must not be empty")]
    EmptyBody,
    #[error("message body exceeds {0} bytes")]
    BodyTooLarge(usize),
    #[error("limit must be within 1..=1000")]
    InvalidLimit,
    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("storage failure: {0}")]
    Storage(String),
    #[error("storage corrupt: {0}")]
    StorageCorrupt(String),
    #[error("cannot bind listener: {0}")]
    BindFailure(String),
}

/// Every code [`Error::code`] can produce, plus the two routing codes the
/// gateway emits on its own.
pub const ERROR_CODES: &[&str] = &[
    "unauthorized",
    "not-authorized",
    "bad-credentials",
    "not-found",
    "duplicate-name",
    "empty-name",
    "empty-artifact",
    "invalid-policy",
    "invalid-range",
    "invalid-bucket",
    "invalid-query",
    "unknown-runtime",
    "dataset-expired",
    "already-terminal",
    "result-missing",
    "result-malformed",
    "score-out-of-range",
    "duplicate-binding",
    "invalid-weight",
    "empty-body",
    "body-too-large",
    "invalid-limit",
    "invalid-spec",
    "bad-request",
    "config-invalid",
    "storage-failure",
    "storage-corrupt",
    "bind-failure",
    "unknown-route",
    "method-not-allowed",
];

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::Unauthorized => "unauthorized",
            Error::NotAuthorized => "not-authorized",
            Error::BadCredentials => "bad-credentials",
            Error::NotFound(_) => "not-found",
            Error::DuplicateName(_) => "duplicate-name",
            Error::EmptyName => "empty-name",
            Error::EmptyArtifact => "empty-artifact",
            Error::InvalidPolicy(_) => "invalid-policy",
            Error::InvalidRange => "invalid-range",
            Error::InvalidBucket(_) => "invalid-bucket",
            Error::InvalidQuery(_) => "invalid-query",
            Error::UnknownRuntime(_) => "unknown-runtime",
            Error::DatasetExpired => "dataset-expired",
            Error::AlreadyTerminal(_) => "already-terminal",
            Error::ResultMissing => "result-missing",
            Error::ResultMalformed(_) => "result-malformed",
            Error::ScoreOutOfRange(_) => "score-out-of-range",
            Error::DuplicateBinding => "duplicate-binding",
            Error::InvalidWeight => "invalid-weight",
            Error::EmptyBody => "empty-body",
            Error::BodyTooLarge(_) => "body-too-large",
            Error::InvalidLimit => "invalid-limit",
            Error::InvalidSpec(_) => "invalid-spec",
            Error::BadRequest(_) => "bad-request",
            Error::ConfigInvalid(_) => "config-invalid",
            Error::Storage(_) => "storage-failure",
            Error::StorageCorrupt(_) => "storage-corrupt",
            Error::BindFailure(_) => "bind-failure",
        }
    }

    /// True for faults on the server side rather than in the request.
    pub fn is_server_fault(&self) -> bool {
        matches!(
            self,
            Error::Storage(_) | Error::StorageCorrupt(_) | Error::BindFailure(_) | Error::ConfigInvalid(_)
        )
    }
}

impl From<rusqlite::Error> for Error {
    fn from(e: rusqlite::Error) -> Self {
        Error::Storage(e.to_string())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Storage(e.to_string())
    }
}
