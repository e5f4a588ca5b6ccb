use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("malformed denoiser output: {0}")]
    MalformedOutput(String),
    #[error("unknown denoiser `{0}`")]
    UnknownDenoiser(String),
    #[error("state has no masked positions")]
    NoMaskedPositions,
    #[error("state is already fully unmasked")]
    FullyUnmasked,
    #[error("remote protocol error: {0}")]
    RemoteProtocol(String),
    #[error("invalid ratio pair: alpha_prev {alpha_prev} must be below alpha_t {alpha_t}")]
    InvalidRatioPair { alpha_t: f64, alpha_prev: f64 },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("target ratio {target} is not below the current ratio {current}")]
    TargetRatioReached { current: f64, target: f64 },
    #[error("budget {budget} is smaller than one full decode ({needed} NFE)")]
    BudgetTooSmall { budget: u64, needed: u64 },
    #[error("search tree is exhausted")]
    TreeExhausted,
    #[error("node has no untried actions")]
    NoUntriedActions,
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("terminal state still has masked positions")]
    NotTerminal,
    #[error("test command failed: {0}")]
    CommandFailed(String),
    #[error("could not parse test command output: {0}")]
    Parse(String),
    #[error("codec mismatch: {0}")]
    CodecMismatch(String),
    #[error("token {0} is special on one side but has no declared counterpart")]
    UndeclaredSpecialToken(u32),
    #[error("no codec registered for vocabulary `{0}`")]
    MissingCodec(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
