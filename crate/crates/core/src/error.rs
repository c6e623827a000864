use thiserror::Error;

/// Errors raised by the scoring, pricing, matching, simulation and
/// compliance engines.
///
/// Each variant has a stable kebab-case [`Error::kind`] that appears in
/// reports and CLI diagnostics.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("incomplete-round: {0}")]
    IncompleteRound(String),
    #[error("too-few-respondents: need at least 2, found {0}")]
    TooFewRespondents(usize),
    #[error("invalid-frequencies: {0}")]
    InvalidFrequencies(String),
    #[error("invalid-round: {0}")]
    InvalidRound(String),
    #[error("missing-question: no question for scenario `{scenario}` at tier {tier}")]
    MissingQuestion { scenario: String, tier: usize },
    #[error("invalid-compute: {0}")]
    InvalidCompute(String),
    #[error("out-of-range: effective compute {value:e} outside tier span [{lo:e}, {hi:e}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },
    #[error("participation-required: `{0}` did not participate in the last survey")]
    ParticipationRequired(String),
    #[error("invalid-schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid-model: {0}")]
    InvalidModel(String),
    #[error("impossible-signal: signal {0} has zero marginal probability")]
    ImpossibleSignal(usize),
    #[error("invalid-qf-round: {0}")]
    InvalidQfRound(String),
    #[error("insufficient-data: {0}")]
    InsufficientData(String),
    #[error("invalid-penalties: {0}")]
    InvalidPenalties(String),
    #[error("invalid-event-log: line {line}: {message}")]
    InvalidEventLog { line: usize, message: String },
}

impl Error {
    pub fn kind(&self) -> &'static str {
        match self {
            Error::IncompleteRound(_) => "incomplete-round",
            Error::TooFewRespondents(_) => "too-few-respondents",
            Error::InvalidFrequencies(_) => "invalid-frequencies",
            Error::InvalidRound(_) => "invalid-round",
            Error::MissingQuestion { .. } => "missing-question",
            Error::InvalidCompute(_) => "invalid-compute",
            Error::OutOfRange { .. } => "out-of-range",
            Error::ParticipationRequired(_) => "participation-required",
            Error::InvalidSchedule(_) => "invalid-schedule",
            Error::InvalidModel(_) => "invalid-model",
            Error::ImpossibleSignal(_) => "impossible-signal",
            Error::InvalidQfRound(_) => "invalid-qf-round",
            Error::InsufficientData(_) => "insufficient-data",
            Error::InvalidPenalties(_) => "invalid-penalties",
            Error::InvalidEventLog { .. } => "invalid-event-log",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
