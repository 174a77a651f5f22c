use crate::corpus::RecordError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] vec2gloss_numerics::NumericsError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{} malformed record(s); first: {}", .0.len(), .0[0])]
    Records(Vec<RecordError>),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("span/lemma mismatch: span covers {found:?}, lemma is {expected:?}")]
    SpanMismatch { expected: String, found: String },
    #[error("invalid target mask: {0}")]
    InvalidMask(String),
    #[error("empty token sequence")]
    EmptySequence,
    #[error("sequence of {len} tokens exceeds max_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("gloss of {len} characters cannot host a corrupted span")]
    GlossTooShort { len: usize },
    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss { epoch: usize, step: u64, detail: String },
    #[error("no replacement candidate: {0}")]
    NoCandidate(String),
    #[error("annotation for {sense_id}: {reason}")]
    Annotation { sense_id: String, reason: String },
    #[error("{pos}: {have} distractor(s) available, {need} needed")]
    InsufficientDistractors { pos: String, have: usize, need: usize },
    #[error("split leaves one side empty ({n} senses, eval fraction {fraction})")]
    EmptySplit { n: usize, fraction: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
