use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("candidate has no tokens")]
    EmptyCandidate,
    #[error("reference has no n-grams of the requested order")]
    EmptyReference,
    #[error("n-gram order must be at least 1")]
    BadOrder,
    #[error("paired lists differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("malformed answer: {0:?}")]
    MalformedAnswer(String),
}
