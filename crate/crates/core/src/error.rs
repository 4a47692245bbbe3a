use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("non-finite numeric input: {0}")]
    NumericInput(String),
    #[error("solver degenerate: {0}")]
    SolverDegenerate(String),
    #[error("invalid smoothing parameter h = {0} (must be > 0)")]
    InvalidSmoothing(f64),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unsupported task: {0}")]
    UnsupportedTask(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("attack input error: {0}")]
    AttackInput(String),
    #[error("angle undefined for a zero vector")]
    UndefinedAngle,
    #[error("decode error: {0}")]
    Decode(String),
    #[error("round {round}, method {method}{}: {source}", client.map(|c| format!(", client {c}")).unwrap_or_default())]
    Round {
        round: usize,
        method: String,
        client: Option<usize>,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn in_round(self, round: usize, method: &str, client: Option<usize>) -> Error {
        match self {
            e @ Error::Round { .. } => e,
            e => Error::Round {
                round,
                method: method.to_string(),
                client,
                source: Box::new(e),
            },
        }
    }
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape { expected, got })
    }
}
