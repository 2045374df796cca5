use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("value {value} outside the encodable range (|x| < 2^{int_bits})")]
    Range { value: f64, int_bits: u32 },

    #[error("non-finite value in protocol input: {0}")]
    NonFinite(f64),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("share domain mismatch: {0}")]
    DomainMismatch(&'static str),

    #[error("multiplication triple {0} was already consumed")]
    TripleReuse(u64),

    #[error("dealer bundle exhausted: needed {needed} more `{kind}` items")]
    DealerExhausted { kind: &'static str, needed: u64 },

    #[error("insufficient shares: need {needed}, got {got}")]
    InsufficientShares { needed: usize, got: usize },

    #[error("insufficient parties: degree reduction needs n >= 2t+1 (t={threshold}, n={parties})")]
    InsufficientParties { threshold: usize, parties: usize },

    #[error("division by zero (opened masked denominator is 0)")]
    DivisionByZero,

    #[error("shape error: {0}")]
    Shape(String),

    #[error("round-order violation: expected round {expected}, got {got}")]
    RoundOrder { expected: u64, got: u64 },

    #[error("transport failure: {0}")]
    Transport(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Attributes the error to a pipeline stage; the innermost stage wins.
    pub fn in_stage(self, stage: impl Into<String>) -> Error {
        if matches!(self, Error::Stage { .. }) {
            return self;
        }
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    /// True for transport failures, including ones attributed to a stage.
    pub fn is_transport(&self) -> bool {
        match self {
            Error::Transport(_) => true,
            Error::Stage { source, .. } => source.is_transport(),
            _ => false,
        }
    }
}
