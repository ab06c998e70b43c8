use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in `{op}`: {detail}")]
    Shape { op: String, detail: String },

    #[error("backward called before any forward pass was recorded")]
    BackwardBeforeForward,

    #[error("backward requires a scalar loss node, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("context signal has length {got}, expected {expected}")]
    ContextLength { expected: usize, got: usize },

    #[error("zero-norm reference parameters in relative change")]
    ZeroNormReference,

    #[error("vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("replay buffer holds {size} transitions, cannot sample {batch}")]
    InsufficientSamples { size: usize, batch: usize },

    #[error("action {action} out of range for {count} actions")]
    ActionOutOfRange { action: usize, count: usize },

    #[error("step called on a terminated episode; reset first")]
    StepAfterTerminal,

    #[error("network structures differ: {0}")]
    StructureMismatch(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("unknown environment `{0}`")]
    UnknownEnv(String),

    #[error("training aborted at frame {frame}: {source}")]
    AtFrame {
        frame: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            op: op.into(),
            detail: detail.into(),
        }
    }
}
