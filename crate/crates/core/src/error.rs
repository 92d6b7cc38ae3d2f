use thiserror::Error;

/// Errors raised by the simulator, feature blocks and training loop.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("qubit index {index} out of range for {num_qubits}-qubit register")]
    QubitIndex { index: usize, num_qubits: usize },

    #[error("gate {position}: {source}")]
    GateAt {
        position: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("no embedding for sample id {0}")]
    Lookup(u64),

    #[error("frozen block violation: {0}")]
    FrozenBlock(String),

    #[error("unsupported evaluation mode: {0}")]
    UnsupportedMode(String),

    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error("training diverged at epoch {epoch} (gradient norm {grad_norm})")]
    Divergence { epoch: usize, grad_norm: f64 },

    #[error("problem size exceeds desk-scale budget: {0}")]
    Scale(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
