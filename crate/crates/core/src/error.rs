use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid prior box: {0}")]
    InvalidPriorBox(String),

    #[error("invalid parameter vector: {0}")]
    InvalidParameter(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("matrix is not positive semi-definite (min eigenvalue {min_eigenvalue:e}, tolerance {tolerance:e})")]
    NotPositiveSemiDefinite {
        min_eigenvalue: f64,
        tolerance: f64,
    },

    #[error("non-finite value encountered in network layer {layer} during {context}")]
    NonFiniteActivation { layer: usize, context: &'static str },

    #[error("non-finite training loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("degenerate similarity structure: sample {sample} has no {missing} partner")]
    DegenerateSimilarity { sample: usize, missing: &'static str },

    #[error("solver failed to make progress after {iterations} iterations (objective {objective})")]
    SolverDiverged { iterations: usize, objective: f64 },

    #[error("degenerate importance-sampling estimator: all importance ratios are zero")]
    DegenerateEstimator,

    #[error("threshold adaptation stalled at step {step}: gamma {gamma} did not decrease")]
    GammaStalled { step: usize, gamma: f64 },

    #[error("empty particle population")]
    EmptyParticles,

    #[error("zero variance in component {component}; correlation undefined")]
    ZeroVariance { component: usize },

    #[error("external simulator crashed (exit status {status:?}): {detail}")]
    ChildCrash { status: Option<i32>, detail: String },

    #[error("external simulator timed out after {timeout_ms} ms")]
    ChildTimeout { timeout_ms: u64 },

    #[error("malformed simulator reply: {0}")]
    MalformedReply(String),

    #[error("simulation of work item {item_id} failed: {failure}")]
    SimulationFailed {
        item_id: u64,
        failure: crate::scheduler::WorkFailure,
    },

    #[error("batch aborted, all teams lost; pending items: {pending:?}")]
    BatchAborted { pending: Vec<u64> },

    #[error("scheduler wire protocol error: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
