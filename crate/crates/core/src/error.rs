use num_complex::Complex64;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("resolvent is singular at z = {point} (evaluating on a system pole?)")]
    Singular { point: Complex64 },

    #[error("householder direction has near-zero norm ({norm:e})")]
    DegenerateDirection { norm: f64 },

    #[error("delay matrix is singular at z = 0")]
    SingularDelay,

    #[error("t60 must be positive, got {0}")]
    Domain(f64),

    #[error("comb energy diverges for gamma = {0}")]
    Divergent(f64),

    #[error("delay design infeasible: {reason}; achievable order {achievable}")]
    Design { reason: String, achievable: usize },

    #[error("root finder did not converge after {sweeps} sweeps: {unconverged} roots above tolerance, max correction {max_correction:e}")]
    NoConvergence {
        sweeps: usize,
        unconverged: usize,
        max_correction: f64,
    },

    #[error("poles {first} and {second} are closer than {separation:e}; modal model requires simple poles")]
    Multiplicity {
        first: usize,
        second: usize,
        separation: f64,
    },

    #[error("modal decomposition is empty")]
    EmptyDecomposition,

    #[error("training diverged at epoch {epoch}: {reason}")]
    Divergence { epoch: usize, reason: String },

    #[error("band {center_hz} Hz never decays by 25 dB within the usable part of the response")]
    InsufficientDecay { center_hz: f64 },

    #[error("filter section {index} is unstable")]
    UnstableFilter { index: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("unknown FDN type '{0}'")]
    UnknownType(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),
}
