use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid joint distribution: {0}")]
    InvalidJoint(String),

    #[error("positivity violated in cell (u = {u}, x = {x}): P(A = {arm} | U, X) = {prob}")]
    Positivity {
        u: usize,
        x: usize,
        arm: u8,
        prob: f64,
    },

    #[error("no bridge exists: {0}")]
    NoBridge(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("variable `{0}` has zero range and cannot be rescaled")]
    ZeroRange(String),

    #[error("basis: {0}")]
    Basis(String),

    #[error("need more observations than instrument basis functions (n = {n}, k = {k}); use a smaller instrument basis")]
    TooFewObservations { n: usize, k: usize },

    #[error("no observations with A = {0}")]
    EmptyArm(u8),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("multiplier bisection failed to bracket after {0} doublings; inputs are badly scaled")]
    Bracket(usize),

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("simulation: {0}")]
    Simulation(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
