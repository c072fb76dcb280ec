use thiserror::Error;

/// Errors raised by the decoupling, simulation and reduction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix has dependent columns (rank {rank} < {cols})")]
    RankDeficient { rank: usize, cols: usize },

    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    #[error("tractability index exceeds {max_index}; the pencil may not be regular")]
    IndexExceeded { max_index: usize },

    #[error("singular matrix pencil: {0}")]
    SingularPencil(String),

    #[error("system has tractability index {index}, only index 1 can be decoupled")]
    IndexNotOne { index: usize },

    #[error("E1 of the projector chain is singular")]
    SingularE1,

    #[error("decoupled subsystem matrix {which} is singular")]
    SingularSubsystem { which: &'static str },

    #[error("Newton iteration diverged at step {step} (residual {residual:.3e})")]
    NewtonDivergence { step: usize, residual: f64 },

    #[error("iteration matrix is singular at step {step}")]
    SingularIteration { step: usize },

    #[error("algebraic block E_q is singular")]
    SingularAlgebraicBlock,

    #[error("snapshot matrix is empty")]
    EmptySnapshots,

    #[error("snapshots cannot support {requested} DEIM points (numerical rank {rank})")]
    RankDeficiency { requested: usize, rank: usize },

    #[error("reference output group {group} has zero norm")]
    ZeroReference { group: usize },

    #[error("projected pencil of the reduced model is singular")]
    SingularReducedPencil,

    #[error("mass matrix of the index-reduced ODE is singular")]
    SingularMassMatrix,

    #[error("non-physical pressure sum {value:.3e} on pipe {pipe}")]
    NonPhysicalPressure { pipe: usize, value: f64 },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad input rather than numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Dimension(_)
                | Error::InvalidNetwork(_)
                | Error::Parse { .. }
                | Error::InvalidArgument(_)
                | Error::Io(_)
        )
    }

    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "Dimension",
            Error::RankDeficient { .. } => "RankDeficient",
            Error::SingularMatrix(_) => "SingularMatrix",
            Error::IndexExceeded { .. } => "IndexExceeded",
            Error::SingularPencil(_) => "SingularPencil",
            Error::IndexNotOne { .. } => "IndexNotOne",
            Error::SingularE1 => "SingularE1",
            Error::SingularSubsystem { .. } => "SingularSubsystem",
            Error::NewtonDivergence { .. } => "NewtonDivergence",
            Error::SingularIteration { .. } => "SingularIteration",
            Error::SingularAlgebraicBlock => "SingularAlgebraicBlock",
            Error::EmptySnapshots => "EmptySnapshots",
            Error::RankDeficiency { .. } => "RankDeficiency",
            Error::ZeroReference { .. } => "ZeroReference",
            Error::SingularReducedPencil => "SingularReducedPencil",
            Error::SingularMassMatrix => "SingularMassMatrix",
            Error::NonPhysicalPressure { .. } => "NonPhysicalPressure",
            Error::InvalidNetwork(_) => "InvalidNetwork",
            Error::Parse { .. } => "Parse",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::Io(_) => "Io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
