use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("matrix is not Hermitian (max asymmetry {asymmetry:e})")]
    NotHermitian { asymmetry: f64 },

    #[error("receive correlation of user {user} is not diagonal in the shared basis (off-basis energy {energy:e})")]
    NotJointlyDiagonalizable { user: usize, energy: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("fixed point did not converge after {iterations} iterations (residual {residual:e})")]
    FixedPointDiverged {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("no transmittable mode: every gain coefficient is zero")]
    NoActiveMode,

    #[error("sum-rate efficiency {0} exceeds 1: the equilibrium and capacity solves are inconsistent")]
    InconsistentEfficiency(f64),

    #[error("unknown power allocation policy `{0}`")]
    UnknownPolicy(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status for the command-line tool: 2 for bad input, 3 for
    /// solver failures, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_)
            | Error::NotPsd { .. }
            | Error::NotHermitian { .. }
            | Error::NotJointlyDiagonalizable { .. }
            | Error::UnknownPolicy(_)
            | Error::Config { .. } => 2,
            Error::Numerical(_)
            | Error::FixedPointDiverged { .. }
            | Error::NoActiveMode
            | Error::InconsistentEfficiency(_) => 3,
            Error::Io(_) | Error::Json(_) => 1,
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
