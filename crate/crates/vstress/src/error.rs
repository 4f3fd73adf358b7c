use std::path::PathBuf;

use vstress_core::Error as CoreError;

/// Failure to turn case text into a valid [`vstress_core::GridCase`].
#[derive(Debug, thiserror::Error)]
pub enum CaseError {
    #[error("malformed case: {0}")]
    Malformed(String),
    #[error(transparent)]
    Invalid(#[from] CoreError),
}

/// Everything a command can fail with. [`AppError::exit_code`] maps it to
/// the process status.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot read {path}: {source}")]
    Input {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Case {
        path: PathBuf,
        #[source]
        source: CaseError,
    },
    #[error("{path}: {message}")]
    Table { path: PathBuf, message: String },
    #[error("plant power flow diverged at round {round}: {reason}")]
    PlantDiverged { round: usize, reason: CoreError },
    #[error("controller diverged at round {round} (residual {residual:e})")]
    ControllerDiverged { round: usize, residual: f64 },
    #[error(transparent)]
    Core(#[from] CoreError),
}

pub mod exit {
    pub const OK: i32 = 0;
    /// Bad arguments or an output file that cannot be written.
    pub const USAGE: i32 = 1;
    pub const ASSUMPTION: i32 = 2;
    /// Missing, unreadable or malformed input files and invalid case data.
    pub const PARSE: i32 = 3;
    pub const INFEASIBLE: i32 = 4;
    pub const PLANT_DIVERGED: i32 = 5;
    /// Solver failures: no convergence, singular systems, overflow.
    pub const NUMERICAL: i32 = 6;
}

fn core_code(e: &CoreError) -> i32 {
    match e {
        CoreError::AssumptionViolated(_) => exit::ASSUMPTION,
        CoreError::InvalidTopology(_) => exit::PARSE,
        CoreError::Infeasible(_) | CoreError::InfeasibleBox { .. } => exit::INFEASIBLE,
        CoreError::Domain(_) => exit::USAGE,
        CoreError::SingularSystem
        | CoreError::NotConverged { .. }
        | CoreError::Overflow { .. }
        | CoreError::Dimension { .. }
        | CoreError::Internal(_) => exit::NUMERICAL,
    }
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) | AppError::Output { .. } => exit::USAGE,
            AppError::Input { .. } | AppError::Table { .. } => exit::PARSE,
            AppError::Case { source, .. } => match source {
                CaseError::Malformed(_) => exit::PARSE,
                CaseError::Invalid(e) => core_code(e),
            },
            AppError::PlantDiverged { .. } => exit::PLANT_DIVERGED,
            AppError::ControllerDiverged { .. } => exit::NUMERICAL,
            AppError::Core(e) => core_code(e),
        }
    }
}
