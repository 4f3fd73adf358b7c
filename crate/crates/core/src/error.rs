use alloc::string::String;
use alloc::vec::Vec;

/// Which part of the load-block assumptions failed.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// Off-diagonal entry of the load block is negative.
    NotMetzler {
        row_bus: u32,
        col_bus: u32,
        value: f64,
    },
    /// Diagonal entry of the load block is not strictly negative.
    NonNegativeDiagonal { bus: u32, value: f64 },
    /// Largest eigenvalue of the load block is not below the stability margin.
    NotHurwitz { max_eigenvalue: f64 },
    /// The graph induced on load buses has more than one component.
    Disconnected { components: Vec<Vec<u32>> },
    /// An embedded angle difference is not strictly inside (-pi/2, pi/2).
    AngleOutOfRange { from: u32, to: u32, difference: f64 },
    /// An open-circuit voltage came out non-positive.
    NonPositiveOpenCircuit { bus: u32, value: f64 },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("network assumption violated: {0:?}")]
    AssumptionViolated(Violation),
    #[error("singular linear system")]
    SingularSystem,
    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("secure band is empty at load bus index {index} (lower {lower:e} > upper {upper:e})")]
    InfeasibleBox {
        index: usize,
        lower: f64,
        upper: f64,
    },
    #[error("problem is infeasible: {0}")]
    Infeasible(InfeasibilityReport),
    #[error("argument outside the function domain: {0}")]
    Domain(String),
    #[error("exponent {exponent:e} overflows the cost function")]
    Overflow { exponent: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("internal solver error: {0}")]
    Internal(String),
}

/// Farkas-style evidence of infeasibility: nonnegative weights on the
/// constraint rows whose combination produces `0 <= negative`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfeasibilityReport {
    /// Minimal uniform relaxation of all rows that would restore feasibility.
    pub infeasibility: f64,
    /// `(row label, weight)` pairs with the largest weights first.
    pub binding: Vec<(String, f64)>,
}

impl core::fmt::Display for InfeasibilityReport {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(
            f,
            "needs relaxation {:.3e}; binding rows:",
            self.infeasibility
        )?;
        for (label, w) in &self.binding {
            write!(f, " {label} ({w:.3e})")?;
        }
        Ok(())
    }
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
