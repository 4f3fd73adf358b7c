//! File formats, result tables and the `vstress` command line on top of
//! [`vstress_core`].

pub mod cli;
pub mod error;
pub mod exec;
pub mod fmt;
pub mod matpower;
pub mod native;
pub mod studies;
pub mod tables;

pub use error::{AppError, CaseError};
pub use exec::Parallel;
pub use matpower::{parse_matpower_case, parse_matpower_report};
pub use native::{parse_native_case, write_native_case};
