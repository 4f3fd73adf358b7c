//! Reactive power stress analysis for lossless transmission grids.
//!
//! The crate is `no_std` (with `alloc`) and contains every numerical piece:
//! the decoupled reactive model and its critical load matrix, exact and
//! linearized reactive power flow, the coupled AC power flow, a dense LP
//! solver for convex stress minimization and sparse compensator placement,
//! the smooth infinity-norm machinery and the distributed dual-ascent
//! controller. File formats and the command line live in the `vstress`
//! crate.

#![no_std]

extern crate alloc;

pub mod case;
pub mod controller;
pub mod cases;
pub mod error;
pub mod linalg;
pub mod lp;
pub mod network;
pub mod power_flow;
pub mod smooth;
pub mod stress;

pub use case::{BranchRecord, BusKind, BusRecord, GenRecord, GridCase};
pub use error::{Error, InfeasibilityReport, Result, Violation};
pub use network::{build_model, NetworkModel};
