//! Planning engine for zonal flexible bus services under stochastic demand.

pub mod config;
pub mod detour;
pub mod domain;
pub mod error;
pub mod feasibility;
pub mod fixtures;
pub mod ingest;
pub mod milp;
pub mod optimizer;
pub mod oracle;
pub mod phase2;
pub mod phase1;
pub mod report;
pub mod stochastic;

pub use error::{FlexError, Result};
