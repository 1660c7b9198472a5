//! Deterministic simulator for the LineRecovery protocol: anonymous
//! finite-state particles on the triangular grid rebuild a straight line
//! around crashed peers, under an adversarial semi-synchronous scheduler.
//!
//! The crate is organized along the moving parts of the system:
//!
//! * [`grid`] — lattice geometry and line predicates
//! * [`particle`] — particle state, port memories, neighborhood views
//! * [`protocol`] — the per-state handlers (pure functions)
//! * [`scheduler`] — round engine, conflict rules, fairness
//! * [`harness`] — scenario generation, solved predicate, monitors, sweeps
//! * [`trace`] — replayable line-delimited run records
//! * [`render`] — text and SVG frames

pub mod grid;
pub mod harness;
pub mod particle;
pub mod protocol;
pub mod render;
pub mod scheduler;
pub mod trace;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("model violation: {0}")]
    ModelViolation(String),
    #[error("protocol fault: {0}")]
    ProtocolFault(String),
    #[error("trace format: {0}")]
    TraceFormat(String),
}
