// Copyright 2026 Tripex Contributors
// SPDX-License-Identifier: Apache-2.0

//! Error type shared by all modules of the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong while building operators, parsing data files,
/// or running an evolution.
#[derive(Debug, Error)]
pub enum Error {
    /// Two objects that must share a dimension do not.
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    /// A matrix declared Hermitian is not (max |A - A^dag| element given).
    #[error("matrix is not Hermitian: max |A - A^dag| element = {deviation:.3e}")]
    NotHermitian { deviation: f64 },

    /// A scalar argument is outside its documented range.
    #[error("invalid value for {name}: {value} ({constraint})")]
    InvalidValue {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },

    /// A state failed a normalization / trace / positivity check.
    #[error("invalid quantum state: {0}")]
    InvalidState(String),

    /// Requested integrator step is too coarse for the Hamiltonian scale.
    #[error(
        "time step {dt_ns:.3e} ns is too large for this Hamiltonian \
         (dt * ||H|| / hbar = {phase_per_step:.3} > 0.1); use dt <= {suggested_ns:.3e} ns"
    )]
    StepTooLarge {
        dt_ns: f64,
        phase_per_step: f64,
        suggested_ns: f64,
    },

    /// The static Hamiltonian does not commute with the frame generator.
    #[error(
        "static Hamiltonian does not commute with total Sz \
         (max |[H, Sz]| element = {deviation:.3e} meV); \
         a rotating frame at a single carrier frequency is not defined for it"
    )]
    FrameNotCommuting { deviation: f64 },

    /// A tau grid cannot resolve the expected exchange beat.
    #[error(
        "tau grid step {step_ns:.3e} ns cannot resolve the exchange beat \
         (need step < {limit_ns:.3e} ns, a quarter of the oscillation period)"
    )]
    UnresolvedTauGrid { step_ns: f64, limit_ns: f64 },

    /// Numerical failure during an evolution (trace drift, positivity, ...).
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// The iterative eigensolver failed to converge (should not happen for
    /// the small Hermitian matrices this crate builds).
    #[error("eigensolver failed to converge after {sweeps} sweeps (off-diagonal norm {off:.3e})")]
    EigensolverNoConvergence { sweeps: usize, off: f64 },

    /// A data file could not be parsed; the line number is 1-based.
    #[error("{path}:{line}: {message}")]
    ParseError {
        path: String,
        line: usize,
        message: String,
    },

    /// Malformed caller input that is not a plain range violation.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// I/O error with the offending path attached.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
