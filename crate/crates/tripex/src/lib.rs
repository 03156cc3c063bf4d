// Copyright 2026 Tripex Contributors
// SPDX-License-Identifier: Apache-2.0

//! Simulator for a molecular triplet exciton exchange-coupled to a localized
//! spin-1/2, as probed by pulsed ESR.
//!
//! The crate covers four layers:
//!
//! * [`spin`] / [`hamiltonian`] — exact spin algebra on small product spaces:
//!   spin operators for arbitrary spin, multi-site embedding, Heisenberg
//!   exchange, Zeeman terms, total-spin observables, and a deterministic
//!   Hermitian eigensolver.
//! * [`exchange`] — broken-symmetry energetics: extracting an exchange
//!   constant J from energy differences, coherence-survival arithmetic, and
//!   ingestion/reporting of a functional-benchmark table.
//! * [`dynamics`] — closed (unitary) and open (Lindblad) time evolution,
//!   including the extended state space in which the exciton decays to the
//!   molecular ground state while preserving the localized spin.
//! * [`pulses`] — lab-frame and rotating-frame microwave drives, pulse
//!   sequences, and the ensemble-averaged Hahn-echo experiment whose
//!   echo-vs-delay modulation reveals the exchange splitting.
//!
//! Units throughout: energies in meV, times in ns, magnetic fields in tesla,
//! frequencies in GHz (cycles per ns).  All randomness is seeded and all
//! reductions are performed in fixed index order, so outputs are reproducible
//! bit-for-bit regardless of thread count.

pub mod constants;
pub mod dynamics;
pub mod error;
pub mod exchange;
pub mod hamiltonian;
pub mod linalg;
pub mod parallel;
pub mod pulses;
pub mod spin;

pub use error::{Error, Result};
pub use linalg::{CMatrix, CVector, C64};
pub use spin::{DensityMatrix, Operator, SpinSite, SpinSystem, SpinValue, StateVector};
