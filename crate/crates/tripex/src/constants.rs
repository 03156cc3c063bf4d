// Copyright 2026 Tripex Contributors
// SPDX-License-Identifier: Apache-2.0

//! Physical constants in the crate's working units (meV, ns, tesla) plus the
//! unit conversions used at the I/O boundary.
//!
//! CODATA 2018 values, converted from eV·s and eV/T.

/// Reduced Planck constant, meV·ns (= 0.6582119569 meV·ps).
pub const HBAR_MEV_NS: f64 = 6.582119569e-4;

/// Planck constant, meV·ns.  Equal to `2 * pi * HBAR_MEV_NS` to better than
/// 1e-9 relative (both values are independently converted from CODATA).
pub const PLANCK_MEV_NS: f64 = 4.135667696e-3;

/// Bohr magneton, meV per tesla.
pub const MU_BOHR_MEV_PER_T: f64 = 5.7883818060e-2;

/// Nanoseconds per picosecond.
pub const NS_PER_PS: f64 = 1e-3;

/// Convert a time given in picoseconds to nanoseconds.
pub fn ns_from_ps(t_ps: f64) -> f64 {
    t_ps * NS_PER_PS
}

/// Convert a time given in nanoseconds to picoseconds.
pub fn ps_from_ns(t_ns: f64) -> f64 {
    t_ns / NS_PER_PS
}
