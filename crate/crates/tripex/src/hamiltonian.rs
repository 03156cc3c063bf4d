// Copyright 2026 Tripex Contributors
// SPDX-License-Identifier: Apache-2.0

//! Hamiltonian builders and exact diagonalization for multi-site spin
//! systems: isotropic Heisenberg exchange, Zeeman terms, and total-spin
//! observables.
//!
//! Sign convention: `heisenberg` builds `H = J * S_a . S_b`, so J < 0 makes
//! the high-spin (ferromagnetically aligned) manifold the ground state.
//! Anisotropic zero-field terms are deliberately not modeled; callers that
//! need one can add it with [`Operator::add`], which is the supported
//! extension point.

use crate::constants::MU_BOHR_MEV_PER_T;
use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};
use crate::spin::{embed, spin_operators, DensityMatrix, Operator, SpinSystem, StateVector};

/// Isotropic exchange `J (Sx_a Sx_b + Sy_a Sy_b + Sz_a Sz_b)` between two
/// sites, in meV.
pub fn heisenberg(j_mev: f64, system: &SpinSystem, a: usize, b: usize) -> Result<Operator> {
    if !j_mev.is_finite() {
        return Err(Error::InvalidValue {
            name: "j_mev",
            value: j_mev,
            constraint: "must be finite",
        });
    }
    if a == b {
        return Err(Error::InvalidInput(format!(
            "exchange needs two distinct sites (got {a} twice)"
        )));
    }
    let ops_a = spin_operators(system.sites()[a].spin);
    let ops_b = spin_operators(system.sites()[b].spin);
    let mut total = CMatrix::zeros((system.dimension(), system.dimension()));
    for (oa, ob) in [
        (&ops_a.sx, &ops_b.sx),
        (&ops_a.sy, &ops_b.sy),
        (&ops_a.sz, &ops_b.sz),
    ] {
        let ea = embed(oa, a, system)?;
        let eb = embed(ob, b, system)?;
        total = total + ea.matrix().dot(eb.matrix());
    }
    Operator::hermitian(total * crate::linalg::C64::new(j_mev, 0.0))
}

/// Largest static field magnitude the model accepts, tesla.
pub const MAX_FIELD_TESLA: f64 = 20.0;

/// Zeeman term for a static field `Bz` along z: `sum_i g_i mu_B Bz Sz_i`.
pub fn zeeman(bz_tesla: f64, system: &SpinSystem) -> Result<Operator> {
    if !bz_tesla.is_finite() || bz_tesla.abs() > MAX_FIELD_TESLA {
        return Err(Error::InvalidValue {
            name: "bz_tesla",
            value: bz_tesla,
            constraint: "must be finite with |B| <= 20 T",
        });
    }
    let mut total = CMatrix::zeros((system.dimension(), system.dimension()));
    for (i, site) in system.sites().iter().enumerate() {
        let sz = spin_operators(site.spin).sz;
        let lifted = embed(&sz, i, system)?;
        total = total + lifted.matrix() * crate::linalg::C64::new(site.g_factor * MU_BOHR_MEV_PER_T * bz_tesla, 0.0);
    }
    Operator::hermitian(total)
}

/// One Cartesian component of the total spin, `sum_i S{axis}_i`.
pub fn total_spin_component(axis: char, system: &SpinSystem) -> Result<Operator> {
    let mut total = CMatrix::zeros((system.dimension(), system.dimension()));
    for (i, site) in system.sites().iter().enumerate() {
        let ops = spin_operators(site.spin);
        let component = match axis {
            'x' => ops.sx,
            'y' => ops.sy,
            'z' => ops.sz,
            _ => {
                return Err(Error::InvalidInput(format!(
                    "unknown spin axis {axis:?} (use 'x', 'y' or 'z')"
                )))
            }
        };
        let lifted = embed(&component, i, system)?;
        total += lifted.matrix();
    }
    Operator::hermitian(total)
}

/// The total-spin-squared operator `(sum_i S_i)^2`.
pub fn total_spin_squared(system: &SpinSystem) -> Result<Operator> {
    let sx = total_spin_component('x', system)?;
    let sy = total_spin_component('y', system)?;
    let sz = total_spin_component('z', system)?;
    let sq = sx.matrix().dot(sx.matrix()) + sy.matrix().dot(sy.matrix()) + sz.matrix().dot(sz.matrix());
    Operator::hermitian(sq)
}

/// `<S_tot^2>` in a pure state.
pub fn total_spin_squared_expectation(system: &SpinSystem, state: &StateVector) -> Result<f64> {
    let op = total_spin_squared(system)?;
    Ok(state.expectation(&op)?.re)
}

/// `<S_tot^2>` in a mixed state.
pub fn total_spin_squared_expectation_density(
    system: &SpinSystem,
    rho: &DensityMatrix,
) -> Result<f64> {
    let op = total_spin_squared(system)?;
    Ok(rho.expectation(&op)?.re)
}

/// Exact eigendecomposition of a Hermitian operator.
#[derive(Debug, Clone)]
pub struct Eigensystem {
    /// Eigenvalues, ascending.
    pub values: Vec<f64>,
    /// Matching eigenvectors as columns of a unitary matrix.
    pub vectors: CMatrix,
}

impl Eigensystem {
    pub fn ground_energy(&self) -> f64 {
        self.values[0]
    }

    /// Spread between the largest and smallest eigenvalue.
    pub fn spectral_spread(&self) -> f64 {
        self.values[self.values.len() - 1] - self.values[0]
    }

    /// Gap between the ground level and the first distinct level above it,
    /// using `tol` to decide distinctness; 0 if the spectrum is degenerate.
    pub fn ground_gap(&self, tol: f64) -> f64 {
        let e0 = self.values[0];
        self.values
            .iter()
            .find(|&&e| e - e0 > tol)
            .map(|&e| e - e0)
            .unwrap_or(0.0)
    }

    /// Collapse the spectrum to `(energy, degeneracy)` pairs, clustering
    /// values closer than `tol`.  Reported energies are cluster means.
    pub fn grouped(&self, tol: f64) -> Vec<(f64, usize)> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for &e in &self.values {
            match out.last_mut() {
                Some((mean, count)) if (e - *mean).abs() <= tol => {
                    *mean = (*mean * *count as f64 + e) / (*count as f64 + 1.0);
                    *count += 1;
                }
                _ => out.push((e, 1)),
            }
        }
        out
    }
}

/// Diagonalize a Hermitian operator (error if the Hermiticity flag is unset).
pub fn eigensystem(op: &Operator) -> Result<Eigensystem> {
    if !op.is_hermitian() {
        return Err(Error::InvalidInput(
            "eigensystem requires an operator constructed as Hermitian".into(),
        ));
    }
    let (values, vectors) = linalg::eigh(op.matrix())?;
    Ok(Eigensystem { values, vectors })
}

/// Grouping tolerance for presenting a spectrum: 1e-9 of the spectral scale.
pub fn grouping_tolerance(values: &[f64]) -> f64 {
    let scale = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    (1e-9 * scale).max(1e-12)
}
