// Copyright 2026 Tripex Contributors
// SPDX-License-Identifier: Apache-2.0

//! Time evolution: unitary propagation of closed systems, Lindblad dynamics
//! of the decaying exciton, and the extended state space that holds both the
//! exciton manifold and the molecular ground state.
//!
//! Two open-system engines are provided and cross-checked against each
//! other:
//!
//! * [`evolve_lindblad`] — a fixed-step RK4 integrator with an explicit
//!   stability guard.  Deterministic and easy to reason about; cost grows
//!   with the ratio of simulated time to the fastest Bohr period.
//! * [`evolve_lindblad_exact`] — exact exponential of the (static)
//!   Liouvillian, the fast path for long spans and for piecewise-constant
//!   pulse sequences.
//!
//! The density matrix is re-Hermitized after every integrator step; trace
//! drift beyond 1e-8 or eigenvalues below -1e-7 abort the run as numerical
//! failures rather than being silently accepted.

use std::collections::HashMap;

use crate::constants::HBAR_MEV_NS;
use crate::error::{Error, Result};
use crate::hamiltonian::{self, eigensystem};
use crate::linalg::{self, CMatrix, C64};
use crate::spin::{DensityMatrix, Operator, SpinSystem, StateVector};

/// Largest phase advance per RK4 step the integrator will accept,
/// `dt * ||H||_centered / hbar`.
pub const STABILITY_PHASE_LIMIT: f64 = 0.1;

/// Fraction of the fastest Bohr period used for the default RK4 step.
const DEFAULT_STEPS_PER_PERIOD: f64 = 50.0;

/// Trace drift that aborts an open-system run.
pub const TRACE_TOLERANCE: f64 = 1e-8;

/// Most negative density-matrix eigenvalue tolerated before aborting.
pub const POSITIVITY_FLOOR: f64 = -1e-7;

/// Unitary propagator `U = exp(-i H dt / hbar)` built by eigendecomposition.
pub fn propagator(h: &Operator, dt_ns: f64) -> Result<Operator> {
    if !dt_ns.is_finite() {
        return Err(Error::InvalidValue {
            name: "dt_ns",
            value: dt_ns,
            constraint: "must be finite",
        });
    }
    let eig = eigensystem(h)?;
    let n = h.dim();
    let mut phases = CMatrix::zeros((n, n));
    for (k, lam) in eig.values.iter().enumerate() {
        phases[(k, k)] = C64::new(0.0, -lam * dt_ns / HBAR_MEV_NS).exp();
    }
    let u = eig.vectors.dot(&phases).dot(&linalg::dagger(&eig.vectors));
    Ok(Operator::general(u))
}

/// Named Hermitian operators whose expectation values a trajectory records.
#[derive(Debug, Clone, Default)]
pub struct Observables {
    entries: Vec<(String, Operator)>,
}

impl Observables {
    pub fn new() -> Self {
        Observables { entries: Vec::new() }
    }

    /// Add a named observable; must be Hermitian so expectations are real.
    pub fn push(&mut self, name: impl Into<String>, op: Operator) -> Result<()> {
        if !op.is_hermitian() {
            return Err(Error::InvalidInput(
                "observables must be Hermitian (construct with Operator::hermitian)".into(),
            ));
        }
        self.entries.push((name.into(), op));
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Raw operator matrices in entry order (for samplers that record
    /// expectations themselves).
    pub(crate) fn matrices(&self) -> Vec<CMatrix> {
        self.entries
            .iter()
            .map(|(_, op)| op.matrix().clone())
            .collect()
    }

    fn dim_check(&self, dim: usize) -> Result<()> {
        for (_, op) in &self.entries {
            if op.dim() != dim {
                return Err(Error::DimensionMismatch {
                    context: "observable vs state",
                    expected: dim,
                    found: op.dim(),
                });
            }
        }
        Ok(())
    }

    fn row_pure(&self, psi: &StateVector) -> Result<Vec<f64>> {
        self.entries
            .iter()
            .map(|(_, op)| Ok(psi.expectation(op)?.re))
            .collect()
    }

    fn row_mixed(&self, rho: &DensityMatrix) -> Result<Vec<f64>> {
        self.entries
            .iter()
            .map(|(_, op)| Ok(rho.expectation(op)?.re))
            .collect()
    }

    /// `sz` of every site of a system, columns named `sz_<label>`.
    pub fn sz_per_site(system: &SpinSystem) -> Result<Self> {
        let mut obs = Observables::new();
        for (i, site) in system.sites().iter().enumerate() {
            let sz = crate::spin::spin_operators(site.spin).sz;
            obs.push(format!("sz_{}", site.label), crate::spin::embed(&sz, i, system)?)?;
        }
        Ok(obs)
    }
}

/// Sampled expectation values along an evolution.
#[derive(Debug, Clone)]
pub struct Trajectory {
    times_ns: Vec<f64>,
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
    warnings: Vec<String>,
}

impl Trajectory {
    pub fn new(times_ns: Vec<f64>, columns: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if times_ns.is_empty() {
            return Err(Error::InvalidInput("trajectory needs at least one time".into()));
        }
        if !times_ns.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidInput(
                "trajectory times must be strictly increasing".into(),
            ));
        }
        if rows.len() != times_ns.len() || rows.iter().any(|r| r.len() != columns.len()) {
            return Err(Error::InvalidInput(
                "trajectory rows must match times and columns".into(),
            ));
        }
        Ok(Trajectory {
            times_ns,
            columns,
            rows,
            warnings: Vec::new(),
        })
    }

    pub fn times_ns(&self) -> &[f64] {
        &self.times_ns
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub(crate) fn push_warning(&mut self, w: impl Into<String>) {
        self.warnings.push(w.into());
    }

    /// Values of one named column.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }

    /// Fast-path decay model: multiply every column by `exp(-(t - t0) / lifetime)`.
    ///
    /// This reproduces full Lindblad dynamics exactly for observables
    /// supported on the exciton manifold when every decay channel leaves
    /// that manifold; it is an approximation otherwise.
    pub fn with_decay_envelope(&self, lifetime_ns: f64) -> Result<Trajectory> {
        if lifetime_ns <= 0.0 || lifetime_ns.is_nan() {
            return Err(Error::InvalidValue {
                name: "lifetime_ns",
                value: lifetime_ns,
                constraint: "must be positive",
            });
        }
        let t0 = self.times_ns[0];
        let rows = self
            .times_ns
            .iter()
            .zip(&self.rows)
            .map(|(t, row)| {
                let factor = (-(t - t0) / lifetime_ns).exp();
                row.iter().map(|v| v * factor).collect()
            })
            .collect();
        Ok(Trajectory {
            times_ns: self.times_ns.clone(),
            columns: self.columns.clone(),
            rows,
            warnings: self.warnings.clone(),
        })
    }
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::InvalidInput("need at least one output time".into()));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidInput("output times must be finite".into()));
    }
    if !times.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::InvalidInput(
            "output times must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Closed-system evolution `|psi(t)> = U(t - t0) |psi0>` with `psi0` the
/// state at `times[0]`, evaluated by spectral decomposition (no step error).
pub fn evolve_closed(
    h: &Operator,
    psi0: &StateVector,
    times: &[f64],
    observables: &Observables,
) -> Result<Trajectory> {
    check_times(times)?;
    if h.dim() != psi0.dim() {
        return Err(Error::DimensionMismatch {
            context: "evolve_closed (state vs Hamiltonian)",
            expected: h.dim(),
            found: psi0.dim(),
        });
    }
    observables.dim_check(h.dim())?;
    let eig = eigensystem(h)?;
    let coeffs = linalg::dagger(&eig.vectors).dot(psi0.amplitudes());
    let t0 = times[0];
    let mut rows = Vec::with_capacity(times.len());
    for &t in times {
        let mut rotated = coeffs.clone();
        for (k, lam) in eig.values.iter().enumerate() {
            rotated[k] *= C64::new(0.0, -lam * (t - t0) / HBAR_MEV_NS).exp();
        }
        let psi_t = StateVector::new(eig.vectors.dot(&rotated)).map_err(|_| {
            Error::NumericalFailure("closed evolution lost normalization".into())
        })?;
        rows.push(observables.row_pure(&psi_t)?);
    }
    Trajectory::new(times.to_vec(), observables.names(), rows)
}

/// The exciton manifold (all spin sites) extended by the manifold left after
/// the exciton decays (site 0 removed), as one direct-sum space.
///
/// Basis: the first `exciton_dim` states are the product basis of the full
/// system; the remaining `ground_dim` states are the product basis of the
/// surviving sites.  For the canonical (spin-1, spin-1/2) system the eight
/// states are `|+1,up> ... |-1,dn>, |g,up>, |g,dn>`.
#[derive(Debug, Clone)]
pub struct ExtendedSystem {
    base: SpinSystem,
    exciton_dim: usize,
    ground_dim: usize,
}

impl ExtendedSystem {
    pub fn new(base: SpinSystem) -> Result<Self> {
        if base.n_sites() < 2 {
            return Err(Error::InvalidInput(
                "an extended system needs the decaying site plus at least one survivor".into(),
            ));
        }
        let exciton_dim = base.dimension();
        let ground_dim = exciton_dim / base.sites()[0].spin.multiplicity();
        Ok(ExtendedSystem {
            base,
            exciton_dim,
            ground_dim,
        })
    }

    pub fn base(&self) -> &SpinSystem {
        &self.base
    }

    pub fn dimension(&self) -> usize {
        self.exciton_dim + self.ground_dim
    }

    pub fn exciton_dim(&self) -> usize {
        self.exciton_dim
    }

    pub fn ground_dim(&self) -> usize {
        self.ground_dim
    }

    /// Projector onto the exciton manifold.
    pub fn exciton_projector(&self) -> Operator {
        let n = self.dimension();
        let mut p = CMatrix::zeros((n, n));
        for i in 0..self.exciton_dim {
            p[(i, i)] = C64::new(1.0, 0.0);
        }
        Operator::hermitian(p).expect("projector is Hermitian")
    }

    /// Lift an exciton-manifold operator to the full space (zero on the
    /// ground manifold).
    pub fn lift_exciton(&self, op: &Operator) -> Result<Operator> {
        if op.dim() != self.exciton_dim {
            return Err(Error::DimensionMismatch {
                context: "lift_exciton",
                expected: self.exciton_dim,
                found: op.dim(),
            });
        }
        let n = self.dimension();
        let mut full = CMatrix::zeros((n, n));
        for i in 0..self.exciton_dim {
            for j in 0..self.exciton_dim {
                full[(i, j)] = op.matrix()[(i, j)];
            }
        }
        Ok(if op.is_hermitian() {
            Operator::hermitian(full).expect("lift preserves Hermiticity")
        } else {
            Operator::general(full)
        })
    }

    /// Lift an operator acting on the surviving sites (everything but site
    /// 0) so that it acts identically inside both manifolds.
    pub fn lift_survivor(&self, op: &Operator) -> Result<Operator> {
        if op.dim() != self.ground_dim {
            return Err(Error::DimensionMismatch {
                context: "lift_survivor",
                expected: self.ground_dim,
                found: op.dim(),
            });
        }
        let n = self.dimension();
        let mult0 = self.base.sites()[0].spin.multiplicity();
        let mut full = CMatrix::zeros((n, n));
        for block in 0..mult0 {
            let offset = block * self.ground_dim;
            for i in 0..self.ground_dim {
                for j in 0..self.ground_dim {
                    full[(offset + i, offset + j)] = op.matrix()[(i, j)];
                }
            }
        }
        let offset = self.exciton_dim;
        for i in 0..self.ground_dim {
            for j in 0..self.ground_dim {
                full[(offset + i, offset + j)] = op.matrix()[(i, j)];
            }
        }
        Ok(if op.is_hermitian() {
            Operator::hermitian(full).expect("lift preserves Hermiticity")
        } else {
            Operator::general(full)
        })
    }

    /// One Cartesian spin component of a site on the full space.  Site 0
    /// exists only inside the exciton manifold; surviving sites act in both.
    pub fn site_component(&self, site: usize, axis: char) -> Result<Operator> {
        let sites = self.base.sites();
        if site >= sites.len() {
            return Err(Error::InvalidValue {
                name: "site",
                value: site as f64,
                constraint: "must index an existing site",
            });
        }
        if site == 0 {
            let ops = crate::spin::spin_operators(sites[0].spin);
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
            self.lift_exciton(&crate::spin::embed(&component, 0, &self.base)?)
        } else {
            let survivor = self.survivor_system()?;
            let ops = crate::spin::spin_operators(sites[site].spin);
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
            self.lift_survivor(&crate::spin::embed(&component, site - 1, &survivor)?)
        }
    }

    /// The system formed by the surviving sites (site 0 removed).
    pub fn survivor_system(&self) -> Result<SpinSystem> {
        SpinSystem::new(self.base.sites()[1..].to_vec())
    }

    /// Total Sz on the full space (site 0 contributes only in the exciton
    /// manifold).
    pub fn sz_total(&self) -> Result<Operator> {
        let n = self.dimension();
        let mut total = CMatrix::zeros((n, n));
        for site in 0..self.base.n_sites() {
            total += self.site_component(site, 'z')?.matrix();
        }
        Operator::hermitian(total)
    }

    /// Exchange-plus-Zeeman Hamiltonian on the full space: the base-system
    /// Hamiltonian inside the exciton manifold and the surviving sites'
    /// Zeeman term on the ground manifold.
    pub fn hamiltonian(&self, j_mev: f64, bz_tesla: f64) -> Result<Operator> {
        let h6 = hamiltonian::heisenberg(j_mev, &self.base, 0, 1)?
            .add(&hamiltonian::zeeman(bz_tesla, &self.base)?)?;
        let mut full = self.lift_exciton(&h6)?.into_matrix();
        let hg = hamiltonian::zeeman(bz_tesla, &self.survivor_system()?)?;
        let offset = self.exciton_dim;
        for i in 0..self.ground_dim {
            for j in 0..self.ground_dim {
                full[(offset + i, offset + j)] = hg.matrix()[(i, j)];
            }
        }
        Operator::hermitian(full)
    }

    /// Embed an exciton-manifold pure state into the full space.
    pub fn exciton_state(&self, psi: &StateVector) -> Result<StateVector> {
        if psi.dim() != self.exciton_dim {
            return Err(Error::DimensionMismatch {
                context: "exciton_state",
                expected: self.exciton_dim,
                found: psi.dim(),
            });
        }
        let mut full = crate::linalg::CVector::zeros(self.dimension());
        for (i, amp) in psi.amplitudes().iter().enumerate() {
            full[i] = *amp;
        }
        StateVector::new(full)
    }
}

/// One decay channel: a collapse operator and its rate (1/ns).
#[derive(Debug, Clone)]
pub struct CollapseChannel {
    pub op: CMatrix,
    pub rate_per_ns: f64,
}

/// A Lindblad model: Hamiltonian plus weighted collapse channels.
#[derive(Debug, Clone)]
pub struct LindbladModel {
    hamiltonian: Operator,
    channels: Vec<CollapseChannel>,
    /// Precomputed `1/2 sum_k rate_k L_k^dag L_k`.
    anticommutator_half: CMatrix,
}

impl LindbladModel {
    pub fn new(hamiltonian: Operator, channels: Vec<CollapseChannel>) -> Result<Self> {
        if !hamiltonian.is_hermitian() {
            return Err(Error::InvalidInput(
                "Lindblad Hamiltonian must be Hermitian".into(),
            ));
        }
        let n = hamiltonian.dim();
        let mut anticommutator_half = CMatrix::zeros((n, n));
        for ch in &channels {
            if ch.op.nrows() != n || ch.op.ncols() != n {
                return Err(Error::DimensionMismatch {
                    context: "collapse operator vs Hamiltonian",
                    expected: n,
                    found: ch.op.nrows(),
                });
            }
            if !ch.rate_per_ns.is_finite() || ch.rate_per_ns < 0.0 {
                return Err(Error::InvalidValue {
                    name: "rate_per_ns",
                    value: ch.rate_per_ns,
                    constraint: "collapse rates must be finite and non-negative",
                });
            }
            let ldag_l = linalg::dagger(&ch.op).dot(&ch.op);
            anticommutator_half =
                anticommutator_half + ldag_l * C64::new(0.5 * ch.rate_per_ns, 0.0);
        }
        Ok(LindbladModel {
            hamiltonian,
            channels,
            anticommutator_half,
        })
    }

    /// Closed model: Hamiltonian evolution only.
    pub fn closed(hamiltonian: Operator) -> Result<Self> {
        LindbladModel::new(hamiltonian, Vec::new())
    }

    pub fn hamiltonian(&self) -> &Operator {
        &self.hamiltonian
    }

    pub fn channels(&self) -> &[CollapseChannel] {
        &self.channels
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    pub fn has_decay(&self) -> bool {
        self.channels.iter().any(|c| c.rate_per_ns > 0.0)
    }

    /// Replace the Hamiltonian, keeping the channels (used to enter rotating
    /// frames or add drive terms).
    pub fn with_hamiltonian(&self, hamiltonian: Operator) -> Result<Self> {
        LindbladModel::new(hamiltonian, self.channels.clone())
    }

    /// Right-hand side of the master equation.
    pub fn rhs(&self, rho: &CMatrix) -> CMatrix {
        let h = self.hamiltonian.matrix();
        let comm = h.dot(rho) - rho.dot(h);
        let mut out = comm * C64::new(0.0, -1.0 / HBAR_MEV_NS);
        for ch in &self.channels {
            if ch.rate_per_ns == 0.0 {
                continue;
            }
            let jump = ch.op.dot(rho).dot(&linalg::dagger(&ch.op));
            out = out + jump * C64::new(ch.rate_per_ns, 0.0);
        }
        out = out - self.anticommutator_half.dot(rho) - rho.dot(&self.anticommutator_half);
        out
    }

    /// Master-equation right-hand side with an additional (time-dependent)
    /// Hermitian term added to the Hamiltonian, used for lab-frame drives.
    pub(crate) fn rhs_with_extra(&self, rho: &CMatrix, extra_h: &CMatrix) -> CMatrix {
        let h = self.hamiltonian.matrix() + extra_h;
        let comm = h.dot(rho) - rho.dot(&h);
        let mut out = comm * C64::new(0.0, -1.0 / HBAR_MEV_NS);
        for ch in &self.channels {
            if ch.rate_per_ns == 0.0 {
                continue;
            }
            let jump = ch.op.dot(rho).dot(&linalg::dagger(&ch.op));
            out = out + jump * C64::new(ch.rate_per_ns, 0.0);
        }
        out = out - self.anticommutator_half.dot(rho) - rho.dot(&self.anticommutator_half);
        out
    }

    /// The shortest `1 / rate` over the active collapse channels, or `None`
    /// for a closed model: the time scale on which dissipation empties the
    /// fastest-decaying subspace.
    pub fn shortest_lifetime_ns(&self) -> Option<f64> {
        let max_rate = self
            .channels
            .iter()
            .map(|c| c.rate_per_ns)
            .fold(0.0_f64, f64::max);
        if max_rate > 0.0 {
            Some(1.0 / max_rate)
        } else {
            None
        }
    }

    /// Centered spectral norm of the Hamiltonian (half the eigenvalue
    /// spread).  A constant shift of H leaves the master equation unchanged,
    /// so only the spread drives the stiffness of the integrator.
    pub fn stiffness_mev(&self) -> Result<f64> {
        Ok(eigensystem(&self.hamiltonian)?.spectral_spread() / 2.0)
    }

    /// Default RK4 step: the period of the fastest Bohr frequency divided by
    /// 50, clamped by the collapse rates when they dominate.
    pub fn default_step_ns(&self, span_ns: f64) -> Result<f64> {
        let spread = eigensystem(&self.hamiltonian)?.spectral_spread();
        let mut dt = f64::INFINITY;
        if spread > 1e-30 {
            let period = 2.0 * std::f64::consts::PI * HBAR_MEV_NS / spread;
            dt = dt.min(period / DEFAULT_STEPS_PER_PERIOD);
        }
        let max_rate = self
            .channels
            .iter()
            .map(|c| c.rate_per_ns)
            .fold(0.0_f64, f64::max);
        if max_rate > 0.0 {
            dt = dt.min(0.02 / max_rate);
        }
        if !dt.is_finite() {
            dt = (span_ns / 100.0).max(1e-12);
        }
        Ok(dt)
    }

    fn check_step(&self, dt: f64) -> Result<()> {
        if dt <= 0.0 || !dt.is_finite() {
            return Err(Error::InvalidValue {
                name: "dt_max_ns",
                value: dt,
                constraint: "must be positive and finite",
            });
        }
        let stiffness = self.stiffness_mev()?;
        let phase = dt * stiffness / HBAR_MEV_NS;
        if phase > STABILITY_PHASE_LIMIT {
            return Err(Error::StepTooLarge {
                dt_ns: dt,
                phase_per_step: phase,
                suggested_ns: STABILITY_PHASE_LIMIT * HBAR_MEV_NS / stiffness,
            });
        }
        Ok(())
    }
}

/// The collapse channels of exciton decay: one channel per (site-0 level,
/// survivor level) pair, each mapping `|m, sigma>` to `|g, sigma>` at rate
/// `1/lifetime`.  Decay removes the exciton and preserves the surviving
/// spin projection; coherence between survivor levels is not transferred.
pub fn decay_channels(
    extended: &ExtendedSystem,
    lifetime_ns: f64,
) -> Result<Vec<CollapseChannel>> {
    if !(lifetime_ns > 0.0 && lifetime_ns <= 1e6) {
        return Err(Error::InvalidValue {
            name: "lifetime_ns",
            value: lifetime_ns,
            constraint: "must be in (0, 1e6] ns",
        });
    }
    let n = extended.dimension();
    let rate = 1.0 / lifetime_ns;
    let mult0 = extended.base().sites()[0].spin.multiplicity();
    let mut channels = Vec::with_capacity(mult0 * extended.ground_dim());
    for m in 0..mult0 {
        for sigma in 0..extended.ground_dim() {
            let from = m * extended.ground_dim() + sigma;
            let to = extended.exciton_dim() + sigma;
            let mut op = CMatrix::zeros((n, n));
            op[(to, from)] = C64::new(1.0, 0.0);
            channels.push(CollapseChannel {
                op,
                rate_per_ns: rate,
            });
        }
    }
    Ok(channels)
}

/// Decay model on the extended space: the exchange-plus-Zeeman Hamiltonian
/// with the [`decay_channels`] of the given lifetime.
pub fn build_decay_model(
    extended: &ExtendedSystem,
    j_mev: f64,
    bz_tesla: f64,
    lifetime_ns: f64,
) -> Result<LindbladModel> {
    let h = extended.hamiltonian(j_mev, bz_tesla)?;
    LindbladModel::new(h, decay_channels(extended, lifetime_ns)?)
}

/// One RK4 step of the master equation (classical Runge-Kutta).
fn rk4_step(model: &LindbladModel, rho: &CMatrix, dt: f64) -> CMatrix {
    let half = C64::new(dt / 2.0, 0.0);
    let full = C64::new(dt, 0.0);
    let sixth = C64::new(dt / 6.0, 0.0);
    let k1 = model.rhs(rho);
    let k2 = model.rhs(&(rho + &(&k1 * half)));
    let k3 = model.rhs(&(rho + &(&k2 * half)));
    let k4 = model.rhs(&(rho + &(&k3 * full)));
    let two = C64::new(2.0, 0.0);
    rho + &((k1 + &k2 * two + &k3 * two + k4) * sixth)
}

/// Warning attached to open trajectories whose span reaches the decay time
/// scale: most of the population will be gone before the end of the run.
fn lifetime_span_warning(model: &LindbladModel, span_ns: f64) -> Option<String> {
    let lifetime = model.shortest_lifetime_ns()?;
    if span_ns >= lifetime {
        Some(format!(
            "evolution span {span_ns:.6} ns reaches the decay lifetime {lifetime:.6} ns; \
             most of the excited population decays within the run"
        ))
    } else {
        None
    }
}

fn check_density_health(rho: &CMatrix, context: &str) -> Result<()> {
    let tr = linalg::trace(rho);
    if (tr.re - 1.0).abs() > TRACE_TOLERANCE || tr.im.abs() > TRACE_TOLERANCE {
        return Err(Error::NumericalFailure(format!(
            "{context}: trace drifted to {:.12e} (limit {TRACE_TOLERANCE:.0e})",
            tr.re
        )));
    }
    let mut symmetric = rho.clone();
    linalg::hermitize(&mut symmetric);
    let (vals, _) = linalg::eigh(&symmetric)?;
    if vals[0] < POSITIVITY_FLOOR {
        return Err(Error::NumericalFailure(format!(
            "{context}: density matrix eigenvalue {:.3e} below {POSITIVITY_FLOOR:.0e}",
            vals[0]
        )));
    }
    Ok(())
}

/// Fixed-step RK4 integration of the master equation, recording observables
/// at `times` (`rho0` is the state at `times[0]`).
///
/// `dt_max_ns` defaults to [`LindbladModel::default_step_ns`]; either way the
/// step must satisfy the stability guard `dt ||H|| / hbar <= 0.1` (centered
/// norm).  The state is re-Hermitized each step; trace and positivity are
/// checked at every output time.
pub fn evolve_lindblad(
    model: &LindbladModel,
    rho0: &DensityMatrix,
    times: &[f64],
    observables: &Observables,
    dt_max_ns: Option<f64>,
) -> Result<Trajectory> {
    check_times(times)?;
    if rho0.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            context: "evolve_lindblad (state vs model)",
            expected: model.dim(),
            found: rho0.dim(),
        });
    }
    observables.dim_check(model.dim())?;
    let span = times[times.len() - 1] - times[0];
    let dt = match dt_max_ns {
        Some(dt) => dt,
        None => model.default_step_ns(span.max(1e-9))?,
    };
    model.check_step(dt)?;

    let mut rho = rho0.matrix().clone();
    let mut rows = Vec::with_capacity(times.len());
    let state = DensityMatrix::from_evolution(rho.clone());
    rows.push(observables.row_mixed(&state)?);
    for w in times.windows(2) {
        let delta = w[1] - w[0];
        let n_steps = (delta / dt).ceil().max(1.0) as usize;
        let h_step = delta / n_steps as f64;
        for _ in 0..n_steps {
            rho = rk4_step(model, &rho, h_step);
            linalg::hermitize(&mut rho);
        }
        check_density_health(&rho, "evolve_lindblad")?;
        let state = DensityMatrix::from_evolution(rho.clone());
        rows.push(observables.row_mixed(&state)?);
    }
    check_density_health(&rho, "evolve_lindblad (final state)")?;
    let mut traj = Trajectory::new(times.to_vec(), observables.names(), rows)?;
    if let Some(w) = lifetime_span_warning(model, span) {
        traj.push_warning(w);
    }
    Ok(traj)
}

/// The Liouvillian superoperator of a static model, acting on row-major
/// vectorized density matrices.
pub fn liouvillian(model: &LindbladModel) -> CMatrix {
    let n = model.dim();
    let eye = linalg::identity(n);
    let h = model.hamiltonian.matrix();
    // -(i/hbar) (H (x) I - I (x) H^T)
    let mut sup = (linalg::kron(h, &eye) - linalg::kron(&eye, &h.t().to_owned()))
        * C64::new(0.0, -1.0 / HBAR_MEV_NS);
    for ch in &model.channels {
        if ch.rate_per_ns == 0.0 {
            continue;
        }
        let l = &ch.op;
        let l_conj = l.mapv(|z| z.conj());
        let ldag_l = linalg::dagger(l).dot(l);
        let jump = linalg::kron(l, &l_conj);
        let left = linalg::kron(&ldag_l, &eye);
        let right = linalg::kron(&eye, &ldag_l.t().to_owned());
        sup = sup + (jump - (left + right) * C64::new(0.5, 0.0)) * C64::new(ch.rate_per_ns, 0.0);
    }
    sup
}

/// Propagator cache for piecewise-constant open evolution: maps a duration
/// to `exp(L dt)` so repeated segment lengths cost one exponential.
pub struct LindbladPropagator {
    superop: CMatrix,
    dim: usize,
    cache: HashMap<u64, CMatrix>,
}

impl LindbladPropagator {
    pub fn new(model: &LindbladModel) -> Self {
        LindbladPropagator {
            superop: liouvillian(model),
            dim: model.dim(),
            cache: HashMap::new(),
        }
    }

    /// `exp(L dt)` (cached per distinct `dt` bit pattern).
    pub fn at(&mut self, dt_ns: f64) -> &CMatrix {
        let key = dt_ns.to_bits();
        self.cache
            .entry(key)
            .or_insert_with(|| linalg::expm(&(&self.superop * C64::new(dt_ns, 0.0))))
    }

    /// Evolve a density matrix in place by `dt`.
    pub fn apply(&mut self, rho: &CMatrix, dt_ns: f64) -> CMatrix {
        let n = self.dim;
        let propagated = self.at(dt_ns).dot(&linalg::vectorize(rho));
        let mut out = linalg::unvectorize(&propagated, n);
        linalg::hermitize(&mut out);
        out
    }
}

/// Exact open-system evolution for a static model: exponentials of the
/// Liouvillian between output times (`rho0` is the state at `times[0]`).
///
/// Same health checks as [`evolve_lindblad`]; no step error, so this is the
/// engine of choice for long spans.
pub fn evolve_lindblad_exact(
    model: &LindbladModel,
    rho0: &DensityMatrix,
    times: &[f64],
    observables: &Observables,
) -> Result<Trajectory> {
    check_times(times)?;
    if rho0.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            context: "evolve_lindblad_exact (state vs model)",
            expected: model.dim(),
            found: rho0.dim(),
        });
    }
    observables.dim_check(model.dim())?;
    let mut propagator = LindbladPropagator::new(model);
    let mut rho = rho0.matrix().clone();
    let mut rows = Vec::with_capacity(times.len());
    rows.push(observables.row_mixed(&DensityMatrix::from_evolution(rho.clone()))?);
    for w in times.windows(2) {
        rho = propagator.apply(&rho, w[1] - w[0]);
        check_density_health(&rho, "evolve_lindblad_exact")?;
        rows.push(observables.row_mixed(&DensityMatrix::from_evolution(rho.clone()))?);
    }
    let mut traj = Trajectory::new(times.to_vec(), observables.names(), rows)?;
    if let Some(w) = lifetime_span_warning(model, times[times.len() - 1] - times[0]) {
        traj.push_warning(w);
    }
    Ok(traj)
}
