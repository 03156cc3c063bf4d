// Copyright 2026 Tripex Contributors
// SPDX-License-Identifier: Apache-2.0

//! Spin quantum numbers, multi-site product spaces, and the operator/state
//! types everything else is built from.
//!
//! Basis convention: the product basis is ordered row-major with site 0 the
//! slowest-varying index, and each site's levels run from `m = +s` down to
//! `m = -s`.  For a (spin-1, spin-1/2) system the six basis states are
//! `|+1,up> |+1,dn> |0,up> |0,dn> |-1,up> |-1,dn>`.

use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, CVector, C64};

/// A spin quantum number, stored as `2s` so that half-integers are exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SpinValue {
    twice: u32,
}

impl SpinValue {
    /// Spin from `2s`; `twice` must be at least 1 (spin 1/2).
    pub fn from_twice(twice: u32) -> Result<Self> {
        if twice == 0 {
            return Err(Error::InvalidValue {
                name: "spin",
                value: 0.0,
                constraint: "must be >= 1/2",
            });
        }
        Ok(SpinValue { twice })
    }

    /// Spin 1/2.
    pub fn half() -> Self {
        SpinValue { twice: 1 }
    }

    /// Spin 1.
    pub fn one() -> Self {
        SpinValue { twice: 2 }
    }

    /// Parse `"1"`, `"1/2"`, `"3/2"`, ...
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim();
        let parsed = if let Some((num, den)) = t.split_once('/') {
            match (num.trim().parse::<u32>(), den.trim().parse::<u32>()) {
                (Ok(n), Ok(2)) => Some(n),
                _ => None,
            }
        } else {
            t.parse::<u32>().ok().map(|n| 2 * n)
        };
        match parsed {
            Some(twice) if twice >= 1 => Ok(SpinValue { twice }),
            _ => Err(Error::InvalidInput(format!(
                "cannot parse spin value {t:?} (expected an integer or half-integer like \"1\" or \"1/2\")"
            ))),
        }
    }

    /// `2s` as stored.
    pub fn twice(&self) -> u32 {
        self.twice
    }

    /// The spin value `s` as a float.
    pub fn value(&self) -> f64 {
        self.twice as f64 / 2.0
    }

    /// Number of levels, `2s + 1`.
    pub fn multiplicity(&self) -> usize {
        self.twice as usize + 1
    }

    /// `s (s + 1)`.
    pub fn casimir(&self) -> f64 {
        let s = self.value();
        s * (s + 1.0)
    }

    /// Magnetic quantum number of `level` (0 is `m = +s`).
    pub fn m_of_level(&self, level: usize) -> f64 {
        self.value() - level as f64
    }

    /// Level index of magnetic quantum number `m`, if `m` is valid.
    pub fn level_of_m(&self, m: f64) -> Result<usize> {
        let offset = self.value() - m;
        let rounded = offset.round();
        if (offset - rounded).abs() > 1e-9 || rounded < 0.0 || rounded > self.twice as f64 {
            return Err(Error::InvalidValue {
                name: "m",
                value: m,
                constraint: "must be s, s-1, ..., -s",
            });
        }
        Ok(rounded as usize)
    }
}

impl fmt::Display for SpinValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.twice.is_multiple_of(2) {
            write!(f, "{}", self.twice / 2)
        } else {
            write!(f, "{}/2", self.twice)
        }
    }
}

/// One spin site: quantum number, g-factor, and a label used for observable
/// column names.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinSite {
    pub spin: SpinValue,
    pub g_factor: f64,
    pub label: String,
}

impl SpinSite {
    /// Site with the free-electron-like default g = 2.0.
    pub fn new(spin: SpinValue, label: impl Into<String>) -> Self {
        SpinSite {
            spin,
            g_factor: 2.0,
            label: label.into(),
        }
    }

    /// Site with an explicit g-factor.
    pub fn with_g(spin: SpinValue, g_factor: f64, label: impl Into<String>) -> Self {
        SpinSite {
            spin,
            g_factor,
            label: label.into(),
        }
    }
}

/// An ordered list of spin sites with the product-space dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinSystem {
    sites: Vec<SpinSite>,
    dimension: usize,
}

impl SpinSystem {
    pub fn new(sites: Vec<SpinSite>) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::InvalidInput("a spin system needs at least one site".into()));
        }
        let dimension = sites.iter().map(|s| s.spin.multiplicity()).product();
        if dimension < 2 {
            return Err(Error::InvalidInput(
                "spin system dimension must be at least 2".into(),
            ));
        }
        Ok(SpinSystem { sites, dimension })
    }

    /// The canonical two-site system of this crate: a spin-1 triplet exciton
    /// (site 0, labeled `triplet`) and a localized spin-1/2 (site 1, labeled
    /// `cu`), both with g = 2.
    pub fn triplet_cu() -> Self {
        SpinSystem::new(vec![
            SpinSite::new(SpinValue::one(), "triplet"),
            SpinSite::new(SpinValue::half(), "cu"),
        ])
        .expect("static system is valid")
    }

    /// Same as [`SpinSystem::triplet_cu`] with explicit per-site g-factors.
    pub fn triplet_cu_with_g(g_triplet: f64, g_cu: f64) -> Self {
        SpinSystem::new(vec![
            SpinSite::with_g(SpinValue::one(), g_triplet, "triplet"),
            SpinSite::with_g(SpinValue::half(), g_cu, "cu"),
        ])
        .expect("static system is valid")
    }

    pub fn sites(&self) -> &[SpinSite] {
        &self.sites
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Flat basis index of a per-site level assignment (site 0 slowest).
    pub fn basis_index(&self, levels: &[usize]) -> Result<usize> {
        if levels.len() != self.sites.len() {
            return Err(Error::DimensionMismatch {
                context: "basis_index (one level per site)",
                expected: self.sites.len(),
                found: levels.len(),
            });
        }
        let mut idx = 0;
        for (site, &level) in self.sites.iter().zip(levels) {
            let mult = site.spin.multiplicity();
            if level >= mult {
                return Err(Error::InvalidValue {
                    name: "level",
                    value: level as f64,
                    constraint: "must be below the site multiplicity",
                });
            }
            idx = idx * mult + level;
        }
        Ok(idx)
    }

    /// Basis product state from per-site magnetic quantum numbers.
    pub fn product_state(&self, ms: &[f64]) -> Result<StateVector> {
        if ms.len() != self.sites.len() {
            return Err(Error::DimensionMismatch {
                context: "product_state (one m per site)",
                expected: self.sites.len(),
                found: ms.len(),
            });
        }
        let levels: Vec<usize> = self
            .sites
            .iter()
            .zip(ms)
            .map(|(site, &m)| site.spin.level_of_m(m))
            .collect::<Result<_>>()?;
        let idx = self.basis_index(&levels)?;
        StateVector::basis(self.dimension, idx)
    }
}

/// The ladder/Cartesian operators of a single spin.
#[derive(Debug, Clone)]
pub struct SpinOperators {
    pub sx: Operator,
    pub sy: Operator,
    pub sz: Operator,
    pub splus: Operator,
    pub sminus: Operator,
}

/// Build the spin operator set for quantum number `s`.
///
/// `sz` is diagonal `(s, s-1, ..., -s)`; the only nonzero elements of the
/// raising operator are `<m+1|S+|m> = sqrt(s(s+1) - m(m+1))`.
pub fn spin_operators(s: SpinValue) -> SpinOperators {
    let dim = s.multiplicity();
    let mut sz = CMatrix::zeros((dim, dim));
    let mut splus = CMatrix::zeros((dim, dim));
    for level in 0..dim {
        sz[(level, level)] = C64::new(s.m_of_level(level), 0.0);
    }
    let casimir = s.casimir();
    for level in 1..dim {
        // level indexes m; level-1 indexes m+1.
        let m = s.m_of_level(level);
        splus[(level - 1, level)] = C64::new((casimir - m * (m + 1.0)).sqrt(), 0.0);
    }
    let sminus = linalg::dagger(&splus);
    let half = C64::new(0.5, 0.0);
    let half_i = C64::new(0.0, -0.5);
    let sx = (&splus + &sminus) * half;
    let sy = (&splus - &sminus) * half_i;
    SpinOperators {
        sx: Operator::hermitian(sx).expect("sx is Hermitian by construction"),
        sy: Operator::hermitian(sy).expect("sy is Hermitian by construction"),
        sz: Operator::hermitian(sz).expect("sz is Hermitian by construction"),
        splus: Operator::general(splus),
        sminus: Operator::general(sminus),
    }
}

/// Lift a single-site operator into the full product space by Kronecker
/// products with identities on every other site.
pub fn embed(op: &Operator, site_index: usize, system: &SpinSystem) -> Result<Operator> {
    let sites = system.sites();
    if site_index >= sites.len() {
        return Err(Error::InvalidValue {
            name: "site_index",
            value: site_index as f64,
            constraint: "must index an existing site",
        });
    }
    let expected = sites[site_index].spin.multiplicity();
    if op.dim() != expected {
        return Err(Error::DimensionMismatch {
            context: "embed (operator vs site multiplicity)",
            expected,
            found: op.dim(),
        });
    }
    let mut acc = CMatrix::from_shape_fn((1, 1), |_| C64::new(1.0, 0.0));
    for (k, site) in sites.iter().enumerate() {
        let factor = if k == site_index {
            op.matrix().clone()
        } else {
            linalg::identity(site.spin.multiplicity())
        };
        acc = linalg::kron(&acc, &factor);
    }
    Ok(if op.is_hermitian() {
        Operator::hermitian(acc).expect("embedding preserves Hermiticity")
    } else {
        Operator::general(acc)
    })
}

/// A square complex matrix acting on a system, carrying a Hermiticity flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    matrix: CMatrix,
    hermitian: bool,
}

impl Operator {
    /// Wrap a matrix after verifying it is Hermitian to within
    /// `1e-12 * max|A|`.
    pub fn hermitian(matrix: CMatrix) -> Result<Self> {
        let dev = linalg::hermiticity_deviation(&matrix);
        let scale = linalg::max_abs(&matrix).max(1.0);
        if dev > 1e-12 * scale {
            return Err(Error::NotHermitian { deviation: dev });
        }
        Ok(Operator {
            matrix,
            hermitian: true,
        })
    }

    /// Wrap a matrix with no Hermiticity claim.
    pub fn general(matrix: CMatrix) -> Self {
        Operator {
            matrix,
            hermitian: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    /// Conjugate transpose.
    pub fn dagger(&self) -> Operator {
        Operator {
            matrix: linalg::dagger(&self.matrix),
            hermitian: self.hermitian,
        }
    }

    /// Matrix product `self * other` (generally not Hermitian).
    pub fn matmul(&self, other: &Operator) -> Result<Operator> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                context: "operator product",
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(Operator::general(self.matrix.dot(&other.matrix)))
    }

    /// Sum; Hermitian when both terms are.
    pub fn add(&self, other: &Operator) -> Result<Operator> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                context: "operator sum",
                expected: self.dim(),
                found: other.dim(),
            });
        }
        let matrix = &self.matrix + &other.matrix;
        Ok(Operator {
            matrix,
            hermitian: self.hermitian && other.hermitian,
        })
    }

    /// Real scalar multiple (preserves Hermiticity).
    pub fn scale(&self, factor: f64) -> Operator {
        Operator {
            matrix: &self.matrix * C64::new(factor, 0.0),
            hermitian: self.hermitian,
        }
    }
}

/// A normalized pure state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    vec: CVector,
}

impl StateVector {
    /// Wrap a vector, requiring unit norm to within 1e-10.
    pub fn new(vec: CVector) -> Result<Self> {
        let norm = vec.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidState(format!(
                "state vector norm is {norm:.12} (must be 1 within 1e-10)"
            )));
        }
        Ok(StateVector { vec })
    }

    /// The `index`-th basis state of a `dim`-dimensional space.
    pub fn basis(dim: usize, index: usize) -> Result<Self> {
        if index >= dim {
            return Err(Error::InvalidValue {
                name: "basis index",
                value: index as f64,
                constraint: "must be below the dimension",
            });
        }
        let mut vec = CVector::zeros(dim);
        vec[index] = C64::new(1.0, 0.0);
        Ok(StateVector { vec })
    }

    pub fn dim(&self) -> usize {
        self.vec.len()
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.vec
    }

    pub fn norm(&self) -> f64 {
        self.vec.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `<psi| O |psi>` (complex; real for Hermitian `O`).
    pub fn expectation(&self, op: &Operator) -> Result<C64> {
        if op.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "expectation value",
                expected: self.dim(),
                found: op.dim(),
            });
        }
        let applied = op.matrix().dot(&self.vec);
        Ok(self
            .vec
            .iter()
            .zip(applied.iter())
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// Promote to a rank-1 density matrix.
    pub fn density(&self) -> DensityMatrix {
        let n = self.dim();
        let mat = CMatrix::from_shape_fn((n, n), |(i, j)| self.vec[i] * self.vec[j].conj());
        DensityMatrix { mat }
    }
}

/// A density matrix: Hermitian, unit trace, positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    mat: CMatrix,
}

impl DensityMatrix {
    /// Wrap a matrix after checking Hermiticity (1e-10), trace 1 (1e-8), and
    /// eigenvalues >= -1e-8.
    pub fn new(mat: CMatrix) -> Result<Self> {
        let dev = linalg::hermiticity_deviation(&mat);
        if dev > 1e-10 {
            return Err(Error::InvalidState(format!(
                "density matrix is not Hermitian (max deviation {dev:.3e})"
            )));
        }
        let tr = linalg::trace(&mat);
        if (tr.re - 1.0).abs() > 1e-8 || tr.im.abs() > 1e-8 {
            return Err(Error::InvalidState(format!(
                "density matrix trace is {:.12}+{:.3e}i (must be 1 within 1e-8)",
                tr.re, tr.im
            )));
        }
        let mut symmetric = mat.clone();
        linalg::hermitize(&mut symmetric);
        let (vals, _) = linalg::eigh(&symmetric)?;
        if let Some(min) = vals.first() {
            if *min < -1e-8 {
                return Err(Error::InvalidState(format!(
                    "density matrix has negative eigenvalue {min:.3e} (must be >= -1e-8)"
                )));
            }
        }
        Ok(DensityMatrix { mat })
    }

    /// Trusted constructor for matrices produced by the crate's own evolution
    /// routines, which enforce the invariants incrementally.
    pub(crate) fn from_evolution(mat: CMatrix) -> Self {
        DensityMatrix { mat }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn trace(&self) -> C64 {
        linalg::trace(&self.mat)
    }

    /// `Tr(rho O)` (complex; real for Hermitian `O`).
    pub fn expectation(&self, op: &Operator) -> Result<C64> {
        if op.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "expectation value",
                expected: self.dim(),
                found: op.dim(),
            });
        }
        // Tr(rho O) = sum_ij rho_ij O_ji
        let mut acc = C64::new(0.0, 0.0);
        let n = self.dim();
        for i in 0..n {
            for j in 0..n {
                acc += self.mat[(i, j)] * op.matrix()[(j, i)];
            }
        }
        Ok(acc)
    }

    /// Smallest eigenvalue (the positivity margin).
    pub fn min_eigenvalue(&self) -> Result<f64> {
        let mut symmetric = self.mat.clone();
        linalg::hermitize(&mut symmetric);
        let (vals, _) = linalg::eigh(&symmetric)?;
        Ok(vals[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn commutator(a: &Operator, b: &Operator) -> CMatrix {
        a.matrix().dot(b.matrix()) - b.matrix().dot(a.matrix())
    }

    #[test]
    fn spin_value_parsing_and_display() {
        assert_eq!(SpinValue::parse("1/2").unwrap(), SpinValue::half());
        assert_eq!(SpinValue::parse("1").unwrap(), SpinValue::one());
        assert_eq!(SpinValue::parse("3/2").unwrap().multiplicity(), 4);
        assert_eq!(SpinValue::parse(" 5/2 ").unwrap().value(), 2.5);
        assert!(SpinValue::parse("0").is_err());
        assert!(SpinValue::parse("2/3").is_err());
        assert!(SpinValue::parse("x").is_err());
        assert_eq!(SpinValue::one().to_string(), "1");
        assert_eq!(SpinValue::half().to_string(), "1/2");
    }

    #[test]
    fn spin_half_matches_pauli_over_two() {
        let ops = spin_operators(SpinValue::half());
        let sz = ops.sz.matrix();
        assert_eq!(sz[(0, 0)], C64::new(0.5, 0.0));
        assert_eq!(sz[(1, 1)], C64::new(-0.5, 0.0));
        let sx = ops.sx.matrix();
        assert_eq!(sx[(0, 1)], C64::new(0.5, 0.0));
        assert_eq!(sx[(1, 0)], C64::new(0.5, 0.0));
        let sy = ops.sy.matrix();
        assert_eq!(sy[(0, 1)], C64::new(0.0, -0.5));
        assert_eq!(sy[(1, 0)], C64::new(0.0, 0.5));
    }

    #[test]
    fn spin_one_ladder_elements() {
        let ops = spin_operators(SpinValue::one());
        let sp = ops.splus.matrix();
        let rt2 = 2.0_f64.sqrt();
        assert_abs_diff_eq!(sp[(0, 1)].re, rt2, epsilon = 1e-15);
        assert_abs_diff_eq!(sp[(1, 2)].re, rt2, epsilon = 1e-15);
        assert_eq!(sp[(1, 0)], C64::new(0.0, 0.0));
        // sx has the sqrt(2)/2 = 0.7071 pattern.
        let sx = ops.sx.matrix();
        assert_abs_diff_eq!(sx[(0, 1)].re, rt2 / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(sx[(2, 1)].re, rt2 / 2.0, epsilon = 1e-15);
        assert_eq!(sx[(0, 2)], C64::new(0.0, 0.0));
    }

    #[test]
    fn commutation_and_casimir_up_to_five_halves() {
        for twice in 1..=5u32 {
            let s = SpinValue::from_twice(twice).unwrap();
            let ops = spin_operators(s);
            // [Sx, Sy] = i Sz
            let comm = commutator(&ops.sx, &ops.sy);
            let want = ops.sz.matrix() * C64::new(0.0, 1.0);
            let dev = linalg::max_abs(&(&comm - &want));
            assert!(dev < 1e-12, "s = {s}: [Sx,Sy] deviation {dev:.3e}");
            // Sx^2 + Sy^2 + Sz^2 = s(s+1) I
            let cas = ops.sx.matrix().dot(ops.sx.matrix())
                + ops.sy.matrix().dot(ops.sy.matrix())
                + ops.sz.matrix().dot(ops.sz.matrix());
            let want = linalg::identity(s.multiplicity()) * C64::new(s.casimir(), 0.0);
            let dev = linalg::max_abs(&(&cas - &want));
            assert!(dev < 1e-12, "s = {s}: Casimir deviation {dev:.3e}");
            // S+ S- - S- S+ = 2 Sz
            let comm = commutator(&ops.splus, &ops.sminus);
            let want = ops.sz.matrix() * C64::new(2.0, 0.0);
            let dev = linalg::max_abs(&(&comm - &want));
            assert!(dev < 1e-12, "s = {s}: ladder commutator deviation {dev:.3e}");
        }
    }

    #[test]
    fn embed_sz_site0_diagonal_for_triplet_cu() {
        let system = SpinSystem::triplet_cu();
        let ops = spin_operators(SpinValue::one());
        let lifted = embed(&ops.sz, 0, &system).unwrap();
        let want = [1.0, 1.0, 0.0, 0.0, -1.0, -1.0];
        for (i, w) in want.iter().enumerate() {
            assert_abs_diff_eq!(lifted.matrix()[(i, i)].re, *w, epsilon = 1e-15);
            for j in 0..6 {
                if i != j {
                    assert_eq!(lifted.matrix()[(i, j)], C64::new(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn embedded_operators_on_different_sites_commute() {
        let system = SpinSystem::triplet_cu();
        let t = spin_operators(SpinValue::one());
        let c = spin_operators(SpinValue::half());
        let a = embed(&t.sx, 0, &system).unwrap();
        let b = embed(&c.sy, 1, &system).unwrap();
        let dev = linalg::max_abs(&commutator(&a, &b));
        assert!(dev < 1e-15);
    }

    #[test]
    fn embed_rejects_wrong_dimension_or_site() {
        let system = SpinSystem::triplet_cu();
        let c = spin_operators(SpinValue::half());
        assert!(embed(&c.sx, 0, &system).is_err()); // 2x2 onto the spin-1 site
        assert!(embed(&c.sx, 2, &system).is_err()); // no such site
    }

    #[test]
    fn basis_index_is_row_major_site0_slowest() {
        let system = SpinSystem::triplet_cu();
        // |+1,up>=0, |+1,dn>=1, |0,up>=2, |0,dn>=3, |-1,up>=4, |-1,dn>=5
        assert_eq!(system.basis_index(&[0, 0]).unwrap(), 0);
        assert_eq!(system.basis_index(&[0, 1]).unwrap(), 1);
        assert_eq!(system.basis_index(&[1, 0]).unwrap(), 2);
        assert_eq!(system.basis_index(&[2, 1]).unwrap(), 5);
        assert!(system.basis_index(&[3, 0]).is_err());
    }

    #[test]
    fn product_state_from_m_values() {
        let system = SpinSystem::triplet_cu();
        let psi = system.product_state(&[1.0, -0.5]).unwrap();
        assert_eq!(psi.amplitudes()[1], C64::new(1.0, 0.0));
        assert!(system.product_state(&[0.5, -0.5]).is_err());
    }

    #[test]
    fn operator_hermitian_check() {
        let mut m = CMatrix::zeros((2, 2));
        m[(0, 1)] = C64::new(0.0, 1.0);
        m[(1, 0)] = C64::new(0.0, -1.0);
        assert!(Operator::hermitian(m.clone()).is_ok());
        m[(1, 0)] = C64::new(0.0, 1.0);
        assert!(Operator::hermitian(m).is_err());
    }

    #[test]
    fn state_vector_norm_enforced() {
        let mut v = CVector::zeros(2);
        v[0] = C64::new(0.6, 0.0);
        v[1] = C64::new(0.8, 0.0);
        assert!(StateVector::new(v.clone()).is_ok());
        v[1] = C64::new(0.9, 0.0);
        assert!(StateVector::new(v).is_err());
    }

    #[test]
    fn density_matrix_checks() {
        let psi = StateVector::basis(3, 1).unwrap();
        let rho = psi.density();
        assert_abs_diff_eq!(rho.trace().re, 1.0, epsilon = 1e-15);
        assert!(DensityMatrix::new(rho.matrix().clone()).is_ok());
        // Trace != 1 is rejected.
        let bad = rho.matrix() * C64::new(2.0, 0.0);
        assert!(DensityMatrix::new(bad).is_err());
        // Negative eigenvalue is rejected.
        let mut neg = CMatrix::zeros((2, 2));
        neg[(0, 0)] = C64::new(1.5, 0.0);
        neg[(1, 1)] = C64::new(-0.5, 0.0);
        assert!(DensityMatrix::new(neg).is_err());
    }

    #[test]
    fn expectation_values_match_by_hand() {
        let system = SpinSystem::triplet_cu();
        let c = spin_operators(SpinValue::half());
        let sz_cu = embed(&c.sz, 1, &system).unwrap();
        let psi = system.product_state(&[1.0, -0.5]).unwrap();
        let e = psi.expectation(&sz_cu).unwrap();
        assert_abs_diff_eq!(e.re, -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(e.im, 0.0, epsilon = 1e-15);
        let rho = psi.density();
        let e = rho.expectation(&sz_cu).unwrap();
        assert_abs_diff_eq!(e.re, -0.5, epsilon = 1e-15);
    }
}
