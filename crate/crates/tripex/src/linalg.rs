// Copyright 2026 Tripex Contributors
// SPDX-License-Identifier: Apache-2.0

//! Dense complex linear algebra for the small (dimension <= 64) matrices this
//! crate works with: Hermitian eigendecomposition, matrix exponential, and
//! Kronecker/vectorization helpers.
//!
//! The eigensolver is a cyclic Jacobi iteration.  At these dimensions it is
//! exact to machine precision, has no external dependencies, and — together
//! with the deterministic ordering and phase convention applied afterwards —
//! returns bit-identical output for bit-identical input.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = Array2<C64>;
pub type CVector = Array1<C64>;

/// `n x n` identity.
pub fn identity(n: usize) -> CMatrix {
    Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// Conjugate transpose.
pub fn dagger(a: &CMatrix) -> CMatrix {
    a.t().mapv(|z| z.conj())
}

/// Largest element magnitude; 0 for an empty matrix.
pub fn max_abs(a: &CMatrix) -> f64 {
    a.iter().fold(0.0, |m, z| m.max(z.norm()))
}

/// Max element magnitude of `A - A^dag`.
pub fn hermiticity_deviation(a: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut dev: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            dev = dev.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    dev
}

/// Trace.
pub fn trace(a: &CMatrix) -> C64 {
    a.diag().sum()
}

/// Replace `a` by its Hermitian part `(A + A^dag) / 2`.
pub fn hermitize(a: &mut CMatrix) {
    let adj = dagger(a);
    *a = (&*a + &adj) * C64::new(0.5, 0.0);
}

/// Kronecker product `a (x) b` (row-major block convention: the left factor
/// varies slowest).
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ra, ca) = a.dim();
    let (rb, cb) = b.dim();
    let mut out = CMatrix::zeros((ra * rb, ca * cb));
    for i in 0..ra {
        for j in 0..ca {
            let aij = a[(i, j)];
            for k in 0..rb {
                for l in 0..cb {
                    out[(i * rb + k, j * cb + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Row-major vectorization of a square matrix.
pub fn vectorize(a: &CMatrix) -> CVector {
    CVector::from_iter(a.iter().copied())
}

/// Inverse of [`vectorize`] for an `n x n` matrix.
pub fn unvectorize(v: &CVector, n: usize) -> CMatrix {
    CMatrix::from_shape_fn((n, n), |(i, j)| v[i * n + j])
}

/// Eigendecomposition of a Hermitian matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching eigenvectors as
/// the columns of a unitary matrix.  Each eigenvector is normalized with its
/// largest-magnitude component made real and positive (ties broken by the
/// lowest index), which pins the phase deterministically.
pub fn eigh(a: &CMatrix) -> Result<(Vec<f64>, CMatrix)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "eigh (matrix must be square)",
            expected: n,
            found: a.ncols(),
        });
    }
    let scale = max_abs(a);
    let dev = hermiticity_deviation(a);
    if dev > 1e-12 * scale.max(1.0) {
        return Err(Error::NotHermitian { deviation: dev });
    }
    let mut m = a.clone();
    hermitize(&mut m); // scrub roundoff asymmetry before iterating
    let mut v = identity(n);

    let off = |m: &CMatrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[(i, j)].norm_sqr();
                }
            }
        }
        s.sqrt()
    };
    let frob = m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let tol = 1e-15 * frob.max(1e-300);

    let max_sweeps = 64;
    let mut sweeps = 0;
    while off(&m) > tol {
        sweeps += 1;
        if sweeps > max_sweeps {
            return Err(Error::EigensolverNoConvergence {
                sweeps: max_sweeps,
                off: off(&m),
            });
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                let g = apq.norm();
                if g <= 1e-300 || g <= 1e-18 * frob {
                    continue;
                }
                let phase = apq / g; // e^{i phi}
                let alpha = m[(p, p)].re;
                let beta = m[(q, q)].re;
                // Solve t^2 + 2 theta t - 1 = 0 with the smaller root.
                let theta = (beta - alpha) / (2.0 * g);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let s_fwd = phase * s; // s * e^{i phi}
                // Right-multiply columns p,q of M and V by the rotation.
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = mkp * c - mkq * s_fwd.conj();
                    m[(k, q)] = mkp * s_fwd + mkq * c;
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * c - vkq * s_fwd.conj();
                    v[(k, q)] = vkp * s_fwd + vkq * c;
                }
                // Left-multiply rows p,q of M by the adjoint rotation.
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = mpk * c - mqk * s_fwd;
                    m[(q, k)] = mpk * s_fwd.conj() + mqk * c;
                }
                // Scrub the rotated pair onto the real axis / zero.
                m[(p, q)] = C64::new(0.0, 0.0);
                m[(q, p)] = C64::new(0.0, 0.0);
                m[(p, p)] = C64::new(m[(p, p)].re, 0.0);
                m[(q, q)] = C64::new(m[(q, q)].re, 0.0);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| m[(i, i)].re).collect();
    order.sort_by(|&i, &j| diag[i].partial_cmp(&diag[j]).unwrap().then(i.cmp(&j)));

    let values: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let mut vectors = CMatrix::zeros((n, n));
    for (new_col, &old_col) in order.iter().enumerate() {
        // Deterministic phase: largest-magnitude component real-positive.
        let mut k_max = 0;
        let mut mag_max = -1.0;
        for k in 0..n {
            let mag = v[(k, old_col)].norm();
            if mag > mag_max + 1e-300 && mag > mag_max {
                mag_max = mag;
                k_max = k;
            }
        }
        let pivot = v[(k_max, old_col)];
        let phase = if pivot.norm() > 0.0 {
            pivot.conj() / pivot.norm()
        } else {
            C64::new(1.0, 0.0)
        };
        for k in 0..n {
            vectors[(k, new_col)] = v[(k, old_col)] * phase;
        }
    }
    Ok((values, vectors))
}

/// Matrix exponential by Pade(13) approximation with scaling and squaring.
pub fn expm(a: &CMatrix) -> CMatrix {
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    const THETA_13: f64 = 5.371920351148152;

    let n = a.nrows();
    // 1-norm (max column sum of magnitudes).
    let mut norm1: f64 = 0.0;
    for j in 0..n {
        let col: f64 = (0..n).map(|i| a[(i, j)].norm()).sum();
        norm1 = norm1.max(col);
    }
    let s = if norm1 > THETA_13 {
        (norm1 / THETA_13).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a.mapv(|z| z / C64::new(2f64.powi(s), 0.0));

    let a2 = scaled.dot(&scaled);
    let a4 = a2.dot(&a2);
    let a6 = a4.dot(&a2);
    let eye = identity(n);

    let cb = |k: usize| C64::new(B[k], 0.0);
    let u_inner = &a6 * cb(13) + &a4 * cb(11) + &a2 * cb(9);
    let u_poly = a6.dot(&u_inner) + &a6 * cb(7) + &a4 * cb(5) + &a2 * cb(3) + &eye * cb(1);
    let u = scaled.dot(&u_poly);
    let v_inner = &a6 * cb(12) + &a4 * cb(10) + &a2 * cb(8);
    let v = a6.dot(&v_inner) + &a6 * cb(6) + &a4 * cb(4) + &a2 * cb(2) + &eye * cb(0);

    let lhs = &v - &u;
    let rhs = &v + &u;
    let mut f = solve(&lhs, &rhs).expect("Pade denominator is singular");
    for _ in 0..s {
        f = f.dot(&f);
    }
    f
}

/// Solve `A X = B` for square `A` by LU decomposition with partial pivoting.
pub fn solve(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "solve (matrix must be square)",
            expected: n,
            found: a.ncols(),
        });
    }
    if b.nrows() != n {
        return Err(Error::DimensionMismatch {
            context: "solve (rhs rows)",
            expected: n,
            found: b.nrows(),
        });
    }
    let mut lu = a.clone();
    let mut x = b.clone();
    let cols = x.ncols();
    let mut perm: Vec<usize> = (0..n).collect();

    for k in 0..n {
        let mut pivot = k;
        let mut best = lu[(k, k)].norm();
        for i in (k + 1)..n {
            let mag = lu[(i, k)].norm();
            if mag > best {
                best = mag;
                pivot = i;
            }
        }
        if best < 1e-300 {
            return Err(Error::NumericalFailure(
                "singular matrix in linear solve".into(),
            ));
        }
        if pivot != k {
            for j in 0..n {
                let tmp = lu[(k, j)];
                lu[(k, j)] = lu[(pivot, j)];
                lu[(pivot, j)] = tmp;
            }
            perm.swap(k, pivot);
            for j in 0..cols {
                let tmp = x[(k, j)];
                x[(k, j)] = x[(pivot, j)];
                x[(pivot, j)] = tmp;
            }
        }
        let diag = lu[(k, k)];
        for i in (k + 1)..n {
            let factor = lu[(i, k)] / diag;
            lu[(i, k)] = factor;
            for j in (k + 1)..n {
                let sub = factor * lu[(k, j)];
                lu[(i, j)] -= sub;
            }
            for j in 0..cols {
                let sub = factor * x[(k, j)];
                x[(i, j)] -= sub;
            }
        }
    }
    // Back substitution.
    for j in 0..cols {
        for i in (0..n).rev() {
            let mut acc = x[(i, j)];
            for k in (i + 1)..n {
                acc -= lu[(i, k)] * x[(k, j)];
            }
            x[(i, j)] = acc / lu[(i, i)];
        }
    }
    Ok(x)
}
