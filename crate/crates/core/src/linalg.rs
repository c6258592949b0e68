//! Dense linear algebra used by the exact solvers.
//!
//! Everything here is deliberately small and deterministic: the MDPs this
//! crate targets are capped at `n_states * n_actions <= 10_000`, so dense LU
//! with partial pivoting covers every solve, and the pseudo-inverse of a Gram
//! matrix (symmetric PSD) comes from a cyclic Jacobi eigendecomposition.

use ndarray::{Array1, Array2};

use crate::{Error, Result};

/// Hard cap on state-action space size for the dense solvers.
pub const MAX_STATE_ACTION: usize = 10_000;

/// LU factorization with partial pivoting, kept for repeated solves against
/// the same matrix.
pub struct LuFactors {
    lu: Array2<f64>,
    pivots: Vec<usize>,
}

impl LuFactors {
    /// Factor a square matrix. Fails on exactly-singular pivots.
    pub fn new(a: &Array2<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "LU needs a square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let mut lu = a.clone();
        let mut pivots = Vec::with_capacity(n);
        for k in 0..n {
            // Partial pivot: largest |entry| in column k at or below the diagonal.
            let mut p = k;
            let mut best = lu[[k, k]].abs();
            for i in (k + 1)..n {
                let v = lu[[i, k]].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::SingularSystem(format!(
                    "zero or non-finite pivot at column {k}"
                )));
            }
            if p != k {
                for j in 0..n {
                    lu.swap([k, j], [p, j]);
                }
            }
            pivots.push(p);
            let diag = lu[[k, k]];
            for i in (k + 1)..n {
                let factor = lu[[i, k]] / diag;
                lu[[i, k]] = factor;
                for j in (k + 1)..n {
                    lu[[i, j]] -= factor * lu[[k, j]];
                }
            }
        }
        Ok(LuFactors { lu, pivots })
    }

    /// Solve `A x = b` for a single right-hand side.
    pub fn solve(&self, b: &Array1<f64>) -> Result<Array1<f64>> {
        let n = self.lu.nrows();
        if b.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "rhs length {} vs system size {n}",
                b.len()
            )));
        }
        let mut x = b.clone();
        for (k, &p) in self.pivots.iter().enumerate() {
            if p != k {
                x.swap(k, p);
            }
        }
        // Forward substitution (unit lower-triangular part).
        for i in 1..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu[[i, j]] * x[j];
            }
            x[i] = acc;
        }
        // Back substitution.
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in (i + 1)..n {
                acc -= self.lu[[i, j]] * x[j];
            }
            x[i] = acc / self.lu[[i, i]];
        }
        Ok(x)
    }

    /// Solve `A X = B` column by column.
    pub fn solve_multi(&self, b: &Array2<f64>) -> Result<Array2<f64>> {
        let n = self.lu.nrows();
        if b.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "rhs has {} rows vs system size {n}",
                b.nrows()
            )));
        }
        let mut out = Array2::zeros((n, b.ncols()));
        for j in 0..b.ncols() {
            let col = self.solve(&b.column(j).to_owned())?;
            out.column_mut(j).assign(&col);
        }
        Ok(out)
    }
}

/// Solve `A x = b` by dense LU with partial pivoting.
pub fn lu_solve(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    LuFactors::new(a)?.solve(b)
}

/// Invert a square matrix by solving against the identity.
pub fn invert(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    LuFactors::new(a)?.solve_multi(&Array2::eye(n))
}

/// Eigendecomposition of a symmetric matrix by the cyclic Jacobi method.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvectors as columns, in
/// descending eigenvalue order. Input symmetry is trusted; only the upper
/// triangle drives the rotations.
pub fn sym_eig(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "sym_eig needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let mut m = a.clone();
    let mut v = Array2::eye(n);
    let scale: f64 = m.iter().fold(0.0f64, |acc, x| acc.max(x.abs())).max(1.0);
    let tol = 1e-14 * scale;

    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off = off.max(m[[i, j]].abs());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() <= tol * 1e-2 {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[j, j]].partial_cmp(&m[[i, i]]).unwrap());
    let mut vals = Array1::zeros(n);
    let mut vecs = Array2::zeros((n, n));
    for (slot, &i) in order.iter().enumerate() {
        vals[slot] = m[[i, i]];
        vecs.column_mut(slot).assign(&v.column(i));
    }
    Ok((vals, vecs))
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix (e.g. a Gram
/// matrix), dropping singular values below `rel_cutoff * sigma_max`.
///
/// For symmetric PSD input the eigendecomposition is the SVD, so this is the
/// SVD-based pseudo-inverse. Rank-deficient inputs (dependent features, zero
/// columns) produce the minimum-norm inverse.
pub fn gram_pinv(g: &Array2<f64>, rel_cutoff: f64) -> Result<Array2<f64>> {
    let (vals, vecs) = sym_eig(g)?;
    let n = g.nrows();
    let sigma_max = vals.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    let cutoff = rel_cutoff * sigma_max;
    let mut out = Array2::zeros((n, n));
    for k in 0..n {
        if vals[k].abs() > cutoff {
            let inv = 1.0 / vals[k];
            let u = vecs.column(k);
            for i in 0..n {
                for j in 0..n {
                    out[[i, j]] += inv * u[i] * u[j];
                }
            }
        }
    }
    Ok(out)
}
