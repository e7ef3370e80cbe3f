//! Dense linear-algebra kernels: Moore-Penrose pseudo-inverse and a
//! symmetric-definite generalized eigensolver that is robust to a
//! rank-deficient right-hand-side matrix.
//!
//! All functions are pure and deterministic for identical inputs within one
//! build.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, SVD, UPLO};

use crate::error::VcaError;
use crate::Result;

/// Default relative tolerance for rank decisions in double precision.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Result of a generalized symmetric eigenproblem `A v = lambda B v`,
/// restricted to the range of `B`.
#[derive(Debug, Clone)]
pub struct GepResult {
    /// Nonnegative eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    /// Columns are generalized eigenvectors, B-normalized: `v' B v = 1`.
    pub eigenvectors: Array2<f64>,
    /// Number of retained directions (= column count of `eigenvectors`).
    pub rank_used: usize,
}

pub(crate) fn check_finite(a: &Array2<f64>, name: &str) -> Result<()> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(VcaError::invalid(format!("{name} contains NaN/Inf")));
    }
    Ok(())
}

fn check_symmetric(a: &Array2<f64>, name: &str) -> Result<()> {
    let (r, c) = a.dim();
    if r != c {
        return Err(VcaError::invalid(format!("{name} is not square: {r}x{c}")));
    }
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-8 * scale.max(1e-300);
    for i in 0..r {
        for j in (i + 1)..r {
            if (a[[i, j]] - a[[j, i]]).abs() > tol {
                return Err(VcaError::invalid(format!(
                    "{name} is asymmetric beyond tolerance at ({i},{j})"
                )));
            }
        }
    }
    Ok(())
}

/// Moore-Penrose pseudo-inverse via SVD. Singular values below
/// `rel_tol * sigma_max` are treated as zero.
pub fn pseudo_inverse(a: &Array2<f64>, rel_tol: f64) -> Result<Array2<f64>> {
    check_finite(a, "matrix")?;
    if rel_tol <= 0.0 {
        return Err(VcaError::invalid("rel_tol must be positive"));
    }
    let (rows, cols) = a.dim();
    if rows == 0 || cols == 0 {
        return Ok(Array2::zeros((cols, rows)));
    }
    let (u, s, vt) = a
        .svd(true, true)
        .map_err(|e| VcaError::Backend(format!("svd: {e}")))?;
    let u = u.expect("svd requested u");
    let vt = vt.expect("svd requested vt");
    let smax = s.iter().fold(0.0f64, |m, &v| m.max(v));
    let cutoff = rel_tol * smax;
    let sinv: Array1<f64> = s.mapv(|v| if v > cutoff && v > 0.0 { 1.0 / v } else { 0.0 });
    // A+ = V S+ U'
    let k = s.len();
    let mut vs = vt.slice(ndarray::s![..k, ..]).t().to_owned();
    for (j, &si) in sinv.iter().enumerate() {
        vs.column_mut(j).mapv_inplace(|v| v * si);
    }
    Ok(vs.dot(&u.slice(ndarray::s![.., ..k]).t()))
}

/// Solve `A V = B V Lambda` for symmetric PSD `A`, `B` by whitening `B`.
///
/// Directions in the (numerical) null space of `B` are discarded: they admit
/// no B-normalization. Eigenvalues are clamped at zero when slightly negative
/// from round-off.
pub fn solve_symmetric_gep(
    a: &Array2<f64>,
    b: &Array2<f64>,
    rank_rel_tol: f64,
) -> Result<GepResult> {
    check_finite(a, "A")?;
    check_finite(b, "B")?;
    check_symmetric(a, "A")?;
    check_symmetric(b, "B")?;
    if a.dim() != b.dim() {
        return Err(VcaError::dim(format!(
            "A is {:?} but B is {:?}",
            a.dim(),
            b.dim()
        )));
    }
    if rank_rel_tol <= 0.0 {
        return Err(VcaError::invalid("rank_rel_tol must be positive"));
    }
    let n = a.nrows();
    let empty = |n: usize| GepResult {
        eigenvalues: Vec::new(),
        eigenvectors: Array2::zeros((n, 0)),
        rank_used: 0,
    };
    if n == 0 {
        return Ok(empty(0));
    }

    let (bd, bu) = b
        .eigh(UPLO::Lower)
        .map_err(|e| VcaError::Backend(format!("eigh(B): {e}")))?;
    let bmax = bd.iter().fold(0.0f64, |m, &v| m.max(v));
    if bmax <= 0.0 {
        // B identically zero (or negative round-off only): nothing normalizable.
        return Ok(empty(n));
    }
    let keep: Vec<usize> = (0..n)
        .filter(|&i| bd[i] >= rank_rel_tol * bmax)
        .collect();
    let r = keep.len();
    if r == 0 {
        return Ok(empty(n));
    }
    // W = U_r D_r^{-1/2}
    let mut w = Array2::zeros((n, r));
    for (jj, &i) in keep.iter().enumerate() {
        let scale = 1.0 / bd[i].sqrt();
        for row in 0..n {
            w[[row, jj]] = bu[[row, i]] * scale;
        }
    }
    let mut m = w.t().dot(&a.dot(&w));
    // Symmetrize round-off before the dense eigensolve.
    for i in 0..r {
        for j in (i + 1)..r {
            let avg = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = avg;
            m[[j, i]] = avg;
        }
    }
    let (mut vals, vecs) = m
        .eigh(UPLO::Lower)
        .map_err(|e| VcaError::Backend(format!("eigh(W'AW): {e}")))?;
    // Rayleigh quotients of a PSD form: tiny negatives are round-off.
    vals.mapv_inplace(|v| v.max(0.0));
    let eigenvectors = w.dot(&vecs);
    Ok(GepResult {
        eigenvalues: vals.to_vec(),
        eigenvectors,
        rank_used: r,
    })
}
