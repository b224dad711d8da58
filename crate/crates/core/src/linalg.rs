//! Dense symmetric linear-algebra helpers used across the crate.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rng::Stream;

/// Relative eigenvalue threshold below which a symmetric psd matrix is
/// treated as singular.
const SINGULAR_TOL: f64 = 1e-12;

/// Symmetric eigendecomposition, returning `(eigenvalues, eigenvectors)`.
pub fn sym_eigen(mat: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = mat.clone().symmetric_eigen();
    (eig.eigenvalues, eig.eigenvectors)
}

/// Spectral norm of a symmetric matrix.
pub fn sym_spectral_norm(mat: &DMatrix<f64>) -> f64 {
    let (vals, _) = sym_eigen(mat);
    vals.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()))
}

fn psd_power(mat: &DMatrix<f64>, pow: f64, context: &str) -> Result<DMatrix<f64>> {
    let (vals, vecs) = sym_eigen(mat);
    let max = vals.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
    if max == 0.0 {
        if pow >= 0.0 {
            return Ok(DMatrix::zeros(mat.nrows(), mat.ncols()));
        }
        return Err(Error::SingularHessian(context.to_string()));
    }
    let mut scaled = DMatrix::zeros(mat.nrows(), mat.ncols());
    for (j, &v) in vals.iter().enumerate() {
        if pow < 0.0 && v <= SINGULAR_TOL * max {
            return Err(Error::SingularHessian(context.to_string()));
        }
        let f = if v > 0.0 { v.powf(pow) } else { 0.0 };
        scaled.set_column(j, &(vecs.column(j) * f));
    }
    Ok(&scaled * vecs.transpose())
}

/// Symmetric psd square root `M^{1/2}`.
pub fn psd_sqrt(mat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    psd_power(mat, 0.5, "psd sqrt")
}

/// Symmetric inverse square root `M^{-1/2}`; errors if `M` is singular.
pub fn psd_inv_sqrt(mat: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    psd_power(mat, -0.5, context)
}

/// Solve `M x = rhs` for symmetric positive-definite `M` via Cholesky.
///
/// On factorization failure, retries once after adding a diagonal jitter of
/// `1e-12 * trace(M) / d`, then gives up. Near-singular sketched Hessians are
/// rare and should not abort a long multi-trial run.
pub fn spd_solve(mat: &DMatrix<f64>, rhs: &DVector<f64>, context: &str) -> Result<DVector<f64>> {
    if let Some(chol) = mat.clone().cholesky() {
        return Ok(chol.solve(rhs));
    }
    let d = mat.nrows();
    let jitter = 1e-12 * mat.trace() / d as f64;
    let mut jittered = mat.clone();
    for i in 0..d {
        jittered[(i, i)] += jitter;
    }
    match jittered.cholesky() {
        Some(chol) => Ok(chol.solve(rhs)),
        None => Err(Error::SingularHessian(context.to_string())),
    }
}

/// Symmetrize in place: `M <- (M + M^T) / 2`.
pub fn symmetrize(mat: &mut DMatrix<f64>) {
    let n = mat.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (mat[(i, j)] + mat[(j, i)]);
            mat[(i, j)] = avg;
            mat[(j, i)] = avg;
        }
    }
}

/// In-place unnormalized fast Walsh-Hadamard transform applied down each
/// column. Row count must be a power of two.
pub fn fwht_columns(mat: &mut DMatrix<f64>) {
    let n = mat.nrows();
    assert!(n.is_power_of_two(), "FWHT needs a power-of-two row count");
    let d = mat.ncols();
    for col in 0..d {
        let mut c = mat.column_mut(col);
        let mut half = 1;
        while half < n {
            let mut start = 0;
            while start < n {
                for i in start..start + half {
                    let a = c[i];
                    let b = c[i + half];
                    c[i] = a + b;
                    c[i + half] = a - b;
                }
                start += 2 * half;
            }
            half *= 2;
        }
    }
}

/// Haar-ish random orthogonal matrix from the QR factorization of a Gaussian
/// matrix, with the sign convention that makes the factor unique.
pub fn random_orthogonal(d: usize, stream: &mut Stream) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| stream.next_normal());
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            for i in 0..d {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}
