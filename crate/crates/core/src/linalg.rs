//! Dense symmetric eigenvalues by cyclic Jacobi rotations.
//!
//! Matrices in this crate are small (at most a few hundred rows), so the
//! O(n³) sweep cost is irrelevant and Jacobi's unconditional accuracy on
//! symmetric input is what we want.

use nalgebra::DMatrix;
use thiserror::Error;

/// Sweep cap; cyclic Jacobi converges quadratically, so hitting this means
/// the input was not symmetric or contained non-finite entries.
pub const MAX_SWEEPS: usize = 100;

/// Absolute off-diagonal Frobenius norm at which a sweep loop stops,
/// scaled by `max(1, ‖A‖_F)`.
pub const OFF_DIAGONAL_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EigenError {
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("Jacobi iteration did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    NoConvergence { sweeps: usize, off_norm: f64 },
}

fn off_diagonal_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += a[(i, j)] * a[(i, j)];
            }
        }
    }
    sum.sqrt()
}

/// Eigenvalues of a symmetric matrix in ascending order.
///
/// Only the upper triangle is trusted; the input is symmetrized as
/// `(A + Aᵀ)/2` before rotating.
pub fn symmetric_eigenvalues(a: &DMatrix<f64>) -> Result<Vec<f64>, EigenError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(EigenError::NotSquare {
            rows: n,
            cols: a.ncols(),
        });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(EigenError::NonFinite);
    }
    let mut m = (a + a.transpose()) * 0.5;
    let scale = m.norm().max(1.0);

    let mut sweeps = 0;
    loop {
        let off = off_diagonal_norm(&m);
        if off < OFF_DIAGONAL_TOL * scale {
            break;
        }
        if sweeps == MAX_SWEEPS {
            return Err(EigenError::NoConvergence {
                sweeps,
                off_norm: off,
            });
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut m, p, q);
            }
        }
        sweeps += 1;
    }

    let mut eig: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    eig.sort_by(|x, y| x.total_cmp(y));
    Ok(eig)
}

/// One Jacobi rotation annihilating `m[(p, q)]`.
fn rotate(m: &mut DMatrix<f64>, p: usize, q: usize) {
    let apq = m[(p, q)];
    if apq == 0.0 {
        return;
    }
    let app = m[(p, p)];
    let aqq = m[(q, q)];
    let theta = (aqq - app) / (2.0 * apq);
    // smaller root of t² + 2θt − 1 = 0 keeps the rotation angle ≤ π/4
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    let n = m.nrows();
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = m[(k, p)];
        let akq = m[(k, q)];
        let new_kp = c * akp - s * akq;
        let new_kq = s * akp + c * akq;
        m[(k, p)] = new_kp;
        m[(p, k)] = new_kp;
        m[(k, q)] = new_kq;
        m[(q, k)] = new_kq;
    }
    m[(p, p)] = app - t * apq;
    m[(q, q)] = aqq + t * apq;
    m[(p, q)] = 0.0;
    m[(q, p)] = 0.0;
}

/// Largest absolute eigenvalue (spectral norm of a symmetric matrix).
pub fn spectral_radius(a: &DMatrix<f64>) -> Result<f64, EigenError> {
    let eig = symmetric_eigenvalues(a)?;
    Ok(eig.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())))
}
