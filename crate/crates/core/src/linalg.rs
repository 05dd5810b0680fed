//! Dense symmetric eigenvalues by cyclic Jacobi rotations.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 100;

fn off_diagonal_sq(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s
}

/// Largest absolute entry of `M − Mᵀ`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in i + 1..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Eigenvalues of a symmetric matrix, ascending.
///
/// Sweeps until the off-diagonal Frobenius mass falls below `1e-12 ‖M‖_F`.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: m.ncols() });
    }
    let asym = asymmetry(m);
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    // symmetrize away sub-tolerance noise
    let mut a = (m + m.transpose()) * 0.5;
    let target = 1e-12 * a.norm();

    for _ in 0..MAX_SWEEPS {
        if off_diagonal_sq(&a).sqrt() <= target {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

/// Condition number `λ_max / λ_min` of a symmetric positive definite matrix;
/// `+∞` when the smallest eigenvalue is not positive.
pub fn condition_number(m: &DMatrix<f64>) -> Result<f64> {
    let eig = symmetric_eigenvalues(m)?;
    let (lo, hi) = (eig[0], eig[eig.len() - 1]);
    Ok(if lo > 0.0 { hi / lo } else { f64::INFINITY })
}

/// Gerschgorin bound `max_i Σ_j |M_ij|` on the spectral radius.
pub fn gerschgorin_bound(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|row| row.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}
