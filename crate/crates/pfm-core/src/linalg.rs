//! Small dense linear algebra: numeric rank, symmetric eigendecomposition,
//! and minimum-norm least squares. Matrices here are at most a few hundred
//! rows by nine columns, so plain O(n^3) routines are fine.

use crate::math;
use alloc::vec;
use alloc::vec::Vec;

/// Numeric rank of a row-major `rows x cols` matrix by Gaussian elimination
/// with partial pivoting. Rows are max-abs normalized first so the result is
/// invariant under rescaling any row; `tol` is then an absolute pivot
/// threshold on the normalized matrix.
pub fn matrix_rank(matrix: &[f64], rows: usize, cols: usize, tol: f64) -> usize {
    assert_eq!(matrix.len(), rows * cols);
    let mut m: Vec<f64> = matrix.to_vec();
    for r in 0..rows {
        let row = &mut m[r * cols..(r + 1) * cols];
        let max = row.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if max > 0.0 {
            for v in row.iter_mut() {
                *v /= max;
            }
        }
    }

    let mut rank = 0;
    let mut pivot_row = 0;
    for col in 0..cols {
        if pivot_row >= rows {
            break;
        }
        // Find the largest entry in this column at or below pivot_row.
        let mut best = pivot_row;
        let mut best_abs = m[pivot_row * cols + col].abs();
        for r in pivot_row + 1..rows {
            let a = m[r * cols + col].abs();
            if a > best_abs {
                best = r;
                best_abs = a;
            }
        }
        if best_abs <= tol {
            continue;
        }
        if best != pivot_row {
            for c in 0..cols {
                m.swap(pivot_row * cols + c, best * cols + c);
            }
        }
        let pivot = m[pivot_row * cols + col];
        for r in pivot_row + 1..rows {
            let factor = m[r * cols + col] / pivot;
            if factor != 0.0 {
                for c in col..cols {
                    m[r * cols + c] -= factor * m[pivot_row * cols + c];
                }
            }
        }
        pivot_row += 1;
        rank += 1;
    }
    rank
}

/// Eigendecomposition of a symmetric `n x n` matrix by the cyclic Jacobi
/// method. Returns `(eigenvalues, eigenvectors)` with eigenvectors stored as
/// columns of a row-major matrix, sorted by descending eigenvalue.
pub fn symmetric_eigen(matrix: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(matrix.len(), n * n);
    let mut a: Vec<f64> = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off <= 1e-300 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + math::sqrt(1.0 + theta * theta))
                } else {
                    1.0 / (theta - math::sqrt(1.0 + theta * theta))
                };
                let c = 1.0 / math::sqrt(1.0 + t * t);
                let s = t * c;

                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut eig: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    // Sort descending, permuting eigenvector columns along.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig[j].partial_cmp(&eig[i]).unwrap());
    let sorted_eig: Vec<f64> = order.iter().map(|&i| eig[i]).collect();
    let mut sorted_v = vec![0.0; n * n];
    for (new_col, &old_col) in order.iter().enumerate() {
        for row in 0..n {
            sorted_v[row * n + new_col] = v[row * n + old_col];
        }
    }
    eig = sorted_eig;
    (eig, sorted_v)
}

/// Minimum-norm least squares solution of `A x = b` for a row-major
/// `rows x cols` matrix, via the eigendecomposition of `A^T A`. Eigenvalues
/// below `rel_tol` times the largest are treated as zero, which handles
/// rank-deficient systems.
pub fn lstsq_min_norm(a: &[f64], rows: usize, cols: usize, b: &[f64], rel_tol: f64) -> Vec<f64> {
    assert_eq!(a.len(), rows * cols);
    assert_eq!(b.len(), rows);

    // Normal matrix and right-hand side.
    let mut ata = vec![0.0; cols * cols];
    for i in 0..cols {
        for j in 0..cols {
            let mut s = 0.0;
            for r in 0..rows {
                s += a[r * cols + i] * a[r * cols + j];
            }
            ata[i * cols + j] = s;
        }
    }
    let mut atb = vec![0.0; cols];
    for (i, slot) in atb.iter_mut().enumerate() {
        let mut s = 0.0;
        for r in 0..rows {
            s += a[r * cols + i] * b[r];
        }
        *slot = s;
    }

    let (eig, vecs) = symmetric_eigen(&ata, cols);
    let lambda_max = eig.first().copied().unwrap_or(0.0).max(0.0);
    let cutoff = rel_tol * lambda_max;

    let mut x = vec![0.0; cols];
    for (k, &lambda) in eig.iter().enumerate() {
        if lambda <= cutoff || lambda <= 0.0 {
            continue;
        }
        let mut coeff = 0.0;
        for i in 0..cols {
            coeff += vecs[i * cols + k] * atb[i];
        }
        coeff /= lambda;
        for i in 0..cols {
            x[i] += coeff * vecs[i * cols + k];
        }
    }
    x
}

/// Singular values of an `n x 2` matrix given as (col0, col1) pairs,
/// returned in descending order.
///
/// The large value comes from the 2x2 Gram matrix; the small one is
/// recovered through the determinant, `sigma2 = |det| / sigma1`, with the
/// determinant computed from the explicitly orthogonalized second column.
/// That route avoids the cancellation that would otherwise floor the small
/// singular value near sqrt(machine epsilon) for dependent columns.
pub fn singular_values_2col(pairs: &[(f64, f64)]) -> [f64; 2] {
    let mut g00 = 0.0;
    let mut g01 = 0.0;
    let mut g11 = 0.0;
    for &(a, b) in pairs {
        g00 += a * a;
        g01 += a * b;
        g11 += b * b;
    }
    let tr = g00 + g11;
    let half_gap = (g00 - g11) / 2.0;
    let disc = math::hypot(half_gap, g01);
    let sigma1 = math::sqrt((tr / 2.0 + disc).max(0.0));
    if sigma1 == 0.0 {
        return [0.0, 0.0];
    }
    if g00 == 0.0 || g11 == 0.0 {
        // One column is exactly zero: rank at most one.
        return [sigma1, 0.0];
    }
    // Residual of column 1 after projecting out column 0.
    let coeff = g01 / g00;
    let mut residual_sq = 0.0;
    for &(a, b) in pairs {
        let r = b - coeff * a;
        residual_sq += r * r;
    }
    // |det| of the implicit QR factor is ||col0|| * ||residual||.
    let sigma2 = math::sqrt(g00) * math::sqrt(residual_sq) / sigma1;
    [sigma1, sigma2.min(sigma1)]
}
