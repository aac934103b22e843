//! Small dense linear algebra generic over [`Scalar`], so the same code runs
//! in double and quadruple precision.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Eigen-decomposition of a real symmetric matrix by cyclic Jacobi sweeps.
///
/// Returns eigenvalues in ascending order and the matching orthonormal
/// eigenvectors as columns.
pub fn symmetric_eigen<T: Scalar>(a: &Array2<T>) -> Result<(Array1<T>, Array2<T>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} matrix is not square",
            n,
            a.ncols()
        )));
    }
    let mut m = a.clone();
    let mut v = Array2::<T>::eye(n);
    let two = T::of(2.0);
    let eps = T::unit_roundoff();
    for _sweep in 0..100 {
        let mut off = T::zero();
        let mut diag = T::zero();
        for i in 0..n {
            diag = diag + m[[i, i]] * m[[i, i]];
            for j in (i + 1)..n {
                off = off + m[[i, j]] * m[[i, j]];
            }
        }
        if off <= eps * eps * diag || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (two * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
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
    order.sort_by(|&i, &j| m[[i, i]].partial_cmp(&m[[j, j]]).unwrap_or(std::cmp::Ordering::Equal));
    let values = Array1::from_iter(order.iter().map(|&i| m[[i, i]]));
    let mut vectors = Array2::<T>::zeros((n, n));
    for (col, &i) in order.iter().enumerate() {
        vectors.column_mut(col).assign(&v.column(i));
    }
    Ok((values, vectors))
}

/// Solves `a x = b` for every column of `b` by Gaussian elimination with
/// partial pivoting.
pub fn solve<T: Scalar>(a: &Array2<T>, b: &Array2<T>) -> Result<Array2<T>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::ShapeMismatch(format!(
            "cannot solve {}x{} system with {} right-hand rows",
            n,
            a.ncols(),
            b.nrows()
        )));
    }
    let mut m = a.clone();
    let mut x = b.clone();
    let scale = m.iter().fold(T::zero(), |s, v| s.max(v.abs()));
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| {
                m[[i, col]]
                    .abs()
                    .partial_cmp(&m[[j, col]].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap_or(col);
        if m[[pivot, col]].abs() <= scale * T::unit_roundoff() {
            return Err(Error::ShapeMismatch(format!("singular matrix at column {col}")));
        }
        if pivot != col {
            for k in 0..n {
                m.swap([pivot, k], [col, k]);
            }
            for k in 0..x.ncols() {
                x.swap([pivot, k], [col, k]);
            }
        }
        let p = m[[col, col]];
        for row in (col + 1)..n {
            let f = m[[row, col]] / p;
            if f == T::zero() {
                continue;
            }
            for k in col..n {
                m[[row, k]] = m[[row, k]] - f * m[[col, k]];
            }
            for k in 0..x.ncols() {
                x[[row, k]] = x[[row, k]] - f * x[[col, k]];
            }
        }
    }
    for col in (0..n).rev() {
        let p = m[[col, col]];
        for k in 0..x.ncols() {
            let mut s = x[[col, k]];
            for j in (col + 1)..n {
                s = s - m[[col, j]] * x[[j, k]];
            }
            x[[col, k]] = s / p;
        }
    }
    Ok(x)
}

pub fn inverse<T: Scalar>(a: &Array2<T>) -> Result<Array2<T>> {
    solve(a, &Array2::eye(a.nrows()))
}

/// Largest absolute entry.
pub fn max_abs<T: Scalar>(a: &Array2<T>) -> T {
    a.iter().fold(T::zero(), |s, v| s.max(v.abs()))
}
