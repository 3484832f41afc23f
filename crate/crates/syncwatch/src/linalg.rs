//! Dense symmetric eigendecomposition via cyclic Jacobi rotations.
//!
//! The matrices here are small (at most a few hundred rows: activation
//! covariances), so an O(n^3)-per-sweep Jacobi solver is plenty and keeps the
//! crate free of external LAPACK linkage. Deterministic: fixed sweep order,
//! fixed tolerance.

use ndarray::{Array1, Array2};

/// Eigenvalues (descending) and matching eigenvectors (one per row) of a
/// symmetric matrix. Input asymmetry is not checked beyond debug assertions;
/// callers pass covariance matrices built symmetrically.
pub fn symmetric_eigen(a: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let mut m = a.clone();
    // v accumulates rotations; columns are eigenvectors of `a`.
    let mut v = Array2::<f64>::eye(n);

    let off_norm = |m: &Array2<f64>| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += m[[i, j]] * m[[i, j]];
            }
        }
        s.sqrt()
    };
    let scale: f64 = (0..n).map(|i| m[[i, i]].abs()).fold(f64::EPSILON, f64::max);
    let tol = 1e-14 * scale * n as f64;

    for _sweep in 0..100 {
        if off_norm(&m) <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() <= tol / (n as f64 * n as f64) {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                // Smaller-magnitude tangent root for stability.
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

    let eigenvalues = Array1::from_iter(order.iter().map(|&i| m[[i, i]]));
    let mut eigenvectors = Array2::<f64>::zeros((n, n));
    for (row, &idx) in order.iter().enumerate() {
        for k in 0..n {
            eigenvectors[[row, k]] = v[[k, idx]];
        }
    }
    (eigenvalues, eigenvectors)
}
