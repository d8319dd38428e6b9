//! Small dense symmetric linear algebra: cyclic Jacobi eigenvalues,
//! Cholesky solves, and power iteration for extreme eigenvalues.
//!
//! The mixing matrices this crate works with are tiny (a handful of
//! agents), so a dependency-free textbook solver is both sufficient and
//! bit-deterministic across runs.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// Eigenvalues of a symmetric matrix, sorted in nonincreasing order.
///
/// Cyclic Jacobi rotations; converges to machine precision for any
/// symmetric input. Panics if the matrix is not square.
pub fn symmetric_eigenvalues(a: ArrayView2<'_, f64>) -> Vec<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "eigenvalue input must be square");
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![a[[0, 0]]];
    }

    let mut m = a.to_owned();
    let scale: f64 = m.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    let tol = 1e-15 * scale;

    for _sweep in 0..64 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(m[[p, q]].abs());
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
                // Classic stable rotation: tan(2θ) = 2a_pq / (a_qq − a_pp).
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
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
            }
        }
    }

    let mut eigs: Vec<f64> = (0..n).map(|i| m[[i, i]]).collect();
    eigs.sort_by(|a, b| b.partial_cmp(a).expect("finite eigenvalues"));
    eigs
}

/// Spectral norm (largest absolute eigenvalue) of a symmetric matrix.
pub fn symmetric_spectral_norm(a: ArrayView2<'_, f64>) -> f64 {
    symmetric_eigenvalues(a)
        .into_iter()
        .map(f64::abs)
        .fold(0.0, f64::max)
}

/// Solve `a x = b` for symmetric positive definite `a` via Cholesky.
///
/// Returns `None` when a pivot is not strictly positive (matrix not PD).
pub fn solve_spd(a: ArrayView2<'_, f64>, b: ArrayView1<'_, f64>) -> Option<Array1<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "solve_spd input must be square");
    assert_eq!(n, b.len(), "solve_spd dimension mismatch");

    // Lower-triangular factor, row by row.
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if sum <= 0.0 {
                    return None;
                }
                l[[i, i]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }

    // Forward substitution L y = b.
    let mut y = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[[i, k]] * y[k];
        }
        y[i] = sum / l[[i, i]];
    }
    // Back substitution Lᵀ x = y.
    let mut x = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in (i + 1)..n {
            sum -= l[[k, i]] * x[k];
        }
        x[i] = sum / l[[i, i]];
    }
    Some(x)
}

/// Largest eigenvalue of the Gram matrix `BᵀB` by power iteration on the
/// implicit operator `v ↦ Bᵀ(Bv)`.
///
/// Deterministic ramp start; Rayleigh quotient converges quadratically in
/// the eigenvector error, so the returned value is accurate to roughly
/// machine precision for spectra with any gap at the top.
pub fn gram_lambda_max(b: ArrayView2<'_, f64>) -> f64 {
    let p = b.ncols();
    if p == 0 || b.nrows() == 0 {
        return 0.0;
    }
    let mut v = Array1::<f64>::from_shape_fn(p, |j| 1.0 + (j as f64) / (p as f64));
    let norm = v.dot(&v).sqrt();
    v.mapv_inplace(|x| x / norm);

    let mut lambda = 0.0f64;
    for _ in 0..20_000 {
        let bv = b.dot(&v);
        let av = b.t().dot(&bv);
        let next = v.dot(&av);
        let nrm = av.dot(&av).sqrt();
        if nrm == 0.0 {
            return 0.0;
        }
        v = av / nrm;
        if (next - lambda).abs() <= 1e-15 * next.abs().max(1.0) {
            return next;
        }
        lambda = next;
    }
    lambda
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn eigenvalues_of_known_mixing_matrix() {
        let w = array![[0.5, 0.0, 0.5], [0.0, 0.5, 0.5], [0.5, 0.5, 0.0]];
        let eigs = symmetric_eigenvalues(w.view());
        assert!((eigs[0] - 1.0).abs() < 1e-12);
        assert!((eigs[1] - 0.5).abs() < 1e-12);
        assert!((eigs[2] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn eigenvalues_of_diagonal_matrix() {
        let d = array![[3.0, 0.0], [0.0, -7.0]];
        let eigs = symmetric_eigenvalues(d.view());
        assert_eq!(eigs, vec![3.0, -7.0]);
    }

    #[test]
    fn eigenvalues_match_constructed_spectrum() {
        // Build A = Q D Qᵀ from a known rotation and diagonal.
        let theta = 0.7f64;
        let (c, s) = (theta.cos(), theta.sin());
        let q = array![[c, -s], [s, c]];
        let d = array![[2.5, 0.0], [0.0, -1.25]];
        let a = q.dot(&d).dot(&q.t());
        let eigs = symmetric_eigenvalues(a.view());
        assert!((eigs[0] - 2.5).abs() < 1e-12);
        assert!((eigs[1] + 1.25).abs() < 1e-12);
    }

    #[test]
    fn eigenvalue_sum_matches_trace() {
        let a = array![
            [2.0, -1.0, 0.3, 0.0],
            [-1.0, 1.5, 0.2, -0.4],
            [0.3, 0.2, -0.8, 0.6],
            [0.0, -0.4, 0.6, 3.1]
        ];
        let eigs = symmetric_eigenvalues(a.view());
        let trace = 2.0 + 1.5 - 0.8 + 3.1;
        assert!((eigs.iter().sum::<f64>() - trace).abs() < 1e-10);
    }

    #[test]
    fn spd_solve_recovers_known_solution() {
        let a = array![[4.0, 1.0, 0.0], [1.0, 3.0, -1.0], [0.0, -1.0, 2.0]];
        let x_true = array![1.0, -2.0, 0.5];
        let b = a.dot(&x_true);
        let x = solve_spd(a.view(), b.view()).expect("PD system");
        for i in 0..3 {
            assert!((x[i] - x_true[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn spd_solve_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        let b = array![1.0, 1.0];
        assert!(solve_spd(a.view(), b.view()).is_none());
    }

    #[test]
    fn gram_lambda_max_matches_jacobi() {
        // Deterministic pseudo-random-ish matrix.
        let b = Array2::from_shape_fn((7, 5), |(i, j)| ((3 * i + 5 * j + 1) as f64).sin());
        let gram = b.t().dot(&b);
        let via_jacobi = symmetric_eigenvalues(gram.view())[0];
        let via_power = gram_lambda_max(b.view());
        assert!(
            (via_power - via_jacobi).abs() <= 1e-10 * via_jacobi,
            "power {via_power} vs jacobi {via_jacobi}"
        );
    }
}
