//! Singular value decomposition by one-sided Jacobi rotations, and the
//! pseudo-inverse / least-squares solvers built on it.

use super::matrix::{dot, Matrix};
use crate::error::{check_dim, Error, Result};

const MAX_SWEEPS: usize = 80;

/// Thin SVD `A = U diag(s) V^T` with `k = min(m, n)` singular triplets in
/// descending order. Columns of `U` and `V` are orthonormal, including those
/// paired with zero singular values.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for (c, s) in self.s.iter().enumerate() {
            for r in 0..us.rows() {
                us[(r, c)] *= s;
            }
        }
        us.matmul(&self.v.transpose()).expect("svd shapes")
    }

    pub fn max_singular(&self) -> f64 {
        self.s.first().copied().unwrap_or(0.0)
    }
}

pub fn svd(a: &Matrix) -> Svd {
    if a.rows() >= a.cols() {
        svd_tall(a)
    } else {
        let t = svd_tall(&a.transpose());
        Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        }
    }
}

fn svd_tall(a: &Matrix) -> Svd {
    let (m, n) = a.shape();
    let mut w: Vec<Vec<f64>> = (0..n).map(|c| a.col(c)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|c| {
            let mut e = vec![0.0; n];
            e[c] = 1.0;
            e
        })
        .collect();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut w, p, q, c, s);
                rotate_pair(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<(f64, usize)> = w
        .iter()
        .enumerate()
        .map(|(i, col)| (dot(col, col).sqrt(), i))
        .collect();
    order.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));

    let smax = order.first().map_or(0.0, |o| o.0);
    let cutoff = smax * (m.max(n) as f64) * f64::EPSILON;
    let mut u_cols: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let mut v_out = Matrix::zeros(n, n);
    for (k, &(sigma, idx)) in order.iter().enumerate() {
        if sigma > cutoff && sigma > 0.0 {
            u_cols.push(Some(w[idx].iter().map(|x| x / sigma).collect()));
            s.push(sigma);
        } else {
            u_cols.push(None);
            s.push(0.0);
        }
        v_out.set_col(k, &v[idx]);
    }
    let u_cols = complete_orthonormal(m, u_cols);
    let mut u = Matrix::zeros(m, n);
    for (k, col) in u_cols.iter().enumerate() {
        u.set_col(k, col);
    }
    Svd { u, s, v: v_out }
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Fill missing columns with unit vectors orthogonal to all others
/// (Gram-Schmidt against the standard basis, twice for stability).
fn complete_orthonormal(m: usize, cols: Vec<Option<Vec<f64>>>) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = cols.iter().flatten().cloned().collect();
    let mut out = Vec::with_capacity(cols.len());
    for col in cols {
        match col {
            Some(c) => out.push(c),
            None => {
                let mut best: Option<(f64, Vec<f64>)> = None;
                for e in 0..m {
                    let mut cand = vec![0.0; m];
                    cand[e] = 1.0;
                    for _ in 0..2 {
                        for b in &basis {
                            let d = dot(&cand, b);
                            for (x, y) in cand.iter_mut().zip(b) {
                                *x -= d * y;
                            }
                        }
                    }
                    let nrm = dot(&cand, &cand).sqrt();
                    if best.as_ref().is_none_or(|(bn, _)| nrm > *bn) {
                        best = Some((nrm, cand));
                    }
                }
                let (nrm, mut cand) = best.expect("m > 0");
                for x in &mut cand {
                    *x /= nrm;
                }
                basis.push(cand.clone());
                out.push(cand);
            }
        }
    }
    out
}

/// Moore-Penrose pseudo-inverse; singular values below `tol * s_max` are
/// treated as zero.
pub fn pinv(m: &Matrix, tol: f64) -> Matrix {
    let d = svd(m);
    let cutoff = tol * d.max_singular();
    let (rows, cols) = m.shape();
    let mut out = Matrix::zeros(cols, rows);
    for (k, &sigma) in d.s.iter().enumerate() {
        if sigma <= cutoff || sigma == 0.0 {
            continue;
        }
        let inv = 1.0 / sigma;
        for i in 0..cols {
            let vi = d.v[(i, k)] * inv;
            if vi == 0.0 {
                continue;
            }
            for j in 0..rows {
                out[(i, j)] += vi * d.u[(j, k)];
            }
        }
    }
    out
}

/// Default relative cutoff for [`pinv`].
pub fn default_tolerance(m: &Matrix) -> f64 {
    (m.rows().max(m.cols()) as f64) * f64::EPSILON * 16.0
}

#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub x: Matrix,
    /// Numerical rank of `A`.
    pub rank: usize,
    /// `A` lacked full column rank and no ridge was applied; `x` is the
    /// minimum-norm solution.
    pub rank_deficient: bool,
    pub singular_values: Vec<f64>,
}

/// Solve `min_X ||A X - B||^2 + ridge ||X||^2` through the SVD of `A`.
pub fn least_squares(a: &Matrix, b: &Matrix, ridge: f64) -> Result<LeastSquares> {
    check_dim("least squares rows", a.rows(), b.rows())?;
    if !(ridge >= 0.0) {
        return Err(Error::Parameter(format!("ridge must be >= 0, got {ridge}")));
    }
    let d = svd(a);
    let cutoff = default_tolerance(a) * d.max_singular();
    let rank = d.s.iter().filter(|&&s| s > cutoff).count();
    // U^T B
    let utb = d.u.transpose().matmul(b)?;
    let mut scaled = Matrix::zeros(d.s.len(), b.cols());
    for (k, &sigma) in d.s.iter().enumerate() {
        let f = if ridge > 0.0 {
            sigma / (sigma * sigma + ridge)
        } else if sigma > cutoff {
            1.0 / sigma
        } else {
            0.0
        };
        for c in 0..b.cols() {
            scaled[(k, c)] = f * utb[(k, c)];
        }
    }
    let x = d.v.matmul(&scaled)?;
    let rank_deficient = ridge == 0.0 && rank < a.cols();
    if rank_deficient {
        log::debug!("least squares: rank {rank} < {} columns, minimum-norm solution", a.cols());
    }
    Ok(LeastSquares {
        x,
        rank,
        rank_deficient,
        singular_values: d.s,
    })
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and the matrix whose columns are the eigenvectors.
pub fn symmetric_eigen(a: &Matrix) -> (Vec<f64>, Matrix) {
    let n = a.rows();
    let mut a = a.clone();
    let mut v = Matrix::identity(n);
    let scale = a.frobenius().max(f64::MIN_POSITIVE);
    for _ in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if theta.is_finite() {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                } else {
                    0.0
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[(i, i)]).collect(), v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn assert_close(a: &Matrix, b: &Matrix, tol: f64) {
        let diff = a.sub(b).unwrap().max_abs();
        assert!(diff < tol, "max abs diff {diff} >= {tol}\n{a:?}\n{b:?}");
    }

    fn orthonormal_cols(m: &Matrix) -> f64 {
        let g = m.transpose().matmul(m).unwrap();
        g.sub(&Matrix::identity(m.cols())).unwrap().max_abs()
    }

    #[test]
    fn svd_reconstructs_random_matrices() {
        let mut r = rng::rng(3);
        for (m, n) in [(5, 3), (3, 5), (7, 7), (1, 4), (30, 12)] {
            let a = Matrix::random_normal(m, n, &mut r);
            let d = svd(&a);
            assert_close(&d.reconstruct(), &a, 1e-10);
            assert!(orthonormal_cols(&d.u) < 1e-10);
            assert!(orthonormal_cols(&d.v) < 1e-10);
            assert!(d.s.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn rank_deficient_svd_keeps_orthonormal_u() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]]).unwrap();
        let d = svd(&a);
        assert_eq!(d.s[1], 0.0);
        assert!(orthonormal_cols(&d.u) < 1e-12);
        assert_close(&d.reconstruct(), &a, 1e-12);
    }

    #[test]
    fn pinv_examples() {
        assert_close(&pinv(&Matrix::identity(4), 1e-12), &Matrix::identity(4), 1e-14);
        let d = Matrix::from_diag(&[2.0, 0.0]);
        assert_close(&pinv(&d, 1e-12), &Matrix::from_diag(&[0.5, 0.0]), 1e-15);
    }

    #[test]
    fn pinv_of_wide_full_row_rank() {
        let mut r = rng::rng(11);
        let m = Matrix::random_normal(2, 15, &mut r);
        let p = pinv(&m, default_tolerance(&m));
        assert_close(&m.matmul(&p).unwrap(), &Matrix::identity(2), 1e-8);
    }

    #[test]
    fn least_squares_identity_and_recovery() {
        let mut r = rng::rng(5);
        let b = Matrix::random_normal(4, 2, &mut r);
        let sol = least_squares(&Matrix::identity(4), &b, 0.0).unwrap();
        assert_close(&sol.x, &b, 1e-14);

        let a = Matrix::random_normal(20, 6, &mut r);
        let x0 = Matrix::random_normal(6, 3, &mut r);
        let b = a.matmul(&x0).unwrap();
        let sol = least_squares(&a, &b, 0.0).unwrap();
        assert!(!sol.rank_deficient);
        assert_close(&sol.x, &x0, 1e-8);
    }

    #[test]
    fn least_squares_residual_orthogonal_to_column_space() {
        let mut r = rng::rng(8);
        let a = Matrix::random_normal(12, 4, &mut r);
        let b = Matrix::random_normal(12, 2, &mut r);
        let x = least_squares(&a, &b, 0.0).unwrap().x;
        let resid = b.sub(&a.matmul(&x).unwrap()).unwrap();
        let proj = a.transpose().matmul(&resid).unwrap();
        assert!(proj.max_abs() < 1e-8);
    }

    #[test]
    fn least_squares_matches_normal_equations() {
        let mut r = rng::rng(21);
        let a = Matrix::random_normal(10, 3, &mut r);
        let b = Matrix::random_normal(10, 1, &mut r);
        let x = least_squares(&a, &b, 0.0).unwrap().x;
        // Normal equations via the independent symmetric eigensolver.
        let ata = a.transpose().matmul(&a).unwrap();
        let atb = a.transpose().matmul(&b).unwrap();
        let (vals, vecs) = symmetric_eigen(&ata);
        let inv = vecs
            .matmul(&Matrix::from_diag(&vals.iter().map(|l| 1.0 / l).collect::<Vec<_>>()))
            .unwrap()
            .matmul(&vecs.transpose())
            .unwrap();
        assert_close(&x, &inv.matmul(&atb).unwrap(), 1e-6);
    }

    #[test]
    fn least_squares_ridge_limit_and_rank_flag() {
        let mut r = rng::rng(2);
        let a = Matrix::random_normal(6, 3, &mut r);
        let b = Matrix::random_normal(6, 2, &mut r);
        let x = least_squares(&a, &b, 1e12).unwrap().x;
        assert!(x.max_abs() < 1e-9);

        let deficient = Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]]).unwrap();
        let sol = least_squares(&deficient, &Matrix::from_vec(3, 1, vec![1.0, 2.0, 3.0]).unwrap(), 0.0).unwrap();
        assert!(sol.rank_deficient);
        assert_eq!(sol.rank, 1);
        // Minimum-norm solution splits the weight evenly.
        assert!((sol.x[(0, 0)] - 0.5).abs() < 1e-12 && (sol.x[(1, 0)] - 0.5).abs() < 1e-12);
        assert!(least_squares(&deficient, &Matrix::zeros(2, 1), 0.0).is_err());
        assert!(least_squares(&deficient, &Matrix::zeros(3, 1), -1.0).is_err());
    }

    #[test]
    fn symmetric_eigen_diagonalizes() {
        let mut r = rng::rng(4);
        let b = Matrix::random_normal(8, 8, &mut r);
        let a = b.add(&b.transpose()).unwrap();
        let (vals, vecs) = symmetric_eigen(&a);
        let recon = vecs
            .matmul(&Matrix::from_diag(&vals))
            .unwrap()
            .matmul(&vecs.transpose())
            .unwrap();
        assert_close(&recon, &a, 1e-10);
        assert!(orthonormal_cols(&vecs) < 1e-12);
    }
}
