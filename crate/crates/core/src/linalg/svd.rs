//! Thin singular value decomposition by one-sided (Hestenes) Jacobi rotations.
//!
//! One-sided Jacobi orthogonalises the columns of a working copy of the input
//! in place. It is slower than Golub–Kahan for large matrices but gives
//! singular values with high relative accuracy, which the criterion and
//! spectrum-tail checks rely on.

use crate::error::{Error, Result};
use crate::linalg::matrix::{dot, Matrix};

const MAX_SWEEPS: usize = 80;

/// `m = u · diag(s) · vᵀ` with `k = min(rows, cols)`.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    /// `rows × k`, orthonormal columns.
    pub u: Matrix,
    /// Non-increasing, non-negative, length `k`.
    pub s: Vec<f64>,
    /// `cols × k`, orthonormal columns.
    pub v: Matrix,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `u · diag(s) · vᵀ`
    pub fn reconstruct(&self) -> Matrix {
        self.reconstruct_range(0, self.s.len())
    }

    /// `Σ_{start ≤ i < end} σ_i u_i v_iᵀ`
    pub fn reconstruct_range(&self, start: usize, end: usize) -> Matrix {
        let (m, n) = (self.u.rows(), self.v.rows());
        let mut out = Matrix::zeros(m, n);
        for idx in start..end.min(self.s.len()) {
            let sigma = self.s[idx];
            if sigma == 0.0 {
                continue;
            }
            let v_col = self.v.column(idx);
            for i in 0..m {
                let coeff = sigma * self.u[(i, idx)];
                if coeff == 0.0 {
                    continue;
                }
                for (j, &vj) in v_col.iter().enumerate() {
                    out[(i, j)] += coeff * vj;
                }
            }
        }
        out
    }

    /// `√(Σ_{i ≥ k} σ_i²)`, the Frobenius error of the best rank-`k` fit.
    pub fn tail_norm(&self, k: usize) -> f64 {
        let tail: Vec<f64> = self.s.iter().skip(k).copied().collect();
        crate::linalg::matrix::frobenius(&tail)
    }
}

/// Thin SVD with a deterministic sign convention: the largest-magnitude entry
/// of every left singular vector is non-negative (first occurrence on ties),
/// with the matching right singular vector flipped in tandem.
pub fn svd(m: &Matrix) -> Result<SvdFactors> {
    if m.is_empty() {
        return Err(Error::invalid("svd of an empty matrix"));
    }
    m.check_finite()?;

    if m.rows() < m.cols() {
        let t = svd_tall(&m.transpose())?;
        let mut f = SvdFactors { u: t.v, s: t.s, v: t.u };
        apply_sign_convention(&mut f);
        return Ok(f);
    }
    let mut f = svd_tall(m)?;
    apply_sign_convention(&mut f);
    Ok(f)
}

/// Core routine for `rows ≥ cols`. Works on columns stored contiguously.
fn svd_tall(m: &Matrix) -> Result<SvdFactors> {
    let (rows, cols) = m.shape();
    let mut a: Vec<Vec<f64>> = (0..cols).map(|j| m.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|j| {
            let mut e = vec![0.0; cols];
            e[j] = 1.0;
            e
        })
        .collect();

    let tol = f64::EPSILON * (rows as f64).sqrt();
    let mut converged = cols < 2;
    let mut sweep = 0;
    while !converged {
        if sweep == MAX_SWEEPS {
            return Err(Error::NoConvergence { sweeps: sweep });
        }
        sweep += 1;
        converged = true;
        for p in 0..cols - 1 {
            for q in p + 1..cols {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                converged = false;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
    }

    let norms: Vec<f64> = a.iter().map(|col| dot(col, col).sqrt()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    let sigma_max = norms[order[0]];
    let small = sigma_max * f64::EPSILON * rows.max(cols) as f64;

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(cols);
    let mut s = Vec::with_capacity(cols);
    let mut v_cols = Vec::with_capacity(cols);
    let mut basis_cursor = 0;
    for &j in &order {
        let sigma = norms[j];
        let candidate = if sigma > small && sigma > 0.0 {
            a[j].iter().map(|x| x / sigma).collect()
        } else {
            complete_basis(&u_cols, &a[j], rows, &mut basis_cursor)
        };
        u_cols.push(candidate);
        s.push(sigma);
        v_cols.push(std::mem::take(&mut v[j]));
    }

    Ok(SvdFactors { u: Matrix::from_columns(&u_cols)?, s, v: Matrix::from_columns(&v_cols)? })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let (cp, cq) = (&mut head[p], &mut tail[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Produces a unit vector orthogonal to `existing`, preferring the direction
/// of `hint` and falling back to standard basis vectors.
fn complete_basis(existing: &[Vec<f64>], hint: &[f64], dim: usize, cursor: &mut usize) -> Vec<f64> {
    let try_vec = |mut w: Vec<f64>| -> Option<Vec<f64>> {
        let start = dot(&w, &w).sqrt();
        if start == 0.0 {
            return None;
        }
        for _ in 0..2 {
            for e in existing {
                let proj = dot(&w, e);
                w.iter_mut().zip(e).for_each(|(x, y)| *x -= proj * y);
            }
        }
        let n = dot(&w, &w).sqrt();
        if n <= 1e-3 * start {
            return None;
        }
        Some(w.into_iter().map(|x| x / n).collect())
    };
    if let Some(w) = try_vec(hint.to_vec()) {
        return w;
    }
    while *cursor < dim {
        let mut e = vec![0.0; dim];
        e[*cursor] = 1.0;
        *cursor += 1;
        if let Some(w) = try_vec(e) {
            return w;
        }
    }
    unreachable!("fewer than dim orthonormal vectors requested")
}

fn apply_sign_convention(f: &mut SvdFactors) {
    for j in 0..f.s.len() {
        let mut best = 0.0_f64;
        let mut best_val = 0.0;
        for i in 0..f.u.rows() {
            let x = f.u[(i, j)];
            if x.abs() > best {
                best = x.abs();
                best_val = x;
            }
        }
        if best_val < 0.0 {
            for i in 0..f.u.rows() {
                f.u[(i, j)] = -f.u[(i, j)];
            }
            for i in 0..f.v.rows() {
                f.v[(i, j)] = -f.v[(i, j)];
            }
        }
    }
}

/// Singular values only.
pub fn singular_values(m: &Matrix) -> Result<Vec<f64>> {
    Ok(svd(m)?.s)
}

/// `Σ_{i ≤ k} σ_i u_i v_iᵀ`, the Eckart–Young optimal rank-`k` approximation.
pub fn best_rank_k(m: &Matrix, k: usize) -> Result<Matrix> {
    let max_k = m.rows().min(m.cols());
    if k == 0 || k > max_k {
        return Err(Error::invalid(format!("rank {k} outside 1..={max_k}")));
    }
    Ok(svd(m)?.reconstruct_range(0, k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random::gaussian_matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gram_error(q: &Matrix) -> f64 {
        let g = q.t_matmul(q).unwrap();
        g.max_abs_diff(&Matrix::identity(q.cols())).unwrap()
    }

    fn relative_reconstruction_error(m: &Matrix, f: &SvdFactors) -> f64 {
        f.reconstruct().sub(m).unwrap().frobenius_norm() / m.frobenius_norm()
    }

    #[test]
    fn diagonal_input_gives_its_entries() {
        let m = Matrix::from_diag(3, 3, &[3.0, 2.0, 1.0]).unwrap();
        let f = svd(&m).unwrap();
        assert_eq!(f.s, vec![3.0, 2.0, 1.0]);
        for j in 0..3 {
            let nonzero: Vec<f64> = f.u.column(j).into_iter().filter(|x| *x != 0.0).collect();
            assert_eq!(nonzero.len(), 1);
            assert!((nonzero[0].abs() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_matrix_has_zero_spectrum_and_orthonormal_factors() {
        let f = svd(&Matrix::zeros(2, 2)).unwrap();
        assert_eq!(f.s, vec![0.0, 0.0]);
        assert!(gram_error(&f.u) < 1e-12);
        assert!(gram_error(&f.v) < 1e-12);
    }

    #[test]
    fn random_rectangular_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (r, c) in [(5, 4), (4, 5), (17, 3), (3, 17), (32, 32)] {
            let m = gaussian_matrix(&mut rng, r, c, 1.0);
            let f = svd(&m).unwrap();
            assert!(relative_reconstruction_error(&m, &f) < 1e-12, "{r}x{c}");
            assert!(gram_error(&f.u) < 1e-12);
            assert!(gram_error(&f.v) < 1e-12);
            assert!(f.s.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn rank_deficient_input_keeps_orthonormal_u() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let left = gaussian_matrix(&mut rng, 10, 2, 1.0);
        let right = gaussian_matrix(&mut rng, 2, 6, 1.0);
        let m = left.matmul(&right).unwrap();
        let f = svd(&m).unwrap();
        assert!(gram_error(&f.u) < 1e-10);
        assert!(f.s[2] < 1e-12 * f.s[0]);
        assert!(relative_reconstruction_error(&m, &f) < 1e-12);
    }

    #[test]
    fn sign_convention_is_applied() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = gaussian_matrix(&mut rng, 6, 4, 1.0);
        let f = svd(&m).unwrap();
        for j in 0..4 {
            let col = f.u.column(j);
            let pivot = col.iter().copied().fold(0.0_f64, |b, x| if x.abs() > b.abs() { x } else { b });
            assert!(pivot >= 0.0);
        }
        let flipped = svd(&m.scale(-1.0)).unwrap();
        assert_eq!(flipped.u, f.u);
        assert_eq!(flipped.v, f.v.scale(-1.0));
    }

    #[test]
    fn rejects_non_finite() {
        let mut m = Matrix::zeros(2, 3);
        m.as_mut_slice()[4] = f64::NAN;
        // from_vec would already reject it; bypass through as_mut_slice.
        match svd(&m) {
            Err(Error::NonFinite { row: 1, col: 1 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn best_rank_k_on_known_spectrum() {
        let m = Matrix::from_diag(5, 5, &[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap();
        let approx = best_rank_k(&m, 2).unwrap();
        let expected = Matrix::from_diag(5, 5, &[5.0, 4.0]).unwrap();
        assert!(approx.max_abs_diff(&expected).unwrap() < 1e-14);
        let residual = m.sub(&approx).unwrap().frobenius_norm();
        assert!((residual - 14f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn best_rank_k_full_rank_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = gaussian_matrix(&mut rng, 7, 5, 1.0);
        let approx = best_rank_k(&m, 5).unwrap();
        assert!(approx.sub(&m).unwrap().frobenius_norm() < 1e-10 * m.frobenius_norm());
    }

    #[test]
    fn best_rank_k_rejects_out_of_range() {
        let m = Matrix::identity(3);
        assert!(best_rank_k(&m, 0).is_err());
        assert!(best_rank_k(&m, 4).is_err());
    }
}
