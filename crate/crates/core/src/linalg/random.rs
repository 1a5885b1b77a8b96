use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::linalg::matrix::{dot, Matrix};

/// Every random stream in the crate comes from ChaCha8 so a seed replays
/// bit-identically across platforms.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent child seed (splitmix64 finaliser over `seed ⊕ stream`).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        std * z
    })
}

/// Entries drawn from `U(-bound, bound)`.
pub fn uniform_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Matrix {
    if bound == 0.0 {
        return Matrix::zeros(rows, cols);
    }
    let dist = Uniform::new(-bound, bound).expect("bound is positive and finite");
    Matrix::from_fn(rows, cols, |_, _| dist.sample(rng))
}

/// `dim × count` matrix with Haar-distributed orthonormal columns.
pub fn random_orthonormal_columns(dim: usize, count: usize, seed: u64) -> Result<Matrix> {
    orthonormal_columns_from(&mut seeded_rng(seed), dim, count)
}

/// Gaussian matrix followed by modified Gram–Schmidt (two passes). The
/// implied R factor has a positive diagonal, which makes the result Haar
/// distributed, so each column is uniform on the unit sphere.
pub fn orthonormal_columns_from<R: Rng + ?Sized>(rng: &mut R, dim: usize, count: usize) -> Result<Matrix> {
    if dim == 0 || count == 0 {
        return Err(Error::invalid("dim and count must be positive"));
    }
    if count > dim {
        return Err(Error::invalid(format!("cannot fit {count} orthonormal columns in dimension {dim}")));
    }
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(count);
    while cols.len() < count {
        let mut w: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let start = dot(&w, &w).sqrt();
        for _ in 0..2 {
            for e in &cols {
                let proj = dot(&w, e);
                w.iter_mut().zip(e).for_each(|(x, y)| *x -= proj * y);
            }
        }
        let n = dot(&w, &w).sqrt();
        // A draw almost inside the current span is rejected and redrawn.
        if n <= 1e-8 * start {
            continue;
        }
        w.iter_mut().for_each(|x| *x /= n);
        cols.push(w);
    }
    Matrix::from_columns(&cols)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn determinant(m: &Matrix) -> f64 {
        let n = m.rows();
        let mut a = m.clone();
        let mut det = 1.0;
        for k in 0..n {
            let pivot = (k..n).max_by(|&i, &j| a[(i, k)].abs().total_cmp(&a[(j, k)].abs())).unwrap();
            if pivot != k {
                for j in 0..n {
                    let t = a[(k, j)];
                    a[(k, j)] = a[(pivot, j)];
                    a[(pivot, j)] = t;
                }
                det = -det;
            }
            let d = a[(k, k)];
            det *= d;
            for i in k + 1..n {
                let f = a[(i, k)] / d;
                for j in k..n {
                    a[(i, j)] -= f * a[(k, j)];
                }
            }
        }
        det
    }

    #[test]
    fn square_sample_is_orthogonal() {
        let q = random_orthonormal_columns(4, 4, 1).unwrap();
        let gram = q.t_matmul(&q).unwrap();
        assert!(gram.max_abs_diff(&Matrix::identity(4)).unwrap() < 1e-10);
        assert!((determinant(&q).abs() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn same_seed_replays() {
        let a = random_orthonormal_columns(16, 5, 99).unwrap();
        let b = random_orthonormal_columns(16, 5, 99).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
        let c = random_orthonormal_columns(16, 5, 100).unwrap();
        assert_ne!(a.as_slice(), c.as_slice());
    }

    #[test]
    fn too_many_columns_is_an_error() {
        assert!(random_orthonormal_columns(3, 4, 0).is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        let seeds: Vec<u64> = (0..100).map(|s| derive_seed(42, s)).collect();
        let mut dedup = seeds.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), seeds.len());
    }
}
