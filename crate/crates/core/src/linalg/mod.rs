//! Dense real matrices and the decompositions the rest of the crate needs.

pub mod io;
mod matrix;
pub mod random;
mod svd;

pub use matrix::Matrix;
pub use random::{derive_seed, random_orthonormal_columns, seeded_rng, SeededRng};
pub use svd::{best_rank_k, singular_values, svd, SvdFactors};

/// `√(Σ m_ij²)`
pub fn frobenius_norm(m: &Matrix) -> f64 {
    m.frobenius_norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random::gaussian_matrix;

    #[test]
    fn frobenius_small_cases() {
        assert!((frobenius_norm(&Matrix::identity(3)) - 3f64.sqrt()).abs() < 1e-15);
        let m = Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap();
        assert_eq!(frobenius_norm(&m), 5.0);
    }

    #[test]
    fn frobenius_matches_direct_sum() {
        let m = gaussian_matrix(&mut seeded_rng(2), 8, 6, 1.0);
        let direct: f64 = m.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((frobenius_norm(&m) - direct).abs() <= 1e-12 * direct);
    }
}
