use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::random::{orthonormal_columns_from, seeded_rng};
use crate::linalg::{derive_seed, svd, Matrix, SvdFactors};
use crate::lora::IndexPartition;

/// Operands of the first-step approximation objective.
#[derive(Debug, Clone, Copy)]
pub struct CriterionInput<'a> {
    pub grad: &'a Matrix,
    /// `r × d_in`
    pub a: &'a Matrix,
    /// `d_out × r`
    pub b: &'a Matrix,
    pub eta: f64,
    pub zeta: f64,
}

/// `‖η² ∇W AᵀA + η² B Bᵀ ∇W − ζ ∇W‖_F`
pub fn criterion(input: &CriterionInput<'_>) -> Result<f64> {
    let CriterionInput { grad, a, b, eta, zeta } = *input;
    let (d_out, d_in) = grad.shape();
    if a.cols() != d_in || b.rows() != d_out || a.rows() != b.cols() {
        return Err(Error::Shape { op: "criterion", expected: (d_out, d_in), got: (b.rows(), a.cols()) });
    }
    let eta2 = eta * eta;
    let mut acc = grad.matmul_t(a)?.matmul(a)?;
    acc.scale_in_place(eta2);
    let bbg = b.matmul(&b.t_matmul(grad)?)?;
    acc.axpy(eta2, &bbg)?;
    acc.axpy(-zeta, grad)?;
    Ok(acc.frobenius_norm())
}

/// Optimal factors `A = (√ζ/η) V_{I_A}ᵀ`, `B = (√ζ/η) U_{I_B}` built from an
/// existing decomposition of the gradient.
pub fn optimal_factors(f: &SvdFactors, rank: usize, eta: f64, zeta: f64, partition: &IndexPartition) -> Result<(Matrix, Matrix)> {
    if 2 * rank > f.rank() {
        return Err(Error::invalid(format!("2r = {} exceeds min(d_out, d_in) = {}", 2 * rank, f.rank())));
    }
    partition.validate(rank)?;
    let c = zeta.sqrt() / eta;
    let a = f.v.select_columns(&partition.a_indices()).transpose().scale(c);
    let b = f.u.select_columns(&partition.b_indices(rank)).scale(c);
    Ok((a, b))
}

/// `ζ · √(Σ_{i > 2r} σ_i²)`: the smallest attainable objective value.
pub fn predicted_optimum(singular_values: &[f64], rank: usize, zeta: f64) -> f64 {
    let tail: f64 = singular_values.iter().skip(2 * rank).map(|s| s * s).sum();
    zeta * tail.sqrt()
}

#[derive(Debug, Clone, Serialize)]
pub struct Theorem1Report {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub at_solution: f64,
    pub predicted: f64,
    pub best_random: f64,
    pub trials: usize,
    pub relative_gap: f64,
    pub passed: bool,
}

/// Checks that the SVD construction attains the spectrum-tail value and that
/// no random orthonormal pair (scaled by `√ζ/η`) does better.
pub fn verify_theorem1(grad: &Matrix, rank: usize, zeta: f64, eta: f64, trials: usize, seed: u64) -> Result<Theorem1Report> {
    let (d_out, d_in) = grad.shape();
    if rank == 0 || 2 * rank > d_out.min(d_in) {
        return Err(Error::invalid(format!("rank {rank} violates 2r <= min({d_out}, {d_in})")));
    }
    let f = svd(grad)?;
    let (a, b) = optimal_factors(&f, rank, eta, zeta, &IndexPartition::standard(rank))?;
    let at_solution = criterion(&CriterionInput { grad, a: &a, b: &b, eta, zeta })?;
    let predicted = predicted_optimum(&f.s, rank, zeta);

    let c = zeta.sqrt() / eta;
    let mut best_random = f64::INFINITY;
    for t in 0..trials {
        let mut rng = seeded_rng(derive_seed(seed, t as u64));
        let a = orthonormal_columns_from(&mut rng, d_in, rank)?.transpose().scale(c);
        let b = orthonormal_columns_from(&mut rng, d_out, rank)?.scale(c);
        best_random = best_random.min(criterion(&CriterionInput { grad, a: &a, b: &b, eta, zeta })?);
    }

    let scale = (zeta * f.s[0]).max(f64::MIN_POSITIVE);
    let relative_gap = if predicted > 0.0 { (at_solution - predicted).abs() / predicted } else { at_solution / scale };
    let passed = relative_gap <= 1e-9 && (trials == 0 || best_random >= at_solution - 1e-9 * scale);
    Ok(Theorem1Report { rows: d_out, cols: d_in, rank, at_solution, predicted, best_random, trials, relative_gap, passed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random::gaussian_matrix;

    #[test]
    fn zero_gradient_gives_zero() {
        let g = Matrix::zeros(5, 4);
        let a = gaussian_matrix(&mut seeded_rng(1), 2, 4, 1.0);
        let b = gaussian_matrix(&mut seeded_rng(2), 5, 2, 1.0);
        let v = criterion(&CriterionInput { grad: &g, a: &a, b: &b, eta: 3.0, zeta: 2.0 }).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn zero_adapter_gives_scaled_gradient_norm() {
        let g = gaussian_matrix(&mut seeded_rng(3), 5, 4, 1.0);
        let a = Matrix::zeros(2, 4);
        let b = Matrix::zeros(5, 2);
        let v = criterion(&CriterionInput { grad: &g, a: &a, b: &b, eta: 3.0, zeta: 2.5 }).unwrap();
        assert!((v - 2.5 * g.frobenius_norm()).abs() < 1e-12);
    }

    #[test]
    fn known_spectrum_optimum_is_sqrt_14() {
        let g = Matrix::from_diag(6, 5, &[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap();
        let f = svd(&g).unwrap();
        let (a, b) = optimal_factors(&f, 1, 1.0, 1.0, &IndexPartition::standard(1)).unwrap();
        let v = criterion(&CriterionInput { grad: &g, a: &a, b: &b, eta: 1.0, zeta: 1.0 }).unwrap();
        assert!((v - 14f64.sqrt()).abs() < 1e-12);
        assert_eq!(predicted_optimum(&f.s, 1, 1.0), 14f64.sqrt());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let g = Matrix::zeros(5, 4);
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(5, 2);
        assert!(criterion(&CriterionInput { grad: &g, a: &a, b: &b, eta: 1.0, zeta: 1.0 }).is_err());
    }

    #[test]
    fn verify_rejects_rank_violation() {
        let g = Matrix::zeros(5, 4);
        assert!(verify_theorem1(&g, 3, 1.0, 1.0, 1, 0).is_err());
    }
}
