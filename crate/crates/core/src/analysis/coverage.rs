use serde::Serialize;

use crate::error::{Error, Result};

/// Fraction of squared singular-value mass captured by the top `k` values.
/// The all-zero spectrum has coverage 0 by convention.
pub fn coverage(singular_values: &[f64], k: usize) -> Result<f64> {
    let sorted = sorted_spectrum(singular_values)?;
    if k > sorted.len() {
        return Err(Error::invalid(format!("k = {k} exceeds spectrum length {}", sorted.len())));
    }
    let total: f64 = sorted.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    if k == sorted.len() {
        return Ok(1.0);
    }
    let head: f64 = sorted[..k].iter().map(|s| s * s).sum();
    Ok((head / total).min(1.0))
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverageCurve {
    /// Non-increasing.
    pub sigma: Vec<f64>,
    /// `cumulative[k-1]` is the coverage of the top `k` values.
    pub cumulative: Vec<f64>,
    /// Set when the spectrum is all zeros and the curve is identically 0.
    pub degenerate: bool,
}

pub fn coverage_curve(singular_values: &[f64]) -> Result<CoverageCurve> {
    let sigma = sorted_spectrum(singular_values)?;
    let total: f64 = sigma.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return Ok(CoverageCurve { cumulative: vec![0.0; sigma.len()], sigma, degenerate: true });
    }
    let mut running = 0.0;
    let mut cumulative: Vec<f64> = sigma
        .iter()
        .map(|s| {
            running += s * s;
            (running / total).min(1.0)
        })
        .collect();
    if let Some(last) = cumulative.last_mut() {
        *last = 1.0;
    }
    Ok(CoverageCurve { sigma, cumulative, degenerate: false })
}

fn sorted_spectrum(s: &[f64]) -> Result<Vec<f64>> {
    if let Some(i) = s.iter().position(|&x| !x.is_finite() || x < 0.0) {
        return Err(Error::invalid(format!("singular value {i} is {} (must be finite and >= 0)", s[i])));
    }
    let mut sorted = s.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(sorted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn direct_values() {
        assert_eq!(coverage(&[2.0, 1.0, 1.0, 1.0, 1.0], 2).unwrap(), 0.625);
        assert_eq!(coverage(&[4.0, 3.0], 1).unwrap(), 0.64);
        assert_eq!(coverage(&[4.0, 3.0], 2).unwrap(), 1.0);
        // Order of the input does not matter.
        assert_eq!(coverage(&[3.0, 4.0], 1).unwrap(), 0.64);
    }

    #[test]
    fn zero_spectrum_is_flagged() {
        assert_eq!(coverage(&[0.0, 0.0], 1).unwrap(), 0.0);
        assert!(coverage_curve(&[0.0; 3]).unwrap().degenerate);
    }

    #[test]
    fn rejects_negative_values_and_oversized_k() {
        assert!(coverage(&[1.0, -0.5], 1).is_err());
        assert!(coverage(&[1.0], 2).is_err());
    }

    proptest! {
        #[test]
        fn curve_is_monotone_and_ends_at_one(s in prop::collection::vec(0.0f64..100.0, 1..40)) {
            prop_assume!(s.iter().any(|&x| x > 0.0));
            let c = coverage_curve(&s).unwrap();
            prop_assert!(c.cumulative.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(c.cumulative.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert_eq!(*c.cumulative.last().unwrap(), 1.0);
            for k in 1..=s.len() {
                prop_assert!((coverage(&s, k).unwrap() - c.cumulative[k - 1]).abs() < 1e-12);
            }
        }
    }
}
