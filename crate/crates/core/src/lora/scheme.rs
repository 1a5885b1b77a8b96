use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The ablation grid: vanilla LoRA, Gaussian, Gaussian with stable output
/// (`+SO`), gradient approximation (`+GA`) and the combination LoRA-GA.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Vanilla,
    Gaussian,
    GaussianSo,
    GradApproxGa,
    LoraGa,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 5] =
        [SchemeKind::Vanilla, SchemeKind::Gaussian, SchemeKind::GaussianSo, SchemeKind::GradApproxGa, SchemeKind::LoraGa];

    pub fn needs_gradient(self) -> bool {
        matches!(self, SchemeKind::GradApproxGa | SchemeKind::LoraGa)
    }

    pub fn needs_gamma(self) -> bool {
        matches!(self, SchemeKind::GaussianSo | SchemeKind::LoraGa)
    }

    /// Scale-stable kinds use `η = α/√r`, the rest `η = α/r`.
    pub fn uses_sqrt_rank(self) -> bool {
        matches!(self, SchemeKind::GaussianSo | SchemeKind::LoraGa)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeKind::Vanilla => "vanilla",
            SchemeKind::Gaussian => "gaussian",
            SchemeKind::GaussianSo => "gaussian_so",
            SchemeKind::GradApproxGa => "grad_approx_ga",
            SchemeKind::LoraGa => "lora_ga",
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemeKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| Error::invalid(format!("unknown scheme {s:?}")))
    }
}

/// Which of the top `2r` singular directions seed `A` (right vectors) and
/// which seed `B` (left vectors). Indices are 0-based into `0..2r`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexPartition {
    a: Vec<usize>,
}

impl IndexPartition {
    /// `A ← V[0..r]`, `B ← U[r..2r]`.
    pub fn standard(rank: usize) -> Self {
        Self { a: (0..rank).collect() }
    }

    pub fn new(a_indices: Vec<usize>, rank: usize) -> Result<Self> {
        let p = Self { a: a_indices };
        p.validate(rank)?;
        Ok(p)
    }

    pub fn validate(&self, rank: usize) -> Result<()> {
        let mut sorted = self.a.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != rank || self.a.len() != rank || sorted.iter().any(|&i| i >= 2 * rank) {
            return Err(Error::invalid(format!("partition {:?} must pick {rank} distinct indices below {}", self.a, 2 * rank)));
        }
        Ok(())
    }

    pub fn a_indices(&self) -> Vec<usize> {
        self.a.clone()
    }

    /// Complement of the `A` indices within `0..2r`, ascending.
    pub fn b_indices(&self, rank: usize) -> Vec<usize> {
        (0..2 * rank).filter(|i| !self.a.contains(i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitScheme {
    pub kind: SchemeKind,
    pub alpha: f64,
    pub rank: usize,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub partition: Option<IndexPartition>,
}

impl InitScheme {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::invalid("rank must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("alpha must be positive"));
        }
        match (self.kind.needs_gamma(), self.gamma) {
            (true, None) => return Err(Error::invalid(format!("{} requires gamma", self.kind))),
            (true, Some(g)) if !(g > 0.0 && g.is_finite()) => return Err(Error::invalid("gamma must be positive")),
            (false, Some(_)) => return Err(Error::invalid(format!("{} does not take gamma", self.kind))),
            _ => {}
        }
        if let Some(p) = &self.partition {
            p.validate(self.rank)?;
        }
        Ok(())
    }

    pub(crate) fn partition(&self, rank: usize) -> Result<IndexPartition> {
        let p = self.partition.clone().unwrap_or_else(|| IndexPartition::standard(rank));
        p.validate(rank)?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingConstants {
    pub eta: f64,
    /// `ζ = (α²/γ²)·√(d_out/r²)`, populated for LoRA-GA only.
    pub zeta: Option<f64>,
    /// Multiplier applied to the raw factors: `d_out^{1/4}/√γ` for
    /// `gaussian_so`, `d_out^{1/4}/γ` for `lora_ga`, 1 otherwise.
    pub factor: f64,
}

pub fn compute_scaling(kind: SchemeKind, alpha: f64, rank: usize, gamma: Option<f64>, d_out: usize) -> Result<ScalingConstants> {
    if rank == 0 {
        return Err(Error::invalid("rank must be at least 1"));
    }
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(Error::invalid("alpha must be positive"));
    }
    let r = rank as f64;
    let d = d_out as f64;
    let gamma = if kind.needs_gamma() {
        let g = gamma.ok_or_else(|| Error::invalid(format!("{kind} requires gamma")))?;
        if g.is_nan() || g <= 0.0 {
            return Err(Error::invalid("gamma must be positive"));
        }
        g
    } else {
        1.0
    };
    let eta = if kind.uses_sqrt_rank() { alpha / r.sqrt() } else { alpha / r };
    let (zeta, factor) = match kind {
        SchemeKind::LoraGa => (Some(alpha * alpha / (gamma * gamma) * (d / (r * r)).sqrt()), d.powf(0.25) / gamma),
        SchemeKind::GaussianSo => (None, d.powf(0.25) / gamma.sqrt()),
        _ => (None, 1.0),
    };
    Ok(ScalingConstants { eta, zeta, factor })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lora_ga_eta() {
        let c = compute_scaling(SchemeKind::LoraGa, 16.0, 8, Some(16.0), 64).unwrap();
        assert!((c.eta - 4.0 * 2f64.sqrt()).abs() < 1e-12);
        assert!((c.eta - 5.65685).abs() < 1e-5);
    }

    #[test]
    fn vanilla_eta() {
        let c = compute_scaling(SchemeKind::Vanilla, 16.0, 8, None, 64).unwrap();
        assert_eq!(c.eta, 2.0);
        assert_eq!(c.zeta, None);
    }

    #[test]
    fn eta_rule_per_kind() {
        for kind in SchemeKind::ALL {
            let c = compute_scaling(kind, 8.0, 4, Some(2.0), 32).unwrap();
            let expected = if kind.uses_sqrt_rank() { 4.0 } else { 2.0 };
            assert_eq!(c.eta, expected, "{kind}");
        }
    }

    #[test]
    fn zeta_consistency_identity() {
        for (alpha, r, gamma, d) in [(16.0, 8, 16.0, 64), (1.0, 1, 1.0, 6), (3.5, 5, 0.7, 1000), (64.0, 32, 64.0, 4096)] {
            let c = compute_scaling(SchemeKind::LoraGa, alpha, r, Some(gamma), d).unwrap();
            let lhs = c.zeta.unwrap().sqrt() / c.eta;
            let rhs = (d as f64).powf(0.25) / gamma;
            assert!((lhs - rhs).abs() <= 1e-12 * rhs, "{lhs} vs {rhs}");
            assert!((c.factor - rhs).abs() <= 1e-15 * rhs);
        }
    }

    #[test]
    fn missing_gamma_is_an_error() {
        assert!(compute_scaling(SchemeKind::LoraGa, 1.0, 1, None, 4).is_err());
        assert!(compute_scaling(SchemeKind::GaussianSo, 1.0, 1, None, 4).is_err());
    }

    #[test]
    fn partition_validation() {
        assert!(IndexPartition::new(vec![1, 3], 2).is_ok());
        assert_eq!(IndexPartition::new(vec![1, 3], 2).unwrap().b_indices(2), vec![0, 2]);
        assert!(IndexPartition::new(vec![1, 1], 2).is_err());
        assert!(IndexPartition::new(vec![0, 4], 2).is_err());
    }

    #[test]
    fn scheme_names_round_trip() {
        for k in SchemeKind::ALL {
            assert_eq!(k.as_str().parse::<SchemeKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.as_str()));
        }
    }
}
