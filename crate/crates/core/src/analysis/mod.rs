//! Numerical instruments: the approximation criterion and its optimum,
//! spectrum coverage, scale-stability probes and first-step alignment.

pub mod alignment;
pub mod coverage;
pub mod criterion;
pub mod stability;

pub use alignment::{first_step_alignment, AlignmentReport, LayerAlignment};
pub use coverage::{coverage, coverage_curve, CoverageCurve};
pub use criterion::{criterion, optimal_factors, predicted_optimum, verify_theorem1, CriterionInput, Theorem1Report};
pub use stability::{
    forward_slopes, forward_spread, stability_probe, verify_theorem2, GridCell, StabilityCell, StabilityProbeConfig,
    StabilityTable, Theorem2Report, ZetaRule,
};
