//! One SGD step on the adapter factors, compared against the full-fine-tune
//! step it is meant to imitate.

use serde::Serialize;

use crate::analysis::criterion::predicted_optimum;
use crate::error::{Error, Result};
use crate::linalg::{singular_values, Matrix};
use crate::nn::{backward, Layer, Network};

#[derive(Debug, Clone, Serialize)]
pub struct LayerAlignment {
    pub layer: usize,
    pub rank: usize,
    pub eta: f64,
    pub zeta: f64,
    /// `‖realized − (−ζλ∇W)‖_F`
    pub residual: f64,
    /// `ζλ√(Σ_{i>2r} σ_i²)` of the base gradient.
    pub predicted_residual: f64,
    /// Cosine between the flattened realized delta and `−ζλ∇W`.
    pub cosine: f64,
    #[serde(skip)]
    pub delta_a: Matrix,
    #[serde(skip)]
    pub delta_b: Matrix,
    /// `η(ΔB·A + B·ΔA + ΔB·ΔA)`: the exact change of `ηBA` after the step.
    #[serde(skip)]
    pub realized: Matrix,
}

impl LayerAlignment {
    pub fn ratio(&self) -> f64 {
        self.residual / self.predicted_residual
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AlignmentReport {
    pub learning_rate: f64,
    pub layers: Vec<LayerAlignment>,
    /// Root-sum-square of the per-layer residuals.
    pub residual: f64,
    pub predicted_residual: f64,
    pub cosine: f64,
}

/// Takes one SGD step of size `lr` on the adapter factors of `adapted` (the
/// network itself is not modified) and measures, for every adapted layer,
/// how far the realized change of `ηBA` is from `−ζ·lr·∇W`, where `∇W` is the
/// gradient of `base` on the same batch.
///
/// `zetas` overrides the per-layer `ζ`; otherwise the adapter's own value is
/// used and layers without one are an error.
pub fn first_step_alignment(
    base: &Network,
    adapted: &Network,
    x: &Matrix,
    t: &Matrix,
    lr: f64,
    zetas: Option<&[f64]>,
) -> Result<AlignmentReport> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::invalid("learning rate must be positive"));
    }
    if base.num_layers() != adapted.num_layers() {
        return Err(Error::invalid("networks have different depths"));
    }
    let gap = base.predict(x)?.max_abs_diff(&adapted.predict(x)?)?;
    if gap > 1e-8 {
        return Err(Error::invalid(format!("networks are not at a common initial point (max output difference {gap:e})")));
    }
    let base_grads = backward(base.forward(x, t)?)?;
    let adapted_grads = backward(adapted.forward(x, t)?)?;

    let mut layers = Vec::new();
    let mut adapted_index = 0;
    for (l, layer) in adapted.layers().iter().enumerate() {
        let Layer::Adapted(al) = layer else { continue };
        let ad = &al.adapter;
        let zeta = match zetas {
            Some(z) => *z.get(adapted_index).ok_or_else(|| Error::invalid(format!("no zeta supplied for adapted layer {l}")))?,
            None => ad.zeta.ok_or_else(|| Error::layer(l, format!("{} adapter has no zeta; pass one explicitly", ad.scheme)))?,
        };
        adapted_index += 1;

        let g = adapted_grads.layers[l].adapter.as_ref().ok_or_else(|| Error::layer(l, "missing adapter gradient"))?;
        let delta_a = g.a.scale(-lr);
        let delta_b = g.b.scale(-lr);
        let mut realized = delta_b.matmul(&ad.a)?;
        realized.axpy(1.0, &ad.b.matmul(&delta_a)?)?;
        realized.axpy(1.0, &delta_b.matmul(&delta_a)?)?;
        realized.scale_in_place(ad.eta);

        let grad_w = base_grads.weight(l);
        let target = grad_w.scale(-zeta * lr);
        let residual = realized.sub(&target)?.frobenius_norm();
        let s = singular_values(grad_w)?;
        let predicted_residual = lr * predicted_optimum(&s, ad.rank, zeta);
        layers.push(LayerAlignment {
            layer: l,
            rank: ad.rank,
            eta: ad.eta,
            zeta,
            residual,
            predicted_residual,
            cosine: cosine(&realized, &target)?,
            delta_a,
            delta_b,
            realized,
        });
    }
    if layers.is_empty() {
        return Err(Error::invalid("adapted network has no adapters"));
    }

    let rss = |f: fn(&LayerAlignment) -> f64| layers.iter().map(|la| f(la).powi(2)).sum::<f64>().sqrt();
    let residual = rss(|la| la.residual);
    let predicted_residual = rss(|la| la.predicted_residual);
    let (mut dot, mut nr, mut nt) = (0.0, 0.0, 0.0);
    for la in &layers {
        let target = base_grads.weight(la.layer).scale(-la.zeta * lr);
        dot += la.realized.inner(&target)?;
        nr += la.realized.inner(&la.realized)?;
        nt += target.inner(&target)?;
    }
    Ok(AlignmentReport { learning_rate: lr, residual, predicted_residual, cosine: safe_cosine(dot, nr, nt), layers })
}

fn cosine(a: &Matrix, b: &Matrix) -> Result<f64> {
    Ok(safe_cosine(a.inner(b)?, a.inner(a)?, b.inner(b)?))
}

fn safe_cosine(dot: f64, aa: f64, bb: f64) -> f64 {
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        dot / (aa.sqrt() * bb.sqrt())
    }
}
