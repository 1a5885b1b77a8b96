//! Full-fine-tune gradient estimation on a sampled batch and the end-to-end
//! initializers that turn a dense network into an adapted one.
//!
//! Gradients are produced by the streaming backward sweep, so the LoRA-GA
//! path never holds more than one layer gradient at a time: each layer's SVD
//! and adapter are built inside the sweep callback and only the (much
//! smaller) adapted layers are kept.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::analysis::{coverage, criterion, predicted_optimum, CriterionInput};
use crate::error::{Error, Result};
use crate::linalg::{derive_seed, seeded_rng, svd, Matrix};
use crate::lora::{initialize, initialize_from_svd, AdaptedLayer, IndexPartition, InitScheme, SchemeKind};
use crate::nn::{backward_streaming, AdapterGradient, GradientSnapshot, Layer, LayerGradient, Network};

fn default_sampled_batch() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaInitConfig {
    pub rank: usize,
    pub alpha: f64,
    pub gamma: f64,
    /// `n`: number of samples used to estimate the gradient.
    #[serde(default = "default_sampled_batch")]
    pub sampled_batch_size: usize,
    /// `b`: micro-batch size of the accumulated estimator. `None` uses a
    /// single pass over the sampled batch.
    #[serde(default)]
    pub micro_batch_size: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub partition: Option<IndexPartition>,
    /// Layer indices left dense.
    #[serde(default)]
    pub exclude_layers: Vec<usize>,
}

impl Default for GaInitConfig {
    fn default() -> Self {
        Self {
            rank: 8,
            alpha: 16.0,
            gamma: 16.0,
            sampled_batch_size: default_sampled_batch(),
            micro_batch_size: None,
            seed: 0,
            partition: None,
            exclude_layers: Vec::new(),
        }
    }
}

impl GaInitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::invalid("rank must be at least 1"));
        }
        if self.sampled_batch_size == 0 {
            return Err(Error::invalid("sampled_batch_size must be at least 1"));
        }
        if let Some(b) = self.micro_batch_size {
            if b == 0 || b > self.sampled_batch_size || !self.sampled_batch_size.is_multiple_of(b) {
                return Err(Error::invalid(format!(
                    "micro_batch_size {b} must divide sampled_batch_size {}",
                    self.sampled_batch_size
                )));
            }
        }
        if let Some(p) = &self.partition {
            p.validate(self.rank)?;
        }
        Ok(())
    }

    fn targets(&self, net: &Network) -> Result<Vec<bool>> {
        let mut target = vec![true; net.num_layers()];
        for &l in &self.exclude_layers {
            *target.get_mut(l).ok_or_else(|| Error::invalid(format!("excluded layer {l} does not exist")))? = false;
        }
        for (l, layer) in net.layers().iter().enumerate() {
            if target[l] && 2 * self.rank > layer.d_in().min(layer.d_out()) {
                return Err(Error::layer(
                    l,
                    format!("rank {} needs 2r <= min(d_in, d_out) = {}", self.rank, layer.d_in().min(layer.d_out())),
                ));
            }
        }
        Ok(target)
    }

    /// Per-layer adapter description for `kind`.
    pub fn scheme_for(&self, kind: SchemeKind, layer: usize) -> InitScheme {
        InitScheme {
            kind,
            alpha: self.alpha,
            rank: self.rank,
            gamma: kind.needs_gamma().then_some(self.gamma),
            seed: derive_seed(self.seed, layer as u64),
            partition: kind.needs_gradient().then(|| self.partition.clone()).flatten(),
        }
    }
}

/// Per-layer gradients of the mean loss on `(x, t)`, collected through the
/// streaming sweep.
pub fn estimate_gradients(net: &Network, x: &Matrix, t: &Matrix) -> Result<GradientSnapshot> {
    let mut slots: Vec<Option<LayerGradient>> = vec![None; net.num_layers()];
    backward_streaming(net.forward(x, t)?, |l, g| {
        slots[l] = Some(g.clone());
        Ok(())
    })?;
    Ok(GradientSnapshot { layers: slots.into_iter().map(|g| g.expect("every layer is visited")).collect() })
}

/// Gradient averaged over consecutive micro-batches of `b` columns:
/// `∇avg ← ∇avg + ∇ℓ_i · b/n`. `b` must divide `n`.
pub fn estimate_gradients_accumulated(net: &Network, x: &Matrix, t: &Matrix, b: usize) -> Result<GradientSnapshot> {
    let n = x.cols();
    if n == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if b == 0 || !n.is_multiple_of(b) {
        return Err(Error::invalid(format!("micro-batch size {b} does not divide batch size {n}")));
    }
    if t.cols() != n {
        return Err(Error::Shape { op: "targets", expected: (t.rows(), n), got: t.shape() });
    }
    let weight = b as f64 / n as f64;
    let mut acc: Vec<LayerGradient> = net
        .layers()
        .iter()
        .map(|layer| LayerGradient {
            weight: Matrix::zeros(layer.d_out(), layer.d_in()),
            bias: layer.bias().map(|bv| vec![0.0; bv.len()]),
            adapter: layer.as_adapted().map(|a| AdapterGradient {
                a: Matrix::zeros(a.adapter.rank, a.d_in()),
                b: Matrix::zeros(a.d_out(), a.adapter.rank),
            }),
        })
        .collect();
    for start in (0..n).step_by(b) {
        let cols: Vec<usize> = (start..start + b).collect();
        let (xb, tb) = (x.select_columns(&cols), t.select_columns(&cols));
        backward_streaming(net.forward(&xb, &tb)?, |l, g| {
            let slot = &mut acc[l];
            slot.weight.axpy(weight, &g.weight)?;
            if let (Some(dst), Some(src)) = (slot.bias.as_mut(), g.bias.as_ref()) {
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s * weight;
                }
            }
            if let (Some(dst), Some(src)) = (slot.adapter.as_mut(), g.adapter.as_ref()) {
                dst.a.axpy(weight, &src.a)?;
                dst.b.axpy(weight, &src.b)?;
            }
            Ok(())
        })?;
    }
    Ok(GradientSnapshot { layers: acc })
}

#[derive(Debug, Clone, Serialize)]
pub struct LayerInitReport {
    pub layer: usize,
    pub d_in: usize,
    pub d_out: usize,
    pub r: usize,
    pub eta: f64,
    pub gamma: Option<f64>,
    pub zeta: Option<f64>,
    /// Leading `4r` singular values of the estimated gradient.
    pub singular_values: Vec<f64>,
    pub coverage_2r: f64,
    /// Criterion at the constructed factors (needs `ζ`).
    pub criterion_residual: Option<f64>,
    /// `ζ·√(Σ_{i>2r} σ_i²)`.
    pub predicted_residual: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct InitReport {
    pub scheme: SchemeKind,
    /// Columns of the data pool used to estimate gradients (empty for
    /// gradient-free schemes).
    pub sampled_indices: Vec<usize>,
    pub layers: Vec<LayerInitReport>,
    pub skipped_layers: Vec<usize>,
    /// Peak number of live layer gradients during the sweep(s).
    pub peak_live: usize,
}

/// Draws the sampled batch: `n` distinct columns of the pool, chosen with
/// the config seed and kept in ascending order.
pub fn sample_batch(cfg: &GaInitConfig, pool_x: &Matrix, pool_t: &Matrix) -> Result<(Vec<usize>, Matrix, Matrix)> {
    let n = cfg.sampled_batch_size;
    if pool_x.cols() < n {
        return Err(Error::invalid(format!("sampled_batch_size {n} exceeds the {} available samples", pool_x.cols())));
    }
    let mut rng = seeded_rng(derive_seed(cfg.seed, u64::MAX));
    let mut idx = sample(&mut rng, pool_x.cols(), n).into_vec();
    idx.sort_unstable();
    Ok((idx.clone(), pool_x.select_columns(&idx), pool_t.select_columns(&idx)))
}

/// LoRA-GA initialization of every target layer. The network's output is
/// unchanged by construction.
pub fn lora_ga_initialize(net: &Network, cfg: &GaInitConfig, pool_x: &Matrix, pool_t: &Matrix) -> Result<(Network, InitReport)> {
    initialize_network(net, SchemeKind::LoraGa, cfg, pool_x, pool_t)
}

/// Attaches adapters of `kind` to every target layer of `net`. Gradient
/// kinds estimate `∇W` on a sampled batch from the pool first.
pub fn initialize_network(
    net: &Network,
    kind: SchemeKind,
    cfg: &GaInitConfig,
    pool_x: &Matrix,
    pool_t: &Matrix,
) -> Result<(Network, InitReport)> {
    cfg.validate()?;
    let targets = cfg.targets(net)?;
    if let Some(l) = net.layers().iter().position(|layer| layer.as_adapted().is_some()) {
        return Err(Error::layer(l, "layer already carries an adapter"));
    }
    let dense = |l: usize| match &net.layers()[l] {
        Layer::Dense(d) => d,
        Layer::Adapted(_) => unreachable!("checked above"),
    };

    let mut adapted: Vec<Option<AdaptedLayer>> = vec![None; net.num_layers()];
    let mut reports: Vec<Option<LayerInitReport>> = vec![None; net.num_layers()];
    let mut sampled_indices = Vec::new();
    let mut peak_live = 0;

    if kind.needs_gradient() {
        let (idx, x, t) = sample_batch(cfg, pool_x, pool_t)?;
        sampled_indices = idx;
        let mut build = |l: usize, grad: &Matrix| -> Result<()> {
            if !targets[l] {
                return Ok(());
            }
            let f = svd(grad).map_err(|e| Error::layer(l, e.to_string()))?;
            let scheme = cfg.scheme_for(kind, l);
            let layer = initialize_from_svd(dense(l), &scheme, &f).map_err(|e| Error::layer(l, e.to_string()))?;
            let ad = &layer.adapter;
            let (criterion_residual, predicted_residual) = match ad.zeta {
                Some(zeta) => (
                    Some(criterion(&CriterionInput { grad, a: &ad.a, b: &ad.b, eta: ad.eta, zeta })?),
                    Some(predicted_optimum(&f.s, ad.rank, zeta)),
                ),
                None => (None, None),
            };
            reports[l] = Some(LayerInitReport {
                layer: l,
                d_in: layer.d_in(),
                d_out: layer.d_out(),
                r: ad.rank,
                eta: ad.eta,
                gamma: ad.gamma,
                zeta: ad.zeta,
                singular_values: f.s.iter().take(4 * ad.rank).copied().collect(),
                coverage_2r: coverage(&f.s, 2 * ad.rank)?,
                criterion_residual,
                predicted_residual,
            });
            adapted[l] = Some(layer);
            Ok(())
        };
        match cfg.micro_batch_size {
            None => {
                let stats = backward_streaming(net.forward(&x, &t)?, |l, g| build(l, &g.weight))?;
                peak_live = stats.peak_live;
            }
            Some(b) => {
                // The accumulated estimate needs every layer's buffer until the
                // last micro-batch, so the SVDs run after accumulation.
                let snap = estimate_gradients_accumulated(net, &x, &t, b)?;
                peak_live = 1;
                for l in (0..net.num_layers()).rev() {
                    build(l, snap.weight(l))?;
                }
            }
        }
    } else {
        for l in 0..net.num_layers() {
            if !targets[l] {
                continue;
            }
            let layer = initialize(dense(l), &cfg.scheme_for(kind, l), None).map_err(|e| Error::layer(l, e.to_string()))?;
            let ad = &layer.adapter;
            reports[l] = Some(LayerInitReport {
                layer: l,
                d_in: layer.d_in(),
                d_out: layer.d_out(),
                r: ad.rank,
                eta: ad.eta,
                gamma: ad.gamma,
                zeta: ad.zeta,
                singular_values: Vec::new(),
                coverage_2r: 0.0,
                criterion_residual: None,
                predicted_residual: None,
            });
            adapted[l] = Some(layer);
        }
    }

    let layers =
        net.layers().iter().zip(adapted).map(|(orig, new)| new.map(Layer::Adapted).unwrap_or_else(|| orig.clone())).collect();
    let out = Network::from_layers(net.spec().clone(), layers)?;
    let report = InitReport {
        scheme: kind,
        sampled_indices,
        skipped_layers: (0..net.num_layers()).filter(|&l| !targets[l]).collect(),
        layers: reports.into_iter().flatten().collect(),
        peak_live,
    };
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random::gaussian_matrix;
    use crate::nn::{backward, Activation, LinearLayer, LossKind, NetworkSpec};

    fn net(dims: &[usize], seed: u64) -> Network {
        Network::new(NetworkSpec {
            layer_dims: dims.to_vec(),
            activation: Activation::Tanh,
            loss: LossKind::Mse,
            init_seed: seed,
            bias: true,
        })
        .unwrap()
    }

    fn data(d_in: usize, d_out: usize, n: usize, seed: u64) -> (Matrix, Matrix) {
        let mut rng = seeded_rng(seed);
        (gaussian_matrix(&mut rng, d_in, n, 1.0), gaussian_matrix(&mut rng, d_out, n, 1.0))
    }

    #[test]
    fn single_layer_closed_form() {
        let w = gaussian_matrix(&mut seeded_rng(1), 3, 4, 1.0);
        let spec = NetworkSpec {
            layer_dims: vec![4, 3],
            activation: Activation::Identity,
            loss: LossKind::Mse,
            init_seed: 0,
            bias: false,
        };
        let net = Network::from_layers(spec, vec![Layer::Dense(LinearLayer::new(w.clone(), None).unwrap())]).unwrap();
        let (x, t) = data(4, 3, 5, 2);
        let g = estimate_gradients(&net, &x, &t).unwrap();
        let expected = w.matmul(&x).unwrap().sub(&t).unwrap().matmul_t(&x).unwrap().scale(1.0 / 5.0);
        assert!(g.weight(0).max_abs_diff(&expected).unwrap() < 1e-14);
    }

    #[test]
    fn streaming_estimate_equals_snapshot() {
        let n = net(&[6, 5, 5, 4], 3);
        let (x, t) = data(6, 4, 7, 4);
        let a = estimate_gradients(&n, &x, &t).unwrap();
        let b = backward(n.forward(&x, &t).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn accumulation_matches_full_batch() {
        let n = net(&[6, 5, 4], 5);
        let (x, t) = data(6, 4, 8, 6);
        let full = estimate_gradients(&n, &x, &t).unwrap();
        assert_eq!(estimate_gradients_accumulated(&n, &x, &t, 8).unwrap(), full);
        for b in [1, 2, 4] {
            let acc = estimate_gradients_accumulated(&n, &x, &t, b).unwrap();
            for (p, q) in acc.layers.iter().zip(&full.layers) {
                assert!(p.weight.max_abs_diff(&q.weight).unwrap() <= 1e-12);
            }
        }
        assert!(estimate_gradients_accumulated(&n, &x, &t, 3).is_err());
    }

    #[test]
    fn lora_ga_preserves_output_and_reports_tail() {
        let n = net(&[8, 8, 6], 7);
        let (x, t) = data(8, 6, 20, 8);
        let cfg = GaInitConfig { rank: 2, ..GaInitConfig::default() };
        let (adapted, report) = lora_ga_initialize(&n, &cfg, &x, &t).unwrap();
        assert!(adapted.predict(&x).unwrap().max_abs_diff(&n.predict(&x).unwrap()).unwrap() <= 1e-10);
        assert_eq!(report.peak_live, 1);
        assert_eq!(report.sampled_indices.len(), 8);
        for l in &report.layers {
            let (c, p) = (l.criterion_residual.unwrap(), l.predicted_residual.unwrap());
            assert!((c - p).abs() <= 1e-9 * p.max(1e-300), "{c} vs {p}");
        }
    }

    #[test]
    fn too_small_layer_is_named() {
        let n = net(&[8, 8, 3], 1);
        let (x, t) = data(8, 3, 8, 2);
        let err = lora_ga_initialize(&n, &GaInitConfig { rank: 2, ..Default::default() }, &x, &t).unwrap_err();
        assert!(err.to_string().contains("layer 1"), "{err}");
        let cfg = GaInitConfig { rank: 2, exclude_layers: vec![1], ..Default::default() };
        let (adapted, report) = lora_ga_initialize(&n, &cfg, &x, &t).unwrap();
        assert_eq!(report.skipped_layers, vec![1]);
        assert!(adapted.layers()[1].as_adapted().is_none());
    }
}
