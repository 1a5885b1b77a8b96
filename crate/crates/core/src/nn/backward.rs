use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::lora::adapter_gradients;
use crate::nn::{ForwardTrace, Layer, LiveCounter, Network, TrainableSet};

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterGradient {
    /// `∂ℓ/∂A`, `r × d_in`
    pub a: Matrix,
    /// `∂ℓ/∂B`, `d_out × r`
    pub b: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    /// `∂ℓ/∂W` for a dense layer, `∂ℓ/∂W'` of the effective weight for an
    /// adapted one. Same shape as the layer weight.
    pub weight: Matrix,
    pub bias: Option<Vec<f64>>,
    pub adapter: Option<AdapterGradient>,
}

/// Per-layer gradients of the mean batch loss, indexed by layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSnapshot {
    pub layers: Vec<LayerGradient>,
}

impl GradientSnapshot {
    pub fn weight(&self, layer: usize) -> &Matrix {
        &self.layers[layer].weight
    }

    pub fn weights(&self) -> impl Iterator<Item = &Matrix> {
        self.layers.iter().map(|g| &g.weight)
    }

    /// Gradient slices in the order of [`Network::trainable_params_mut`].
    pub fn trainable_grads(&self, set: TrainableSet) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for g in &self.layers {
            match (&g.adapter, set) {
                (None, TrainableSet::Full) => {
                    out.push(g.weight.as_slice());
                    if let Some(b) = &g.bias {
                        out.push(b);
                    }
                }
                (None, TrainableSet::AdaptersOnly) => {}
                (Some(ad), TrainableSet::Full) => {
                    out.push(g.weight.as_slice());
                    if let Some(b) = &g.bias {
                        out.push(b);
                    }
                    out.push(ad.a.as_slice());
                    out.push(ad.b.as_slice());
                }
                (Some(ad), TrainableSet::AdaptersOnly) => {
                    out.push(ad.a.as_slice());
                    out.push(ad.b.as_slice());
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepStats {
    pub visits: usize,
    /// Largest number of per-layer gradient matrices alive at once.
    pub peak_live: usize,
}

/// Gradient for layer `l` given `δ_l = ∂ℓ/∂z_l`, plus `δ_{l-1}` when `l > 0`.
fn layer_step(net: &Network, trace: &ForwardTrace<'_>, l: usize, delta: &Matrix) -> Result<(LayerGradient, Option<Matrix>)> {
    let layer = &net.layers[l];
    let x = &trace.inputs[l];
    let bias = layer.bias().map(|_| {
        let cols = delta.cols();
        delta.as_slice().chunks(cols).map(|row| row.iter().sum()).collect()
    });
    let (weight, adapter, upstream_input) = match layer {
        Layer::Dense(d) => {
            let weight = delta.matmul_t(x)?;
            let up = if l > 0 { Some(d.w.t_matmul(delta)?) } else { None };
            (weight, None, up)
        }
        Layer::Adapted(a) => {
            let (grad_a, grad_b, grad_w) = adapter_gradients(a, delta, x)?;
            let up = if l > 0 { Some(a.input_gradient(delta)?) } else { None };
            (grad_w, Some(AdapterGradient { a: grad_a, b: grad_b }), up)
        }
    };
    let prev_delta = match upstream_input {
        Some(mut g) => {
            let act = net.spec.activation;
            let z = &trace.pre_activations[l - 1];
            for (gv, &zv) in g.as_mut_slice().iter_mut().zip(z.as_slice()) {
                *gv *= act.derivative(zv);
            }
            Some(g)
        }
        None => None,
    };
    Ok((LayerGradient { weight, bias, adapter }, prev_delta))
}

/// Full gradient snapshot. Consumes the trace so it cannot outlive the
/// weights it was recorded against.
pub fn backward(trace: ForwardTrace<'_>) -> Result<GradientSnapshot> {
    let net = trace.net;
    let mut delta = trace.output_grad.clone();
    let mut grads = Vec::with_capacity(net.num_layers());
    for l in (0..net.num_layers()).rev() {
        let (grad, prev) = layer_step(net, &trace, l, &delta)?;
        grads.push(grad);
        if let Some(p) = prev {
            delta = p;
        }
    }
    grads.reverse();
    Ok(GradientSnapshot { layers: grads })
}

/// Visits layers in reverse order (`L-1 … 0`), handing each gradient to
/// `visit` and dropping it before the next layer is computed. The returned
/// stats carry the instrumentation counter's peak.
///
/// An error from `visit` stops the sweep; the gradient being visited is
/// released before the error propagates.
pub fn backward_streaming<F>(trace: ForwardTrace<'_>, mut visit: F) -> Result<SweepStats>
where
    F: FnMut(usize, &LayerGradient) -> Result<()>,
{
    let net = trace.net;
    let counter = LiveCounter::default();
    let mut delta = trace.output_grad.clone();
    let mut visits = 0;
    for l in (0..net.num_layers()).rev() {
        let (grad, prev) = layer_step(net, &trace, l, &delta)?;
        let tracked = Tracked::new(grad, &counter);
        visits += 1;
        visit(l, &tracked.grad)?;
        drop(tracked);
        debug_assert_eq!(counter.live(), 0);
        if let Some(p) = prev {
            delta = p;
        }
    }
    if counter.live() != 0 {
        return Err(Error::invalid("gradient leaked past the streaming sweep"));
    }
    Ok(SweepStats { visits, peak_live: counter.peak() })
}

struct Tracked<'c> {
    grad: LayerGradient,
    counter: &'c LiveCounter,
}

impl<'c> Tracked<'c> {
    fn new(grad: LayerGradient, counter: &'c LiveCounter) -> Self {
        counter.acquire();
        Self { grad, counter }
    }
}

impl Drop for Tracked<'_> {
    fn drop(&mut self) {
        self.counter.release();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random::{gaussian_matrix, seeded_rng};
    use crate::nn::{Activation, LinearLayer, LossKind, NetworkSpec};

    fn net(dims: &[usize], act: Activation, loss: LossKind, seed: u64) -> Network {
        Network::new(NetworkSpec { layer_dims: dims.to_vec(), activation: act, loss, init_seed: seed, bias: true }).unwrap()
    }

    #[test]
    fn single_sample_linear_mse_is_outer_product() {
        let w = Matrix::from_rows(&[vec![1.0, -1.0, 2.0], vec![0.5, 0.0, 1.0]]).unwrap();
        let spec = NetworkSpec {
            layer_dims: vec![3, 2],
            activation: Activation::Identity,
            loss: LossKind::Mse,
            init_seed: 0,
            bias: false,
        };
        let n = Network::from_layers(spec, vec![Layer::Dense(LinearLayer::new(w.clone(), None).unwrap())]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![-1.0]]).unwrap();
        let t = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let y = w.matmul(&x).unwrap();
        let expected = y.sub(&t).unwrap().matmul_t(&x).unwrap();
        let g = backward(n.forward(&x, &t).unwrap()).unwrap();
        assert_eq!(g.weight(0), &expected);
    }

    #[test]
    fn doubling_residual_doubles_gradient() {
        let mut rng = seeded_rng(4);
        let spec = NetworkSpec {
            layer_dims: vec![4, 3],
            activation: Activation::Identity,
            loss: LossKind::Mse,
            init_seed: 0,
            bias: false,
        };
        let w = gaussian_matrix(&mut rng, 3, 4, 1.0);
        let n = Network::from_layers(spec, vec![Layer::Dense(LinearLayer::new(w.clone(), None).unwrap())]).unwrap();
        let x = gaussian_matrix(&mut rng, 4, 5, 1.0);
        let t = gaussian_matrix(&mut rng, 3, 5, 1.0);
        let y = w.matmul(&x).unwrap();
        // t2 = y - 2(y - t) doubles the residual.
        let t2 = y.sub(&y.sub(&t).unwrap().scale(2.0)).unwrap();
        let g1 = backward(n.forward(&x, &t).unwrap()).unwrap();
        let g2 = backward(n.forward(&x, &t2).unwrap()).unwrap();
        let diff = g2.weight(0).sub(&g1.weight(0).scale(2.0)).unwrap();
        assert!(diff.max_abs() < 1e-14);
    }

    #[test]
    fn streaming_matches_snapshot_in_reverse_order() {
        let n = net(&[6, 5, 5, 4, 4, 3], Activation::Tanh, LossKind::Mse, 9);
        let mut rng = seeded_rng(1);
        let x = gaussian_matrix(&mut rng, 6, 7, 1.0);
        let t = gaussian_matrix(&mut rng, 3, 7, 1.0);
        let full = backward(n.forward(&x, &t).unwrap()).unwrap();
        let mut order = Vec::new();
        let stats = backward_streaming(n.forward(&x, &t).unwrap(), |l, g| {
            assert_eq!(g, &full.layers[l]);
            order.push(l);
            Ok(())
        })
        .unwrap();
        assert_eq!(order, vec![4, 3, 2, 1, 0]);
        assert_eq!(stats, SweepStats { visits: 5, peak_live: 1 });
    }

    #[test]
    fn single_layer_streams_once() {
        let n = net(&[3, 2], Activation::Relu, LossKind::Mse, 2);
        let x = Matrix::identity(3);
        let t = Matrix::zeros(2, 3);
        let stats = backward_streaming(n.forward(&x, &t).unwrap(), |_, _| Ok(())).unwrap();
        assert_eq!(stats.visits, 1);
    }

    #[test]
    fn callback_error_aborts_sweep() {
        let n = net(&[3, 3, 3, 2], Activation::Tanh, LossKind::Mse, 2);
        let x = Matrix::identity(3);
        let t = Matrix::zeros(2, 3);
        let mut seen = 0;
        let res = backward_streaming(n.forward(&x, &t).unwrap(), |l, _| {
            seen += 1;
            if l == 1 {
                Err(Error::invalid("stop"))
            } else {
                Ok(())
            }
        });
        assert!(res.is_err());
        assert_eq!(seen, 2);
    }

    #[test]
    fn batch_gradient_is_mean_of_per_sample_gradients() {
        let n = net(&[5, 4, 3], Activation::Tanh, LossKind::SoftmaxCrossEntropy, 8);
        let mut rng = seeded_rng(12);
        let x = gaussian_matrix(&mut rng, 5, 6, 1.0);
        let mut t = Matrix::zeros(3, 6);
        for j in 0..6 {
            t[(j % 3, j)] = 1.0;
        }
        let full = backward(n.forward(&x, &t).unwrap()).unwrap();
        let mut mean: Vec<Matrix> = full.weights().map(|w| Matrix::zeros(w.rows(), w.cols())).collect();
        for j in 0..6 {
            let xj = x.select_columns(&[j]);
            let tj = t.select_columns(&[j]);
            let g = backward(n.forward(&xj, &tj).unwrap()).unwrap();
            for (m, w) in mean.iter_mut().zip(g.weights()) {
                m.axpy(1.0 / 6.0, w).unwrap();
            }
        }
        for (m, w) in mean.iter().zip(full.weights()) {
            assert!(m.max_abs_diff(w).unwrap() < 1e-12);
        }
    }
}
