//! Feed-forward networks with hand-written backpropagation.
//!
//! Samples are the *columns* of a batch matrix, so a layer acts as `y = W x`
//! on each column. Losses are reduced by the mean over the batch.

mod backward;
mod persist;

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::random::{seeded_rng, uniform_matrix};
use crate::linalg::Matrix;
use crate::lora::AdaptedLayer;

pub use backward::{backward, backward_streaming, AdapterGradient, GradientSnapshot, LayerGradient, SweepStats};
pub use persist::{load_network, save_network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: &Matrix) -> Matrix {
        match self {
            Activation::Relu => z.map(|v| v.max(0.0)),
            Activation::Tanh => z.map(f64::tanh),
            Activation::Identity => z.clone(),
        }
    }

    /// Derivative evaluated at the pre-activation `z`.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `½‖y − t‖²` per sample.
    Mse,
    /// Softmax over the output rows, cross-entropy against (one-hot or
    /// probability) target columns.
    SoftmaxCrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub loss: LossKind,
    pub init_seed: u64,
    #[serde(default)]
    pub bias: bool,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(Error::invalid("a network needs at least one linear layer (two dims)"));
        }
        if let Some(pos) = self.layer_dims.iter().position(|&d| d == 0) {
            return Err(Error::invalid(format!("layer dim {pos} is zero")));
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    /// `d_out × d_in`
    pub w: Matrix,
    pub bias: Option<Vec<f64>>,
}

impl LinearLayer {
    pub fn new(w: Matrix, bias: Option<Vec<f64>>) -> Result<Self> {
        if let Some(b) = &bias {
            if b.len() != w.rows() {
                return Err(Error::invalid(format!("bias length {} does not match d_out {}", b.len(), w.rows())));
            }
        }
        Ok(Self { w, bias })
    }

    pub fn d_in(&self) -> usize {
        self.w.cols()
    }

    pub fn d_out(&self) -> usize {
        self.w.rows()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut z = self.w.matmul(x)?;
        add_bias(&mut z, self.bias.as_deref());
        Ok(z)
    }
}

pub(crate) fn add_bias(z: &mut Matrix, bias: Option<&[f64]>) {
    if let Some(b) = bias {
        let cols = z.cols();
        for (row, &bi) in z.as_mut_slice().chunks_mut(cols).zip(b) {
            row.iter_mut().for_each(|v| *v += bi);
        }
    }
}

/// One linear layer of a network, either a plain trainable weight or a
/// frozen weight carrying a low-rank adapter.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Layer {
    Dense(LinearLayer),
    Adapted(AdaptedLayer),
}

impl Layer {
    pub fn d_in(&self) -> usize {
        match self {
            Layer::Dense(l) => l.d_in(),
            Layer::Adapted(l) => l.d_in(),
        }
    }

    pub fn d_out(&self) -> usize {
        match self {
            Layer::Dense(l) => l.d_out(),
            Layer::Adapted(l) => l.d_out(),
        }
    }

    pub fn bias(&self) -> Option<&[f64]> {
        match self {
            Layer::Dense(l) => l.bias.as_deref(),
            Layer::Adapted(l) => l.bias.as_deref(),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        match self {
            Layer::Dense(l) => l.forward(x),
            Layer::Adapted(l) => l.forward(x),
        }
    }

    /// The weight the layer currently applies (`W` or `W_frozen + η B A`).
    pub fn effective_weight(&self) -> Matrix {
        match self {
            Layer::Dense(l) => l.w.clone(),
            Layer::Adapted(l) => l.effective_weight(),
        }
    }

    pub fn as_adapted(&self) -> Option<&AdaptedLayer> {
        match self {
            Layer::Adapted(l) => Some(l),
            Layer::Dense(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    layers: Vec<Layer>,
}

/// Which parameters an optimizer may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainableSet {
    AdaptersOnly,
    Full,
}

impl Network {
    /// Dense network with Kaiming-uniform weights `U(−√(3/d_in), √(3/d_in))`
    /// and zero biases (when enabled).
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = seeded_rng(spec.init_seed);
        let layers = spec
            .layer_dims
            .windows(2)
            .map(|d| {
                let (d_in, d_out) = (d[0], d[1]);
                let w = uniform_matrix(&mut rng, d_out, d_in, (3.0 / d_in as f64).sqrt());
                let bias = spec.bias.then(|| vec![0.0; d_out]);
                Layer::Dense(LinearLayer { w, bias })
            })
            .collect();
        Ok(Self { spec, layers })
    }

    /// Assembles a network from explicit layers; dimensions must chain.
    pub fn from_layers(spec: NetworkSpec, layers: Vec<Layer>) -> Result<Self> {
        spec.validate()?;
        if layers.len() != spec.num_layers() {
            return Err(Error::invalid(format!("spec describes {} layers, got {}", spec.num_layers(), layers.len())));
        }
        for (l, layer) in layers.iter().enumerate() {
            let expected = (spec.layer_dims[l + 1], spec.layer_dims[l]);
            if (layer.d_out(), layer.d_in()) != expected {
                return Err(Error::layer(
                    l,
                    format!("weight is {}x{}, spec expects {}x{}", layer.d_out(), layer.d_in(), expected.0, expected.1),
                ));
            }
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.spec.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.spec.layer_dims.last().expect("validated non-empty")
    }

    pub fn activation(&self) -> Activation {
        self.spec.activation
    }

    pub fn loss_kind(&self) -> LossKind {
        self.spec.loss
    }

    /// Network output without retaining intermediates.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h).map_err(|e| Error::layer(l, e.to_string()))?;
            h = if l < last { self.spec.activation.apply(&z) } else { z };
        }
        Ok(h)
    }

    /// Forward pass retaining what backward needs. The trace borrows the
    /// network, so weights cannot change while a trace is alive.
    pub fn forward(&self, x: &Matrix, targets: &Matrix) -> Result<ForwardTrace<'_>> {
        self.check_input(x)?;
        let batch = x.cols();
        if targets.shape() != (self.output_dim(), batch) {
            return Err(Error::Shape { op: "targets", expected: (self.output_dim(), batch), got: targets.shape() });
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h).map_err(|e| Error::layer(l, e.to_string()))?;
            let next = if l < last { self.spec.activation.apply(&z) } else { z.clone() };
            inputs.push(h);
            pre_activations.push(z);
            h = next;
        }
        let (loss, output_grad) = loss_and_grad(self.spec.loss, &h, targets)?;
        Ok(ForwardTrace { net: self, inputs, pre_activations, output: h, loss, output_grad })
    }

    /// Mean batch loss.
    pub fn loss(&self, x: &Matrix, targets: &Matrix) -> Result<f64> {
        let y = self.predict(x)?;
        if targets.shape() != y.shape() {
            return Err(Error::Shape { op: "targets", expected: y.shape(), got: targets.shape() });
        }
        Ok(loss_and_grad(self.spec.loss, &y, targets)?.0)
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() == 0 {
            return Err(Error::invalid("empty batch"));
        }
        if x.rows() != self.input_dim() {
            return Err(Error::layer(0, format!("input has {} features, layer expects d_in = {}", x.rows(), self.input_dim())));
        }
        Ok(())
    }

    /// Mutable views of the trainable parameters, in a fixed order that
    /// [`GradientSnapshot::trainable_grads`] mirrors.
    pub fn trainable_params_mut(&mut self, set: TrainableSet) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.layers {
            match (layer, set) {
                (Layer::Dense(l), TrainableSet::Full) => {
                    out.push(l.w.as_mut_slice());
                    if let Some(b) = &mut l.bias {
                        out.push(b.as_mut_slice());
                    }
                }
                (Layer::Dense(_), TrainableSet::AdaptersOnly) => {}
                (Layer::Adapted(l), TrainableSet::Full) => {
                    let (w, bias, a, b) = l.parts_mut();
                    out.push(w.as_mut_slice());
                    if let Some(bias) = bias {
                        out.push(bias.as_mut_slice());
                    }
                    out.push(a.as_mut_slice());
                    out.push(b.as_mut_slice());
                }
                (Layer::Adapted(l), TrainableSet::AdaptersOnly) => {
                    let (_, _, a, b) = l.parts_mut();
                    out.push(a.as_mut_slice());
                    out.push(b.as_mut_slice());
                }
            }
        }
        out
    }
}

/// Everything backward needs from one forward pass.
#[derive(Debug)]
pub struct ForwardTrace<'a> {
    pub(crate) net: &'a Network,
    /// Input `x_l` of every layer (`d_in × batch`).
    pub inputs: Vec<Matrix>,
    /// Pre-activation output `z_l` of every layer (`d_out × batch`).
    pub pre_activations: Vec<Matrix>,
    pub output: Matrix,
    pub loss: f64,
    /// `∂ℓ/∂output` for the mean batch loss.
    pub(crate) output_grad: Matrix,
}

impl ForwardTrace<'_> {
    pub fn batch_size(&self) -> usize {
        self.output.cols()
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Mean loss over the batch columns and its gradient with respect to `y`.
fn loss_and_grad(kind: LossKind, y: &Matrix, t: &Matrix) -> Result<(f64, Matrix)> {
    let n = y.cols() as f64;
    let (loss, grad) = match kind {
        LossKind::Mse => {
            let diff = y.sub(t)?;
            let loss = 0.5 * diff.as_slice().iter().map(|d| d * d).sum::<f64>() / n;
            (loss, diff.scale(1.0 / n))
        }
        LossKind::SoftmaxCrossEntropy => {
            let (classes, batch) = y.shape();
            let mut grad = Matrix::zeros(classes, batch);
            let mut total = 0.0;
            for j in 0..batch {
                let col = y.column(j);
                let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + col.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                let mut mass = 0.0;
                for (c, &v) in col.iter().enumerate() {
                    let tc = t[(c, j)];
                    mass += tc;
                    total -= tc * (v - lse);
                    grad[(c, j)] = (v - lse).exp();
                }
                for c in 0..classes {
                    grad[(c, j)] = (grad[(c, j)] * mass - t[(c, j)]) / n;
                }
            }
            (total / n, grad)
        }
    };
    if !loss.is_finite() {
        return Err(Error::invalid(format!("loss is not finite ({loss})")));
    }
    Ok((loss, grad))
}

/// Counts gradient matrices that are alive during a sweep.
#[derive(Debug, Default)]
pub(crate) struct LiveCounter {
    live: Cell<usize>,
    peak: Cell<usize>,
}

impl LiveCounter {
    pub(crate) fn acquire(&self) {
        let now = self.live.get() + 1;
        self.live.set(now);
        if now > self.peak.get() {
            self.peak.set(now);
        }
    }

    pub(crate) fn release(&self) {
        self.live.set(self.live.get() - 1);
    }

    pub(crate) fn live(&self) -> usize {
        self.live.get()
    }

    pub(crate) fn peak(&self) -> usize {
        self.peak.get()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_layer(w: Matrix, loss: LossKind) -> Network {
        let spec = NetworkSpec {
            layer_dims: vec![w.cols(), w.rows()],
            activation: Activation::Identity,
            loss,
            init_seed: 0,
            bias: false,
        };
        Network::from_layers(spec, vec![Layer::Dense(LinearLayer::new(w, None).unwrap())]).unwrap()
    }

    #[test]
    fn perfect_fit_has_zero_loss() {
        let net = single_layer(Matrix::identity(3), LossKind::Mse);
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.5, -1.0], vec![3.0, 0.0]]).unwrap();
        assert_eq!(net.forward(&x, &x).unwrap().loss, 0.0);
    }

    #[test]
    fn mse_closed_form_two_by_two() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let net = single_layer(w, LossKind::Mse);
        // Two samples as columns: (1, 0) and (0, 1); outputs are W's columns.
        let x = Matrix::identity(2);
        let t = Matrix::zeros(2, 2);
        // ½(1² + 3²) and ½(2² + 4²), averaged over two samples.
        let expected = (0.5 * 10.0 + 0.5 * 20.0) / 2.0;
        assert_eq!(net.forward(&x, &t).unwrap().loss, expected);
    }

    #[test]
    fn uniform_logits_give_log_c() {
        let classes = 5;
        let net = single_layer(Matrix::zeros(classes, 3), LossKind::SoftmaxCrossEntropy);
        let x = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let mut t = Matrix::zeros(classes, 1);
        t[(2, 0)] = 1.0;
        let loss = net.forward(&x, &t).unwrap().loss;
        assert!((loss - (classes as f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_names_layer() {
        let spec = NetworkSpec {
            layer_dims: vec![4, 3, 2],
            activation: Activation::Tanh,
            loss: LossKind::Mse,
            init_seed: 1,
            bias: true,
        };
        let net = Network::new(spec).unwrap();
        let err = net.forward(&Matrix::zeros(5, 2), &Matrix::zeros(2, 2)).unwrap_err();
        assert!(matches!(err, Error::Layer { layer: 0, .. }), "{err}");
    }

    #[test]
    fn kaiming_bounds_respected() {
        let spec =
            NetworkSpec { layer_dims: vec![12, 7], activation: Activation::Relu, loss: LossKind::Mse, init_seed: 3, bias: false };
        let net = Network::new(spec).unwrap();
        let bound = (3.0 / 12.0_f64).sqrt();
        assert!(net.layers()[0].effective_weight().max_abs() <= bound);
    }

    #[test]
    fn spec_rejects_degenerate_dims() {
        let mut spec =
            NetworkSpec { layer_dims: vec![3], activation: Activation::Relu, loss: LossKind::Mse, init_seed: 0, bias: false };
        assert!(spec.validate().is_err());
        spec.layer_dims = vec![3, 0];
        assert!(spec.validate().is_err());
    }
}
