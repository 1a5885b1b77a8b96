//! Low-rank adapters `W' = W_frozen + η B A` and the five ablation
//! initializations (vanilla, Gaussian, Gaussian + stable output, gradient
//! approximation, LoRA-GA).

mod checkpoint;
mod scheme;

use crate::error::{Error, Result};
use crate::linalg::random::{gaussian_matrix, seeded_rng, uniform_matrix};
use crate::linalg::{svd, Matrix, SvdFactors};
use crate::nn::{add_bias, LinearLayer};

pub use checkpoint::{load_adapted_layer, save_adapted_layer, AdapterManifest};
pub use scheme::{compute_scaling, IndexPartition, InitScheme, ScalingConstants, SchemeKind};

#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    /// `r × d_in`
    pub a: Matrix,
    /// `d_out × r`
    pub b: Matrix,
    pub rank: usize,
    pub alpha: f64,
    pub eta: f64,
    pub gamma: Option<f64>,
    /// Only set for schemes whose construction targets a specific `ζ`.
    pub zeta: Option<f64>,
    pub scheme: SchemeKind,
    pub seed: u64,
}

impl LoraAdapter {
    /// `η B A`
    pub fn delta(&self) -> Matrix {
        self.b.matmul(&self.a).expect("adapter factors chain by construction").scale(self.eta)
    }
}

/// A frozen weight plus adapter. The initial factors are kept next to the
/// current ones so checkpoints can store both.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedLayer {
    w_frozen: Matrix,
    pub bias: Option<Vec<f64>>,
    pub adapter: LoraAdapter,
    a_init: Matrix,
    b_init: Matrix,
}

impl AdaptedLayer {
    pub(crate) fn from_parts(
        w_frozen: Matrix,
        bias: Option<Vec<f64>>,
        adapter: LoraAdapter,
        a_init: Matrix,
        b_init: Matrix,
    ) -> Result<Self> {
        let (d_out, d_in) = w_frozen.shape();
        let r = adapter.rank;
        for (name, m, shape) in [
            ("A", &adapter.a, (r, d_in)),
            ("B", &adapter.b, (d_out, r)),
            ("A_init", &a_init, (r, d_in)),
            ("B_init", &b_init, (d_out, r)),
        ] {
            if m.shape() != shape {
                return Err(Error::invalid(format!("{name} is {:?}, expected {shape:?}", m.shape())));
            }
        }
        if adapter.eta.is_nan() || adapter.eta <= 0.0 {
            return Err(Error::invalid("eta must be positive"));
        }
        Ok(Self { w_frozen, bias, adapter, a_init, b_init })
    }

    pub fn d_in(&self) -> usize {
        self.w_frozen.cols()
    }

    pub fn d_out(&self) -> usize {
        self.w_frozen.rows()
    }

    pub fn w_frozen(&self) -> &Matrix {
        &self.w_frozen
    }

    pub fn a_init(&self) -> &Matrix {
        &self.a_init
    }

    pub fn b_init(&self) -> &Matrix {
        &self.b_init
    }

    /// `W_frozen + η B A`
    pub fn effective_weight(&self) -> Matrix {
        self.w_frozen.add(&self.adapter.delta()).expect("shapes checked at construction")
    }

    /// `W_frozen x + η B (A x)` (+ bias), never forming `B A`.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut y = self.w_frozen.matmul(x)?;
        let ax = self.adapter.a.matmul(x)?;
        let bax = self.adapter.b.matmul(&ax)?;
        y.axpy(self.adapter.eta, &bax)?;
        add_bias(&mut y, self.bias.as_deref());
        Ok(y)
    }

    /// `∂ℓ/∂x = W_frozenᵀ δ + η Aᵀ (Bᵀ δ)`
    pub(crate) fn input_gradient(&self, delta: &Matrix) -> Result<Matrix> {
        let mut g = self.w_frozen.t_matmul(delta)?;
        let btd = self.adapter.b.t_matmul(delta)?;
        let through = self.adapter.a.t_matmul(&btd)?;
        g.axpy(self.adapter.eta, &through)?;
        Ok(g)
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut Matrix, Option<&mut Vec<f64>>, &mut Matrix, &mut Matrix) {
        (&mut self.w_frozen, self.bias.as_mut(), &mut self.adapter.a, &mut self.adapter.b)
    }
}

/// Same as [`AdaptedLayer::forward`].
pub fn adapted_forward(layer: &AdaptedLayer, x: &Matrix) -> Result<Matrix> {
    layer.forward(x)
}

/// Gradients of the adapter factors and of the effective weight, given the
/// upstream gradient `δ = ∂ℓ/∂y` (already carrying the batch-mean factor)
/// and the layer input `x`. Returns `(∇A, ∇B, ∇W')`.
///
/// `∇A` and `∇B` are obtained by backpropagating through the factored path
/// `y = W_frozen x + η B (A x)`; they equal `η Bᵀ ∇W'` and `η ∇W' Aᵀ`.
pub fn adapter_gradients(layer: &AdaptedLayer, upstream: &Matrix, x: &Matrix) -> Result<(Matrix, Matrix, Matrix)> {
    let (d_out, d_in) = layer.w_frozen.shape();
    if upstream.rows() != d_out || x.rows() != d_in || upstream.cols() != x.cols() {
        return Err(Error::Shape { op: "adapter_gradients", expected: (d_out, d_in), got: (upstream.rows(), x.rows()) });
    }
    let eta = layer.adapter.eta;
    let grad_w = upstream.matmul_t(x)?;
    let ax = layer.adapter.a.matmul(x)?;
    let grad_b = upstream.matmul_t(&ax)?.scale(eta);
    let bt_delta = layer.adapter.b.t_matmul(upstream)?;
    let grad_a = bt_delta.matmul_t(x)?.scale(eta);
    Ok((grad_a, grad_b, grad_w))
}

/// Attaches an adapter to `layer` according to `scheme`, adjusting the frozen
/// weight so the effective weight equals the original one.
///
/// `grad` is the full-fine-tune gradient `∇W` for the layer and is required by
/// the gradient-based kinds.
pub fn initialize(layer: &LinearLayer, scheme: &InitScheme, grad: Option<&Matrix>) -> Result<AdaptedLayer> {
    let factors = if scheme.kind.needs_gradient() {
        let g = grad.ok_or_else(|| Error::invalid(format!("{} needs the layer gradient", scheme.kind)))?;
        if g.shape() != layer.w.shape() {
            return Err(Error::Shape { op: "initialize", expected: layer.w.shape(), got: g.shape() });
        }
        Some(svd(g)?)
    } else {
        None
    };
    build(layer, scheme, factors.as_ref())
}

/// Same as [`initialize`] for callers that already hold the SVD of the
/// layer gradient.
pub fn initialize_from_svd(layer: &LinearLayer, scheme: &InitScheme, grad_svd: &SvdFactors) -> Result<AdaptedLayer> {
    if (grad_svd.u.rows(), grad_svd.v.rows()) != layer.w.shape() {
        return Err(Error::Shape {
            op: "initialize_from_svd",
            expected: layer.w.shape(),
            got: (grad_svd.u.rows(), grad_svd.v.rows()),
        });
    }
    build(layer, scheme, Some(grad_svd))
}

fn build(layer: &LinearLayer, scheme: &InitScheme, factors: Option<&SvdFactors>) -> Result<AdaptedLayer> {
    scheme.validate()?;
    let (d_out, d_in) = layer.w.shape();
    let r = scheme.rank;
    if 2 * r > d_in.min(d_out) {
        return Err(Error::invalid(format!("rank {r} needs 2r <= min(d_in, d_out) = {}", d_in.min(d_out))));
    }
    let consts = compute_scaling(scheme.kind, scheme.alpha, r, scheme.gamma, d_out)?;
    let mut rng = seeded_rng(scheme.seed);

    let (a, b) = match scheme.kind {
        SchemeKind::Vanilla => {
            let bound = (3.0 / d_in as f64).sqrt();
            (uniform_matrix(&mut rng, r, d_in, bound), Matrix::zeros(d_out, r))
        }
        SchemeKind::Gaussian | SchemeKind::GaussianSo => {
            let a = gaussian_matrix(&mut rng, r, d_in, (1.0 / d_out as f64).sqrt());
            let b = gaussian_matrix(&mut rng, d_out, r, (1.0 / d_in as f64).sqrt());
            (a.scale(consts.factor), b.scale(consts.factor))
        }
        SchemeKind::GradApproxGa | SchemeKind::LoraGa => {
            let f = factors.ok_or_else(|| Error::invalid(format!("{} needs the layer gradient", scheme.kind)))?;
            let partition = scheme.partition(r)?;
            let a = f.v.select_columns(&partition.a_indices()).transpose();
            let b = f.u.select_columns(&partition.b_indices(r));
            (a.scale(consts.factor), b.scale(consts.factor))
        }
    };

    let delta = b.matmul(&a)?.scale(consts.eta);
    let w_frozen = layer.w.sub(&delta)?;
    let adapter = LoraAdapter {
        a: a.clone(),
        b: b.clone(),
        rank: r,
        alpha: scheme.alpha,
        eta: consts.eta,
        gamma: scheme.gamma,
        zeta: consts.zeta,
        scheme: scheme.kind,
        seed: scheme.seed,
    };
    AdaptedLayer::from_parts(w_frozen, layer.bias.clone(), adapter, a, b)
}
