//! Network weights on disk: a directory holding `manifest.json` and one
//! sub-directory per layer. Dense layers store `w.lga1` (and `bias.lga1`);
//! adapted layers use the adapter checkpoint layout.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::io::{load_lga1, save_lga1};
use crate::linalg::Matrix;
use crate::lora::{load_adapted_layer, save_adapted_layer};
use crate::nn::{Activation, Layer, LinearLayer, LossKind, Network, NetworkSpec};

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum LayerKind {
    Dense,
    Adapted,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    layer_dims: Vec<usize>,
    activation: Activation,
    loss: LossKind,
    seed: u64,
    bias: bool,
    layers: Vec<LayerKind>,
}

pub fn save_network(net: &Network, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut kinds = Vec::with_capacity(net.num_layers());
    for (l, layer) in net.layers().iter().enumerate() {
        let sub = dir.join(format!("layer_{l:03}"));
        match layer {
            Layer::Dense(d) => {
                fs::create_dir_all(&sub)?;
                save_lga1(&d.w, sub.join("w.lga1"))?;
                if let Some(b) = &d.bias {
                    save_lga1(&Matrix::from_vec(b.len(), 1, b.clone())?, sub.join("bias.lga1"))?;
                }
                kinds.push(LayerKind::Dense);
            }
            Layer::Adapted(a) => {
                save_adapted_layer(a, &sub)?;
                kinds.push(LayerKind::Adapted);
            }
        }
    }
    let spec = net.spec();
    let manifest = Manifest {
        layer_dims: spec.layer_dims.clone(),
        activation: spec.activation,
        loss: spec.loss,
        seed: spec.init_seed,
        bias: spec.bias,
        layers: kinds,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_network(dir: impl AsRef<Path>) -> Result<Network> {
    let dir = dir.as_ref();
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for (l, kind) in manifest.layers.iter().enumerate() {
        let sub = dir.join(format!("layer_{l:03}"));
        layers.push(match kind {
            LayerKind::Dense => {
                let w = load_lga1(sub.join("w.lga1"))?;
                let bias_path = sub.join("bias.lga1");
                let bias = if bias_path.exists() {
                    let b = load_lga1(bias_path)?;
                    if b.cols() != 1 {
                        return Err(Error::Format(format!("layer {l}: bias must be a column vector")));
                    }
                    Some(b.into_vec())
                } else {
                    None
                };
                Layer::Dense(LinearLayer::new(w, bias)?)
            }
            LayerKind::Adapted => Layer::Adapted(load_adapted_layer(&sub)?),
        });
    }
    let spec = NetworkSpec {
        layer_dims: manifest.layer_dims,
        activation: manifest.activation,
        loss: manifest.loss,
        init_seed: manifest.seed,
        bias: manifest.bias,
    };
    Network::from_layers(spec, layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn network_directory_round_trip() {
        let net = Network::new(NetworkSpec {
            layer_dims: vec![5, 4, 3],
            activation: Activation::Tanh,
            loss: LossKind::Mse,
            init_seed: 17,
            bias: true,
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_network(&net, dir.path()).unwrap();
        let back = load_network(dir.path()).unwrap();
        assert_eq!(back.spec(), net.spec());
        for (a, b) in back.layers().iter().zip(net.layers()) {
            assert_eq!(a.effective_weight(), b.effective_weight());
            assert_eq!(a.bias(), b.bias());
        }
    }
}
