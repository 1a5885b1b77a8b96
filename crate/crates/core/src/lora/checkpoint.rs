//! Adapter checkpoints: `LGA1` matrices for the current and initial factors,
//! the frozen weight and optional bias, plus an `adapter.json` manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::io::{load_lga1, save_lga1};
use crate::linalg::Matrix;
use crate::lora::{AdaptedLayer, LoraAdapter, SchemeKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterManifest {
    pub rank: usize,
    pub alpha: f64,
    pub eta: f64,
    pub gamma: Option<f64>,
    #[serde(default)]
    pub zeta: Option<f64>,
    pub scheme: SchemeKind,
    pub seed: u64,
    pub has_bias: bool,
}

pub fn save_adapted_layer(layer: &AdaptedLayer, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let ad = &layer.adapter;
    save_lga1(layer.w_frozen(), dir.join("w_frozen.lga1"))?;
    save_lga1(&ad.a, dir.join("a.lga1"))?;
    save_lga1(&ad.b, dir.join("b.lga1"))?;
    save_lga1(layer.a_init(), dir.join("a_init.lga1"))?;
    save_lga1(layer.b_init(), dir.join("b_init.lga1"))?;
    if let Some(bias) = &layer.bias {
        save_lga1(&Matrix::from_vec(bias.len(), 1, bias.clone())?, dir.join("bias.lga1"))?;
    }
    let manifest = AdapterManifest {
        rank: ad.rank,
        alpha: ad.alpha,
        eta: ad.eta,
        gamma: ad.gamma,
        zeta: ad.zeta,
        scheme: ad.scheme,
        seed: ad.seed,
        has_bias: layer.bias.is_some(),
    };
    fs::write(dir.join("adapter.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_adapted_layer(dir: impl AsRef<Path>) -> Result<AdaptedLayer> {
    let dir = dir.as_ref();
    let manifest: AdapterManifest = serde_json::from_str(&fs::read_to_string(dir.join("adapter.json"))?)?;
    let bias = if manifest.has_bias {
        let b = load_lga1(dir.join("bias.lga1"))?;
        if b.cols() != 1 {
            return Err(Error::Format("bias must be a column vector".into()));
        }
        Some(b.into_vec())
    } else {
        None
    };
    let adapter = LoraAdapter {
        a: load_lga1(dir.join("a.lga1"))?,
        b: load_lga1(dir.join("b.lga1"))?,
        rank: manifest.rank,
        alpha: manifest.alpha,
        eta: manifest.eta,
        gamma: manifest.gamma,
        zeta: manifest.zeta,
        scheme: manifest.scheme,
        seed: manifest.seed,
    };
    AdaptedLayer::from_parts(
        load_lga1(dir.join("w_frozen.lga1"))?,
        bias,
        adapter,
        load_lga1(dir.join("a_init.lga1"))?,
        load_lga1(dir.join("b_init.lga1"))?,
    )
}
