//! JSON network checkpoints.
//!
//! ```json
//! {
//!   "format": "soed-mlp",
//!   "version": 1,
//!   "role": "policy",
//!   "encoder": { "horizon": 2, "design_dim": 1, "obs_dim": 1, "include_design": false, "batch_mode": false },
//!   "layer_sizes": [4, 80, 80, 1],
//!   "activation": "relu",
//!   "layers": [ { "weight": [...], "bias": [...] }, ... ]
//! }
//! ```
//!
//! Weights are row-major `out × in`. Hidden layers use ReLU and the output
//! layer is linear.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::encode::EncoderSpec;
use super::mlp::{Dense, Mlp};
use crate::error::{Error, Result};

pub const FORMAT: &str = "soed-mlp";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub role: String,
    pub encoder: EncoderSpec,
    pub layer_sizes: Vec<usize>,
    pub activation: String,
    pub layers: Vec<LayerRecord>,
}

/// Row-major layer records of a network.
pub fn encode_layers(net: &Mlp) -> Vec<LayerRecord> {
    net.layers()
        .iter()
        .map(|l| LayerRecord {
            weight: l.weight.iter().copied().collect(),
            bias: l.bias.to_vec(),
        })
        .collect()
}

/// Rebuilds a network from layer sizes and records.
pub fn decode_layers(layer_sizes: &[usize], records: &[LayerRecord]) -> Result<Mlp> {
    if layer_sizes.len() != records.len() + 1 {
        return Err(Error::ShapeMismatch("layer count disagrees with layer_sizes".into()));
    }
    let layers = records
        .iter()
        .zip(layer_sizes.windows(2))
        .map(|(rec, w)| {
            let weight = Array2::from_shape_vec((w[1], w[0]), rec.weight.clone())
                .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
            if rec.bias.len() != w[1] {
                return Err(Error::ShapeMismatch("bias length".into()));
            }
            Ok(Dense {
                weight,
                bias: Array1::from(rec.bias.clone()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Mlp::from_layers(layers)
}

impl Checkpoint {
    pub fn new(role: &str, encoder: EncoderSpec, net: &Mlp) -> Self {
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            role: role.to_string(),
            encoder,
            layer_sizes: net.layer_sizes(),
            activation: "relu".to_string(),
            layers: encode_layers(net),
        }
    }

    pub fn to_mlp(&self) -> Result<Mlp> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        decode_layers(&self.layer_sizes, &self.layers)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}
