//! Self-describing JSON network checkpoints.
//!
//! Field layout (documented here and in the README):
//! - `layer_dims`: input → hidden widths → output,
//! - `activation`: hidden activation tag (`"silu"`),
//! - `params`: all parameters flattened in layer order; within each layer
//!   weights row-major, then biases, then (noise-conditional networks only)
//!   the embedding injection map row-major,
//! - `embed_frequencies`: fixed Fourier frequencies, present iff the network
//!   is noise-conditional.
//!
//! JSON floats round-trip exactly, so a reloaded network is bit-identical.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::network::{DenseLayer, ScoreNetwork};
use super::TimeEmbedding;

#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub layer_dims: Vec<usize>,
    pub activation: String,
    pub params: Vec<f64>,
    pub embed_frequencies: Option<Vec<f64>>,
}

impl Checkpoint {
    pub fn from_network(net: &ScoreNetwork) -> Self {
        let mut params = Vec::with_capacity(net.param_count());
        for layer in net.layers() {
            params.extend(layer.weights.iter());
            params.extend(layer.biases.iter());
            if let Some(map) = &layer.embed_map {
                params.extend(map.iter());
            }
        }
        Checkpoint {
            layer_dims: net.layer_dims().to_vec(),
            activation: net.activation().tag().to_string(),
            params,
            embed_frequencies: net
                .time_embed()
                .map(|e| e.frequencies().to_vec()),
        }
    }

    pub fn into_network(self) -> Result<ScoreNetwork> {
        if self.activation != "silu" {
            return Err(Error::config(format!(
                "unsupported activation tag '{}'",
                self.activation
            )));
        }
        let embed = self
            .embed_frequencies
            .map(|f| TimeEmbedding::from_frequencies(Array1::from_vec(f)))
            .transpose()?;
        let embed_dim = embed.as_ref().map(|e| e.output_dim());
        let dims = &self.layer_dims;
        if dims.len() < 2 {
            return Err(Error::config("checkpoint has too few layer dims"));
        }
        let n_layers = dims.len() - 1;
        let mut cursor = 0usize;
        let mut take = |len: usize| -> Result<&[f64]> {
            let end = cursor + len;
            let slice = self
                .params
                .get(cursor..end)
                .ok_or_else(|| Error::config("checkpoint params truncated"))?;
            cursor = end;
            Ok(slice)
        };
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let weights =
                Array2::from_shape_vec((fan_out, fan_in), take(fan_out * fan_in)?.to_vec())
                    .expect("shape matches slice length");
            let biases = Array1::from_vec(take(fan_out)?.to_vec());
            let embed_map = match (embed_dim, l < n_layers - 1) {
                (Some(ed), true) => Some(
                    Array2::from_shape_vec((fan_out, ed), take(fan_out * ed)?.to_vec())
                        .expect("shape matches slice length"),
                ),
                _ => None,
            };
            layers.push(DenseLayer {
                weights,
                biases,
                embed_map,
            });
        }
        if cursor != self.params.len() {
            return Err(Error::config(format!(
                "checkpoint has {} trailing parameters",
                self.params.len() - cursor
            )));
        }
        ScoreNetwork::from_parts(self.layer_dims, layers, embed)
    }
}

pub fn save_checkpoint(net: &ScoreNetwork, path: &Path) -> Result<()> {
    let json = serde_json::to_string(&Checkpoint::from_network(net))
        .map_err(|e| Error::numeric(format!("checkpoint serialization failed: {e}")))?;
    fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_checkpoint(path: &Path) -> Result<ScoreNetwork> {
    let data = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let ckpt: Checkpoint = serde_json::from_str(&data)
        .map_err(|e| Error::config(format!("bad checkpoint {}: {e}", path.display())))?;
    ckpt.into_network()
}
