//! Feedforward score network with reverse-mode gradients.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::Scorer;

use super::TimeEmbedding;

/// Hidden-layer activation; the output layer is always the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Silu,
}

impl Activation {
    pub fn tag(self) -> &'static str {
        match self {
            Activation::Silu => "silu",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Silu => x / (1.0 + (-x).exp()),
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
        }
    }
}

/// One dense layer; weights are `out_dim × in_dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
    /// Learned map from the noise-level embedding into this layer's
    /// pre-activation (`out_dim × 2m`); present on hidden layers of
    /// noise-conditional networks only.
    pub embed_map: Option<Array2<f64>>,
}

/// Fully connected score network `s_θ(y)` or `s_θ(y, t)`.
///
/// `layer_dims` runs input → hidden widths → output; input and output both
/// equal the channel dimension `n`. Hidden layers use SiLU, the output layer
/// is affine. When a [`TimeEmbedding`] is attached, its features are injected
/// additively into every hidden pre-activation through a learned linear map.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreNetwork {
    layer_dims: Vec<usize>,
    layers: Vec<DenseLayer>,
    activation: Activation,
    time_embed: Option<TimeEmbedding>,
}

/// Per-layer gradients; shapes mirror [`DenseLayer`].
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub dw: Array2<f64>,
    pub db: Array1<f64>,
    pub dembed: Option<Array2<f64>>,
}

/// Gradients of a scalar loss with respect to every network parameter.
#[derive(Debug, Clone)]
pub struct NetGrads {
    pub layers: Vec<LayerGrads>,
}

impl NetGrads {
    /// Global L2 norm over all parameter gradients.
    pub fn global_norm(&self) -> f64 {
        let mut sq = 0.0;
        for l in &self.layers {
            sq += l.dw.iter().map(|g| g * g).sum::<f64>();
            sq += l.db.iter().map(|g| g * g).sum::<f64>();
            if let Some(de) = &l.dembed {
                sq += de.iter().map(|g| g * g).sum::<f64>();
            }
        }
        sq.sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.dw.mapv_inplace(|g| g * factor);
            l.db.mapv_inplace(|g| g * factor);
            if let Some(de) = &mut l.dembed {
                de.mapv_inplace(|g| g * factor);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.dw.iter().all(|g| g.is_finite())
                && l.db.iter().all(|g| g.is_finite())
                && l.dembed
                    .as_ref()
                    .is_none_or(|de| de.iter().all(|g| g.is_finite()))
        })
    }
}

/// Activations and pre-activations retained by a training forward pass.
pub struct ForwardCache {
    /// `activations[0]` is the input batch; `activations[L]` the output.
    activations: Vec<Array2<f64>>,
    preacts: Vec<Array2<f64>>,
    embed: Option<Array1<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> ArrayView2<'_, f64> {
        self.activations.last().expect("cache has output").view()
    }
}

/// A scalar loss over a batch of network outputs, with its output gradient.
pub trait BatchLoss {
    fn value(&self, outputs: ArrayView2<'_, f64>) -> f64;
    fn output_grad(&self, outputs: ArrayView2<'_, f64>) -> Array2<f64>;
}

impl ScoreNetwork {
    /// Initialize with uniform `[-a, a]` weights, `a = √(6/(fan_in+fan_out))`,
    /// and zero biases. `embed` attaches a noise-level embedding, making the
    /// network noise-conditional.
    pub fn new(
        layer_dims: &[usize],
        embed: Option<TimeEmbedding>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::input("need at least input and output dims"));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::input("layer dims must be positive"));
        }
        if layer_dims.first() != layer_dims.last() {
            return Err(Error::input(format!(
                "input dim {} must equal output dim {}",
                layer_dims[0],
                layer_dims[layer_dims.len() - 1]
            )));
        }
        let n_layers = layer_dims.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (fan_in, fan_out) = (layer_dims[l], layer_dims[l + 1]);
            let weights = xavier_uniform(fan_out, fan_in, rng);
            let is_hidden = l < n_layers - 1;
            let embed_map = match (&embed, is_hidden) {
                (Some(e), true) => Some(xavier_uniform(fan_out, e.output_dim(), rng)),
                _ => None,
            };
            layers.push(DenseLayer {
                weights,
                biases: Array1::zeros(fan_out),
                embed_map,
            });
        }
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            layers,
            activation: Activation::Silu,
            time_embed: embed,
        })
    }

    /// Rebuild from explicit parts (checkpoint loading).
    pub fn from_parts(
        layer_dims: Vec<usize>,
        layers: Vec<DenseLayer>,
        time_embed: Option<TimeEmbedding>,
    ) -> Result<Self> {
        if layer_dims.len() != layers.len() + 1 {
            return Err(Error::input("layer count does not match dims"));
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.weights.dim() != (layer_dims[l + 1], layer_dims[l])
                || layer.biases.len() != layer_dims[l + 1]
            {
                return Err(Error::input(format!("layer {l} has wrong shape")));
            }
        }
        Ok(Self {
            layer_dims,
            layers,
            activation: Activation::Silu,
            time_embed,
        })
    }

    pub fn dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn time_embed(&self) -> Option<&TimeEmbedding> {
        self.time_embed.as_ref()
    }

    pub fn is_conditional(&self) -> bool {
        self.time_embed.is_some()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                l.weights.len() + l.biases.len() + l.embed_map.as_ref().map_or(0, |e| e.len())
            })
            .sum()
    }

    fn check_inputs(&self, y: ArrayView2<'_, f64>, t: Option<f64>) -> Result<Option<Array1<f64>>> {
        if y.ncols() != self.dim() {
            return Err(Error::input(format!(
                "input has {} columns, network expects {}",
                y.ncols(),
                self.dim()
            )));
        }
        match (&self.time_embed, t) {
            (Some(emb), Some(t)) => Ok(Some(emb.embed(t)?)),
            (None, None) => Ok(None),
            (Some(_), None) => Err(Error::config(
                "noise-conditional network requires a noise level",
            )),
            (None, Some(_)) => Err(Error::config(
                "network is not noise-conditional but a noise level was supplied",
            )),
        }
    }

    fn layer_forward(&self, l: usize, input: &Array2<f64>, embed: Option<&Array1<f64>>) -> Array2<f64> {
        let layer = &self.layers[l];
        let mut z = input.dot(&layer.weights.t());
        z += &layer.biases;
        if let (Some(map), Some(e)) = (&layer.embed_map, embed) {
            let injection = map.dot(e);
            z += &injection;
        }
        z
    }

    /// Batch forward pass: rows of `y` map to rows of the returned score
    /// matrix. Pure: identical arguments give bit-identical results.
    pub fn forward_batch(&self, y: ArrayView2<'_, f64>, t: Option<f64>) -> Result<Array2<f64>> {
        let embed = self.check_inputs(y, t)?;
        let n_layers = self.layers.len();
        let mut a = y.to_owned();
        for l in 0..n_layers {
            let z = self.layer_forward(l, &a, embed.as_ref());
            a = if l < n_layers - 1 {
                z.mapv(|x| self.activation.apply(x))
            } else {
                z
            };
            if !a.iter().all(|v| v.is_finite()) {
                return Err(Error::numeric(format!(
                    "non-finite activation in layer {l}"
                )));
            }
        }
        Ok(a)
    }

    /// Score of a single observation.
    pub fn forward_score(&self, y: &[f64], t: Option<f64>) -> Result<Array1<f64>> {
        let batch = ArrayView2::from_shape((1, y.len()), y)
            .map_err(|e| Error::input(format!("bad input shape: {e}")))?;
        let out = self.forward_batch(batch, t)?;
        Ok(out.row(0).to_owned())
    }

    /// Forward pass that retains everything backprop needs.
    pub fn forward_train(&self, y: ArrayView2<'_, f64>, t: Option<f64>) -> Result<ForwardCache> {
        let embed = self.check_inputs(y, t)?;
        let n_layers = self.layers.len();
        let mut activations = Vec::with_capacity(n_layers + 1);
        let mut preacts = Vec::with_capacity(n_layers);
        activations.push(y.to_owned());
        for l in 0..n_layers {
            let z = self.layer_forward(l, &activations[l], embed.as_ref());
            let a = if l < n_layers - 1 {
                z.mapv(|x| self.activation.apply(x))
            } else {
                z.clone()
            };
            preacts.push(z);
            activations.push(a);
        }
        Ok(ForwardCache {
            activations,
            preacts,
            embed,
        })
    }

    /// Reverse-mode pass: gradients of a scalar loss given `∂loss/∂outputs`.
    pub fn backprop(&self, cache: &ForwardCache, output_grad: Array2<f64>) -> NetGrads {
        let n_layers = self.layers.len();
        let mut grads: Vec<Option<LayerGrads>> = (0..n_layers).map(|_| None).collect();
        let mut g = output_grad;
        for l in (0..n_layers).rev() {
            // identity output layer: dz = g; hidden: dz = g ⊙ act'(z)
            let gz = if l == n_layers - 1 {
                g
            } else {
                let mut gz = g;
                gz.zip_mut_with(&cache.preacts[l], |gv, &z| {
                    *gv *= self.activation.derivative(z)
                });
                gz
            };
            let dw = gz.t().dot(&cache.activations[l]);
            let db = gz.sum_axis(Axis(0));
            let dembed = match (&self.layers[l].embed_map, &cache.embed) {
                (Some(_), Some(e)) => {
                    let col = db.view().insert_axis(Axis(1));
                    let row = e.view().insert_axis(Axis(0));
                    Some(col.dot(&row))
                }
                _ => None,
            };
            g = gz.dot(&self.layers[l].weights);
            grads[l] = Some(LayerGrads { dw, db, dembed });
        }
        NetGrads {
            layers: grads.into_iter().map(|g| g.expect("filled")).collect(),
        }
    }

    /// Zero gradients shaped like this network's parameters.
    pub fn zero_grads(&self) -> NetGrads {
        NetGrads {
            layers: self
                .layers
                .iter()
                .map(|l| LayerGrads {
                    dw: Array2::zeros(l.weights.dim()),
                    db: Array1::zeros(l.biases.len()),
                    dembed: l.embed_map.as_ref().map(|e| Array2::zeros(e.dim())),
                })
                .collect(),
        }
    }
}

impl Scorer for ScoreNetwork {
    fn dim(&self) -> usize {
        self.dim()
    }

    fn score_batch(&self, y: ArrayView2<'_, f64>, t: f64) -> Result<Array2<f64>> {
        let topt = if self.is_conditional() { Some(t) } else { None };
        self.forward_batch(y, topt)
    }
}

/// Loss value and parameter gradients in one pass. Fails before backprop if
/// the loss is non-finite.
pub fn loss_gradients(
    net: &ScoreNetwork,
    y: ArrayView2<'_, f64>,
    t: Option<f64>,
    loss: &impl BatchLoss,
) -> Result<(f64, NetGrads)> {
    let cache = net.forward_train(y, t)?;
    let value = loss.value(cache.output());
    if !value.is_finite() {
        return Err(Error::numeric(format!("non-finite loss value {value}")));
    }
    let grad = loss.output_grad(cache.output());
    Ok((value, net.backprop(&cache, grad)))
}

fn xavier_uniform(fan_out: usize, fan_in: usize, rng: &mut impl Rng) -> Array2<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((fan_out, fan_in), |_| a * (2.0 * rng.random::<f64>() - 1.0))
}
