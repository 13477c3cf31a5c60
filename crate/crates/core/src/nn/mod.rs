//! Minimal trainable feedforward score network.
//!
//! Dense layers with SiLU hidden activations and an identity output layer,
//! reverse-mode gradients for batch losses, Adam with global-norm gradient
//! clipping, and an optional Gaussian Fourier embedding of the noise level
//! for noise-conditional models. Everything is f64 and free of hidden
//! state: forward passes are pure, training mutates only the network and
//! optimizer state passed in.

mod adam;
mod checkpoint;
mod embed;
mod network;

pub use adam::{clip_gradients, optimizer_step, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use embed::TimeEmbedding;
pub use network::{loss_gradients, Activation, BatchLoss, ForwardCache, LayerGrads, NetGrads, ScoreNetwork};

/// Default hidden architecture: 3 × 128 SiLU layers.
pub const DEFAULT_HIDDEN: [usize; 3] = [128, 128, 128];
/// Default number of Fourier frequencies in the noise-level embedding.
pub const DEFAULT_EMBED_FREQS: usize = 32;
/// Standard deviation of the Gaussian the embedding frequencies are drawn from.
pub const DEFAULT_EMBED_FREQ_STD: f64 = 4.0;
