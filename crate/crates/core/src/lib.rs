//! Score-based mutual information estimation for additive Gaussian noise channels.
//!
//! Estimates `I(X; Y_t)` for channels `Y_t = f(X) + Z_t` with `Z_t ~ N(0, t I)`:
//!
//! 1. learn the score of the channel output by denoising score matching
//!    ([`dsm`]), per noise level or with one noise-conditional network,
//! 2. estimate Fisher information `J(Y_t) = E‖∇ log p(Y_t)‖²` by Monte Carlo
//!    over a geometric grid of noise variances ([`fisher`]),
//! 3. integrate `I(X; Y_T) = ½ ∫_T^∞ (n/t − J(Y_t)) dt` in the log domain
//!    with a closed-form tail correction above the grid.
//!
//! Closed-form references for Gaussian and linear Gaussian channels, an exact
//! binary-antipodal oracle via quadrature, and a leave-one-out KDE baseline
//! live in [`oracles`]. The [`harness`] module runs the full pipeline from a
//! TOML config and writes CSV/JSON reports.

pub mod channels;
pub mod dsm;
pub mod error;
pub mod fisher;
pub mod harness;
pub mod nn;
pub mod numeric;
pub mod oracles;
pub mod rng;

pub use error::{Error, Result};

use ndarray::{Array2, ArrayView2};

/// A score function `s(y) ≈ ∇_y log p(Y_t = y)` evaluated on a batch of rows.
///
/// `t` is the noise variance the batch was sampled at. Implementations that
/// are specific to one noise level (a per-level trained network, say) may
/// ignore it; noise-conditional implementations feed it to the model.
pub trait Scorer {
    /// Input/output dimension `n`.
    fn dim(&self) -> usize;

    /// Score of each row of `y` (an `N×n` batch) at noise variance `t`.
    fn score_batch(&self, y: ArrayView2<'_, f64>, t: f64) -> Result<Array2<f64>>;
}
