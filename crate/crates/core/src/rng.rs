//! Deterministic named RNG streams derived from one master seed.
//!
//! Every randomized stage of the pipeline draws from its own stream so that
//! stages can run in any order (or in parallel) without changing results.
//! A stream is identified by a purpose label and an index, e.g. `train@3`
//! for the training batches at grid point 3.
//!
//! Splitting rule: the ChaCha12 seed is
//! `SHA-256(master_le_bytes ‖ "/" ‖ purpose ‖ "@" ‖ index_le_bytes)`,
//! so streams are independent of platform, scheduling, and each other.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// Purpose labels for the streams used by the pipeline.
pub mod purpose {
    /// Network weight initialization at grid point `k`.
    pub const INIT: &str = "init";
    /// Training batches (and, for the conditional scheme, noise-level draws).
    pub const TRAIN: &str = "train";
    /// Held-out Monte Carlo samples for Fisher estimation.
    pub const FISHER: &str = "fisher";
    /// Samples for the KDE leave-one-out baseline.
    pub const KDE: &str = "kde";
    /// Random orthogonal front-end matrix generation.
    pub const MATRIX: &str = "matrix";
    /// Samples used to estimate the covariance trace for the tail correction.
    pub const TRACE: &str = "trace";
    /// Held-out evaluation batches in tests and diagnostics.
    pub const HELD_OUT: &str = "held-out";
}

/// Deterministic sub-stream for `(purpose, index)` under `master`.
pub fn stream(master: u64, purpose: &str, index: u32) -> ChaCha12Rng {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(b"/");
    hasher.update(purpose.as_bytes());
    hasher.update(b"@");
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha12Rng::from_seed(seed)
}
