//! Gaussian Fourier embedding of the scalar noise level.

use ndarray::Array1;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Fixed random Fourier features of `u = log t`.
///
/// `embed(t)` returns the `2m` vector `[sin(f_i u), cos(f_i u)]`. The
/// frequencies are drawn once at construction and never trained; working in
/// `log t` keeps the features well spread over noise levels that span several
/// orders of magnitude.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeEmbedding {
    frequencies: Array1<f64>,
}

impl TimeEmbedding {
    /// Draw `m` frequencies from `N(0, freq_std²)`.
    pub fn new(m: usize, freq_std: f64, rng: &mut impl Rng) -> Result<Self> {
        if m == 0 {
            return Err(Error::input("embedding needs at least one frequency"));
        }
        if !(freq_std > 0.0) {
            return Err(Error::input("embedding frequency std must be positive"));
        }
        let frequencies =
            Array1::from_iter((0..m).map(|_| freq_std * rng.sample::<f64, _>(StandardNormal)));
        Ok(Self { frequencies })
    }

    /// Rebuild from stored frequencies (checkpoint loading).
    pub fn from_frequencies(frequencies: Array1<f64>) -> Result<Self> {
        if frequencies.is_empty() {
            return Err(Error::input("embedding needs at least one frequency"));
        }
        Ok(Self { frequencies })
    }

    pub fn frequencies(&self) -> &Array1<f64> {
        &self.frequencies
    }

    /// Output dimension `2m`.
    pub fn output_dim(&self) -> usize {
        2 * self.frequencies.len()
    }

    /// `[sin(f_i log t), cos(f_i log t)]`, sin block first.
    pub fn embed(&self, t: f64) -> Result<Array1<f64>> {
        if !(t > 0.0) {
            return Err(Error::input(format!("noise level must be positive, got {t}")));
        }
        let u = t.ln();
        let m = self.frequencies.len();
        let mut out = Array1::zeros(2 * m);
        for (i, &f) in self.frequencies.iter().enumerate() {
            let (s, c) = (f * u).sin_cos();
            out[i] = s;
            out[m + i] = c;
        }
        Ok(out)
    }
}
