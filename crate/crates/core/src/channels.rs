//! Priors, deterministic front-ends, and forward channel sampling.
//!
//! The channel is `Y_t = W + √t·ε` with `W = f(X)`; all Monte Carlo samples
//! used anywhere in the pipeline originate here. Samplers are pure given an
//! explicit RNG stream, so distinct stages and grid points can sample in
//! parallel without affecting each other.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Channel input law.
#[derive(Debug, Clone, PartialEq)]
pub enum Prior {
    /// `X ~ N(0, P·I_n)`.
    GaussianIso { dim: usize, power: f64 },
    /// Antipodal `±√P` per coordinate, equal probabilities, i.i.d. across
    /// coordinates.
    Bpsk { dim: usize, power: f64 },
}

impl Prior {
    pub fn dim(&self) -> usize {
        match self {
            Prior::GaussianIso { dim, .. } | Prior::Bpsk { dim, .. } => *dim,
        }
    }

    pub fn power(&self) -> f64 {
        match self {
            Prior::GaussianIso { power, .. } | Prior::Bpsk { power, .. } => *power,
        }
    }

    /// `N` i.i.d. rows from the prior.
    pub fn sample(&self, n_samples: usize, rng: &mut impl Rng) -> Result<Array2<f64>> {
        if n_samples == 0 {
            return Err(Error::input("need at least one sample"));
        }
        let n = self.dim();
        match self {
            Prior::GaussianIso { power, .. } => {
                let scale = power.sqrt();
                Ok(Array2::from_shape_fn((n_samples, n), |_| {
                    scale * rng.sample::<f64, _>(StandardNormal)
                }))
            }
            Prior::Bpsk { power, .. } => {
                let amp = power.sqrt();
                Ok(Array2::from_shape_fn((n_samples, n), |_| {
                    if rng.random::<f64>() < 0.5 {
                        -amp
                    } else {
                        amp
                    }
                }))
            }
        }
    }
}

/// Deterministic front-end `f` applied before the noise.
#[derive(Debug, Clone, PartialEq)]
pub enum FrontEnd {
    Identity,
    /// `x ↦ A x`; batches of row vectors are mapped as `x Aᵀ`.
    Linear(Array2<f64>),
    /// `x ↦ tanh(A x)` elementwise.
    TanhLinear(Array2<f64>),
}

impl FrontEnd {
    pub fn matrix(&self) -> Option<&Array2<f64>> {
        match self {
            FrontEnd::Identity => None,
            FrontEnd::Linear(a) | FrontEnd::TanhLinear(a) => Some(a),
        }
    }

    fn check(&self, dim: usize) -> Result<()> {
        if let Some(a) = self.matrix() {
            if a.nrows() != a.ncols() {
                return Err(Error::input(format!(
                    "front-end matrix must be square, got {}×{}",
                    a.nrows(),
                    a.ncols()
                )));
            }
            if a.nrows() != dim {
                return Err(Error::input(format!(
                    "front-end matrix is {}×{} but channel dimension is {dim}",
                    a.nrows(),
                    a.ncols()
                )));
            }
        }
        Ok(())
    }

    /// Apply to a batch of row vectors.
    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check(x.ncols())?;
        match self {
            FrontEnd::Identity => Ok(x.to_owned()),
            FrontEnd::Linear(a) => Ok(x.dot(&a.t())),
            FrontEnd::TanhLinear(a) => Ok(x.dot(&a.t()).mapv(f64::tanh)),
        }
    }
}

/// Prior plus front-end: the sole source of forward samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    pub prior: Prior,
    pub frontend: FrontEnd,
}

impl ChannelModel {
    pub fn new(prior: Prior, frontend: FrontEnd) -> Result<Self> {
        frontend.check(prior.dim())?;
        Ok(Self { prior, frontend })
    }

    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    /// Fresh `W = f(X)` samples.
    pub fn sample_w(&self, n_samples: usize, rng: &mut impl Rng) -> Result<Array2<f64>> {
        let x = self.prior.sample(n_samples, rng)?;
        self.frontend.apply(x.view())
    }

    /// Draw a batch at noise variance `t`: `y = w + √t·ε` with fresh `w`.
    pub fn forward(&self, t: f64, n_samples: usize, rng: &mut impl Rng) -> Result<SampleBatch> {
        if !(t > 0.0) {
            return Err(Error::input(format!("noise variance must be positive, got {t}")));
        }
        let w = self.sample_w(n_samples, rng)?;
        let eps = Array2::from_shape_fn((n_samples, self.dim()), |_| {
            rng.sample::<f64, _>(StandardNormal)
        });
        let sqrt_t = t.sqrt();
        let y = &w + &(&eps * sqrt_t);
        Ok(SampleBatch { w, eps, y, t })
    }
}

/// One forward batch; `y` is computed as `w + √t·eps`, so recomputing that
/// expression from the stored fields reproduces `y` bit-exactly.
#[derive(Debug, Clone)]
pub struct SampleBatch {
    pub w: Array2<f64>,
    pub eps: Array2<f64>,
    pub y: Array2<f64>,
    pub t: f64,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.y.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.y.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.y.ncols()
    }
}

/// Random orthogonal matrix from the QR decomposition of a standard normal
/// matrix. Signs are fixed so the R factor has a nonnegative diagonal, which
/// makes the result unique given the Gaussian draw.
pub fn random_orthogonal(n: usize, rng: &mut impl Rng) -> Result<Array2<f64>> {
    if n == 0 {
        return Err(Error::input("dimension must be at least 1"));
    }
    let gauss =
        DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = gauss.qr();
    let r = qr.r();
    let mut q = qr.q();
    for i in 0..n {
        if r[(i, i)] < 0.0 {
            for j in 0..n {
                q[(j, i)] = -q[(j, i)];
            }
        }
    }
    Ok(Array2::from_shape_fn((n, n), |(i, j)| q[(i, j)]))
}

/// Sum over coordinates of the unbiased sample variances.
pub fn trace_cov_estimate(samples: ArrayView2<'_, f64>) -> Result<f64> {
    if samples.nrows() < 2 {
        return Err(Error::input("need at least two samples for a variance"));
    }
    Ok(samples.var_axis(Axis(0), 1.0).sum())
}

/// Write a matrix as plain text, one row per line, space-separated. Values
/// use shortest round-trip formatting so reading the file back is exact.
pub fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut out = String::new();
    for row in m.rows() {
        let mut first = true;
        for v in row {
            if !first {
                out.push(' ');
            }
            write!(out, "{v}").expect("write to string");
            first = false;
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read a matrix written by [`write_matrix`] (or any whitespace-separated
/// rectangular numeric text file).
pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split_whitespace().map(str::parse::<f64>).collect();
        let row = row.map_err(|e| {
            Error::input(format!("{}:{}: bad number: {e}", path.display(), lineno + 1))
        })?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::input(format!("{}: empty matrix file", path.display())));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::input(format!("{}: ragged matrix rows", path.display())));
    }
    let nrows = rows.len();
    Ok(Array2::from_shape_vec((nrows, ncols), rows.concat()).expect("rectangular"))
}

/// Max-abs entry of `AAᵀ − I`, the orthogonality defect.
pub fn orthogonality_defect(a: &Array2<f64>) -> f64 {
    let gram = a.dot(&a.t());
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[[i, j]] - target).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use ndarray::array;

    #[test]
    fn bpsk_entries_are_antipodal() {
        let prior = Prior::Bpsk { dim: 3, power: 1.0 };
        let s = prior.sample(1000, &mut stream(1, "ch-test", 0)).unwrap();
        assert!(s.iter().all(|&v| v == 1.0 || v == -1.0));
    }

    #[test]
    fn gaussian_prior_mean_is_near_zero() {
        let prior = Prior::GaussianIso { dim: 4, power: 1.0 };
        let s = prior.sample(100_000, &mut stream(2, "ch-test", 0)).unwrap();
        let bound = 3.0 / (100_000.0_f64).sqrt();
        for mean in s.mean_axis(Axis(0)).unwrap() {
            assert!(mean.abs() < bound, "coordinate mean {mean}");
        }
    }

    #[test]
    fn sampling_is_deterministic_per_stream() {
        let prior = Prior::GaussianIso { dim: 2, power: 2.0 };
        let a = prior.sample(64, &mut stream(3, "ch-test", 1)).unwrap();
        let b = prior.sample(64, &mut stream(3, "ch-test", 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identity_front_end_is_identity() {
        let x = array![[1.0, -2.0], [0.5, 3.0]];
        assert_eq!(FrontEnd::Identity.apply(x.view()).unwrap(), x);
    }

    #[test]
    fn tanh_of_zero_is_zero_and_range_is_open_unit() {
        let a = Array2::eye(2);
        let fe = FrontEnd::TanhLinear(a);
        let zero = Array2::zeros((3, 2));
        assert_eq!(fe.apply(zero.view()).unwrap(), zero);

        // strict interior holds away from f64 tanh saturation (|x| ≲ 19)
        let x = Array2::from_shape_fn((100, 2), |(i, j)| (i as f64 - 50.0) * 0.1 * (j as f64 + 1.0));
        let out = fe.apply(x.view()).unwrap();
        assert!(out.iter().all(|&v| v > -1.0 && v < 1.0));
    }

    #[test]
    fn front_end_shape_mismatch_is_input_error() {
        let fe = FrontEnd::Linear(Array2::eye(3));
        let x = Array2::zeros((4, 2));
        assert!(matches!(fe.apply(x.view()), Err(Error::Input(_))));
    }

    #[test]
    fn reconstruction_identity_is_exact() {
        let model = ChannelModel::new(
            Prior::GaussianIso { dim: 4, power: 1.0 },
            FrontEnd::Identity,
        )
        .unwrap();
        let b = model.forward(0.37, 512, &mut stream(4, "ch-test", 0)).unwrap();
        let sqrt_t = b.t.sqrt();
        for ((&y, &w), &e) in b.y.iter().zip(b.w.iter()).zip(b.eps.iter()) {
            assert_eq!(y, w + sqrt_t * e);
        }
    }

    #[test]
    fn noise_magnitude_scales_as_sqrt_t() {
        let model = ChannelModel::new(
            Prior::GaussianIso { dim: 4, power: 1.0 },
            FrontEnd::Identity,
        )
        .unwrap();
        let mean_dist = |t: f64, idx: u32| {
            let b = model.forward(t, 100_000, &mut stream(5, "ch-test", idx)).unwrap();
            let d = &b.y - &b.w;
            d.rows()
                .into_iter()
                .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
                .sum::<f64>()
                / b.len() as f64
        };
        let ratio = mean_dist(4.0, 0) / mean_dist(1.0, 1);
        assert!((ratio - 2.0).abs() < 0.04, "ratio {ratio}");
    }

    #[test]
    fn output_variance_is_signal_plus_noise() {
        let model = ChannelModel::new(
            Prior::GaussianIso { dim: 4, power: 1.0 },
            FrontEnd::Identity,
        )
        .unwrap();
        let b = model.forward(1.0, 100_000, &mut stream(6, "ch-test", 0)).unwrap();
        for var in b.y.var_axis(Axis(0), 1.0) {
            assert!((var - 2.0).abs() < 0.04, "per-coordinate variance {var}");
        }
    }

    #[test]
    fn rejects_nonpositive_t() {
        let model = ChannelModel::new(
            Prior::GaussianIso { dim: 2, power: 1.0 },
            FrontEnd::Identity,
        )
        .unwrap();
        assert!(model.forward(0.0, 8, &mut stream(7, "ch-test", 0)).is_err());
    }

    #[test]
    fn random_orthogonal_is_orthogonal() {
        let a = random_orthogonal(4, &mut stream(8, "ch-test", 0)).unwrap();
        assert!(orthogonality_defect(&a) <= 1e-10);
        let det = nalgebra::DMatrix::from_fn(4, 4, |i, j| a[[i, j]]).determinant();
        assert!((det.abs() - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn random_orthogonal_1x1_is_a_sign() {
        let a = random_orthogonal(1, &mut stream(9, "ch-test", 0)).unwrap();
        assert!((a[[0, 0]].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn different_seeds_give_different_matrices() {
        let a = random_orthogonal(4, &mut stream(10, "ch-test", 0)).unwrap();
        let b = random_orthogonal(4, &mut stream(10, "ch-test", 1)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn trace_cov_of_constant_rows_is_zero() {
        let x = Array2::from_elem((16, 3), 2.5);
        assert_eq!(trace_cov_estimate(x.view()).unwrap(), 0.0);
    }

    #[test]
    fn trace_cov_of_isotropic_gaussian_is_n_times_p() {
        let prior = Prior::GaussianIso { dim: 4, power: 1.0 };
        let s = prior.sample(100_000, &mut stream(11, "ch-test", 0)).unwrap();
        let tr = trace_cov_estimate(s.view()).unwrap();
        assert!((tr - 4.0).abs() / 4.0 < 0.03, "trace {tr}");
    }

    #[test]
    fn tanh_contracts_the_covariance_trace() {
        let mut rng = stream(12, "ch-test", 0);
        let a = random_orthogonal(4, &mut rng).unwrap();
        let model = ChannelModel::new(
            Prior::GaussianIso { dim: 4, power: 1.0 },
            FrontEnd::TanhLinear(a),
        )
        .unwrap();
        let w = model.sample_w(100_000, &mut rng).unwrap();
        let tr = trace_cov_estimate(w.view()).unwrap();
        assert!(tr > 0.0 && tr < 4.0, "trace {tr}");
    }

    #[test]
    fn orthogonal_front_end_preserves_output_covariance() {
        let mut rng = stream(13, "ch-test", 0);
        let a = random_orthogonal(4, &mut rng).unwrap();
        let model = ChannelModel::new(
            Prior::GaussianIso { dim: 4, power: 1.0 },
            FrontEnd::Linear(a),
        )
        .unwrap();
        let b = model.forward(1.0, 100_000, &mut rng).unwrap();
        // empirical covariance of Y should be (P+t) I within Monte Carlo noise
        let mean = b.y.mean_axis(Axis(0)).unwrap();
        let n = b.len() as f64;
        for i in 0..4 {
            for j in 0..4 {
                let cov = b
                    .y
                    .rows()
                    .into_iter()
                    .map(|r| (r[i] - mean[i]) * (r[j] - mean[j]))
                    .sum::<f64>()
                    / (n - 1.0);
                let target = if i == j { 2.0 } else { 0.0 };
                assert!((cov - target).abs() < 0.06, "cov[{i},{j}] = {cov}");
            }
        }
    }

    #[test]
    fn matrix_file_roundtrip_is_exact() {
        let mut rng = stream(14, "ch-test", 0);
        let a = random_orthogonal(3, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.txt");
        write_matrix(&path, &a).unwrap();
        assert_eq!(read_matrix(&path).unwrap(), a);
    }
}
