//! Ground-truth references: closed forms for Gaussian and linear Gaussian
//! channels, exact binary-antipodal MI via quadrature, and a leave-one-out
//! KDE baseline. All outputs are in nats.

mod kde;
mod quad;

pub use kde::kde_loo_mi;
pub use quad::{adaptive_simpson, QuadratureSpec};

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::Scorer;

use std::f64::consts::{E, PI};

/// Closed forms for `X ~ N(0, P·I_n)` through `Y_t = X + Z_t`:
/// `I = (n/2)·ln(1+P/t)`, `J = n/(P+t)`, `mmse = nPt/(P+t)`,
/// `h(X|Y_t) = (n/2)·ln(2πe·Pt/(P+t))`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianOracle {
    dim: usize,
    power: f64,
}

/// The record returned by [`GaussianOracle::closed_forms`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianClosedForms {
    pub mi: f64,
    pub fisher: f64,
    pub mmse: f64,
    pub cond_entropy: f64,
}

impl GaussianOracle {
    /// Panics on nonpositive power; use [`GaussianOracle::try_new`] for a
    /// validating constructor.
    pub fn new(dim: usize, power: f64) -> Self {
        Self::try_new(dim, power).expect("valid Gaussian oracle parameters")
    }

    pub fn try_new(dim: usize, power: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::input("dimension must be positive"));
        }
        if !(power > 0.0) {
            return Err(Error::input(format!("power must be positive, got {power}")));
        }
        Ok(Self { dim, power })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn mi(&self, t: f64) -> f64 {
        debug_assert!(t > 0.0);
        self.dim as f64 / 2.0 * (1.0 + self.power / t).ln()
    }

    pub fn fisher(&self, t: f64) -> f64 {
        debug_assert!(t > 0.0);
        self.dim as f64 / (self.power + t)
    }

    pub fn mmse(&self, t: f64) -> f64 {
        debug_assert!(t > 0.0);
        self.dim as f64 * self.power * t / (self.power + t)
    }

    pub fn cond_entropy(&self, t: f64) -> f64 {
        debug_assert!(t > 0.0);
        self.dim as f64 / 2.0 * (2.0 * PI * E * self.power * t / (self.power + t)).ln()
    }

    /// All four quantities with input validation.
    pub fn closed_forms(&self, t: f64) -> Result<GaussianClosedForms> {
        if !(t > 0.0) {
            return Err(Error::input(format!("t must be positive, got {t}")));
        }
        Ok(GaussianClosedForms {
            mi: self.mi(t),
            fisher: self.fisher(t),
            mmse: self.mmse(t),
            cond_entropy: self.cond_entropy(t),
        })
    }

    /// The exact marginal score as a [`Scorer`].
    pub fn scorer(&self) -> GaussianScorer {
        GaussianScorer::new(self.dim, self.power)
    }
}

/// Analytic marginal score of the isotropic Gaussian channel:
/// `s(y) = −y/(P+t)`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianScorer {
    dim: usize,
    power: f64,
}

impl GaussianScorer {
    pub fn new(dim: usize, power: f64) -> Self {
        Self { dim, power }
    }
}

impl Scorer for GaussianScorer {
    fn dim(&self) -> usize {
        self.dim
    }

    fn score_batch(&self, y: ArrayView2<'_, f64>, t: f64) -> Result<Array2<f64>> {
        if !(t > 0.0) {
            return Err(Error::input(format!("t must be positive, got {t}")));
        }
        let scale = -1.0 / (self.power + t);
        Ok(y.mapv(|v| scale * v))
    }
}

/// Closed forms for the linear Gaussian channel `Y_t = A X + Z_t` with
/// nonsingular `A`.
#[derive(Debug, Clone)]
pub struct LinearOracle {
    dim: usize,
    power: f64,
    aat: DMatrix<f64>,
    ata: DMatrix<f64>,
}

impl LinearOracle {
    pub fn new(a: ArrayView2<'_, f64>, power: f64) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::input(format!(
                "mixing matrix must be square, got {}×{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if !(power > 0.0) {
            return Err(Error::input("power must be positive"));
        }
        let n = a.nrows();
        let m = DMatrix::from_fn(n, n, |i, j| a[[i, j]]);
        if !m.clone().lu().is_invertible() {
            return Err(Error::input("mixing matrix is singular"));
        }
        Ok(Self {
            dim: n,
            power,
            aat: &m * m.transpose(),
            ata: m.transpose() * &m,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `½ ln det(I + (P/t)·AAᵀ)`.
    pub fn mi(&self, t: f64) -> f64 {
        debug_assert!(t > 0.0);
        let m = DMatrix::identity(self.dim, self.dim) + &self.aat * (self.power / t);
        0.5 * m.determinant().ln()
    }

    /// `tr((P·AAᵀ + t·I)⁻¹)`.
    pub fn fisher(&self, t: f64) -> f64 {
        debug_assert!(t > 0.0);
        let m = &self.aat * self.power + DMatrix::identity(self.dim, self.dim) * t;
        m.try_inverse().expect("positive definite").trace()
    }

    /// `tr((P⁻¹·I + (1/t)·AᵀA)⁻¹)`.
    pub fn mmse(&self, t: f64) -> f64 {
        debug_assert!(t > 0.0);
        let m = DMatrix::identity(self.dim, self.dim) / self.power + &self.ata / t;
        m.try_inverse().expect("positive definite").trace()
    }
}

/// Exact MI of the scalar binary-antipodal channel (`X = ±√P` equiprobable)
/// via quadrature of the Gaussian-mixture output density:
/// `I = h(Y) − ½ ln(2πe·t)`.
pub fn bpsk_exact_mi(power: f64, t: f64, spec: &QuadratureSpec) -> Result<f64> {
    if !(power > 0.0) || !(t > 0.0) {
        return Err(Error::input("power and t must be positive"));
    }
    let amp = power.sqrt();
    let norm = 1.0 / (2.0 * PI * t).sqrt();
    let density = move |y: f64| {
        let a = (-(y - amp) * (y - amp) / (2.0 * t)).exp();
        let b = (-(y + amp) * (y + amp) / (2.0 * t)).exp();
        0.5 * norm * (a + b)
    };
    let integrand = move |y: f64| {
        let p = density(y);
        if p > 0.0 {
            -p * p.ln()
        } else {
            0.0
        }
    };
    // The mixture is symmetric, so integrate [0, W] and double. Splitting at
    // the component mean (and just below it) pins panel endpoints to the
    // spike, which at small t is far too narrow for a cold adaptive start.
    let sigma = t.sqrt();
    let half_width = amp + spec.window_sigmas * sigma;
    let mut cuts = vec![0.0, half_width];
    if amp < half_width {
        cuts.push(amp);
    }
    let inner = amp - spec.window_sigmas * sigma;
    if inner > 0.0 {
        cuts.push(inner);
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).expect("finite cuts"));
    let mut h_y = 0.0;
    let panel_tol = spec.abs_tol / (2 * (cuts.len() - 1)) as f64;
    for pair in cuts.windows(2) {
        h_y += adaptive_simpson(&integrand, pair[0], pair[1], panel_tol, spec.max_depth)?;
    }
    h_y *= 2.0;
    Ok(h_y - 0.5 * (2.0 * PI * E * t).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::random_orthogonal;
    use crate::rng::stream;
    use ndarray::array;
    use rand::Rng;
    use std::f64::consts::LN_2;

    #[test]
    fn gaussian_closed_forms_at_unit_parameters() {
        let o = GaussianOracle::new(4, 1.0);
        let f = o.closed_forms(1.0).unwrap();
        assert!((f.mi - 1.386_294_361_119_890_6).abs() < 1e-12);
        assert_eq!(f.fisher, 2.0);
        assert_eq!(f.mmse, 2.0);
        assert!((f.cond_entropy / 4.0 - 1.072_364_942_924_700_1).abs() < 1e-12);
    }

    #[test]
    fn gaussian_mi_vanishes_at_huge_noise() {
        let o = GaussianOracle::new(4, 1.0);
        let mi = o.mi(1e6);
        assert!((mi - 2.0 * (1.0 + 1e-6f64).ln()).abs() < 1e-15);
        assert!(mi < 2.1e-6);
    }

    #[test]
    fn mmse_fisher_identity_holds_exactly() {
        let o = GaussianOracle::new(5, 2.3);
        for &t in &[0.01, 0.7, 13.0, 400.0] {
            let f = o.closed_forms(t).unwrap();
            let lhs = f.mmse + t * t * f.fisher;
            assert!((lhs - 5.0 * t).abs() <= 1e-10 * (5.0 * t), "t={t}");
        }
    }

    #[test]
    fn rejects_nonpositive_parameters() {
        assert!(GaussianOracle::try_new(4, 0.0).is_err());
        assert!(GaussianOracle::new(4, 1.0).closed_forms(-1.0).is_err());
    }

    #[test]
    fn linear_oracle_diagonal_example() {
        let a = array![[2.0, 0.0], [0.0, 1.0]];
        let o = LinearOracle::new(a.view(), 1.0).unwrap();
        // ½ ln det(diag(5, 2)) = ½ ln 10
        assert!((o.mi(1.0) - 0.5 * 10.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn linear_oracle_rejects_singular_matrix() {
        let a = array![[1.0, 2.0], [2.0, 4.0]];
        assert!(LinearOracle::new(a.view(), 1.0).is_err());
    }

    #[test]
    fn orthogonal_mixing_reduces_to_gaussian_closed_forms() {
        let a = random_orthogonal(4, &mut stream(1, "or-test", 0)).unwrap();
        let lin = LinearOracle::new(a.view(), 1.0).unwrap();
        let gauss = GaussianOracle::new(4, 1.0);
        for &t in &[0.005, 0.1, 1.0, 42.0, 200.0] {
            assert!((lin.mi(t) - gauss.mi(t)).abs() <= 1e-12 * gauss.mi(t).abs(), "mi t={t}");
            assert!(
                (lin.fisher(t) - gauss.fisher(t)).abs() <= 1e-12 * gauss.fisher(t),
                "fisher t={t}"
            );
            assert!(
                (lin.mmse(t) - gauss.mmse(t)).abs() <= 1e-12 * gauss.mmse(t),
                "mmse t={t}"
            );
        }
    }

    #[test]
    fn linear_mmse_fisher_identity_cross_check() {
        let a = random_orthogonal(3, &mut stream(2, "or-test", 0)).unwrap();
        let o = LinearOracle::new(a.view(), 1.7).unwrap();
        for &t in &[0.05, 1.0, 30.0] {
            let lhs = o.mmse(t);
            let rhs = 3.0 * t - t * t * o.fisher(t);
            assert!((lhs - rhs).abs() <= 1e-10, "t={t}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn mi_fisher_derivative_identity_numerically() {
        // dI/dt = ½J(t) − n/(2t), checked by central differences
        let o = GaussianOracle::new(4, 1.0);
        for &t in &[0.01, 0.1, 1.0, 10.0, 100.0] {
            let h = 1e-4 * t;
            let numeric = (o.mi(t + h) - o.mi(t - h)) / (2.0 * h);
            let analytic = 0.5 * o.fisher(t) - 4.0 / (2.0 * t);
            assert!((numeric - analytic).abs() <= 1e-6, "t={t}");
        }
    }

    #[test]
    fn bpsk_mi_approaches_one_bit_at_tiny_noise() {
        let spec = QuadratureSpec::default();
        let mi = bpsk_exact_mi(1.0, 1e-6, &spec).unwrap();
        assert!((mi - LN_2).abs() < 1e-4, "mi {mi}");
    }

    #[test]
    fn bpsk_mi_vanishes_at_large_noise() {
        let spec = QuadratureSpec::default();
        let mi = bpsk_exact_mi(1.0, 100.0, &spec).unwrap();
        assert!(mi > 0.0 && mi < 0.01, "mi {mi}");
    }

    #[test]
    fn bpsk_mi_is_decreasing_and_bounded() {
        let spec = QuadratureSpec::default();
        let gauss = GaussianOracle::new(1, 1.0);
        // slack sits above the quadrature tolerance, not at machine epsilon
        let mut prev = f64::INFINITY;
        for k in 0..12 {
            let t = 0.005 * (50.0f64 / 0.005).powf(k as f64 / 11.0);
            let mi = bpsk_exact_mi(1.0, t, &spec).unwrap();
            assert!(mi <= prev + 1e-9, "not decreasing at t={t}");
            assert!(mi <= LN_2 + 1e-9 && mi <= gauss.mi(t) + 1e-9, "bound at t={t}");
            prev = mi;
        }
    }

    #[test]
    fn bpsk_quadrature_agrees_with_monte_carlo_entropy() {
        // independent oracle: 10⁷-sample Monte Carlo estimate of h(Y)
        let spec = QuadratureSpec::default();
        let quad = bpsk_exact_mi(1.0, 1.0, &spec).unwrap();

        let mut rng = stream(3, "bpsk-mc", 0);
        let n = 10_000_000;
        let mut neg_log_p = Vec::with_capacity(n);
        let norm = 1.0 / (2.0 * PI).sqrt();
        for _ in 0..n {
            let x: f64 = if rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 };
            let y = x + rng.sample::<f64, _>(rand_distr::StandardNormal);
            let p = 0.5
                * norm
                * ((-(y - 1.0) * (y - 1.0) / 2.0).exp() + (-(y + 1.0) * (y + 1.0) / 2.0).exp());
            neg_log_p.push(-p.ln());
        }
        let (h_mc, se) = crate::numeric::mean_and_stderr(&neg_log_p);
        let mi_mc = h_mc - 0.5 * (2.0 * PI * E).ln();
        assert!(
            (quad - mi_mc).abs() <= 3.0 * se,
            "quad {quad} vs mc {mi_mc} (se {se})"
        );
    }
}
