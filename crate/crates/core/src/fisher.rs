//! Monte Carlo Fisher estimation and the Fisher-integral form of MI.
//!
//! The MI at grid point `T = t_k` is `½ ∫_{t_k}^∞ (n/t − J(Y_t)) dt`,
//! evaluated in the log domain `u = log t` where the geometric grid is
//! uniform, plus the closed-form tail `tr Cov / (2 t_max)` above the grid.
//!
//! The integrand `ℓ(u) = n − t·J(Y_t) = mmse(t)/t` is flat for small `t` and
//! decays like `tr Cov · e^{−u}` for large `t`. The default quadrature
//! interpolates `log ℓ` with a monotone cubic Hermite and integrates the
//! exponentiated interpolant per panel with 16-point Gauss–Legendre; it is
//! exact for constants and pure exponentials, the two asymptotic regimes.
//! A plain trapezoid rule on `ℓ(u)` is available as an alternative; panels
//! with a clamped (zero) endpoint always fall back to it.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::channels::ChannelModel;
use crate::error::{Error, Result};
use crate::numeric::mean_and_stderr;
use crate::Scorer;

/// Evaluation chunk for Monte Carlo scoring; results do not depend on it
/// because rows are independent.
const EVAL_CHUNK: usize = 8192;

/// Geometric grid of noise variances, uniform in `log t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseGrid {
    points: Vec<f64>,
    delta_u: f64,
}

impl NoiseGrid {
    /// `t_k = t_min · (t_max/t_min)^{k/(M−1)}` with exact endpoints.
    pub fn geometric(t_min: f64, t_max: f64, m: usize) -> Result<Self> {
        if !(t_min > 0.0 && t_min < t_max) {
            return Err(Error::input(format!(
                "grid bounds must satisfy 0 < t_min < t_max, got [{t_min}, {t_max}]"
            )));
        }
        if m < 2 {
            return Err(Error::input("grid needs at least two points"));
        }
        let ratio_log = (t_max / t_min).ln();
        let delta_u = ratio_log / (m - 1) as f64;
        let mut points = Vec::with_capacity(m);
        points.push(t_min);
        for k in 1..m - 1 {
            points.push(t_min * (ratio_log * k as f64 / (m - 1) as f64).exp());
        }
        points.push(t_max);
        Ok(Self { points, delta_u })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn t_min(&self) -> f64 {
        self.points[0]
    }

    pub fn t_max(&self) -> f64 {
        *self.points.last().expect("grid nonempty")
    }

    /// Uniform spacing in `u = log t`.
    pub fn delta_u(&self) -> f64 {
        self.delta_u
    }
}

/// Monte Carlo Fisher estimates over a grid.
#[derive(Debug, Clone)]
pub struct FisherCurve {
    pub grid: NoiseGrid,
    pub j_hat: Vec<f64>,
    /// Standard error of the mean of `‖s‖²`, per grid point.
    pub stderr: Vec<f64>,
    pub n_samples: usize,
}

impl FisherCurve {
    pub fn new(grid: NoiseGrid, j_hat: Vec<f64>, stderr: Vec<f64>, n_samples: usize) -> Result<Self> {
        if j_hat.len() != grid.len() || stderr.len() != grid.len() {
            return Err(Error::input("curve length does not match grid"));
        }
        if j_hat.iter().any(|&j| j < 0.0) || stderr.iter().any(|&s| s < 0.0) {
            return Err(Error::input("Fisher estimates and standard errors must be nonnegative"));
        }
        Ok(Self {
            grid,
            j_hat,
            stderr,
            n_samples,
        })
    }

    /// Curve filled from a closed-form `J(t)` (stderr 0); used by oracles
    /// and integrator tests.
    pub fn from_exact(grid: NoiseGrid, mut j: impl FnMut(f64) -> f64) -> Self {
        let j_hat: Vec<f64> = grid.points().iter().map(|&t| j(t)).collect();
        let stderr = vec![0.0; grid.len()];
        Self {
            grid,
            j_hat,
            stderr,
            n_samples: 0,
        }
    }
}

/// MI estimates at every grid point, in nats.
#[derive(Debug, Clone)]
pub struct MICurve {
    pub grid: NoiseGrid,
    pub mi_hat: Vec<f64>,
    /// Clamped integrand `ℓ(u_k) = max(0, n − t_k·Ĵ_k)`.
    pub integrand: Vec<f64>,
    /// Tail correction added above `t_max`.
    pub tail: f64,
    /// Covariance trace implied by the tail (`2·t_max·tail`).
    pub trace_cov: f64,
    /// Grid points where the raw integrand was negative and got clamped.
    pub clamped: Vec<bool>,
}

/// MMSE via `mmse(t) = n·t − t²·J(Y_t)`, clamped to `[0, n·t]`.
#[derive(Debug, Clone)]
pub struct MMSECurve {
    pub grid: NoiseGrid,
    pub mmse_hat: Vec<f64>,
    /// Points where the raw conversion fell outside `[0, n·t]`.
    pub clamped: Vec<bool>,
}

/// Quadrature for the log-domain MI integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IntegrationRule {
    /// Monotone cubic Hermite on `log ℓ`, integrated exactly per panel.
    #[default]
    LogHermite,
    /// Plain trapezoid on `ℓ(u)` over the uniform `u` grid.
    Trapezoid,
}

impl IntegrationRule {
    pub fn tag(self) -> &'static str {
        match self {
            IntegrationRule::LogHermite => "log_hermite",
            IntegrationRule::Trapezoid => "trapezoid",
        }
    }
}

/// Monte Carlo Fisher estimate at one noise level from fresh forward samples:
/// `Ĵ = (1/N) Σ ‖s(y_i)‖²` with its standard error.
pub fn estimate_fisher(
    scorer: &dyn Scorer,
    model: &ChannelModel,
    t: f64,
    n_samples: usize,
    rng: &mut impl Rng,
) -> Result<(f64, f64)> {
    if n_samples < 2 {
        return Err(Error::input("need at least two Monte Carlo samples"));
    }
    let batch = model.forward(t, n_samples, rng)?;
    let norms = score_sq_norms(scorer, &batch.y, t)?;
    Ok(mean_and_stderr(&norms))
}

/// Per-row `‖s(y_i)‖²`, evaluated in fixed-size chunks.
pub(crate) fn score_sq_norms(
    scorer: &dyn Scorer,
    y: &Array2<f64>,
    t: f64,
) -> Result<Vec<f64>> {
    let n_samples = y.nrows();
    let mut norms = Vec::with_capacity(n_samples);
    let mut start = 0;
    while start < n_samples {
        let end = (start + EVAL_CHUNK).min(n_samples);
        let chunk = y.slice(ndarray::s![start..end, ..]);
        let s = scorer.score_batch(chunk, t)?;
        for (i, row) in s.rows().into_iter().enumerate() {
            let sq = row.iter().map(|v| v * v).sum::<f64>();
            if !sq.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite score at sample {}",
                    start + i
                )));
            }
            norms.push(sq);
        }
        start = end;
    }
    Ok(norms)
}

/// Closed-form tail of the MI integral above `t_max`: `tr Cov / (2 t_max)`.
pub fn tail_correction(trace_cov: f64, t_max: f64) -> Result<f64> {
    if trace_cov < 0.0 {
        return Err(Error::input("covariance trace must be nonnegative"));
    }
    if !(t_max > 0.0) {
        return Err(Error::input("t_max must be positive"));
    }
    Ok(trace_cov / (2.0 * t_max))
}

/// Integrate the Fisher curve into an MI curve. `dim` is the channel
/// dimension `n`; `tail` is added at `t_max`. MI is reported at every grid
/// point; the clamped integrand keeps the curve nonincreasing.
pub fn integrate_mi(
    curve: &FisherCurve,
    dim: usize,
    tail: f64,
    rule: IntegrationRule,
) -> Result<MICurve> {
    if tail < 0.0 {
        return Err(Error::input("tail correction must be nonnegative"));
    }
    let m = curve.grid.len();
    let mut integrand = Vec::with_capacity(m);
    let mut clamped = vec![false; m];
    for (k, (&t, &j)) in curve.grid.points().iter().zip(&curve.j_hat).enumerate() {
        let raw = dim as f64 - t * j;
        if raw < 0.0 {
            clamped[k] = true;
            integrand.push(0.0);
        } else {
            integrand.push(raw);
        }
    }
    let panels = match rule {
        IntegrationRule::LogHermite => log_hermite_panels(&integrand, curve.grid.delta_u()),
        IntegrationRule::Trapezoid => trapezoid_panels(&integrand, curve.grid.delta_u()),
    };
    let mut mi_hat = vec![0.0; m];
    mi_hat[m - 1] = tail;
    for k in (0..m - 1).rev() {
        mi_hat[k] = mi_hat[k + 1] + 0.5 * panels[k];
    }
    Ok(MICurve {
        grid: curve.grid.clone(),
        mi_hat,
        integrand,
        tail,
        trace_cov: 2.0 * curve.grid.t_max() * tail,
        clamped,
    })
}

/// Convert a Fisher curve into per-point MMSE estimates.
pub fn mmse_from_fisher(curve: &FisherCurve, dim: usize) -> MMSECurve {
    let mut mmse_hat = Vec::with_capacity(curve.grid.len());
    let mut clamped = vec![false; curve.grid.len()];
    for (k, (&t, &j)) in curve.grid.points().iter().zip(&curve.j_hat).enumerate() {
        let raw = dim as f64 * t - t * t * j;
        let hi = dim as f64 * t;
        let v = raw.clamp(0.0, hi);
        clamped[k] = v != raw;
        mmse_hat.push(v);
    }
    MMSECurve {
        grid: curve.grid.clone(),
        mmse_hat,
        clamped,
    }
}

/// Posterior mean under Gaussian smoothing: `E[X|Y_t=y] = y + t·s(y)`.
pub fn tweedie_posterior_mean(scorer: &dyn Scorer, y: &[f64], t: f64) -> Result<Array1<f64>> {
    if !(t > 0.0) {
        return Err(Error::input(format!("noise variance must be positive, got {t}")));
    }
    let batch = ndarray::ArrayView2::from_shape((1, y.len()), y)
        .map_err(|e| Error::input(format!("bad input shape: {e}")))?;
    let s = scorer.score_batch(batch, t)?;
    let mut out = Array1::from_iter(y.iter().copied());
    out.zip_mut_with(&s.row(0), |o, &sv| *o += t * sv);
    Ok(out)
}

// ---------------------------------------------------------------------------
// quadrature internals
// ---------------------------------------------------------------------------

/// 16-point Gauss–Legendre nodes and weights on [−1, 1].
const GL16: [(f64, f64); 16] = [
    (-0.9894009349916499, 0.027152459411754037),
    (-0.9445750230732326, 0.062253523938647706),
    (-0.8656312023878318, 0.09515851168249259),
    (-0.755404408355003, 0.12462897125553403),
    (-0.6178762444026438, 0.14959598881657676),
    (-0.45801677765722737, 0.16915651939500262),
    (-0.2816035507792589, 0.1826034150449236),
    (-0.09501250983763745, 0.18945061045506859),
    (0.09501250983763745, 0.18945061045506859),
    (0.2816035507792589, 0.1826034150449236),
    (0.45801677765722737, 0.16915651939500262),
    (0.6178762444026438, 0.14959598881657676),
    (0.755404408355003, 0.12462897125553403),
    (0.8656312023878318, 0.09515851168249259),
    (0.9445750230732326, 0.062253523938647706),
    (0.9894009349916499, 0.027152459411754037),
];

fn trapezoid_panels(ell: &[f64], du: f64) -> Vec<f64> {
    ell.windows(2).map(|w| 0.5 * (w[0] + w[1]) * du).collect()
}

/// Fritsch–Carlson (PCHIP) slopes for uniformly spaced data: monotone on
/// monotone stretches, zero at interior extrema, shape-preserving ends.
fn pchip_slopes(y: &[f64], h: f64) -> Vec<f64> {
    let m = y.len();
    let secants: Vec<f64> = y.windows(2).map(|w| (w[1] - w[0]) / h).collect();
    let mut d = vec![0.0; m];
    if m == 2 {
        d[0] = secants[0];
        d[1] = secants[0];
        return d;
    }
    for k in 1..m - 1 {
        let (a, b) = (secants[k - 1], secants[k]);
        if a * b > 0.0 {
            d[k] = 2.0 * a * b / (a + b);
        }
    }
    d[0] = pchip_edge(secants[0], secants[1]);
    d[m - 1] = pchip_edge(secants[m - 2], secants[m - 3]);
    d
}

fn pchip_edge(nearest: f64, next: f64) -> f64 {
    let d = (3.0 * nearest - next) / 2.0;
    if d.signum() != nearest.signum() || nearest == 0.0 {
        0.0
    } else if nearest.signum() != next.signum() && d.abs() > 3.0 * nearest.abs() {
        3.0 * nearest
    } else {
        d
    }
}

fn hermite(s: f64, y0: f64, y1: f64, d0: f64, d1: f64, h: f64) -> f64 {
    let s2 = s * s;
    let s3 = s2 * s;
    (2.0 * s3 - 3.0 * s2 + 1.0) * y0
        + (s3 - 2.0 * s2 + s) * h * d0
        + (-2.0 * s3 + 3.0 * s2) * y1
        + (s3 - s2) * h * d1
}

/// Per-panel integrals of the exponentiated monotone Hermite interpolant of
/// `log ℓ`. Panels touching a clamped (zero) integrand value fall back to
/// the trapezoid of the clamped values.
fn log_hermite_panels(ell: &[f64], du: f64) -> Vec<f64> {
    let m = ell.len();
    let log_ell: Vec<f64> = ell.iter().map(|&v| if v > 0.0 { v.ln() } else { 0.0 }).collect();
    let slopes = pchip_slopes(&log_ell, du);
    let mut panels = Vec::with_capacity(m - 1);
    for k in 0..m - 1 {
        if ell[k] > 0.0 && ell[k + 1] > 0.0 {
            let mut acc = 0.0;
            for &(x, w) in &GL16 {
                let s = 0.5 * (x + 1.0);
                let lam = hermite(s, log_ell[k], log_ell[k + 1], slopes[k], slopes[k + 1], du);
                acc += w * lam.exp();
            }
            panels.push(0.5 * du * acc);
        } else {
            panels.push(0.5 * (ell[k] + ell[k + 1]) * du);
        }
    }
    panels
}
