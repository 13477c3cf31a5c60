//! Denoising score matching objectives and the two training schemes.
//!
//! Scheme A trains a separate network per noise level; Scheme B trains one
//! noise-conditional network over a log-uniform distribution of noise levels
//! with loss weighting `λ(t)`. Both draw a fresh batch every step — there is
//! no fixed dataset to overfit.

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::channels::{ChannelModel, SampleBatch};
use crate::error::{Error, Result};
use crate::nn::{
    loss_gradients, optimizer_step, AdamState, BatchLoss, NetGrads, ScoreNetwork, TimeEmbedding,
    DEFAULT_EMBED_FREQS, DEFAULT_EMBED_FREQ_STD, DEFAULT_HIDDEN,
};
use crate::rng::{purpose, stream};
use crate::Scorer;

/// Loss divergence guard: abort when the per-step loss exceeds this multiple
/// of the zero-scorer expectation `n/t`.
const DIVERGENCE_FACTOR: f64 = 1e6;

/// Per-noise-level training configuration (Scheme A).
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeAConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for SchemeAConfig {
    fn default() -> Self {
        Self {
            iterations: 300,
            batch_size: 4096,
            lr: 1e-3,
            clip_norm: 1.0,
            hidden: DEFAULT_HIDDEN.to_vec(),
            seed: 0,
        }
    }
}

impl SchemeAConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("lr must be positive"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::config("clip_norm must be positive"));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::config("hidden widths must be positive"));
        }
        Ok(())
    }
}

/// Loss weight `λ(t)` for noise-conditional training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    /// `λ(t) = t`; balances the `1/t` blow-up of the raw loss.
    NoiseVariance,
    /// `λ(t) = 1`.
    Uniform,
}

impl Weighting {
    pub fn weight(self, t: f64) -> f64 {
        match self {
            Weighting::NoiseVariance => t,
            Weighting::Uniform => 1.0,
        }
    }
}

/// Noise-conditional training configuration (Scheme B).
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeBConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub t_range: (f64, f64),
    pub weighting: Weighting,
    pub hidden: Vec<usize>,
    pub embed_freqs: usize,
    pub embed_freq_std: f64,
    pub seed: u64,
}

impl Default for SchemeBConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_size: 4096,
            lr: 1e-3,
            clip_norm: 1.0,
            t_range: (0.005, 50.0),
            weighting: Weighting::NoiseVariance,
            hidden: DEFAULT_HIDDEN.to_vec(),
            embed_freqs: DEFAULT_EMBED_FREQS,
            embed_freq_std: DEFAULT_EMBED_FREQ_STD,
            seed: 0,
        }
    }
}

impl SchemeBConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.lr > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::config("lr and clip_norm must be positive"));
        }
        let (lo, hi) = self.t_range;
        if !(lo > 0.0 && lo < hi) {
            return Err(Error::config(format!(
                "t_range must satisfy 0 < lo < hi, got [{lo}, {hi}]"
            )));
        }
        if self.embed_freqs == 0 {
            return Err(Error::config("embed_freqs must be positive"));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::config("hidden widths must be positive"));
        }
        Ok(())
    }
}

/// A trained score model: one network per grid level, or one conditional
/// network covering the whole range.
#[derive(Debug, Clone)]
pub enum TrainedScore {
    PerLevel {
        networks: Vec<ScoreNetwork>,
        /// Config digest + seed recorded by the harness.
        provenance: String,
    },
    Conditional {
        network: ScoreNetwork,
        provenance: String,
    },
}

impl TrainedScore {
    /// Network to evaluate at grid index `k`.
    pub fn scorer_at(&self, k: usize) -> Result<&ScoreNetwork> {
        match self {
            TrainedScore::PerLevel { networks, .. } => networks.get(k).ok_or_else(|| {
                Error::input(format!("no trained network for grid index {k}"))
            }),
            TrainedScore::Conditional { network, .. } => Ok(network),
        }
    }
}

/// DSM loss in residual form: mean over the batch of `‖s(y) + (y−w)/t‖²`.
pub fn dsm_loss(scorer: &dyn Scorer, batch: &SampleBatch) -> Result<f64> {
    let s = scorer.score_batch(batch.y.view(), batch.t)?;
    let mut acc = 0.0;
    for ((&sv, &yv), &wv) in s.iter().zip(batch.y.iter()).zip(batch.w.iter()) {
        let r = sv + (yv - wv) / batch.t;
        acc += r * r;
    }
    let loss = acc / batch.len() as f64;
    if !loss.is_finite() {
        return Err(Error::numeric("non-finite DSM loss"));
    }
    Ok(loss)
}

/// DSM loss in noise form: mean of `‖s(y) + ε/√t‖²`. Equivalent to
/// [`dsm_loss`] because `y − w = √t·ε`; the two agree to rounding.
pub fn dsm_loss_noise_form(scorer: &dyn Scorer, batch: &SampleBatch) -> Result<f64> {
    let s = scorer.score_batch(batch.y.view(), batch.t)?;
    let sqrt_t = batch.t.sqrt();
    let mut acc = 0.0;
    for (&sv, &ev) in s.iter().zip(batch.eps.iter()) {
        let r = sv + ev / sqrt_t;
        acc += r * r;
    }
    let loss = acc / batch.len() as f64;
    if !loss.is_finite() {
        return Err(Error::numeric("non-finite DSM loss"));
    }
    Ok(loss)
}

/// Batch loss regressing scores onto `−(y−w)/t`, mean reduction.
pub struct DsmBatchLoss {
    residual: Array2<f64>,
}

impl DsmBatchLoss {
    pub fn new(batch: &SampleBatch) -> Self {
        let residual = (&batch.y - &batch.w) / batch.t;
        Self { residual }
    }
}

impl BatchLoss for DsmBatchLoss {
    fn value(&self, outputs: ArrayView2<'_, f64>) -> f64 {
        let mut acc = 0.0;
        for (&s, &r) in outputs.iter().zip(self.residual.iter()) {
            let v = s + r;
            acc += v * v;
        }
        acc / outputs.nrows() as f64
    }

    fn output_grad(&self, outputs: ArrayView2<'_, f64>) -> Array2<f64> {
        let scale = 2.0 / outputs.nrows() as f64;
        let mut g = outputs.to_owned();
        g.zip_mut_with(&self.residual, |gv, &r| *gv = scale * (*gv + r));
        g
    }
}

/// Sample `t` with `log t` uniform on `[log lo, log hi]`.
pub fn sample_log_uniform(range: (f64, f64), rng: &mut impl Rng) -> Result<f64> {
    let (lo, hi) = range;
    if !(lo > 0.0 && lo < hi) {
        return Err(Error::input(format!(
            "log-uniform range must satisfy 0 < lo < hi, got [{lo}, {hi}]"
        )));
    }
    let u = lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln());
    Ok(u.exp())
}

/// Trained network plus its per-step loss trace.
pub struct TrainingOutcome {
    pub network: ScoreNetwork,
    /// Loss per step; for Scheme B these are `λ(t)`-weighted, paired with the
    /// noise level drawn at that step.
    pub losses: Vec<(f64, f64)>,
}

fn network_dims(n: usize, hidden: &[usize]) -> Vec<usize> {
    let mut dims = Vec::with_capacity(hidden.len() + 2);
    dims.push(n);
    dims.extend_from_slice(hidden);
    dims.push(n);
    dims
}

/// Train one score network at fixed noise level `t` (Scheme A).
///
/// RNG streams are derived from `cfg.seed` and `stream_index` (the grid
/// index), so trainings at distinct grid points are independent and may run
/// in parallel.
pub fn train_scheme_a(
    model: &ChannelModel,
    t: f64,
    cfg: &SchemeAConfig,
    stream_index: u32,
) -> Result<TrainingOutcome> {
    cfg.validate()?;
    if !(t > 0.0) {
        return Err(Error::input(format!("noise variance must be positive, got {t}")));
    }
    let n = model.dim();
    let mut init_rng = stream(cfg.seed, purpose::INIT, stream_index);
    let mut train_rng = stream(cfg.seed, purpose::TRAIN, stream_index);
    let mut net = ScoreNetwork::new(&network_dims(n, &cfg.hidden), None, &mut init_rng)?;
    let mut state = AdamState::with_defaults(&net);
    let mut losses = Vec::with_capacity(cfg.iterations);
    let limit = DIVERGENCE_FACTOR * n as f64 / t;
    for step in 0..cfg.iterations {
        let batch = model.forward(t, cfg.batch_size, &mut train_rng)?;
        let loss = train_step(&mut net, &mut state, &batch, 1.0, cfg.lr, cfg.clip_norm)
            .map_err(|e| at_step(e, step))?;
        if loss > limit {
            return Err(Error::Training {
                step,
                msg: format!("loss {loss:.3e} exceeded divergence limit {limit:.3e}"),
            });
        }
        losses.push((t, loss));
    }
    Ok(TrainingOutcome { network: net, losses })
}

/// Train one noise-conditional score network (Scheme B). Each step draws
/// `t` log-uniformly from `cfg.t_range`, a fresh batch at that `t`, and
/// minimizes `λ(t)·loss`.
pub fn train_scheme_b(model: &ChannelModel, cfg: &SchemeBConfig) -> Result<TrainingOutcome> {
    cfg.validate()?;
    let n = model.dim();
    let mut init_rng = stream(cfg.seed, purpose::INIT, 0);
    let mut train_rng = stream(cfg.seed, purpose::TRAIN, 0);
    let embed = TimeEmbedding::new(cfg.embed_freqs, cfg.embed_freq_std, &mut init_rng)?;
    let mut net = ScoreNetwork::new(&network_dims(n, &cfg.hidden), Some(embed), &mut init_rng)?;
    let mut state = AdamState::with_defaults(&net);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let t = sample_log_uniform(cfg.t_range, &mut train_rng)?;
        let batch = model.forward(t, cfg.batch_size, &mut train_rng)?;
        let weight = cfg.weighting.weight(t);
        let weighted = train_step(&mut net, &mut state, &batch, weight, cfg.lr, cfg.clip_norm)
            .map_err(|e| at_step(e, step))?;
        let limit = DIVERGENCE_FACTOR * weight * n as f64 / t;
        if weighted > limit {
            return Err(Error::Training {
                step,
                msg: format!("weighted loss {weighted:.3e} exceeded divergence limit {limit:.3e}"),
            });
        }
        losses.push((t, weighted));
    }
    Ok(TrainingOutcome { network: net, losses })
}

/// One gradient step on `weight · dsm_loss(batch)`; returns the weighted loss.
fn train_step(
    net: &mut ScoreNetwork,
    state: &mut AdamState,
    batch: &SampleBatch,
    weight: f64,
    lr: f64,
    clip_norm: f64,
) -> Result<f64> {
    let topt = net.is_conditional().then_some(batch.t);
    let loss = DsmBatchLoss::new(batch);
    let (value, mut grads): (f64, NetGrads) = loss_gradients(net, batch.y.view(), topt, &loss)?;
    if weight != 1.0 {
        grads.scale(weight);
    }
    optimizer_step(net, state, grads, lr, clip_norm)?;
    Ok(weight * value)
}

fn at_step(e: Error, step: usize) -> Error {
    match e {
        Error::Numeric(msg) => Error::Training { step, msg },
        other => other,
    }
}
