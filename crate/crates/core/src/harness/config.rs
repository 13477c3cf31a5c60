//! Declarative experiment configuration (TOML, strict keys, defaulted).

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channels::{random_orthogonal, read_matrix, ChannelModel, FrontEnd, Prior};
use crate::dsm::{SchemeAConfig, SchemeBConfig, Weighting};
use crate::error::{Error, Result};
use crate::nn::{DEFAULT_EMBED_FREQS, DEFAULT_EMBED_FREQ_STD, DEFAULT_HIDDEN};
use crate::rng::{purpose, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    GaussianIso,
    Bpsk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrontEndKind {
    Identity,
    Linear,
    TanhLinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    PerT,
    Conditional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    /// `λ(t) = t`.
    T,
    /// `λ(t) = 1`.
    Uniform,
}

impl WeightKind {
    pub fn weighting(self) -> Weighting {
        match self {
            WeightKind::T => Weighting::NoiseVariance,
            WeightKind::Uniform => Weighting::Uniform,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailSource {
    /// Estimate `tr Cov(W)` from samples of `W = f(X)` (same as `cov_w`).
    Auto,
    /// Estimate `tr Cov(W)` from samples of the front-end output.
    CovW,
    /// Estimate `tr Cov(X)` from samples of the prior.
    CovX,
    /// Use `tail.value` directly as the covariance trace.
    Value,
}

// --- raw (file) layer -------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    channel: RawChannel,
    grid: RawGrid,
    train: Option<RawTrain>,
    fisher: Option<RawFisher>,
    baseline: Option<RawBaseline>,
    tail: Option<RawTail>,
    output: Option<RawOutput>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChannel {
    n: usize,
    prior: PriorKind,
    power: Option<f64>,
    frontend: Option<FrontEndKind>,
    matrix_file: Option<String>,
    matrix_seed: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    t_min: f64,
    t_max: f64,
    points: usize,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrain {
    scheme: Option<SchemeKind>,
    iterations: Option<usize>,
    steps: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    clip_norm: Option<f64>,
    seed: Option<u64>,
    hidden: Option<Vec<usize>>,
    t_lo: Option<f64>,
    t_hi: Option<f64>,
    weight: Option<WeightKind>,
    embed_freqs: Option<usize>,
    embed_freq_std: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFisher {
    mc_samples: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBaseline {
    kde: Option<bool>,
    kde_n: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTail {
    source: Option<TailSource>,
    value: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<String>,
}

// --- resolved layer ---------------------------------------------------------

/// Fully-defaulted, validated configuration. Serializes back to TOML as the
/// `config.resolved` artifact; its SHA-256 digest content-addresses runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub channel: ChannelSection,
    pub grid: GridSection,
    pub train: TrainSection,
    pub fisher: FisherSection,
    pub baseline: BaselineSection,
    pub tail: TailSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelSection {
    pub n: usize,
    pub prior: PriorKind,
    pub power: f64,
    pub frontend: FrontEndKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matrix_file: Option<String>,
    pub matrix_seed: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSection {
    pub t_min: f64,
    pub t_max: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSection {
    pub scheme: SchemeKind,
    pub iterations: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub t_lo: f64,
    pub t_hi: f64,
    pub weight: WeightKind,
    pub embed_freqs: usize,
    pub embed_freq_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FisherSection {
    pub mc_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineSection {
    pub kde: bool,
    pub kde_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailSection {
    pub source: TailSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputSection {
    pub dir: String,
}

/// Parse, default, and validate a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_config(&text)
}

/// Same as [`load_config`] from an in-memory string.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
    resolve(raw)
}

fn resolve(raw: RawConfig) -> Result<ExperimentConfig> {
    let channel = ChannelSection {
        n: raw.channel.n,
        prior: raw.channel.prior,
        power: raw.channel.power.unwrap_or(1.0),
        frontend: raw.channel.frontend.unwrap_or(FrontEndKind::Identity),
        matrix_file: raw.channel.matrix_file,
        matrix_seed: raw.channel.matrix_seed.unwrap_or(0),
    };
    let grid = GridSection {
        t_min: raw.grid.t_min,
        t_max: raw.grid.t_max,
        points: raw.grid.points,
    };
    let t = raw.train.unwrap_or_default();
    let train = TrainSection {
        scheme: t.scheme.unwrap_or(SchemeKind::PerT),
        iterations: t.iterations.unwrap_or(300),
        steps: t.steps.unwrap_or(20_000),
        batch_size: t.batch_size.unwrap_or(4096),
        lr: t.lr.unwrap_or(1e-3),
        clip_norm: t.clip_norm.unwrap_or(1.0),
        seed: t.seed.unwrap_or(0),
        hidden: t.hidden.unwrap_or_else(|| DEFAULT_HIDDEN.to_vec()),
        t_lo: t.t_lo.unwrap_or(grid.t_min),
        t_hi: t.t_hi.unwrap_or(grid.t_max),
        weight: t.weight.unwrap_or(WeightKind::T),
        embed_freqs: t.embed_freqs.unwrap_or(DEFAULT_EMBED_FREQS),
        embed_freq_std: t.embed_freq_std.unwrap_or(DEFAULT_EMBED_FREQ_STD),
    };
    let fisher = FisherSection {
        mc_samples: raw.fisher.and_then(|f| f.mc_samples).unwrap_or(100_000),
    };
    let baseline = match raw.baseline {
        Some(b) => BaselineSection {
            kde: b.kde.unwrap_or(false),
            kde_n: b.kde_n.unwrap_or(20_000),
        },
        None => BaselineSection {
            kde: false,
            kde_n: 20_000,
        },
    };
    let tail = match raw.tail {
        Some(t) => TailSection {
            source: t.source.unwrap_or(TailSource::Auto),
            value: t.value,
        },
        None => TailSection {
            source: TailSource::Auto,
            value: None,
        },
    };
    let output = OutputSection {
        dir: raw
            .output
            .and_then(|o| o.dir)
            .unwrap_or_else(|| "out".to_string()),
    };
    let cfg = ExperimentConfig {
        channel,
        grid,
        train,
        fisher,
        baseline,
        tail,
        output,
    };
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let c = &self.channel;
        if c.n == 0 {
            return Err(Error::config("channel.n must be positive"));
        }
        if !(c.power > 0.0) {
            return Err(Error::config("channel.power must be positive"));
        }
        if c.matrix_file.is_some() && c.frontend == FrontEndKind::Identity {
            return Err(Error::config(
                "channel.matrix_file is set but the front-end is identity",
            ));
        }
        let g = &self.grid;
        if !(g.t_min > 0.0 && g.t_min < g.t_max) {
            return Err(Error::config("grid must satisfy 0 < t_min < t_max"));
        }
        if g.points < 2 {
            return Err(Error::config("grid.points must be at least 2"));
        }
        let t = &self.train;
        if t.batch_size == 0 {
            return Err(Error::config("train.batch_size must be positive"));
        }
        if !(t.lr > 0.0) {
            return Err(Error::config("train.lr must be positive"));
        }
        if !(t.clip_norm > 0.0) {
            return Err(Error::config("train.clip_norm must be positive"));
        }
        if t.hidden.iter().any(|&h| h == 0) {
            return Err(Error::config("train.hidden widths must be positive"));
        }
        if !(t.t_lo > 0.0 && t.t_lo < t.t_hi) {
            return Err(Error::config("train t range must satisfy 0 < t_lo < t_hi"));
        }
        if t.embed_freqs == 0 || !(t.embed_freq_std > 0.0) {
            return Err(Error::config("train embedding parameters must be positive"));
        }
        if self.fisher.mc_samples < 2 {
            return Err(Error::config("fisher.mc_samples must be at least 2"));
        }
        if self.baseline.kde_n < 2 {
            return Err(Error::config("baseline.kde_n must be at least 2"));
        }
        match self.tail.source {
            TailSource::Value => {
                let v = self
                    .tail
                    .value
                    .ok_or_else(|| Error::config("tail.source = \"value\" requires tail.value"))?;
                if v < 0.0 {
                    return Err(Error::config("tail.value must be nonnegative"));
                }
            }
            _ => {
                if self.tail.value.is_some() {
                    return Err(Error::config(
                        "tail.value is only allowed with tail.source = \"value\"",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Canonical TOML rendering (the `config.resolved` artifact).
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("resolved config serializes")
    }

    /// Hex SHA-256 of the canonical rendering.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_toml().as_bytes());
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Scheme A trainer settings (seed comes from the train section).
    pub fn scheme_a(&self) -> SchemeAConfig {
        SchemeAConfig {
            iterations: self.train.iterations,
            batch_size: self.train.batch_size,
            lr: self.train.lr,
            clip_norm: self.train.clip_norm,
            hidden: self.train.hidden.clone(),
            seed: self.train.seed,
        }
    }

    /// Scheme B trainer settings.
    pub fn scheme_b(&self) -> SchemeBConfig {
        SchemeBConfig {
            steps: self.train.steps,
            batch_size: self.train.batch_size,
            lr: self.train.lr,
            clip_norm: self.train.clip_norm,
            t_range: (self.train.t_lo, self.train.t_hi),
            weighting: self.train.weight.weighting(),
            hidden: self.train.hidden.clone(),
            embed_freqs: self.train.embed_freqs,
            embed_freq_std: self.train.embed_freq_std,
            seed: self.train.seed,
        }
    }

    /// Build the channel model; returns the front-end matrix when one is in
    /// play (loaded from file, or generated on the `matrix` stream).
    pub fn channel_model(&self) -> Result<(ChannelModel, Option<Array2<f64>>)> {
        let c = &self.channel;
        let prior = match c.prior {
            PriorKind::GaussianIso => Prior::GaussianIso {
                dim: c.n,
                power: c.power,
            },
            PriorKind::Bpsk => Prior::Bpsk {
                dim: c.n,
                power: c.power,
            },
        };
        let matrix = match (c.frontend, &c.matrix_file) {
            (FrontEndKind::Identity, _) => None,
            (_, Some(file)) => Some(read_matrix(Path::new(file))?),
            (_, None) => Some(random_orthogonal(
                c.n,
                &mut stream(self.train.seed, purpose::MATRIX, c.matrix_seed),
            )?),
        };
        let frontend = match c.frontend {
            FrontEndKind::Identity => FrontEnd::Identity,
            FrontEndKind::Linear => FrontEnd::Linear(matrix.clone().expect("matrix present")),
            FrontEndKind::TanhLinear => {
                FrontEnd::TanhLinear(matrix.clone().expect("matrix present"))
            }
        };
        Ok((ChannelModel::new(prior, frontend)?, matrix))
    }
}
