//! Pipeline orchestration: train → Fisher → tail → integrate → report.
//!
//! Outputs are content-addressed: each run writes into
//! `<out>/runs/<config-digest>/<command>/`, and trained networks are cached
//! under `<out>/checkpoints/<key>.json` keyed by everything that determines
//! them (channel, front-end matrix, train section, noise level, grid index).
//! A `validate` run can therefore reuse the checkpoints of an earlier
//! `estimate` run and never mutates them — cache entries are only ever
//! created, atomically, never rewritten in place.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::channels::{trace_cov_estimate, write_matrix, ChannelModel};
use crate::dsm::{train_scheme_a, train_scheme_b, TrainedScore};
use crate::error::{Error, Result};
use crate::fisher::{
    estimate_fisher, integrate_mi, mmse_from_fisher, tail_correction, FisherCurve,
    IntegrationRule, NoiseGrid,
};
use crate::nn::{load_checkpoint, save_checkpoint, ScoreNetwork};
use crate::oracles::{bpsk_exact_mi, kde_loo_mi, GaussianOracle, LinearOracle, QuadratureSpec};
use crate::rng::{purpose, stream};

use super::config::{ExperimentConfig, FrontEndKind, PriorKind, SchemeKind, TailSource};
use super::report::{write_report, ExperimentReport, ReportRow, Summary};

/// Sample count used to estimate the covariance trace for the tail.
const TRACE_SAMPLES: usize = 100_000;
/// Below this many KDE samples the baseline is flagged low-confidence.
const KDE_CONFIDENCE_FLOOR: usize = 100;

/// Flags shared by all CLI commands.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Replaces the config's master seed.
    pub seed: Option<u64>,
    /// Replaces the config's output directory.
    pub out: Option<PathBuf>,
    /// Drop the tail correction (diagnostic).
    pub no_tail: bool,
    /// Also write the per-step loss trace.
    pub verbose: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    Estimate,
    Validate,
    Fisher,
    KdeBaseline,
}

impl Command {
    fn tag(self) -> &'static str {
        match self {
            Command::Estimate => "estimate",
            Command::Validate => "validate",
            Command::Fisher => "fisher",
            Command::KdeBaseline => "kde-baseline",
        }
    }
}

/// Full pipeline; oracle reference columns are filled when a closed form
/// exists for the configured channel.
pub fn run_estimate(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentReport> {
    run(cfg, opts, Command::Estimate)
}

/// Like [`run_estimate`] but requires an oracle for the channel.
pub fn run_validate(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentReport> {
    run(cfg, opts, Command::Validate)
}

/// Fisher curve only: trains and estimates `Ĵ` but skips the MI integral.
pub fn run_fisher_curve(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentReport> {
    run(cfg, opts, Command::Fisher)
}

/// KDE-LOO baseline only: no training, one `kde_mi` column.
pub fn run_kde_baseline(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentReport> {
    run(cfg, opts, Command::KdeBaseline)
}

enum OracleKind {
    Gaussian(GaussianOracle),
    Linear(Box<LinearOracle>),
    Bpsk,
}

impl OracleKind {
    fn name(&self) -> &'static str {
        match self {
            OracleKind::Gaussian(_) => "gaussian",
            OracleKind::Linear(_) => "linear",
            OracleKind::Bpsk => "bpsk",
        }
    }

    fn j_ref(&self, t: f64) -> Option<f64> {
        match self {
            OracleKind::Gaussian(o) => Some(o.fisher(t)),
            OracleKind::Linear(o) => Some(o.fisher(t)),
            OracleKind::Bpsk => None,
        }
    }

    fn mi_ref(&self, power: f64, t: f64) -> Result<f64> {
        match self {
            OracleKind::Gaussian(o) => Ok(o.mi(t)),
            OracleKind::Linear(o) => Ok(o.mi(t)),
            OracleKind::Bpsk => bpsk_exact_mi(power, t, &QuadratureSpec::default()),
        }
    }
}

fn run(cfg: &ExperimentConfig, opts: &RunOptions, command: Command) -> Result<ExperimentReport> {
    let started = Instant::now();

    let mut cfg = cfg.clone();
    if let Some(seed) = opts.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    let seed = cfg.train.seed;
    let digest = cfg.digest();

    let root = opts
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    // --no-tail is a flag, not config, so it gets its own subdirectory to keep
    // (config, seed, command, flags) → bytes one-to-one
    let command_dir = if opts.no_tail {
        format!("{}-no-tail", command.tag())
    } else {
        command.tag().to_string()
    };
    let run_dir = root.join("runs").join(&digest[..12]).join(command_dir);
    let cache_dir = root.join("checkpoints");

    let (model, matrix) = stage(cfg.channel_model(), "channel")?;
    let grid = stage(
        NoiseGrid::geometric(cfg.grid.t_min, cfg.grid.t_max, cfg.grid.points),
        "grid",
    )?;
    let points = grid.points().to_vec();
    let m = points.len();

    let oracle = match (cfg.channel.prior, cfg.channel.frontend) {
        (PriorKind::GaussianIso, FrontEndKind::Identity) => Some(OracleKind::Gaussian(
            GaussianOracle::new(cfg.channel.n, cfg.channel.power),
        )),
        (PriorKind::GaussianIso, FrontEndKind::Linear) => {
            let a = matrix.as_ref().expect("linear front end has a matrix");
            Some(OracleKind::Linear(Box::new(stage(
                LinearOracle::new(a.view(), cfg.channel.power),
                "oracle",
            )?)))
        }
        (PriorKind::Bpsk, FrontEndKind::Identity) if cfg.channel.n == 1 => Some(OracleKind::Bpsk),
        _ => None,
    };
    if command == Command::Validate && oracle.is_none() {
        return Err(Error::config(
            "no closed-form oracle for this channel; run `estimate` instead",
        ));
    }

    // --- training + Fisher -------------------------------------------------
    let needs_training = matches!(command, Command::Estimate | Command::Validate | Command::Fisher);
    let (fisher_curve, loss_trace) = if needs_training {
        let (trained, trace) = stage(train_all(&cfg, &model, &points, &cache_dir), "training")?;
        let results: Vec<(f64, f64)> = stage(
            (0..m)
                .into_par_iter()
                .map(|k| {
                    let net = trained.scorer_at(k)?;
                    estimate_fisher(
                        net,
                        &model,
                        points[k],
                        cfg.fisher.mc_samples,
                        &mut stream(seed, purpose::FISHER, k as u32),
                    )
                })
                .collect::<Result<_>>(),
            "fisher",
        )?;
        let (j_hat, stderr): (Vec<f64>, Vec<f64>) = results.into_iter().unzip();
        (
            Some(FisherCurve::new(grid.clone(), j_hat, stderr, cfg.fisher.mc_samples)?),
            trace,
        )
    } else {
        (None, None)
    };

    // --- tail + MI integral --------------------------------------------------
    let needs_mi = matches!(command, Command::Estimate | Command::Validate);
    let (mi_curve, mmse, tail, trace_cov) = if needs_mi {
        let curve = fisher_curve.as_ref().expect("fisher stage ran");
        let (tail, trace_cov) = if opts.no_tail {
            (0.0, None)
        } else {
            let trace = stage(covariance_trace(&cfg, &model), "tail")?;
            (tail_correction(trace, grid.t_max())?, Some(trace))
        };
        let mi = stage(
            integrate_mi(curve, cfg.channel.n, tail, IntegrationRule::LogHermite),
            "integration",
        )?;
        let mmse = mmse_from_fisher(curve, cfg.channel.n);
        (Some(mi), Some(mmse), Some(tail), trace_cov)
    } else {
        (None, None, None, None)
    };

    // --- KDE baseline ---------------------------------------------------------
    let wants_kde = command == Command::KdeBaseline || cfg.baseline.kde;
    let (kde_values, kde_seconds) = if wants_kde {
        let kde_started = Instant::now();
        let values: Vec<f64> = stage(
            (0..m)
                .into_par_iter()
                .map(|k| {
                    let batch = model.forward(
                        points[k],
                        cfg.baseline.kde_n,
                        &mut stream(seed, purpose::KDE, k as u32),
                    )?;
                    kde_loo_mi(batch.w.view(), batch.y.view(), points[k])
                })
                .collect::<Result<_>>(),
            "kde",
        )?;
        (Some(values), Some(kde_started.elapsed().as_secs_f64()))
    } else {
        (None, None)
    };

    // --- rows -----------------------------------------------------------------
    let rows: Result<Vec<ReportRow>> = (0..m)
        .map(|k| {
            let t = points[k];
            let j_ref = oracle.as_ref().and_then(|o| o.j_ref(t));
            let mi_ref = oracle
                .as_ref()
                .map(|o| o.mi_ref(cfg.channel.power, t))
                .transpose()?;
            let mi_hat = mi_curve.as_ref().map(|c| c.mi_hat[k]);
            let mi_rel_err = match (mi_hat, mi_ref) {
                (Some(hat), Some(reference)) if reference != 0.0 => {
                    Some((hat - reference).abs() / reference)
                }
                _ => None,
            };
            Ok(ReportRow {
                t,
                j_hat: fisher_curve.as_ref().map(|c| c.j_hat[k]),
                j_se: fisher_curve.as_ref().map(|c| c.stderr[k]),
                j_ref,
                mmse_hat: mmse.as_ref().map(|c| c.mmse_hat[k]),
                mi_hat,
                mi_ref,
                mi_rel_err,
                kde_mi: kde_values.as_ref().map(|v| v[k]),
            })
        })
        .collect();
    let rows = rows?;

    let (fisher_med, fisher_p90) = ExperimentReport::error_percentiles(&rows, |r| {
        match (r.j_hat, r.j_ref) {
            (Some(hat), Some(reference)) if reference != 0.0 => {
                Some((hat - reference).abs() / reference)
            }
            _ => None,
        }
    });
    let (mi_med, mi_p90) = ExperimentReport::error_percentiles(&rows, |r| r.mi_rel_err);

    let summary = Summary {
        config_digest: digest,
        seed,
        command: command.tag().to_string(),
        oracle: oracle.as_ref().map(|o| o.name().to_string()),
        mi_ref_abs_tol: match &oracle {
            Some(OracleKind::Bpsk) => Some(QuadratureSpec::default().abs_tol),
            _ => None,
        },
        integration_rule: needs_mi.then(|| IntegrationRule::LogHermite.tag().to_string()),
        tail,
        trace_cov,
        fisher_median_rel_err: fisher_med,
        fisher_p90_rel_err: fisher_p90,
        mi_median_rel_err: mi_med,
        mi_p90_rel_err: mi_p90,
        clamped_integrand_points: mi_curve
            .as_ref()
            .map_or(0, |c| c.clamped.iter().filter(|&&b| b).count()),
        kde_low_confidence: wants_kde.then(|| cfg.baseline.kde_n < KDE_CONFIDENCE_FLOOR),
        kde_seconds,
        runtime_seconds: started.elapsed().as_secs_f64(),
    };

    let report = ExperimentReport {
        dim: cfg.channel.n,
        rows,
        summary,
        resolved_config: cfg.to_toml(),
        loss_trace: if opts.verbose { loss_trace } else { None },
    };

    write_report(&report, &run_dir)?;
    if let Some(a) = &matrix {
        if cfg.channel.matrix_file.is_none() {
            write_matrix(&run_dir.join("frontend_matrix.txt"), a)?;
        }
    }
    Ok(report)
}

/// Train every network the grid needs, going through the checkpoint cache.
fn train_all(
    cfg: &ExperimentConfig,
    model: &ChannelModel,
    points: &[f64],
    cache_dir: &Path,
) -> Result<(TrainedScore, Option<Vec<(f64, f64)>>)> {
    fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir.display().to_string(), e))?;
    let provenance = format!("digest={} seed={}", cfg.digest(), cfg.train.seed);
    match cfg.train.scheme {
        SchemeKind::PerT => {
            let outcomes: Vec<(ScoreNetwork, Vec<(f64, f64)>)> = points
                .par_iter()
                .enumerate()
                .map(|(k, &t)| {
                    let key = checkpoint_key(cfg, Some(t), k as u32);
                    let path = cache_dir.join(format!("{key}.json"));
                    if path.exists() {
                        Ok((load_checkpoint(&path)?, Vec::new()))
                    } else {
                        let out = train_scheme_a(model, t, &cfg.scheme_a(), k as u32)?;
                        persist_checkpoint(&out.network, &path)?;
                        Ok((out.network, out.losses))
                    }
                })
                .collect::<Result<_>>()?;
            let mut networks = Vec::with_capacity(outcomes.len());
            let mut trace = Vec::new();
            for (net, losses) in outcomes {
                networks.push(net);
                trace.extend(losses);
            }
            Ok((
                TrainedScore::PerLevel {
                    networks,
                    provenance,
                },
                Some(trace),
            ))
        }
        SchemeKind::Conditional => {
            let key = checkpoint_key(cfg, None, 0);
            let path = cache_dir.join(format!("{key}.json"));
            let (network, trace) = if path.exists() {
                (load_checkpoint(&path)?, Vec::new())
            } else {
                let out = train_scheme_b(model, &cfg.scheme_b())?;
                persist_checkpoint(&out.network, &path)?;
                (out.network, out.losses)
            };
            Ok((
                TrainedScore::Conditional {
                    network,
                    provenance,
                },
                Some(trace),
            ))
        }
    }
}

/// Cache key over everything that determines a trained network: channel
/// section, train section, the exact noise level (per-level scheme), and the
/// RNG stream index.
fn checkpoint_key(cfg: &ExperimentConfig, t: Option<f64>, index: u32) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"checkpoint-v1");
    hasher.update(toml::to_string(&cfg.channel).expect("serializes").as_bytes());
    hasher.update(toml::to_string(&cfg.train).expect("serializes").as_bytes());
    if let Some(t) = t {
        hasher.update(t.to_bits().to_le_bytes());
    }
    hasher.update(index.to_le_bytes());
    let out = hasher.finalize();
    out.iter().take(16).map(|b| format!("{b:02x}")).collect()
}

/// Write-then-rename so concurrent runs only ever see complete checkpoints.
fn persist_checkpoint(net: &ScoreNetwork, path: &Path) -> Result<()> {
    let tmp = path.with_extension(format!("tmp-{}", std::process::id()));
    save_checkpoint(net, &tmp)?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Covariance trace for the tail correction, per the configured source.
fn covariance_trace(cfg: &ExperimentConfig, model: &ChannelModel) -> Result<f64> {
    match cfg.tail.source {
        TailSource::Value => Ok(cfg.tail.value.expect("validated")),
        TailSource::Auto | TailSource::CovW => {
            let w = model.sample_w(
                TRACE_SAMPLES,
                &mut stream(cfg.train.seed, purpose::TRACE, 0),
            )?;
            trace_cov_estimate(w.view())
        }
        TailSource::CovX => {
            let x = model.prior.sample(
                TRACE_SAMPLES,
                &mut stream(cfg.train.seed, purpose::TRACE, 0),
            )?;
            trace_cov_estimate(x.view())
        }
    }
}

/// Prefix errors with the pipeline stage that raised them.
fn stage<T>(result: Result<T>, name: &str) -> Result<T> {
    result.map_err(|e| match e {
        Error::Input(m) => Error::Input(format!("[{name}] {m}")),
        Error::Config(m) => Error::Config(format!("[{name}] {m}")),
        Error::Numeric(m) => Error::Numeric(format!("[{name}] {m}")),
        Error::Training { step, msg } => Error::Training {
            step,
            msg: format!("[{name}] {msg}"),
        },
        io @ Error::Io { .. } => io,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::parse_config;

    fn tiny_config(dir: &Path) -> ExperimentConfig {
        let text = format!(
            r#"
            [channel]
            n = 2
            prior = "gaussian_iso"

            [grid]
            t_min = 0.1
            t_max = 10.0
            points = 4

            [train]
            iterations = 5
            batch_size = 64
            hidden = [16]
            seed = 3

            [fisher]
            mc_samples = 2000

            [output]
            dir = "{}"
            "#,
            dir.display()
        );
        parse_config(&text).unwrap()
    }

    #[test]
    fn estimate_fills_oracle_columns_for_gaussian_channels() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let report = run_estimate(&cfg, &RunOptions::default()).unwrap();
        assert_eq!(report.rows.len(), 4);
        assert!(report.rows.iter().all(|r| r.mi_ref.is_some()));
        assert!(report.rows.iter().all(|r| r.j_hat.is_some()));
        assert!(report.summary.mi_median_rel_err.is_some());
        let run_dir = dir
            .path()
            .join("runs")
            .join(&report.summary.config_digest[..12])
            .join("estimate");
        assert!(run_dir.join("curve.csv").exists());
        assert!(run_dir.join("summary.json").exists());
        assert!(run_dir.join("config.resolved").exists());
    }

    #[test]
    fn fisher_command_skips_mi() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let report = run_fisher_curve(&cfg, &RunOptions::default()).unwrap();
        assert!(report.rows.iter().all(|r| r.mi_hat.is_none()));
        assert!(report.rows.iter().all(|r| r.j_hat.is_some()));
        assert!(report.summary.tail.is_none());
    }

    #[test]
    fn kde_baseline_fills_only_kde_column() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.baseline.kde_n = 400;
        let report = run_kde_baseline(&cfg, &RunOptions::default()).unwrap();
        assert!(report.rows.iter().all(|r| r.kde_mi.is_some()));
        assert!(report.rows.iter().all(|r| r.j_hat.is_none()));
        assert_eq!(report.summary.kde_low_confidence, Some(false));
    }

    #[test]
    fn kde_n_of_two_runs_and_is_flagged() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.baseline.kde_n = 2;
        let report = run_kde_baseline(&cfg, &RunOptions::default()).unwrap();
        assert_eq!(report.summary.kde_low_confidence, Some(true));
    }

    #[test]
    fn checkpoints_are_reused_across_commands() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let first = run_estimate(&cfg, &RunOptions::default()).unwrap();
        let cache = dir.path().join("checkpoints");
        let count = fs::read_dir(&cache).unwrap().count();
        assert_eq!(count, 4);
        // validate reuses the cached networks and reproduces the curve
        let second = run_validate(&cfg, &RunOptions::default()).unwrap();
        assert_eq!(fs::read_dir(&cache).unwrap().count(), 4);
        for (a, b) in first.rows.iter().zip(&second.rows) {
            assert_eq!(a.j_hat, b.j_hat);
            assert_eq!(a.mi_hat, b.mi_hat);
        }
    }

    #[test]
    fn seed_override_changes_digest_and_results() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let base = run_estimate(&cfg, &RunOptions::default()).unwrap();
        let other = run_estimate(
            &cfg,
            &RunOptions {
                seed: Some(99),
                ..Default::default()
            },
        )
        .unwrap();
        assert_ne!(base.summary.config_digest, other.summary.config_digest);
        assert_ne!(base.rows[0].j_hat, other.rows[0].j_hat);
        assert_eq!(other.summary.seed, 99);
    }

    #[test]
    fn validate_requires_an_oracle() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.channel.frontend = FrontEndKind::TanhLinear;
        let err = run_validate(&cfg, &RunOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("estimate"), "{err}");
    }

    #[test]
    fn tanh_channel_has_no_oracle_columns_but_kde_when_enabled() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.channel.frontend = FrontEndKind::TanhLinear;
        cfg.baseline.kde = true;
        cfg.baseline.kde_n = 300;
        let report = run_estimate(&cfg, &RunOptions::default()).unwrap();
        assert!(report.rows.iter().all(|r| r.mi_ref.is_none() && r.j_ref.is_none()));
        assert!(report.rows.iter().all(|r| r.kde_mi.is_some()));
        // generated front-end matrix is dumped for reproducibility
        let run_dir = dir
            .path()
            .join("runs")
            .join(&report.summary.config_digest[..12])
            .join("estimate");
        assert!(run_dir.join("frontend_matrix.txt").exists());
    }

    #[test]
    fn rerun_writes_byte_identical_curve() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let report = run_estimate(&cfg, &RunOptions::default()).unwrap();
        let run_dir = dir
            .path()
            .join("runs")
            .join(&report.summary.config_digest[..12])
            .join("estimate");
        let first = fs::read(run_dir.join("curve.csv")).unwrap();
        run_estimate(&cfg, &RunOptions::default()).unwrap();
        let second = fs::read(run_dir.join("curve.csv")).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn summary_percentiles_match_recomputation_from_rows() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let report = run_estimate(&cfg, &RunOptions::default()).unwrap();
        let errs: Vec<f64> = report.rows.iter().filter_map(|r| r.mi_rel_err).collect();
        let med = crate::numeric::median(&errs);
        let p90 = crate::numeric::percentile(&errs, 90.0);
        assert_eq!(report.summary.mi_median_rel_err, Some(med));
        assert_eq!(report.summary.mi_p90_rel_err, Some(p90));
    }

    #[test]
    fn no_tail_reports_zero_tail() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let report = run_estimate(
            &cfg,
            &RunOptions {
                no_tail: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(report.summary.tail, Some(0.0));
        assert!(report.summary.trace_cov.is_none());
    }

    #[test]
    fn verbose_emits_loss_trace() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.train.seed = 11;
        let report = run_estimate(
            &cfg,
            &RunOptions {
                verbose: true,
                ..Default::default()
            },
        )
        .unwrap();
        let trace = report.loss_trace.as_ref().unwrap();
        assert_eq!(trace.len(), 4 * 5);
        let run_dir = dir
            .path()
            .join("runs")
            .join(&report.summary.config_digest[..12])
            .join("estimate");
        assert!(run_dir.join("loss_trace.csv").exists());
    }
}
